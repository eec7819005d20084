//! Grid geometry, movement and shortest paths.

use std::collections::VecDeque;

use super::action::Action;
use crate::error::{Error, Result};

/// `(row, col)`, row 0 at the top.
pub type Cell = (usize, usize);

/// Static walls of a room. Cells outside the grid behave as walls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    walls: Vec<bool>,
}

impl Layout {
    /// An open room with no interior walls.
    pub fn open(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "empty layout");
        Layout {
            height,
            width,
            walls: vec![false; height * width],
        }
    }

    /// Four `room`×`room` rooms separated by one-cell walls, with a door in the
    /// middle of every shared wall.
    pub fn four_rooms(room: usize) -> Self {
        assert!(room >= 1, "room size must be positive");
        let n = 2 * room + 1;
        let mut layout = Layout::open(n, n);
        for i in 0..n {
            layout.set_wall((room, i), true);
            layout.set_wall((i, room), true);
        }
        let mid = room / 2;
        for door in [(room, mid), (room, room + 1 + mid), (mid, room), (room + 1 + mid, room)] {
            layout.set_wall(door, false);
        }
        layout
    }

    pub fn set_wall(&mut self, cell: Cell, wall: bool) {
        let i = self.index(cell);
        self.walls[i] = wall;
    }

    pub fn index(&self, (r, c): Cell) -> usize {
        assert!(r < self.height && c < self.width, "cell {:?} outside grid", (r, c));
        r * self.width + c
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls[self.index(cell)]
    }

    pub fn floor_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&cell| !self.is_wall(cell))
            .collect()
    }

    fn offset(&self, (r, c): Cell, dr: isize, dc: isize) -> Option<Cell> {
        let nr = r.checked_add_signed(dr)?;
        let nc = c.checked_add_signed(dc)?;
        (nr < self.height && nc < self.width && !self.is_wall((nr, nc))).then_some((nr, nc))
    }

    /// Deterministic movement. Blocked moves stay put; diagonal moves clip each
    /// axis independently, and stay put if the diagonal target itself is a wall.
    pub fn apply(&self, cell: Cell, action: Action) -> Cell {
        let (dr, dc) = action.delta();
        if dr == 0 || dc == 0 {
            return self.offset(cell, dr, dc).unwrap_or(cell);
        }
        let row_ok = self.offset(cell, dr, 0).is_some();
        let col_ok = self.offset(cell, 0, dc).is_some();
        let (dr, dc) = (if row_ok { dr } else { 0 }, if col_ok { dc } else { 0 });
        self.offset(cell, dr, dc).unwrap_or(cell)
    }

    /// Breadth-first distances from `from` using `actions`, treating `avoid`
    /// cells as impassable (except as the target).
    pub fn shortest_path(&self, from: Cell, to: Cell, actions: &[Action], avoid: &[Cell]) -> Result<PathStep> {
        if from == to {
            return Ok(PathStep {
                distance: 0,
                first_action: None,
            });
        }
        let mut seen = vec![false; self.height * self.width];
        let mut queue = VecDeque::new();
        seen[self.index(from)] = true;
        for &a in actions {
            let next = self.apply(from, a);
            if next == from || (avoid.contains(&next) && next != to) {
                continue;
            }
            if !seen[self.index(next)] {
                seen[self.index(next)] = true;
                queue.push_back((next, 1usize, a));
            }
        }
        while let Some((cell, d, first)) = queue.pop_front() {
            if cell == to {
                return Ok(PathStep {
                    distance: d,
                    first_action: Some(first),
                });
            }
            for &a in actions {
                let next = self.apply(cell, a);
                if avoid.contains(&next) && next != to {
                    continue;
                }
                let i = self.index(next);
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back((next, d + 1, first));
                }
            }
        }
        Err(Error::Unreachable(to))
    }
}

/// Result of a shortest-path query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathStep {
    pub distance: usize,
    /// First action of some shortest path; `None` when already there.
    pub first_action: Option<Action>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::action::ActionMode;

    #[test]
    fn four_rooms_geometry() {
        let l = Layout::four_rooms(5);
        assert_eq!((l.height, l.width), (11, 11));
        assert!(l.is_wall((5, 0)));
        assert!(l.is_wall((5, 5)));
        assert!(!l.is_wall((5, 2)));
        assert!(!l.is_wall((2, 5)));
        assert!(!l.is_wall((5, 8)));
        assert!(!l.is_wall((8, 5)));
        assert_eq!(l.floor_cells().len(), 4 * 25 + 4);
    }

    #[test]
    fn blocked_and_diagonal_moves() {
        let l = Layout::open(3, 3);
        assert_eq!(l.apply((0, 0), Action::Up), (0, 0));
        assert_eq!(l.apply((0, 0), Action::Left), (0, 0));
        assert_eq!(l.apply((0, 1), Action::UpRight), (0, 2));
        assert_eq!(l.apply((1, 1), Action::DownLeft), (2, 0));
        assert_eq!(l.apply((0, 2), Action::UpRight), (0, 2));
    }

    #[test]
    fn trivial_distances() {
        let l = Layout::open(5, 5);
        let acts = ActionMode::Standard.actions();
        assert_eq!(l.shortest_path((1, 1), (1, 1), &acts, &[]).unwrap().distance, 0);
        assert_eq!(l.shortest_path((1, 1), (1, 2), &acts, &[]).unwrap().distance, 1);
        assert_eq!(l.shortest_path((4, 0), (0, 4), &acts, &[]).unwrap().distance, 8);
    }

    #[test]
    fn unreachable_is_distinct() {
        let mut l = Layout::open(3, 3);
        l.set_wall((0, 1), true);
        l.set_wall((1, 0), true);
        l.set_wall((1, 1), true);
        let acts = ActionMode::Standard.actions();
        assert!(matches!(
            l.shortest_path((2, 2), (0, 0), &acts, &[]),
            Err(Error::Unreachable((0, 0)))
        ));
    }

    /// Distances to `to` by repeated Bellman relaxation over every cell.
    fn value_iteration(l: &Layout, to: Cell, actions: &[Action]) -> Vec<Option<usize>> {
        let mut d: Vec<Option<usize>> = vec![None; l.height * l.width];
        d[l.index(to)] = Some(0);
        loop {
            let mut changed = false;
            for cell in l.floor_cells() {
                let best = actions
                    .iter()
                    .filter_map(|&a| d[l.index(l.apply(cell, a))])
                    .min()
                    .map(|x| x + 1);
                let i = l.index(cell);
                if cell != to && best.is_some() && (d[i].is_none() || best < d[i]) {
                    d[i] = best;
                    changed = true;
                }
            }
            if !changed {
                return d;
            }
        }
    }

    #[test]
    fn breadth_first_matches_value_iteration() {
        let l = Layout::four_rooms(5);
        for mode in [ActionMode::Standard, ActionMode::Extended] {
            let acts = mode.actions();
            let target = (10, 10);
            let d = value_iteration(&l, target, &acts);
            for cell in l.floor_cells() {
                let bfs = l.shortest_path(cell, target, &acts, &[]).unwrap().distance;
                assert_eq!(Some(bfs), d[l.index(cell)], "{cell:?} under {mode}");
            }
        }
        let from_centre = l.shortest_path((2, 2), (10, 10), &ActionMode::Standard.actions(), &[]);
        assert_eq!(from_centre.unwrap().distance, 16);
    }
}
