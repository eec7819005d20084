//! Action sets and their transfer variants.

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
}

impl Action {
    pub const BASE: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const EXTENDED: [Action; 8] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::UpLeft,
        Action::UpRight,
        Action::DownLeft,
        Action::DownRight,
    ];

    /// `(drow, dcol)` of the intended move.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::UpLeft => (-1, -1),
            Action::UpRight => (-1, 1),
            Action::DownLeft => (1, -1),
            Action::DownRight => (1, 1),
        }
    }

    /// Left/right and up/down swapped. An involution.
    pub fn permuted(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
            Action::UpLeft => Action::DownRight,
            Action::UpRight => Action::DownLeft,
            Action::DownLeft => Action::UpRight,
            Action::DownRight => Action::UpLeft,
        }
    }

    /// Feature encoding over the four base directions. Base actions are
    /// one-hot; a diagonal splits its weight between its two components.
    pub fn base_encoding(self) -> [f64; 4] {
        let (dr, dc) = self.delta();
        let mut e = [0.0; 4];
        let parts = (dr != 0) as usize + (dc != 0) as usize;
        let w = 1.0 / parts as f64;
        if dr < 0 {
            e[0] = w;
        }
        if dr > 0 {
            e[1] = w;
        }
        if dc < 0 {
            e[2] = w;
        }
        if dc > 0 {
            e[3] = w;
        }
        e
    }
}

/// How policy outputs map onto movements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ActionMode {
    #[default]
    Standard,
    /// Same four actions with reversed semantics.
    Permuted,
    /// The four base actions plus four diagonals.
    Extended,
}

impl ActionMode {
    pub fn num_actions(self) -> usize {
        match self {
            ActionMode::Standard | ActionMode::Permuted => 4,
            ActionMode::Extended => 8,
        }
    }

    /// Movement executed for policy output `index`.
    pub fn action(self, index: usize) -> Action {
        match self {
            ActionMode::Standard => Action::BASE[index],
            ActionMode::Permuted => Action::BASE[index].permuted(),
            ActionMode::Extended => Action::EXTENDED[index],
        }
    }

    /// Movements in policy-output order.
    pub fn actions(self) -> Vec<Action> {
        (0..self.num_actions()).map(|i| self.action(i)).collect()
    }

    /// Policy-output index that executes `action`, if any.
    pub fn index_of(self, action: Action) -> Option<usize> {
        (0..self.num_actions()).find(|&i| self.action(i) == action)
    }
}

impl FromStr for ActionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(ActionMode::Standard),
            "permuted" => Ok(ActionMode::Permuted),
            "extended" => Ok(ActionMode::Extended),
            other => Err(format!("unknown action mode `{other}`")),
        }
    }
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionMode::Standard => "standard",
            ActionMode::Permuted => "permuted",
            ActionMode::Extended => "extended",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_is_an_involution() {
        for a in Action::EXTENDED {
            assert_eq!(a.permuted().permuted(), a);
        }
        assert_eq!(Action::Left.permuted(), Action::Right);
        assert_eq!(Action::Up.permuted(), Action::Down);
    }

    #[test]
    fn action_set_sizes() {
        assert_eq!(ActionMode::Standard.actions().len(), 4);
        assert_eq!(ActionMode::Permuted.actions().len(), 4);
        assert_eq!(ActionMode::Extended.actions().len(), 8);
    }

    #[test]
    fn encodings_sum_to_one() {
        for a in Action::EXTENDED {
            let s: f64 = a.base_encoding().iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(Action::Right.base_encoding(), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(Action::UpRight.base_encoding(), [0.5, 0.0, 0.0, 0.5]);
    }
}
