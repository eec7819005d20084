//! Comma-separated metric rows and visit heatmaps.
//!
//! Every file starts with [`HEADER`]. Numeric cells are always finite; a
//! quantity with no data in its logging unit (say, no episode finished) is
//! left empty.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER: &str = "phase,index,lifetime,seed,episode_return,lifetime_return,intrinsic_reward,entropy,wall_ms";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

/// One logging unit: a block of meta-updates when training, one episode of
/// one lifetime when evaluating.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub phase: Phase,
    /// Meta-update count (train) or episode index (eval).
    pub index: u64,
    /// Lifetimes completed so far (train) or lifetime id (eval).
    pub lifetime: u64,
    pub seed: u64,
    pub episode_return: Option<f64>,
    pub lifetime_return: Option<f64>,
    pub intrinsic_reward: Option<f64>,
    pub entropy: Option<f64>,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_line(&self) -> Result<String> {
        let mut s = format!("{},{},{},{}", self.phase.as_str(), self.index, self.lifetime, self.seed);
        for (name, v) in [
            ("episode_return", self.episode_return),
            ("lifetime_return", self.lifetime_return),
            ("intrinsic_reward", self.intrinsic_reward),
            ("entropy", self.entropy),
        ] {
            s.push(',');
            if let Some(x) = v {
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("metric {name}")));
                }
                let _ = write!(s, "{x:?}");
            }
        }
        let _ = write!(s, ",{}", self.wall_ms);
        Ok(s)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("metrics row `{line}`: {what}"));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let phase = match cells[0] {
            "train" => Phase::Train,
            "eval" => Phase::Eval,
            _ => return Err(bad("unknown phase")),
        };
        let int = |i: usize| cells[i].parse::<u64>().map_err(|_| bad("bad integer"));
        let real = |i: usize| -> Result<Option<f64>> {
            if cells[i].is_empty() {
                return Ok(None);
            }
            let x: f64 = cells[i].parse().map_err(|_| bad("bad number"))?;
            if !x.is_finite() {
                return Err(bad("non-finite number"));
            }
            Ok(Some(x))
        };
        Ok(MetricsRow {
            phase,
            index: int(1)?,
            lifetime: int(2)?,
            seed: int(3)?,
            episode_return: real(4)?,
            lifetime_return: real(5)?,
            intrinsic_reward: real(6)?,
            entropy: real(7)?,
            wall_ms: int(8)?,
        })
    }
}

/// Append-only metrics file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        let line = row.to_line()?;
        self.line(&line)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Parse a metrics file, insisting on the exact header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Config(format!("{}: missing or wrong header", path.display())));
    }
    lines.map(MetricsRow::parse).collect()
}

/// Visit counts as comma-separated integers, one line per grid row.
pub fn heatmap_text(visits: &[u64], width: usize) -> String {
    let mut s = String::new();
    for row in visits.chunks(width.max(1)) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn emit_heatmap(visits: &[u64], width: usize, path: &Path) -> Result<()> {
    std::fs::write(path, heatmap_text(visits, width)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> MetricsRow {
        MetricsRow {
            phase: Phase::Train,
            index: 50,
            lifetime: 3,
            seed: 7,
            episode_return: Some(0.25),
            lifetime_return: None,
            intrinsic_reward: Some(-0.1),
            entropy: Some(1.3),
            wall_ms: 12,
        }
    }

    #[test]
    fn row_round_trip() {
        let line = row().to_line().unwrap();
        assert_eq!(line, "train,50,3,7,0.25,,-0.1,1.3,12");
        assert_eq!(MetricsRow::parse(&line).unwrap(), row());
    }

    #[test]
    fn non_finite_is_refused() {
        let mut r = row();
        r.entropy = Some(f64::NAN);
        assert!(r.to_line().is_err());
        assert!(MetricsRow::parse("train,1,0,0,inf,,,,0").is_err());
        assert!(MetricsRow::parse("train,1,0,0").is_err());
    }

    #[test]
    fn file_has_strict_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&p).unwrap();
        w.write(&row()).unwrap();
        w.flush().unwrap();
        assert_eq!(read_metrics(&p).unwrap(), vec![row()]);
        std::fs::write(&p, "phase,index\n").unwrap();
        assert!(read_metrics(&p).is_err());
    }

    #[test]
    fn heatmap_layout() {
        assert_eq!(heatmap_text(&[0; 4], 2), "0,0\n0,0\n");
        assert_eq!(heatmap_text(&[1, 2, 3, 4, 5, 6], 3), "1,2,3\n4,5,6\n");
    }
}
