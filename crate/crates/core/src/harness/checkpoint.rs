//! Binary checkpoints of learned reward and value parameters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "IRFV1"                      magic
//! u32                          format version
//! u32                          tensor count
//! per tensor:  u32 name length, name (UTF-8), u32 rank, u64 dims…, f64 data…
//! u32 + bytes                  config echo (config text)
//! u32 + bytes                  rng summary
//! ```
//!
//! Tensors are written in name order, so saving a loaded checkpoint
//! reproduces the original bytes.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::nets;

pub const MAGIC: &[u8; 5] = b"IRFV1";
pub const VERSION: u32 = 1;

const ETA: &str = "eta/";
const PHI: &str = "phi/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub eta: ParamSet,
    pub phi: ParamSet,
    pub config: String,
    pub rng_summary: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = self.eta.len() + self.phi.len();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, set) in [(ETA, &self.eta), (PHI, &self.phi)] {
            for (name, t) in set.iter() {
                write_str(&mut out, &format!("{prefix}{name}"));
                out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        write_str(&mut out, &self.config);
        write_str(&mut out, &self.rng_summary);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut eta = ParamSet::new();
        let mut phi = ParamSet::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            let t = Tensor::new(&shape, data);
            let (set, short) = if let Some(s) = name.strip_prefix(ETA) {
                (&mut eta, s)
            } else if let Some(s) = name.strip_prefix(PHI) {
                (&mut phi, s)
            } else {
                return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
            };
            if set.get(short).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
            set.insert(short, t);
        }
        let config = r.string()?;
        let rng_summary = r.string()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            eta,
            phi,
            config,
            rng_summary,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// The configuration this checkpoint was trained with.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&self.config)
    }

    /// Check that η and φ have exactly the shapes `config` would create.
    pub fn validate_against(&self, config: &ExperimentConfig) -> Result<()> {
        // Only the shapes matter here.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = config.arch();
        let eta = nets::init_reward(&mut rng, &arch, config.meta.reward_input);
        let phi = nets::init_value(&mut rng, &arch);
        for (what, expected, got) in [("eta", &eta, &self.eta), ("phi", &phi, &self.phi)] {
            if !expected.same_layout(got) {
                return Err(Error::ArchMismatch(format!(
                    "{what} does not match {} with widths {}/{}/{}",
                    config.preset.name, config.conv_filters, config.hidden, config.lstm
                )));
            }
        }
        Ok(())
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Checkpoint, ExperimentConfig) {
        let mut cfg = ExperimentConfig::for_domain("tiny_abc").unwrap();
        cfg.conv_filters = 2;
        cfg.hidden = 3;
        cfg.lstm = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = cfg.arch();
        let ck = Checkpoint {
            eta: nets::init_reward(&mut rng, &arch, cfg.meta.reward_input),
            phi: nets::init_value(&mut rng, &arch),
            config: cfg.to_text(),
            rng_summary: "seed=0".into(),
        };
        (ck, cfg)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (ck, cfg) = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.experiment().unwrap(), cfg);
        back.validate_against(&cfg).unwrap();
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (ck, cfg) = sample();
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut wide = cfg.clone();
        wide.hidden = 4;
        assert!(matches!(ck.validate_against(&wide), Err(Error::ArchMismatch(_))));
    }
}
