use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::PolicyNet;
use super::value::MlpValueNet;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameter snapshot of one solver iteration.
///
/// Floats are written with shortest round-trip formatting and parsed with
/// correct rounding, so a reload reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub iteration: usize,
    pub grid_fingerprint: String,
    pub value: MlpValueNet,
    pub policy: Option<PolicyNet>,
    /// Resolved run configuration, so the snapshot is self-describing.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

impl Checkpoint {
    pub fn new(seed: u64, iteration: usize, grid_fingerprint: String, value: MlpValueNet, policy: Option<PolicyNet>) -> Self {
        Self { version: CHECKPOINT_VERSION, seed, iteration, grid_fingerprint, value, policy, config: None }
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = Some(config);
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let ckpt: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        // Re-validate shapes rather than trusting the file.
        MlpValueNet::new(ckpt.value.shape.clone(), ckpt.value.params.clone(), ckpt.value.input_scale, ckpt.value.output_scale)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(p) = &ckpt.policy {
            if p.params.len() != p.shape.num_params() || p.log_weights().len() != p.shape.output() {
                return Err(Error::Checkpoint("policy parameters do not match the architecture".into()));
            }
            if p.grid_fingerprint != ckpt.grid_fingerprint {
                return Err(Error::Checkpoint("policy grid does not match the checkpoint grid".into()));
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::value::ValueFunction;
    use crate::problem::BoxControlSet;
    use crate::quadrature::build_control_grid;

    #[test]
    fn roundtrip_is_bitwise() {
        let grid = build_control_grid(&BoxControlSet::symmetric(1, 2.0).unwrap(), 7).unwrap();
        let value = MlpValueNet::init(2, &[6, 5], 3, false).unwrap().with_scales(1.7, 0.3).unwrap();
        let policy = PolicyNet::init(2, &[4], &grid, 4, false).unwrap();
        let ckpt = Checkpoint::new(42, 3, grid.fingerprint(), value.clone(), Some(policy));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        for x in [[0.1, 0.2], [-1.3, 2.2], [1e-7, -3.0]] {
            assert_eq!(back.value.value(&x).unwrap().to_bits(), value.value(&x).unwrap().to_bits());
        }
        std::fs::write(&path, "{\"version\": 1}").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
