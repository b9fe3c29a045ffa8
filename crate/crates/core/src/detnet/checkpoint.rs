//! Versioned JSON checkpoints for trained networks.
//!
//! Parameters are stored as JSON; `f64` values round-trip bit-exactly through
//! the shortest-representation float formatting, so a loaded network detects
//! identically to the one that was saved.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::NetworkParams;

/// Current on-disk format version.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// A trained network plus the bookkeeping needed to judge it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<F> {
    pub format_version: u32,
    pub params: NetworkParams<F>,
    /// Optimizer iterations completed when this snapshot was taken.
    pub trained_iterations: u64,
    /// Held-out bit error rate at the snapshot, if evaluated.
    pub eval_ber: Option<f64>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(params: NetworkParams<F>, trained_iterations: u64, eval_ber: Option<f64>) -> Self {
        Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, params, trained_iterations, eval_ber }
    }
}

/// Serializes a checkpoint to a JSON file.
pub fn save_checkpoint<F: Scalar + Serialize>(path: &Path, cp: &Checkpoint<F>) -> Result<()> {
    let json = serde_json::to_string(cp)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path, json)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))
}

/// Loads a checkpoint, rejecting unknown format versions.
pub fn load_checkpoint<F: Scalar + DeserializeOwned>(path: &Path) -> Result<Checkpoint<F>> {
    let json = fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let cp: Checkpoint<F> = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if cp.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {} (expected {})",
            cp.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    Ok(cp)
}

#[cfg(test)]
mod tests {
    use super::super::Variant;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(191);
        let params =
            NetworkParams::<f64>::init(Variant::DestPenalized, 4, 2, 6, &mut rng).unwrap();
        let dir = std::env::temp_dir().join("dfrelay-checkpoint-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        let cp = Checkpoint::new(params.clone(), 17, Some(0.125));
        save_checkpoint(&path, &cp).unwrap();
        let loaded = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(loaded.trained_iterations, 17);
        assert_eq!(loaded.eval_ber, Some(0.125));
        let a = params.to_flat();
        let b = loaded.params.to_flat();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits(), "parameter changed across the round trip");
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(193);
        let params = NetworkParams::<f64>::init(Variant::Relay, 2, 1, 3, &mut rng).unwrap();
        let dir = std::env::temp_dir().join("dfrelay-checkpoint-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("version.json");
        let mut cp = Checkpoint::new(params, 1, None);
        cp.format_version = 999;
        save_checkpoint(&path, &cp).unwrap();
        match load_checkpoint::<f64>(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("999")),
            other => panic!("expected a checkpoint error, got {other:?}"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn missing_file_reports_a_checkpoint_error() {
        let missing = std::env::temp_dir().join("dfrelay-checkpoint-test/none.json");
        assert!(matches!(load_checkpoint::<f64>(&missing), Err(Error::Checkpoint(_))));
    }
}
