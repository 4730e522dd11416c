//! Versioned JSON checkpoints. `serde_json` writes the shortest decimal
//! that round-trips each `f64`, so save/load is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdaptedClassifier, ModelDims};
use crate::error::{ensure, Result};

pub const CHECKPOINT_FORMAT: &str = "loralab-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub backbone_seed: u64,
    pub model: AdaptedClassifier,
}

impl Checkpoint {
    pub fn new(model: &AdaptedClassifier) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: model.dims(),
            backbone_seed: model.backbone().seed(),
            model: model.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ensure!(ck.format == CHECKPOINT_FORMAT, "not a checkpoint file: format `{}`", ck.format);
        ensure!(ck.version == CHECKPOINT_VERSION, "unsupported checkpoint version {}", ck.version);
        ensure!(ck.dims == ck.model.dims(), "checkpoint dims disagree with stored weights");
        // Re-validate shapes through the constructor.
        let m = &ck.model;
        AdaptedClassifier::new(m.backbone().clone(), m.adapter.clone(), m.head.clone())?;
        Ok(ck)
    }
}

pub fn save_checkpoint(model: &AdaptedClassifier, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::new(model).to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<AdaptedClassifier> {
    Ok(Checkpoint::from_json(&fs::read_to_string(path)?)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Backbone;
    use crate::rng::rng_from;
    use rand::Rng;

    #[test]
    fn json_roundtrip_is_exact() {
        let bb = Backbone::random(7, 9, 21).unwrap();
        let mut m = AdaptedClassifier::fresh(bb, 4, 3, 3.0, 22).unwrap();
        let mut rng = rng_from(5);
        let p: Vec<f64> = (0..m.trainable_len()).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect();
        m.set_trainable_params(&p).unwrap();
        let text = Checkpoint::new(&m).to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap().model;
        assert_eq!(back, m);
        assert_eq!(back.trainable_params(), p);
    }

    #[test]
    fn rejects_foreign_documents() {
        let bb = Backbone::random(3, 3, 1).unwrap();
        let m = AdaptedClassifier::fresh(bb, 2, 1, 1.0, 1).unwrap();
        let mut ck = Checkpoint::new(&m);
        ck.format = "something-else".into();
        assert!(Checkpoint::from_json(&serde_json::to_string(&ck).unwrap()).is_err());
        assert!(Checkpoint::from_json("{}").is_err());
    }
}
