//! Versioned JSON checkpoints: settings, parameters and optimizer state.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::config::Settings;
use crate::error::{Error, Result};
use crate::gcn::ModelParams;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub best_epoch: usize,
    pub params: ModelParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(
        settings: &Settings,
        seed: u64,
        best_epoch: usize,
        params: ModelParams,
        adam: AdamState,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: settings.snapshot(),
            seed,
            best_epoch,
            params,
            adam,
        }
    }

    /// Settings recorded at training time.
    pub fn settings(&self) -> Result<Settings> {
        Settings::from_pairs(self.config.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Parameter(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.params.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::ModelShape;

    #[test]
    fn json_round_trip_is_bit_exact() {
        let params = ModelParams::init(
            ModelShape {
                input_dim: 4,
                hidden_dim: 5,
                depth: 2,
            },
            17,
        )
        .unwrap();
        let adam = AdamState::new(&params);
        let ck = Checkpoint::new(&Settings::default(), 3, 7, params, adam);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params.checksum(), ck.params.checksum());
        assert_eq!(back.settings().unwrap(), Settings::default());
    }

    #[test]
    fn wrong_version_rejected() {
        let params = ModelParams::init(ModelShape::default(), 1).unwrap();
        let mut ck = Checkpoint::new(&Settings::default(), 0, 0, params.clone(), AdamState::new(&params));
        ck.version = 99;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json().unwrap()),
            Err(Error::Parameter(_))
        ));
    }
}
