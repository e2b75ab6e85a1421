//! Serialized feature banks and model checkpoints.

use std::path::Path;

use deepdemand_core::features::FeatureBank;
use deepdemand_core::model::{ModelParams, TrainLog};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checksum::bank_checksum;
use crate::error::{io_at, AppError, AppResult};
use crate::tables::write_atomic;

pub const BANK_FILE: &str = "bank.json";
const CHECKPOINT_FORMAT: &str = "deepdemand-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("in-memory values serialise");
    v.push(b'\n');
    v
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> AppResult<()> {
    write_atomic(path, &to_json(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let bytes = std::fs::read(path).map_err(io_at(path))?;
    serde_json::from_slice(&bytes).map_err(|e| AppError::format(path, e))
}

pub fn save_bank(path: &Path, bank: &FeatureBank) -> AppResult<()> {
    write_json(path, bank)
}

pub fn load_bank(path: &Path) -> AppResult<FeatureBank> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    /// Config hash of the contexts the model was trained on.
    pub context_hash: String,
    pub bank_checksum: String,
    pub seed: u64,
    /// Layer dimensions, activation tags, row-major weights and the fixed
    /// constants.
    pub params: ModelParams,
    pub log: Option<TrainLog>,
}

impl Checkpoint {
    pub fn new(
        params: ModelParams,
        log: Option<TrainLog>,
        config_hash: String,
        context_hash: String,
        bank: &FeatureBank,
        seed: u64,
    ) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash,
            context_hash,
            bank_checksum: bank_checksum(bank),
            seed,
            params,
            log,
        }
    }

    /// Refuses a bank other than the one the model was trained against.
    pub fn check_bank(&self, bank: &FeatureBank) -> AppResult<()> {
        let found = bank_checksum(bank);
        if found != self.bank_checksum {
            return Err(AppError::Mismatch(format!(
                "checkpoint was trained against feature bank {} but the bank given has checksum {}",
                &self.bank_checksum[..16],
                &found[..16]
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> AppResult<()> {
    write_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let ckpt: Checkpoint = read_json(path)?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(AppError::format(
            path,
            format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version),
        ));
    }
    ckpt.params.validate().map_err(|e| AppError::format(path, e))?;
    Ok(ckpt)
}
