//! Versioned binary checkpoints.
//!
//! Layout: the magic `IFOLCKPT`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header, then the parameters,
//! Adam first moments and Adam second moments as little-endian `f64`.

use crate::error::{CliError, Result};
use ifol_core::field_net::{CoordNorm, FieldNetConfig, FieldNetParams};
use ifol_core::learning::{AdamState, TrainConfig, TrainState};
use ifol_core::rng::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"IFOLCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: FieldNetConfig,
    pub params: FieldNetParams,
    pub norm: CoordNorm,
    pub train: TrainConfig,
    pub epoch: usize,
    pub adam: AdamState,
    pub rng: RngState,
    /// Fingerprint of the training mesh.
    pub mesh: String,
}

/// Position of the shuffle stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it exceeds JSON's integer range).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || CliError::Config("checkpoint RNG state is malformed".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    net: FieldNetConfig,
    norm: CoordNorm,
    train: TrainConfig,
    epoch: usize,
    rng: RngState,
    mesh: String,
    adam_step: u64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    n_params: usize,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, net: &FieldNetConfig, norm: &CoordNorm, train: &TrainConfig, mesh: String) -> Self {
        Self {
            net: net.clone(),
            params: state.params.clone(),
            norm: norm.clone(),
            train: train.clone(),
            epoch: state.epoch,
            adam: state.adam.clone(),
            rng: RngState::capture(&state.shuffle),
            mesh,
        }
    }

    pub fn train_state(&self) -> Result<TrainState> {
        Ok(TrainState {
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            shuffle: self.rng.restore()?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let flat = self.params.to_flat();
        let header = Header {
            net: self.net.clone(),
            norm: self.norm.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
            mesh: self.mesh.clone(),
            adam_step: self.adam.step,
            adam_beta1: self.adam.beta1,
            adam_beta2: self.adam.beta2,
            adam_eps: self.adam.eps,
            n_params: flat.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(20 + json.len() + 24 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in flat.iter().chain(&self.adam.m).chain(&self.adam.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CliError::Config(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not an ifol checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("format version {version}, this build reads {VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let h: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
        let data = &body[hlen..];
        let n = h.n_params;
        if data.len() != 3 * n * 8 {
            return Err(bad(&format!("payload holds {} bytes, expected {}", data.len(), 24 * n)));
        }
        let floats: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let params = FieldNetParams::from_flat(&h.net, &floats[..n])?;
        Ok(Self {
            net: h.net,
            params,
            norm: h.norm,
            train: h.train,
            epoch: h.epoch,
            adam: AdamState {
                m: floats[n..2 * n].to_vec(),
                v: floats[2 * n..].to_vec(),
                step: h.adam_step,
                beta1: h.adam_beta1,
                beta2: h.adam_beta2,
                eps: h.adam_eps,
            },
            rng: h.rng,
            mesh: h.mesh,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        // Write-then-rename so an interrupted run never leaves a torn file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
