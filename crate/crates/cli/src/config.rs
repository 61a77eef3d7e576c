//! TOML run configuration.

use crate::error::{CliError, Result};
use ifol_core::fem::{DirichletBoundary, FemOptions, NeumannLoad, PdeProblem};
use ifol_core::field_net::FieldNetConfig;
use ifol_core::learning::{LrSchedule, TrainConfig};
use ifol_core::mesh::{generate_grid, Mesh};
use ifol_core::oracle::NewtonConfig;
use ifol_core::sampling::SampleKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream (initialisation, shuffling, sampling).
    #[serde(default)]
    pub seed: u64,
    pub mesh: MeshSource,
    pub problem: PdeProblem,
    #[serde(default)]
    pub fem: FemOptions,
    #[serde(default)]
    pub dirichlet: Vec<DirichletBoundary>,
    #[serde(default)]
    pub neumann: Vec<NeumannLoad>,
    pub net: NetBlock,
    pub train: TrainBlock,
    pub sampling: SamplingBlock,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub rollout: RolloutBlock,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    Grid { counts: Vec<usize>, bounds: Vec<(f64, f64)> },
    /// Mesh JSON, relative to the configuration file.
    File { path: PathBuf },
}

/// Network shape; input and output sizes follow from the mesh and problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetBlock {
    pub hidden: Vec<usize>,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    pub latent_dim: usize,
}

fn default_omega0() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    #[serde(default = "default_k")]
    pub k_encode: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub lr: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub grad_norm: bool,
    #[serde(default)]
    pub first_order: bool,
    /// Write a checkpoint every this many epochs (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_k() -> usize {
    3
}
fn default_alpha() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    pub n_train: usize,
    pub n_test: usize,
    pub source: SampleKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutBlock {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Also run the implicit-Euler reference and report per-step errors.
    #[serde(default = "default_true")]
    pub oracle: bool,
}

fn default_steps() -> usize {
    10
}
fn default_true() -> bool {
    true
}

impl Default for RolloutBlock {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            oracle: true,
        }
    }
}

/// Output locations. `out` is relative to the configuration file; the
/// others are relative to `out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_train")]
    pub dataset: PathBuf,
    #[serde(default = "default_test")]
    pub test_dataset: PathBuf,
    #[serde(default = "default_ckpt")]
    pub checkpoint: PathBuf,
}

fn default_out() -> PathBuf {
    "out".into()
}
fn default_train() -> PathBuf {
    "train.jsonl".into()
}
fn default_test() -> PathBuf {
    "test.jsonl".into()
}
fn default_ckpt() -> PathBuf {
    "model.ckpt".into()
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out: default_out(),
            dataset: default_train(),
            test_dataset: default_test(),
            checkpoint: default_ckpt(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Checks that do not need the mesh; messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(CliError::Config(format!("{field}: {msg}")));
        if i64::try_from(self.seed).is_err() {
            return bad("seed", "must fit a TOML integer (< 2^63)");
        }
        if let MeshSource::Grid { counts, bounds } = &self.mesh {
            if counts.len() != bounds.len() {
                return bad("mesh.bounds", "needs one (min, max) pair per entry of mesh.counts");
            }
        }
        self.problem.validate().map_err(|e| CliError::Config(format!("problem: {e}")))?;
        if self.net.hidden.is_empty() || self.net.hidden.contains(&0) {
            return bad("net.hidden", "needs at least one layer, all widths ≥ 1");
        }
        if self.net.latent_dim == 0 {
            return bad("net.latent_dim", "must be ≥ 1");
        }
        if !(self.net.omega0 > 0.0) {
            return bad("net.omega0", "must be positive");
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size", "must be ≥ 1");
        }
        if !(self.train.alpha > 0.0 && self.train.alpha.is_finite()) {
            return bad("train.alpha", "must be positive");
        }
        if let Err(m) = self.train.lr.validate() {
            return bad("train.lr", &m);
        }
        if self.sampling.n_train == 0 {
            return bad("sampling.n_train", "must be ≥ 1");
        }
        if !(self.newton.tol_residual > 0.0) || self.newton.max_iters == 0 {
            return bad("newton", "tol_residual must be positive and max_iters ≥ 1");
        }
        if self.problem.is_transient() && !matches!(self.sampling.source, SampleKind::Grf { .. }) {
            return bad("sampling.source", "transient problems need GRF initial fields");
        }
        Ok(())
    }

    pub fn build_mesh(&self, base: &Path) -> Result<Mesh> {
        Ok(match &self.mesh {
            MeshSource::Grid { counts, bounds } => generate_grid(counts.len(), counts, bounds)?,
            MeshSource::File { path } => read_mesh(&base.join(path))?,
        })
    }

    pub fn net_config(&self, mesh: &Mesh) -> FieldNetConfig {
        FieldNetConfig {
            in_dim: mesh.dim,
            out_dim: self.problem.n_comp(mesh.dim),
            hidden: self.net.hidden.clone(),
            omega0: self.net.omega0,
            latent_dim: self.net.latent_dim,
        }
    }

    /// Training settings; the shuffle stream is keyed by the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            k_encode: self.train.k_encode,
            alpha: self.train.alpha,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            grad_norm: self.train.grad_norm,
            first_order: self.train.first_order,
            seed: ifol_core::rng::stream_seed(self.seed, "train"),
        }
    }
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Mesh::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
