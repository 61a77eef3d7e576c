//! Latent encoding, meta-training, inference and rollouts.

mod objective;
mod optim;

pub use objective::{FemLoss, IntegralObjective, PdeObjective, Wrt};
pub use optim::{AdamState, LrSchedule};

use crate::autodiff::{descend, unrolled_grad, AdError};
use crate::fem::{DirichletSpec, FemError, FemModel};
use crate::field_net::{decode, CoordNorm, FieldNetConfig, FieldNetParams, NetError};
use crate::mesh::Mesh;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("encoding diverged at step {step} (loss {loss})")]
    EncodeDiverged { step: usize, loss: f64 },
    #[error("non-finite meta-gradient (sample seed {seed}, norm {norm})")]
    NonFiniteGradient { seed: u64, norm: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("sample does not fit the task: {0}")]
    Sample(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl LearnError {
    fn from_ad(e: AdError) -> Self {
        match e {
            AdError::Diverged { step, value } => LearnError::EncodeDiverged { step, loss: value },
            other => LearnError::Autodiff(other),
        }
    }
}

/// One parametrised PDE instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Provenance seed.
    pub seed: u64,
    /// Nodal control field.
    pub c: Vec<f64>,
    /// Previous-step field of transient problems.
    #[serde(default)]
    pub u_prev: Option<Vec<f64>>,
    /// Replacement values for the task's Dirichlet entries, in entry order.
    #[serde(default)]
    pub dirichlet_values: Option<Vec<f64>>,
}

impl Sample {
    pub fn stationary(seed: u64, c: Vec<f64>) -> Self {
        Self {
            seed,
            c,
            u_prev: None,
            dirichlet_values: None,
        }
    }

    pub fn transient(seed: u64, c: Vec<f64>, u_prev: Vec<f64>) -> Self {
        Self {
            seed,
            c,
            u_prev: Some(u_prev),
            dirichlet_values: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
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
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    3
}
fn default_alpha() -> f64 {
    1e-2
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(LearnError::Config("alpha must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::Config("batch_size must be at least 1".into()));
        }
        self.lr.validate().map_err(LearnError::Config)
    }
}

/// Everything needed to turn a latent code into a loss on one mesh.
pub struct Task {
    pub net: FieldNetConfig,
    pub model: Arc<FemModel>,
    pub dirichlet: DirichletSpec,
    pub norm: CoordNorm,
    points: Vec<f64>,
    dir_idx: Arc<[usize]>,
    dir_vals: Vec<f64>,
}

impl Task {
    pub fn new(net: FieldNetConfig, model: Arc<FemModel>, dirichlet: DirichletSpec, norm: CoordNorm) -> Result<Self, LearnError> {
        net.validate()?;
        let mesh = model.mesh();
        if mesh.dim != net.in_dim || norm.dim() != net.in_dim {
            return Err(LearnError::Config(format!(
                "network input dimension {} does not match mesh dimension {}",
                net.in_dim, mesh.dim
            )));
        }
        if model.n_comp() != net.out_dim {
            return Err(LearnError::Config(format!(
                "network output dimension {} does not match {} solution components",
                net.out_dim,
                model.n_comp()
            )));
        }
        dirichlet.check(mesh.n_nodes(), model.n_comp())?;
        let points = norm.mesh_points(mesh);
        let (idx, vals): (Vec<usize>, Vec<f64>) = dirichlet.dofs(model.n_comp()).unzip();
        Ok(Self {
            net,
            model,
            dirichlet,
            norm,
            points,
            dir_idx: idx.into(),
            dir_vals: vals,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        self.model.mesh()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Dirichlet `(dofs, values)` for a sample.
    pub(crate) fn boundary<'a>(&'a self, s: &'a Sample) -> (Arc<[usize]>, &'a [f64]) {
        (self.dir_idx.clone(), s.dirichlet_values.as_deref().unwrap_or(&self.dir_vals))
    }

    /// Dirichlet spec with a sample's replacement values applied.
    pub fn dirichlet_for(&self, s: &Sample) -> DirichletSpec {
        match &s.dirichlet_values {
            None => self.dirichlet.clone(),
            Some(v) => {
                let entries = self
                    .dirichlet
                    .entries()
                    .iter()
                    .zip(v)
                    .map(|(e, &value)| crate::fem::DirichletEntry { value, ..*e })
                    .collect();
                DirichletSpec::new(entries).expect("entries already validated")
            }
        }
    }

    pub fn check_sample(&self, s: &Sample) -> Result<(), LearnError> {
        let m = self.model.mesh().n_nodes();
        let problem = self.model.problem();
        if problem.uses_control() && s.c.len() != m {
            return Err(LearnError::Sample(format!("control has {} entries, mesh has {m} nodes", s.c.len())));
        }
        if problem.is_transient() != s.u_prev.is_some() {
            return Err(LearnError::Sample("previous-step field must be present exactly for transient problems".into()));
        }
        if let Some(p) = &s.u_prev {
            if p.len() != self.model.n_dof() {
                return Err(LearnError::Sample(format!("previous step has {} entries", p.len())));
            }
        }
        if let Some(v) = &s.dirichlet_values {
            if v.len() != self.dir_vals.len() {
                return Err(LearnError::Sample(format!(
                    "{} Dirichlet values for {} entries",
                    v.len(),
                    self.dir_vals.len()
                )));
            }
        }
        Ok(())
    }
}

/// Plain gradient descent on the latent code from zero, `k_encode` steps.
pub fn encode(sample: &Sample, params: &FieldNetParams, task: &Task, cfg: &TrainConfig) -> Result<Vec<f64>, LearnError> {
    task.check_sample(sample)?;
    let obj = PdeObjective::new(task, params, sample, Wrt::Network);
    let l0 = vec![0.0; task.net.latent_dim];
    let run = descend(&obj, &l0, cfg.k_encode, cfg.alpha).map_err(LearnError::from_ad)?;
    Ok(run.last().to_vec())
}

/// Outer loss after encoding and the meta-gradient for one sample, flattened
/// in canonical parameter order.
pub fn meta_gradient(
    sample: &Sample,
    params: &FieldNetParams,
    task: &Task,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>), LearnError> {
    task.check_sample(sample)?;
    let obj = PdeObjective::new(task, params, sample, Wrt::Network);
    let l0 = vec![0.0; task.net.latent_dim];
    let u = unrolled_grad(&obj, &obj, &l0, cfg.k_encode, cfg.alpha, cfg.first_order).map_err(LearnError::from_ad)?;
    Ok((u.outer_value, u.grads.concat()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub mean_loss: f64,
    /// Norm of the averaged gradient before any normalisation.
    pub grad_norm: f64,
}

/// One meta-update on a mini-batch.
pub fn outer_step(
    batch: &[&Sample],
    params: &mut FieldNetParams,
    opt: &mut AdamState,
    task: &Task,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepReport, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::Config("empty mini-batch".into()));
    }
    let snapshot = &*params;
    let parts: Vec<Result<(f64, Vec<f64>), LearnError>> =
        batch.par_iter().map(|s| meta_gradient(s, snapshot, task, cfg)).collect();
    let n = batch.len() as f64;
    let mut g = vec![0.0; cfg_len(params)];
    let mut loss = 0.0;
    for (s, part) in batch.iter().zip(parts) {
        let (l, gs) = part?;
        let norm = crate::linalg::norm2(&gs);
        if !norm.is_finite() || !l.is_finite() {
            return Err(LearnError::NonFiniteGradient { seed: s.seed, norm });
        }
        loss += l;
        g.iter_mut().zip(&gs).for_each(|(a, b)| *a += b);
    }
    g.iter_mut().for_each(|x| *x /= n);
    let norm = crate::linalg::norm2(&g);
    if cfg.grad_norm && norm > 0.0 {
        g.iter_mut().for_each(|x| *x /= norm);
    }
    let mut flat = params.to_flat();
    opt.update(&mut flat, &g, lr);
    params.set_flat(&flat)?;
    Ok(StepReport {
        mean_loss: loss / n,
        grad_norm: norm,
    })
}

fn cfg_len(p: &FieldNetParams) -> usize {
    p.tensors().iter().map(|t| t.len()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub type TrainHistory = Vec<EpochRecord>;

/// Training state that can be resumed.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: FieldNetParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Shuffle stream; its position fully determines later epoch orders.
    pub shuffle: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: FieldNetParams, cfg: &TrainConfig) -> Self {
        let n = cfg_len(&params);
        Self {
            params,
            adam: AdamState::new(n),
            epoch: 0,
            shuffle: crate::rng::stream(cfg.seed, "shuffle"),
        }
    }
}

/// Meta-training loop: shuffle, split into mini-batches, [`outer_step`]
/// each. `observer` sees the state after every epoch.
pub fn train(
    dataset: &[Sample],
    task: &Task,
    cfg: &TrainConfig,
    params: FieldNetParams,
    observer: impl FnMut(&EpochRecord, &TrainState),
) -> Result<(TrainState, TrainHistory), LearnError> {
    resume(dataset, task, cfg, TrainState::new(params, cfg), observer)
}

/// Continues [`train`] from `state` up to `cfg.epochs`.
pub fn resume(
    dataset: &[Sample],
    task: &Task,
    cfg: &TrainConfig,
    mut state: TrainState,
    mut observer: impl FnMut(&EpochRecord, &TrainState),
) -> Result<(TrainState, TrainHistory), LearnError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(LearnError::Config("empty dataset".into()));
    }
    for s in dataset {
        task.check_sample(s)?;
    }
    state.params.check(&task.net)?;
    if state.adam.m.len() != cfg_len(&state.params) {
        return Err(LearnError::Config("optimizer state does not match the network".into()));
    }
    let mut history = Vec::with_capacity(cfg.epochs.saturating_sub(state.epoch));
    let start = Instant::now();
    for epoch in state.epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut state.shuffle);
        let lr = cfg.lr.at(epoch, cfg.epochs);
        let mut loss = 0.0;
        let mut gnorm = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let rep = outer_step(&batch, &mut state.params, &mut state.adam, task, cfg, lr)?;
            loss += rep.mean_loss * batch.len() as f64;
            gnorm += rep.grad_norm;
            steps += 1;
        }
        state.epoch = epoch + 1;
        let rec = EpochRecord {
            epoch,
            mean_loss: loss / dataset.len() as f64,
            grad_norm: gnorm / steps as f64,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {epoch}: loss {:.6e} |g| {:.3e}", rec.mean_loss, rec.grad_norm);
        observer(&rec, &state);
        history.push(rec);
    }
    Ok((state, history))
}

/// Encodes on the task mesh and decodes on `eval` (mesh and its Dirichlet
/// data) or, when absent, on the task mesh.
pub fn infer(
    sample: &Sample,
    params: &FieldNetParams,
    task: &Task,
    cfg: &TrainConfig,
    eval: Option<(&Mesh, &DirichletSpec)>,
) -> Result<Vec<f64>, LearnError> {
    let l = encode(sample, params, task, cfg)?;
    Ok(match eval {
        None => {
            let mut u = decode(&task.net, &task.points, &l, params);
            task.dirichlet_for(sample).apply_in_place(&mut u, task.net.out_dim);
            u
        }
        Some((mesh, dir)) => crate::field_net::nodal_field(&task.net, mesh, &task.norm, &l, params, dir)?,
    })
}

/// Result of repeated one-step inference.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub fields: Vec<Vec<f64>>,
    /// Set when a step failed; `fields` then holds the steps before it.
    pub error: Option<LearnError>,
}

/// Feeds each prediction back as the previous step, `steps` times.
pub fn rollout(
    u0: &[f64],
    control: &[f64],
    params: &FieldNetParams,
    task: &Task,
    steps: usize,
    cfg: &TrainConfig,
) -> Result<Rollout, LearnError> {
    if !task.model.problem().is_transient() {
        return Err(LearnError::Config("rollout needs a transient problem".into()));
    }
    let mut fields = Vec::with_capacity(steps);
    let mut prev = u0.to_vec();
    for _ in 0..steps {
        let s = Sample::transient(0, control.to_vec(), prev.clone());
        match infer(&s, params, task, cfg, None) {
            Ok(u) if u.iter().all(|x| x.is_finite()) => {
                prev = u.clone();
                fields.push(u);
            }
            Ok(_) => {
                return Ok(Rollout {
                    fields,
                    error: Some(LearnError::EncodeDiverged {
                        step: 0,
                        loss: f64::NAN,
                    }),
                })
            }
            Err(e) => return Ok(Rollout { fields, error: Some(e) }),
        }
    }
    Ok(Rollout { fields, error: None })
}
