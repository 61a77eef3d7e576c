//! Shift-modulated sine network conditioned on a latent code.
//!
//! Hidden layer `i` computes `sin(ω0 (W_i η + b_i + V_i l + c_i))`; the
//! head is affine. `(W_i, b_i)` form the synthesizer, `(V_i, c_i)` the
//! modulator.

use crate::autodiff::{Tape, Var};
use crate::fem::DirichletSpec;
use crate::mesh::Mesh;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("parameter vector has {got} entries, expected {expected}")]
    ParamCount { got: usize, expected: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldNetConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
    pub latent_dim: usize,
}

fn default_omega0() -> f64 {
    30.0
}

impl FieldNetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.in_dim == 0 || self.out_dim == 0 || self.latent_dim == 0 {
            return Err(NetError::Config("in_dim, out_dim and latent_dim must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(NetError::Config("need at least one hidden layer, all widths ≥ 1".into()));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(NetError::Config(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }

    /// `(rows, cols)` of every synthesizer weight, input layer first.
    fn synth_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.in_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.out_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn n_params(&self) -> usize {
        let s: usize = self.synth_shapes().iter().map(|(r, c)| r * c + r).sum();
        let m: usize = self.hidden.iter().map(|h| h * self.latent_dim + h).sum();
        s + m
    }
}

/// Affine map `x ↦ W x + b`, `W` row-major `rows × cols`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }
}

/// Synthesizer layers `(W_i, b_i)` and modulator layers `(V_i, c_i)`;
/// `c_i` is the modulation bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldNetParams {
    pub synthesizer: Vec<Dense>,
    pub modulator: Vec<Dense>,
}

impl FieldNetParams {
    pub fn zeros(cfg: &FieldNetConfig) -> Self {
        Self {
            synthesizer: cfg.synth_shapes().into_iter().map(|(r, c)| Dense::zeros(r, c)).collect(),
            modulator: cfg.hidden.iter().map(|&h| Dense::zeros(h, cfg.latent_dim)).collect(),
        }
    }

    /// Tensors in canonical order: `W_0, b_0, …, W_L, b_L, V_0, c_0, …`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.synthesizer
            .iter()
            .chain(&self.modulator)
            .flat_map(|d| [d.w.as_slice(), d.b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.synthesizer
            .iter_mut()
            .chain(self.modulator.iter_mut())
            .flat_map(|d| [&mut d.w, &mut d.b])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NetError> {
        let expected: usize = self.tensors().iter().map(|t| t.len()).sum();
        if flat.len() != expected {
            return Err(NetError::ParamCount {
                got: flat.len(),
                expected,
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn from_flat(cfg: &FieldNetConfig, flat: &[f64]) -> Result<Self, NetError> {
        let mut p = Self::zeros(cfg);
        p.set_flat(flat)?;
        Ok(p)
    }

    /// Checks that layer shapes chain for `cfg`.
    pub fn check(&self, cfg: &FieldNetConfig) -> Result<(), NetError> {
        let z = Self::zeros(cfg);
        let same = |a: &[Dense], b: &[Dense]| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.rows == y.rows && x.cols == y.cols && x.w.len() == y.w.len() && x.b.len() == y.b.len())
        };
        if same(&self.synthesizer, &z.synthesizer) && same(&self.modulator, &z.modulator) {
            Ok(())
        } else {
            Err(NetError::Dimension("parameter shapes do not match the configuration".into()))
        }
    }
}

/// Uniform hidden-weight bound `√(6/fan_in)/ω0`.
pub fn hidden_bound(fan_in: usize, omega0: f64) -> f64 {
    (6.0 / fan_in as f64).sqrt() / omega0
}

/// SIREN initialisation. The input layer draws from `U(±1/in_dim)`, all
/// later synthesizer weights and the modulator weights from
/// `U(±√(6/fan_in)/ω0)`; biases start at zero.
pub fn init_params(cfg: &FieldNetConfig, seed: u64) -> Result<FieldNetParams, NetError> {
    cfg.validate()?;
    let mut rng = crate::rng::stream(seed, "init");
    let mut p = FieldNetParams::zeros(cfg);
    for (i, layer) in p.synthesizer.iter_mut().enumerate() {
        let bound = if i == 0 {
            1.0 / cfg.in_dim as f64
        } else {
            hidden_bound(layer.cols, cfg.omega0)
        };
        layer.w.iter_mut().for_each(|w| *w = rng.gen_range(-bound..=bound));
    }
    for layer in p.modulator.iter_mut() {
        let bound = hidden_bound(layer.cols, cfg.omega0);
        layer.w.iter_mut().for_each(|w| *w = rng.gen_range(-bound..=bound));
    }
    Ok(p)
}

/// Pre-activation shift `φ_i = V_i l + c_i` of every hidden layer.
pub fn shifts(l: &[f64], params: &FieldNetParams) -> Vec<Vec<f64>> {
    params
        .modulator
        .iter()
        .map(|m| {
            (0..m.rows)
                .map(|r| m.b[r] + m.w[r * m.cols..(r + 1) * m.cols].iter().zip(l).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Evaluates the network at `points` (row-major `P × in_dim`, already
/// normalised). Each point is computed independently with a fixed
/// summation order, so a value never depends on which other points share
/// the batch.
pub fn decode(cfg: &FieldNetConfig, points: &[f64], l: &[f64], params: &FieldNetParams) -> Vec<f64> {
    assert_eq!(points.len() % cfg.in_dim, 0, "point array is not a multiple of in_dim");
    assert_eq!(l.len(), cfg.latent_dim, "latent length");
    let phi = shifts(l, params);
    let n_hidden = cfg.hidden.len();
    let mut out = Vec::with_capacity(points.len() / cfg.in_dim * cfg.out_dim);
    let mut h: Vec<f64> = Vec::new();
    let mut next: Vec<f64> = Vec::new();
    for x in points.chunks_exact(cfg.in_dim) {
        h.clear();
        h.extend_from_slice(x);
        for (i, layer) in params.synthesizer.iter().enumerate() {
            next.clear();
            for r in 0..layer.rows {
                let row = &layer.w[r * layer.cols..(r + 1) * layer.cols];
                let mut z = layer.b[r];
                for (w, v) in row.iter().zip(&h) {
                    z += w * v;
                }
                if i < n_hidden {
                    z = crate::autodiff::sin_cos(cfg.omega0 * (z + phi[i][r])).0;
                }
                next.push(z);
            }
            std::mem::swap(&mut h, &mut next);
        }
        out.extend_from_slice(&h);
    }
    out
}

/// Leaves holding the network parameters on a tape, in canonical order.
pub struct ParamVars {
    pub synthesizer: Vec<(Var, Var)>,
    pub modulator: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn flat(&self) -> Vec<Var> {
        self.synthesizer
            .iter()
            .chain(&self.modulator)
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

pub fn record_params(tape: &mut Tape, params: &FieldNetParams) -> ParamVars {
    let mut leaf = |d: &Dense| (tape.input(d.w.clone(), d.rows, d.cols), tape.vector(d.b.clone()));
    ParamVars {
        synthesizer: params.synthesizer.iter().map(&mut leaf).collect(),
        modulator: params.modulator.iter().map(&mut leaf).collect(),
    }
}

/// Records a batched decode; returns the `P × out_dim` output node.
pub fn record_decode(tape: &mut Tape, cfg: &FieldNetConfig, points: Var, l: Var, pv: &ParamVars) -> Var {
    let mut h = points;
    let n_hidden = cfg.hidden.len();
    for (i, &(w, b)) in pv.synthesizer.iter().enumerate() {
        let z = tape.matmul_t(h, w);
        if i < n_hidden {
            let (v, c) = pv.modulator[i];
            let vl = tape.matvec(v, l);
            let shift = tape.add(vl, c);
            let shift = tape.add(shift, b);
            let z = tape.add_row(z, shift);
            let z = tape.scale(z, cfg.omega0);
            h = tape.sin(z);
        } else {
            h = tape.add_row(z, b);
        }
    }
    h
}

/// Affine map of a bounding box onto `[-1, 1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordNorm {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl CoordNorm {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        let (lo, hi) = mesh.bounds().into_iter().unzip();
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&a, &b))| {
                let span = b - a;
                if span > 0.0 {
                    2.0 * (v - a) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Normalised node coordinates, row-major `M × dim`.
    pub fn mesh_points(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.coords.iter().flat_map(|x| self.apply(&x[..self.dim()])).collect()
    }
}

/// Network values at every mesh node with Dirichlet entries overwritten.
pub fn nodal_field(
    cfg: &FieldNetConfig,
    mesh: &Mesh,
    norm: &CoordNorm,
    l: &[f64],
    params: &FieldNetParams,
    dirichlet: &DirichletSpec,
) -> Result<Vec<f64>, NetError> {
    if mesh.dim != cfg.in_dim || norm.dim() != cfg.in_dim {
        return Err(NetError::Dimension(format!(
            "mesh dimension {} vs network input {}",
            mesh.dim, cfg.in_dim
        )));
    }
    let mut u = decode(cfg, &norm.mesh_points(mesh), l, params);
    dirichlet.apply_in_place(&mut u, cfg.out_dim);
    Ok(u)
}
