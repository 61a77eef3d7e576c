//! Random control fields, initial conditions and boundary vectors.

use crate::learning::Sample;
use crate::linalg::{cholesky, DenseMatrix, LinalgError};
use crate::mesh::Mesh;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid sampler settings: {0}")]
    Spec(String),
    #[error("field has no dynamic range to rescale")]
    FlatField,
    #[error("covariance factorisation failed even with jitter {jitter:e}: {source}")]
    Covariance { jitter: f64, source: LinalgError },
}

/// Cosine-product field `Σ a_ijk cos(π f_i x) cos(π f_j y) cos(π f_k z)`
/// with `a ~ U(coeff_range)`, min-max rescaled onto `out_range`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSpec {
    pub freq_x: Vec<u32>,
    pub freq_y: Vec<u32>,
    #[serde(default = "zero_freq")]
    pub freq_z: Vec<u32>,
    #[serde(default = "unit_range")]
    pub coeff_range: (f64, f64),
    #[serde(default = "unit_out")]
    pub out_range: (f64, f64),
}

fn zero_freq() -> Vec<u32> {
    vec![0]
}
fn unit_range() -> (f64, f64) {
    (-1.0, 1.0)
}
fn unit_out() -> (f64, f64) {
    (0.0, 1.0)
}

impl FourierSpec {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.freq_x.is_empty() || self.freq_y.is_empty() || self.freq_z.is_empty() {
            return Err(SamplingError::Spec("frequency lists must be nonempty".into()));
        }
        if !(self.out_range.0 < self.out_range.1) {
            return Err(SamplingError::Spec("out_range must be increasing".into()));
        }
        if !(self.coeff_range.0 <= self.coeff_range.1) {
            return Err(SamplingError::Spec("coeff_range must be ordered".into()));
        }
        Ok(())
    }

    pub fn n_terms(&self) -> usize {
        self.freq_x.len() * self.freq_y.len() * self.freq_z.len()
    }
}

/// Evaluates the cosine-product field for the given coefficients
/// (ordered x-frequency slowest) and rescales it.
pub fn fourier_with_coeffs(mesh: &Mesh, spec: &FourierSpec, coeffs: &[f64]) -> Result<Vec<f64>, SamplingError> {
    spec.validate()?;
    assert_eq!(coeffs.len(), spec.n_terms(), "one coefficient per frequency triple");
    let pi = std::f64::consts::PI;
    let raw: Vec<f64> = mesh
        .coords
        .iter()
        .map(|x| {
            let (px, py, pz) = (x[0], x.get(1).copied().unwrap_or(0.0), x.get(2).copied().unwrap_or(0.0));
            let mut s = 0.0;
            let mut k = 0;
            for &fx in &spec.freq_x {
                let cx = (pi * fx as f64 * px).cos();
                for &fy in &spec.freq_y {
                    let cy = (pi * fy as f64 * py).cos();
                    for &fz in &spec.freq_z {
                        s += coeffs[k] * cx * cy * (pi * fz as f64 * pz).cos();
                        k += 1;
                    }
                }
            }
            s
        })
        .collect();
    rescale(&raw, spec.out_range)
}

pub fn fourier_field(mesh: &Mesh, spec: &FourierSpec, seed: u64) -> Result<Vec<f64>, SamplingError> {
    spec.validate()?;
    let mut rng = crate::rng::stream(seed, "fourier");
    let (a, b) = spec.coeff_range;
    let coeffs: Vec<f64> = (0..spec.n_terms()).map(|_| a + (b - a) * rng.gen::<f64>()).collect();
    fourier_with_coeffs(mesh, spec, &coeffs)
}

fn rescale(raw: &[f64], (lo, hi): (f64, f64)) -> Result<Vec<f64>, SamplingError> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if !(span > 1e-12 * (1.0 + max.abs().max(min.abs()))) {
        return Err(SamplingError::FlatField);
    }
    Ok(raw.iter().map(|v| lo + (hi - lo) * (v - min) / span).collect())
}

/// `scale·sigmoid(sharpness·(k − ½)) + floor`, pointwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidSpec {
    pub sharpness: f64,
    pub floor: f64,
    pub scale: f64,
}

impl Default for SigmoidSpec {
    fn default() -> Self {
        Self {
            sharpness: 20.0,
            floor: 0.05,
            scale: 0.95,
        }
    }
}

pub fn sigmoid_project(field: &[f64], sharpness: f64, floor: f64, scale: f64) -> Vec<f64> {
    field
        .iter()
        .map(|k| scale / (1.0 + (-sharpness * (k - 0.5)).exp()) + floor)
        .collect()
}

/// Zero-mean Gaussian field with the squared-exponential kernel
/// `exp(−‖x_i − x_j‖² / (2ε²))` of unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub lengthscale: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_jitter() -> f64 {
    1e-8
}

const MAX_JITTER: f64 = 1e-4;

/// Factorised covariance for repeated draws on one mesh.
pub struct GrfSampler {
    lower: DenseMatrix,
    /// Jitter actually used after escalation.
    pub jitter: f64,
}

impl GrfSampler {
    pub fn new(mesh: &Mesh, spec: &GrfSpec) -> Result<Self, SamplingError> {
        if !(spec.lengthscale > 0.0) || !(spec.jitter >= 0.0) {
            return Err(SamplingError::Spec("lengthscale must be positive and jitter non-negative".into()));
        }
        let k = covariance(mesh, spec.lengthscale, 0.0);
        let mut jitter = spec.jitter;
        loop {
            let mut kj = k.clone();
            for i in 0..kj.rows {
                kj.add(i, i, jitter);
            }
            match cholesky(&kj) {
                Ok(lower) => return Ok(Self { lower, jitter }),
                Err(e) if jitter >= MAX_JITTER => return Err(SamplingError::Covariance { jitter, source: e }),
                // ×10 per attempt, capped.
                Err(_) => jitter = if jitter > 0.0 { (jitter * 10.0).min(MAX_JITTER) } else { 1e-8 },
            }
        }
    }

    pub fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.lower.rows;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (0..n)
            .map(|i| (0..=i).map(|j| self.lower.get(i, j) * z[j]).sum())
            .collect()
    }
}

/// Kernel matrix with `jitter` on the diagonal.
pub fn covariance(mesh: &Mesh, lengthscale: f64, jitter: f64) -> DenseMatrix {
    let n = mesh.n_nodes();
    let mut k = DenseMatrix::zeros(n, n);
    let s = 2.0 * lengthscale * lengthscale;
    for i in 0..n {
        for j in 0..=i {
            let d2: f64 = mesh.coords[i].iter().zip(&mesh.coords[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = (-d2 / s).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
        k.add(i, i, jitter);
    }
    k
}

pub fn grf_field(mesh: &Mesh, spec: &GrfSpec, seed: u64) -> Result<Vec<f64>, SamplingError> {
    let sampler = GrfSampler::new(mesh, spec)?;
    Ok(sampler.draw(&mut crate::rng::stream(seed, "grf")))
}

/// I.i.d. `N(0, magnitude²)` components.
pub fn random_bc_vector(seed: u64, len: usize, magnitude: f64) -> Vec<f64> {
    let mut rng = crate::rng::stream(seed, "bc");
    (0..len).map(|_| magnitude * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// How dataset samples are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleKind {
    /// Nodal control field from the Fourier sampler, optionally sigmoid-projected.
    Fourier {
        fourier: FourierSpec,
        #[serde(default)]
        sigmoid: Option<SigmoidSpec>,
    },
    /// Previous-step field from a GRF with lengthscale drawn uniformly from
    /// `lengthscale`; `control` is a constant control value (1 when absent).
    Grf {
        lengthscale: (f64, f64),
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default)]
        clamp: Option<f64>,
        #[serde(default)]
        control: Option<f64>,
    },
    /// Random values for the prescribed Dirichlet entries, constant control.
    BoundaryVector {
        magnitude: f64,
        n_values: usize,
        #[serde(default)]
        control: Option<f64>,
    },
}

fn unit() -> f64 {
    1.0
}

/// `n` samples from seeds `seed, seed+1, …`; `n_comp` sizes previous-step fields.
pub fn make_dataset(kind: &SampleKind, n: usize, mesh: &Mesh, n_comp: usize, seed: u64) -> Result<Vec<Sample>, SamplingError> {
    if n == 0 {
        return Err(SamplingError::Spec("dataset size must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| seed.wrapping_add(i)).collect();
    match kind {
        SampleKind::Fourier { fourier, sigmoid } => seeds
            .iter()
            .map(|&s| {
                let mut c = fourier_field(mesh, fourier, s)?;
                if let Some(sg) = sigmoid {
                    c = sigmoid_project(&c, sg.sharpness, sg.floor, sg.scale);
                }
                Ok(Sample::stationary(s, c))
            })
            .collect(),
        SampleKind::Grf {
            lengthscale,
            amplitude,
            clamp,
            control,
        } => {
            if n_comp != 1 {
                return Err(SamplingError::Spec("GRF initial fields are scalar".into()));
            }
            let (lo, hi) = *lengthscale;
            if !(lo > 0.0 && lo <= hi) {
                return Err(SamplingError::Spec("lengthscale range must be positive and ordered".into()));
            }
            let cval = control.unwrap_or(1.0);
            seeds
                .iter()
                .map(|&s| {
                    let mut rng = crate::rng::stream(s, "grf-lengthscale");
                    let ell = lo + (hi - lo) * rng.gen::<f64>();
                    let mut u = grf_field(mesh, &GrfSpec { lengthscale: ell, jitter: 1e-8 }, s)?;
                    for v in u.iter_mut() {
                        *v *= amplitude;
                        if let Some(m) = clamp {
                            *v = v.clamp(-m, *m);
                        }
                    }
                    Ok(Sample::transient(s, vec![cval; mesh.n_nodes()], u))
                })
                .collect()
        }
        SampleKind::BoundaryVector {
            magnitude,
            n_values,
            control,
        } => {
            if !(*magnitude > 0.0) {
                return Err(SamplingError::Spec("magnitude must be positive".into()));
            }
            let cval = control.unwrap_or(1.0);
            Ok(seeds
                .iter()
                .map(|&s| {
                    let mut smp = Sample::stationary(s, vec![cval; mesh.n_nodes()]);
                    smp.dirichlet_values = Some(random_bc_vector(s, *n_values, *magnitude));
                    smp
                })
                .collect())
        }
    }
}
