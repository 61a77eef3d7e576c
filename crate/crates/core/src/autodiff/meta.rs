//! Exact derivatives through a few steps of latent gradient descent.

use super::tape::{Tape, Var};
use super::AdError;

/// A loss recorded on a fresh tape at a given latent vector.
pub struct Recorded {
    pub tape: Tape,
    pub latent: Var,
    /// Leaves the outer derivative is taken with respect to.
    pub params: Vec<Var>,
    pub loss: Var,
}

impl Recorded {
    pub fn value(&self) -> f64 {
        self.tape.scalar(self.loss)
    }
}

/// Something that can record its scalar loss at a latent vector `l`.
pub trait LatentObjective {
    fn record(&self, latent: &[f64]) -> Result<Recorded, AdError>;
}

/// Latent trajectory of `k` gradient-descent steps from `l0`.
pub struct InnerRun {
    /// `k + 1` iterates, starting with `l0`.
    pub latents: Vec<Vec<f64>>,
    /// Loss at each of the first `k` iterates.
    pub losses: Vec<f64>,
    tapes: Vec<Recorded>,
}

impl InnerRun {
    pub fn last(&self) -> &[f64] {
        self.latents.last().expect("trajectory holds the start point")
    }
}

/// `l_{j+1} = l_j − α ∇_l L(l_j)`, `k` times.
pub fn descend(inner: &dyn LatentObjective, l0: &[f64], k: usize, alpha: f64) -> Result<InnerRun, AdError> {
    let mut latents = vec![l0.to_vec()];
    let mut losses = Vec::with_capacity(k);
    let mut tapes = Vec::with_capacity(k);
    for step in 0..k {
        let l = latents.last().unwrap();
        let rec = inner.record(l)?;
        let loss = rec.value();
        if !loss.is_finite() {
            return Err(AdError::Diverged { step, value: loss });
        }
        let mut adj = rec.tape.gradient(rec.loss, &[rec.latent])?;
        let g = adj.take(rec.latent);
        let next: Vec<f64> = l.iter().zip(&g).map(|(x, d)| x - alpha * d).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(AdError::Diverged { step, value: f64::NAN });
        }
        losses.push(loss);
        tapes.push(rec);
        latents.push(next);
    }
    Ok(InnerRun {
        latents,
        losses,
        tapes,
    })
}

pub struct Unrolled {
    pub inner: InnerRun,
    pub outer_value: f64,
    /// Gradient with respect to each entry of [`Recorded::params`].
    pub grads: Vec<Vec<f64>>,
}

/// Derivative of `outer(p, l_K(p))` with respect to `p`, where `l_K` is `k`
/// descent steps on `inner` from `l0`.
///
/// The recursion runs backwards over the stored inner tapes:
/// `g_p −= α H_pl a`, `a −= α H_ll a`, with `a` initialised to `∂outer/∂l`.
/// Both Hessian blocks come from one forward-over-reverse sweep per step.
/// With `first_order` the latent is treated as a constant.
pub fn unrolled_grad(
    inner: &dyn LatentObjective,
    outer: &dyn LatentObjective,
    l0: &[f64],
    k: usize,
    alpha: f64,
    first_order: bool,
) -> Result<Unrolled, AdError> {
    let run = descend(inner, l0, k, alpha)?;
    let rec = outer.record(run.last())?;
    let mut wrt = rec.params.clone();
    wrt.push(rec.latent);
    let mut adj = rec.tape.gradient(rec.loss, &wrt)?;
    let mut grads: Vec<Vec<f64>> = rec.params.iter().map(|&p| adj.take(p)).collect();
    if !first_order {
        let mut a = adj.take(rec.latent);
        for r in run.tapes.iter().rev() {
            assert_eq!(r.params.len(), grads.len(), "inner and outer parameter lists differ");
            let mut wrt = r.params.clone();
            wrt.push(r.latent);
            let (_, mut h) = r.tape.hvp(r.loss, &[(r.latent, &a)], &wrt)?;
            for (g, &p) in grads.iter_mut().zip(&r.params) {
                let hp = h.take(p);
                g.iter_mut().zip(&hp).for_each(|(x, y)| *x -= alpha * y);
            }
            let hl = h.take(r.latent);
            a.iter_mut().zip(&hl).for_each(|(x, y)| *x -= alpha * y);
        }
    }
    Ok(Unrolled {
        inner: run,
        outer_value: rec.value(),
        grads,
    })
}
