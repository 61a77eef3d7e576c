use super::{Sample, Task};
use crate::autodiff::{AdError, Functional, LatentObjective, Recorded, Tape};
use crate::fem::FemModel;
use crate::field_net::{record_decode, record_params, FieldNetParams};
use std::sync::Arc;

/// The assembled FEM loss as a tape node with inputs `(u, c)`.
pub struct FemLoss {
    pub model: Arc<FemModel>,
    pub prev: Option<Vec<f64>>,
    /// Whether derivatives in the control are needed.
    pub wrt_c: bool,
}

impl Functional for FemLoss {
    fn name(&self) -> &'static str {
        "fem_loss"
    }

    fn eval(&self, xs: &[&[f64]]) -> Result<(f64, Vec<Vec<f64>>), String> {
        let (loss, gu, gc) = self
            .model
            .gradient(xs[0], xs[1], self.prev.as_deref(), self.wrt_c)
            .map_err(|e| e.to_string())?;
        let gc = if gc.is_empty() { vec![0.0; xs[1].len()] } else { gc };
        Ok((loss, vec![gu, gc]))
    }

    fn hvp(&self, xs: &[&[f64]], dirs: &[Option<&[f64]>]) -> Result<Vec<Vec<f64>>, String> {
        let d = self
            .model
            .directional(xs[0], xs[1], self.prev.as_deref(), dirs[0], dirs[1], self.wrt_c)
            .map_err(|e| e.to_string())?;
        let hc = if d.hess_c.is_empty() { vec![0.0; xs[1].len()] } else { d.hess_c };
        Ok(vec![d.hess_u, hc])
    }
}

/// Which leaves an objective reports as its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wrt {
    /// Network tensors in canonical order.
    Network,
    /// The sample's nodal control field.
    Control,
}

/// `L(u(l), c)` with `u(l)` the decoded field after hard Dirichlet overwrite.
pub struct PdeObjective<'a> {
    task: &'a Task,
    params: &'a FieldNetParams,
    sample: &'a Sample,
    wrt: Wrt,
    loss: Arc<FemLoss>,
}

impl<'a> PdeObjective<'a> {
    pub fn new(task: &'a Task, params: &'a FieldNetParams, sample: &'a Sample, wrt: Wrt) -> Self {
        let loss = Arc::new(FemLoss {
            model: task.model.clone(),
            prev: sample.u_prev.clone(),
            wrt_c: wrt == Wrt::Control,
        });
        Self {
            task,
            params,
            sample,
            wrt,
            loss,
        }
    }
}

/// Records the decoded, boundary-corrected nodal field; returns
/// `(tape, latent, network leaves, control leaf, u)`.
fn record_field(
    task: &Task,
    params: &FieldNetParams,
    sample: &Sample,
    latent: &[f64],
) -> (Tape, crate::autodiff::Var, Vec<crate::autodiff::Var>, crate::autodiff::Var, crate::autodiff::Var) {
    let mut tape = Tape::new();
    let pv = record_params(&mut tape, params);
    let n_pts = task.mesh().n_nodes();
    let pts = tape.input(task.points().to_vec(), n_pts, task.net.in_dim);
    let l = tape.vector(latent.to_vec());
    let out = record_decode(&mut tape, &task.net, pts, l, &pv);
    let (idx, vals) = task.boundary(sample);
    let u = tape.overwrite(out, idx, vals);
    let c = tape.vector(sample.c.clone());
    (tape, l, pv.flat(), c, u)
}

impl LatentObjective for PdeObjective<'_> {
    fn record(&self, latent: &[f64]) -> Result<Recorded, AdError> {
        let (mut tape, l, net, c, u) = record_field(self.task, self.params, self.sample, latent);
        let loss = tape.functional(&[u, c], self.loss.clone());
        tape.check()?;
        Ok(Recorded {
            tape,
            latent: l,
            params: match self.wrt {
                Wrt::Network => net,
                Wrt::Control => vec![c],
            },
            loss,
        })
    }
}

/// `𝒥 = Σ_i w_i u_i`, the quadrature integral of the first solution
/// component of the decoded field. Its parameter list is the control leaf,
/// matching a [`PdeObjective`] with [`Wrt::Control`].
pub struct IntegralObjective<'a> {
    task: &'a Task,
    params: &'a FieldNetParams,
    sample: &'a Sample,
    weights: Vec<f64>,
}

impl<'a> IntegralObjective<'a> {
    pub fn new(task: &'a Task, params: &'a FieldNetParams, sample: &'a Sample) -> Self {
        let nc = task.model.n_comp();
        let mut weights = vec![0.0; task.model.n_dof()];
        for (n, w) in task.model.node_weights().iter().enumerate() {
            weights[n * nc] = *w;
        }
        Self {
            task,
            params,
            sample,
            weights,
        }
    }
}

impl LatentObjective for IntegralObjective<'_> {
    fn record(&self, latent: &[f64]) -> Result<Recorded, AdError> {
        let (mut tape, l, _, c, u) = record_field(self.task, self.params, self.sample, latent);
        let w = tape.vector(self.weights.clone());
        let j = tape.dot(u, w);
        tape.check()?;
        Ok(Recorded {
            tape,
            latent: l,
            params: vec![c],
            loss: j,
        })
    }
}
