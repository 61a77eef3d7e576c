//! The `ifol` subcommands.

use crate::checkpoint::Checkpoint;
use crate::config::{read_mesh, RunConfig};
use crate::dataset::{self, DatasetHeader};
use crate::error::{CliError, Result};
use crate::export::{write_fields, Cell, Field, Table};
use ifol_core::fem::{resolve_dirichlet, DirichletSpec, FemModel};
use ifol_core::field_net::{init_params, CoordNorm};
use ifol_core::learning::{self, infer, Sample, Task, TrainConfig, TrainState};
use ifol_core::mesh::{interpolate, Mesh};
use ifol_core::oracle::{self, adjoint_sensitivity, error_metrics, ifol_sensitivity, newton_solve, pearson};
use ifol_core::rng::stream_seed;
use ifol_core::sampling::make_dataset;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Command-line overrides shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub eval_mesh: Option<PathBuf>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Index into the test dataset; all (or the first few) when absent.
    pub sample: Option<usize>,
    /// Continue training from the checkpoint.
    pub resume: bool,
}

/// A loaded configuration with its mesh and reference model.
pub struct Run {
    pub cfg: RunConfig,
    pub mesh: Arc<Mesh>,
    pub model: Arc<FemModel>,
    pub dirichlet: DirichletSpec,
    pub out: PathBuf,
    pub checkpoint: PathBuf,
}

impl Run {
    pub fn load(opts: &Options) -> Result<Self> {
        let path = opts
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mesh = Arc::new(cfg.build_mesh(base)?);
        let model = Arc::new(FemModel::new(mesh.clone(), cfg.problem, &cfg.neumann, cfg.fem)?);
        let dirichlet = resolve_dirichlet(&mesh, &cfg.dirichlet)?;
        let out = opts.out.clone().unwrap_or_else(|| base.join(&cfg.paths.out));
        let checkpoint = opts.checkpoint.clone().unwrap_or_else(|| out.join(&cfg.paths.checkpoint));
        Ok(Self {
            cfg,
            mesh,
            model,
            dirichlet,
            out,
            checkpoint,
        })
    }

    pub fn task(&self, norm: CoordNorm) -> Result<Task> {
        Ok(Task::new(self.cfg.net_config(&self.mesh), self.model.clone(), self.dirichlet.clone(), norm)?)
    }

    pub fn train_set(&self) -> Result<Vec<Sample>> {
        Ok(dataset::read(&self.out.join(&self.cfg.paths.dataset), &self.mesh.fingerprint())?.1)
    }

    pub fn test_set(&self) -> Result<Vec<Sample>> {
        Ok(dataset::read(&self.out.join(&self.cfg.paths.test_dataset), &self.mesh.fingerprint())?.1)
    }

    /// Checkpoint plus the task it was trained for.
    pub fn trained(&self) -> Result<(Checkpoint, Task)> {
        let ckpt = Checkpoint::load(&self.checkpoint)?;
        if ckpt.mesh != self.mesh.fingerprint() {
            return Err(CliError::Config("checkpoint was trained on a different mesh".into()));
        }
        if ckpt.net != self.cfg.net_config(&self.mesh) {
            return Err(CliError::Config("checkpoint network does not match the net block".into()));
        }
        let task = self.task(ckpt.norm.clone())?;
        Ok((ckpt, task))
    }

    fn solve(&self, model: &FemModel, s: &Sample, dir: &DirichletSpec) -> Result<oracle::NewtonReport> {
        let u0 = s.u_prev.clone().unwrap_or_else(|| vec![0.0; model.n_dof()]);
        Ok(newton_solve(model, &s.c, s.u_prev.as_deref(), dir, &u0, &self.cfg.newton)?)
    }
}

fn pick<'a>(samples: &'a [Sample], idx: Option<usize>, default_count: usize) -> Result<Vec<&'a Sample>> {
    match idx {
        Some(i) => samples
            .get(i)
            .map(|s| vec![s])
            .ok_or_else(|| CliError::Config(format!("--sample {i} is out of range ({} samples)", samples.len()))),
        None => Ok(samples.iter().take(default_count).collect()),
    }
}

/// Writes the training and test datasets.
pub fn cmd_sample(opts: &Options) -> Result<()> {
    let run = Run::load(opts)?;
    let n_comp = run.model.n_comp();
    let src = &run.cfg.sampling.source;
    let fp = run.mesh.fingerprint();
    let train_seed = stream_seed(run.cfg.seed, "train-samples");
    let test_seed = stream_seed(run.cfg.seed, "test-samples");
    let (n_train, n_test) = (run.cfg.sampling.n_train as u64, run.cfg.sampling.n_test as u64);
    let overlap = |a: u64, n: u64, b: u64| b.wrapping_sub(a) < n;
    if overlap(train_seed, n_train, test_seed) || overlap(test_seed, n_test, train_seed) {
        return Err(CliError::Config("training and test seed ranges overlap; change seed".into()));
    }
    let write = |name: &Path, n: u64, base: u64| -> Result<()> {
        if n == 0 {
            return Ok(());
        }
        let samples = make_dataset(src, n as usize, &run.mesh, n_comp, base)?;
        let header = DatasetHeader {
            format: dataset::FORMAT.into(),
            version: 1,
            mesh: fp.clone(),
            n_samples: samples.len(),
            base_seed: base,
            source: src.clone(),
        };
        let path = run.out.join(name);
        dataset::write(&path, &header, &samples)?;
        println!("wrote {} samples to {}", samples.len(), path.display());
        Ok(())
    };
    write(&run.cfg.paths.dataset, n_train, train_seed)?;
    write(&run.cfg.paths.test_dataset, n_test, test_seed)
}

/// Meta-trains the network; writes the checkpoint (plus numbered snapshots
/// every `checkpoint_every` epochs), `history.csv` and `timing.csv`
/// (wall-clock seconds, kept apart so the history is reproducible byte for
/// byte).
pub fn cmd_train(opts: &Options) -> Result<()> {
    let run = Run::load(opts)?;
    let data = run.train_set()?;
    let net = run.cfg.net_config(&run.mesh);
    let mut tcfg = run.cfg.train_config();
    let norm;
    let state = if opts.resume {
        let (ckpt, _) = run.trained()?;
        if ckpt.train.seed != tcfg.seed {
            return Err(CliError::Config("checkpoint was trained with a different seed".into()));
        }
        norm = ckpt.norm.clone();
        tcfg = TrainConfig {
            epochs: run.cfg.train.epochs,
            ..ckpt.train.clone()
        };
        ckpt.train_state()?
    } else {
        norm = CoordNorm::from_mesh(&run.mesh);
        TrainState::new(init_params(&net, stream_seed(run.cfg.seed, "init"))?, &tcfg)
    };
    let task = run.task(norm.clone())?;
    let fp = run.mesh.fingerprint();
    let every = run.cfg.train.checkpoint_every;
    let mut history = Table::new(&["epoch", "mean_loss", "grad_norm", "lr"]);
    let mut timing = Table::new(&["epoch", "wall_seconds"]);
    let mut save_err = None;
    let first = state.epoch;
    let (state, _) = learning::resume(&data, &task, &tcfg, state, |r, st| {
        history.row(&[Cell::U(r.epoch as u64), Cell::F(r.mean_loss), Cell::F(r.grad_norm), Cell::F(r.lr)]);
        timing.row(&[Cell::U(r.epoch as u64), Cell::F(r.wall_seconds)]);
        log::info!("epoch {} loss {:.6e} |g| {:.3e} lr {:.2e}", r.epoch, r.mean_loss, r.grad_norm, r.lr);
        if every > 0 && st.epoch % every == 0 && save_err.is_none() {
            let ck = Checkpoint::from_state(st, &net, &norm, &tcfg, fp.clone());
            save_err = ck.save(&snapshot_path(&run.checkpoint, st.epoch)).and_then(|_| ck.save(&run.checkpoint)).err();
        }
    })?;
    if let Some(e) = save_err {
        return Err(e);
    }
    Checkpoint::from_state(&state, &net, &norm, &tcfg, fp).save(&run.checkpoint)?;
    let append = |name: &str, t: &Table| -> Result<()> {
        let path = run.out.join(name);
        if first > 0 && path.exists() {
            let mut old = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            old.push_str(t.as_str().split_once('\n').map(|x| x.1).unwrap_or(""));
            crate::export::write_text(&path, &old)
        } else {
            t.write(&path)
        }
    };
    append("history.csv", &history)?;
    append("timing.csv", &timing)?;
    println!("trained {} epochs; checkpoint {}", state.epoch, run.checkpoint.display());
    Ok(())
}

/// `model.ckpt` → `model.epoch0050.ckpt`.
pub fn snapshot_path(ckpt: &Path, epoch: usize) -> PathBuf {
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    ckpt.with_file_name(format!("{stem}.epoch{epoch:04}.ckpt"))
}

/// Evaluation target: a mesh with its Dirichlet data and reference model.
struct Eval {
    mesh: Arc<Mesh>,
    model: Arc<FemModel>,
    dirichlet: DirichletSpec,
    same: bool,
}

fn eval_target(run: &Run, opts: &Options) -> Result<Eval> {
    match &opts.eval_mesh {
        None => Ok(Eval {
            mesh: run.mesh.clone(),
            model: run.model.clone(),
            dirichlet: run.dirichlet.clone(),
            same: true,
        }),
        Some(p) => {
            let mesh = Arc::new(read_mesh(p)?);
            let same = mesh.fingerprint() == run.mesh.fingerprint();
            let model = Arc::new(FemModel::new(mesh.clone(), run.cfg.problem, &run.cfg.neumann, run.cfg.fem)?);
            let dirichlet = resolve_dirichlet(&mesh, &run.cfg.dirichlet)?;
            Ok(Eval {
                mesh,
                model,
                dirichlet,
                same,
            })
        }
    }
}

/// The sample's fields carried onto the evaluation mesh by FE interpolation.
fn transfer(run: &Run, ev: &Eval, s: &Sample) -> Result<Sample> {
    if ev.same {
        return Ok(s.clone());
    }
    if s.dirichlet_values.is_some() {
        return Err(CliError::Config("per-sample boundary values cannot be moved to another mesh".into()));
    }
    let nc = run.model.n_comp();
    Ok(Sample {
        seed: s.seed,
        c: interpolate(&run.mesh, &s.c, 1, &ev.mesh.coords)?,
        u_prev: s.u_prev.as_ref().map(|p| interpolate(&run.mesh, p, nc, &ev.mesh.coords)).transpose()?,
        dirichlet_values: None,
    })
}

/// Predicts test samples on the evaluation mesh and compares with the
/// reference solution there.
pub fn cmd_infer(opts: &Options) -> Result<()> {
    let run = Run::load(opts)?;
    let (ckpt, task) = run.trained()?;
    let ev = eval_target(&run, opts)?;
    let test = run.test_set()?;
    let nc = run.model.n_comp();
    let mut metrics = Table::new(&["seed", "rel_l2", "max_pointwise", "newton_iterations"]);
    let mut total = 0.0;
    let chosen = pick(&test, opts.sample, usize::MAX)?;
    for s in &chosen {
        let es = transfer(&run, &ev, s)?;
        let dir = if ev.same { task.dirichlet_for(s) } else { ev.dirichlet.clone() };
        let eval = (!ev.same).then_some((&*ev.mesh, &dir));
        let pred = infer(s, &ckpt.params, &task, &ckpt.train, eval)?;
        let rep = run.solve(&ev.model, &es, &dir)?;
        let m = error_metrics(&pred, &rep.u);
        total += m.rel_l2;
        metrics.row(&[Cell::U(s.seed), Cell::F(m.rel_l2), Cell::F(m.max_pointwise), Cell::U(rep.iterations as u64)]);
        let err: Vec<f64> = pred.iter().zip(&rep.u).map(|(a, b)| a - b).collect();
        write_fields(
            &run.out,
            &format!("infer_{}", s.seed),
            &ev.mesh,
            &[
                Field { name: "ifol", values: &pred, n_comp: nc },
                Field { name: "fem", values: &rep.u, n_comp: nc },
                Field { name: "error", values: &err, n_comp: nc },
                Field { name: "control", values: &es.c, n_comp: 1 },
            ],
        )?;
    }
    metrics.write(&run.out.join("metrics.csv"))?;
    println!("mean rel_l2 {:.6e} over {} samples", total / chosen.len().max(1) as f64, chosen.len());
    Ok(())
}

/// Rolls the one-step operator forward from a test initial field.
pub fn cmd_rollout(opts: &Options) -> Result<()> {
    let run = Run::load(opts)?;
    if !run.cfg.problem.is_transient() {
        return Err(CliError::Config("problem: rollout needs a transient problem".into()));
    }
    let (ckpt, task) = run.trained()?;
    let test = run.test_set()?;
    let s = pick(&test, Some(opts.sample.unwrap_or(0)), 1)?[0];
    let u0 = s.u_prev.as_ref().expect("transient samples carry a previous step");
    let steps = opts.steps.unwrap_or(run.cfg.rollout.steps);
    let roll = learning::rollout(u0, &s.c, &ckpt.params, &task, steps, &ckpt.train)?;
    let reference = if run.cfg.rollout.oracle {
        Some(oracle::fem_rollout(&run.model, &s.c, &task.dirichlet_for(s), u0, steps, &run.cfg.newton)?)
    } else {
        None
    };
    let nc = run.model.n_comp();
    let mut table = Table::new(&["step", "rel_l2", "max_pointwise"]);
    for (i, u) in roll.fields.iter().enumerate() {
        let mut fields = vec![Field { name: "ifol", values: u, n_comp: nc }];
        match &reference {
            Some(r) => {
                let m = error_metrics(u, &r[i]);
                table.row(&[Cell::U(i as u64 + 1), Cell::F(m.rel_l2), Cell::F(m.max_pointwise)]);
                fields.push(Field { name: "fem", values: &r[i], n_comp: nc });
            }
            None => table.row(&[Cell::U(i as u64 + 1), Cell::S(""), Cell::S("")]),
        }
        write_fields(&run.out, &format!("rollout_{:03}", i + 1), &run.mesh, &fields)?;
    }
    table.write(&run.out.join("rollout_errors.csv"))?;
    if let Some(e) = roll.error {
        return Err(CliError::Numerical(format!("rollout stopped after {} steps: {e}", roll.fields.len())));
    }
    println!("rolled out {steps} steps from sample {}", s.seed);
    Ok(())
}

/// Reference solutions of test samples (a rollout with `--steps` for
/// transient problems).
pub fn cmd_fem(opts: &Options) -> Result<()> {
    let run = Run::load(opts)?;
    let test = run.test_set()?;
    let nc = run.model.n_comp();
    let task = run.task(CoordNorm::from_mesh(&run.mesh))?;
    let mut table = Table::new(&["seed", "step", "newton_iterations", "residual"]);
    for s in pick(&test, opts.sample, usize::MAX)? {
        let dir = task.dirichlet_for(s);
        let steps = if run.cfg.problem.is_transient() { opts.steps.unwrap_or(1) } else { 1 };
        let mut cur = s.clone();
        for step in 1..=steps {
            let rep = run.solve(&run.model, &cur, &dir)?;
            table.row(&[
                Cell::U(s.seed),
                Cell::U(step as u64),
                Cell::U(rep.iterations as u64),
                Cell::F(*rep.residuals.last().unwrap()),
            ]);
            let stem = if steps > 1 { format!("fem_{}_{step:03}", s.seed) } else { format!("fem_{}", s.seed) };
            write_fields(
                &run.out,
                &stem,
                &run.mesh,
                &[Field { name: "fem", values: &rep.u, n_comp: nc }, Field { name: "control", values: &s.c, n_comp: 1 }],
            )?;
            if cur.u_prev.is_some() {
                cur.u_prev = Some(rep.u);
            }
        }
    }
    table.write(&run.out.join("fem.csv"))?;
    Ok(())
}

/// Network and adjoint sensitivity maps of `𝒥 = ∫ u dΩ` for test samples.
pub fn cmd_sensitivity(opts: &Options) -> Result<()> {
    let run = Run::load(opts)?;
    if run.cfg.problem.is_transient() || !run.cfg.problem.uses_control() {
        return Err(CliError::Config("problem: sensitivities need a stationary problem with a control field".into()));
    }
    let (ckpt, task) = run.trained()?;
    let test = run.test_set()?;
    let mut table = Table::new(&["seed", "pearson", "objective_ifol", "objective_fem"]);
    for s in pick(&test, opts.sample, 5)? {
        let dir = task.dirichlet_for(s);
        let u = run.solve(&run.model, s, &dir)?.u;
        let adj = adjoint_sensitivity(&run.model, &s.c, None, &dir, &u)?;
        let net = ifol_sensitivity(s, &ckpt.params, &task, &ckpt.train)?;
        let r = pearson(&net.map, &adj.map);
        table.row(&[Cell::U(s.seed), Cell::F(r), Cell::F(net.objective), Cell::F(adj.objective)]);
        println!("sample {}: correlation {r:.4}", s.seed);
        write_fields(
            &run.out,
            &format!("sensitivity_{}", s.seed),
            &run.mesh,
            &[Field { name: "ifol", values: &net.map, n_comp: 1 }, Field { name: "adjoint", values: &adj.map, n_comp: 1 }],
        )?;
    }
    table.write(&run.out.join("sensitivity.csv"))
}
