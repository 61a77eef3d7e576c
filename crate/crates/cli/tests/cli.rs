use ifol_cli::checkpoint::{Checkpoint, RngState};
use ifol_cli::config::RunConfig;
use ifol_cli::dataset::{self, DatasetHeader};
use ifol_cli::export::{csv_string, vtk_string, Field};
use ifol_cli::gradcheck;
use ifol_core::field_net::{init_params, CoordNorm, FieldNetConfig};
use ifol_core::learning::{AdamState, LrSchedule, Sample, TrainConfig, TrainState};
use ifol_core::mesh::generate_grid;
use ifol_core::sampling::{FourierSpec, SampleKind};
use proptest::prelude::*;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMOKE: &str = include_str!("../../../configs/smoke.toml");

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn ifol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifol"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Writes `text` as `run.toml` in `dir` and returns its path as a string.
fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn smoke_with(replace: &[(&str, &str)]) -> String {
    let mut t = SMOKE.to_string();
    for (a, b) in replace {
        assert!(t.contains(a), "smoke config has no {a:?}");
        t = t.replace(a, b);
    }
    t
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let cfg = RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            let mesh = cfg.build_mesh(p.parent().unwrap()).unwrap();
            assert!(mesh.n_nodes() > 0);
            n += 1;
        }
    }
    assert!(n >= 3);
}

#[test]
fn validation_names_the_offending_field() {
    let cases = [
        (("batch_size = 2", "batch_size = 0"), "train.batch_size"),
        (("latent_dim = 4", "latent_dim = 0"), "net.latent_dim"),
        (("hidden = [8, 8]", "hidden = []"), "net.hidden"),
        (("n_train = 4", "n_train = 0"), "sampling.n_train"),
        (("bounds = [[0.0, 1.0], [0.0, 1.0]]", "bounds = [[0.0, 1.0]]"), "mesh.bounds"),
        (("start = 1e-3, end = 1e-4", "start = 1e-5, end = 1e-4"), "train.lr"),
    ];
    for ((a, b), field) in cases {
        let err = RunConfig::parse(&smoke_with(&[(a, b)])).unwrap_err().to_string();
        assert!(err.contains(field), "{err} does not name {field}");
    }
    let err = RunConfig::parse(&smoke_with(&[("seed = 7", "seed = 7\ncolour = 3")])).unwrap_err();
    assert!(err.to_string().contains("colour"));
    let transient = smoke_with(&[("kind = \"stationary_diffusion\"", "kind = \"allen_cahn\"\neps = 0.1\ndt = 1e-3")]);
    assert!(RunConfig::parse(&transient).unwrap_err().to_string().contains("sampling.source"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn configuration_survives_a_toml_round_trip(
        seed in 0..i64::MAX as u64,
        n in 2usize..30,
        hidden in prop::collection::vec(1usize..64, 1..4),
        latent in 1usize..128,
        lr in 1e-6f64..1e-2,
        alpha in 1e-4f64..1.0,
        epochs in 0usize..1000,
        grad_norm in any::<bool>(),
    ) {
        let mut cfg = RunConfig::parse(SMOKE).unwrap();
        cfg.seed = seed;
        cfg.mesh = ifol_cli::config::MeshSource::Grid { counts: vec![n, n + 1], bounds: vec![(0.0, 1.5), (-0.25, 0.75)] };
        cfg.net.hidden = hidden;
        cfg.net.latent_dim = latent;
        cfg.train.lr = LrSchedule { start: lr, end: lr / 7.0 };
        cfg.train.alpha = alpha;
        cfg.train.epochs = epochs;
        cfg.train.grad_norm = grad_norm;
        let back = RunConfig::parse(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn checkpoints_round_trip_bit_for_bit(seed in any::<u64>(), epoch in 0usize..10_000, step in 0u64..1_000_000, skip in 0u64..1000) {
        let net = FieldNetConfig { in_dim: 2, out_dim: 1, hidden: vec![5, 3], omega0: 30.0, latent_dim: 3 };
        let params = init_params(&net, seed).unwrap();
        let n = params.to_flat().len();
        let mesh = generate_grid(2, &[3, 3], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let train = TrainConfig {
            k_encode: 3, alpha: 1e-2, lr: LrSchedule { start: 1e-3, end: 1e-5 }, batch_size: 2,
            epochs: 10, grad_norm: false, first_order: false, seed,
        };
        let mut state = TrainState::new(params, &train);
        for _ in 0..skip {
            rand::RngCore::next_u32(&mut state.shuffle);
        }
        state.epoch = epoch;
        state.adam = AdamState {
            m: (0..n).map(|i| (i as f64 + 0.1).sin() / 3.0).collect(),
            v: (0..n).map(|i| 1e-300 * i as f64).collect(),
            step,
            ..AdamState::new(n)
        };
        let ck = Checkpoint::from_state(&state, &net, &CoordNorm::from_mesh(&mesh), &train, mesh.fingerprint());
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back.to_bytes(), ck.to_bytes());
        let restored = back.train_state().unwrap();
        let (a, b) = (restored.params.to_flat(), state.params.to_flat());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut r1 = restored.shuffle.clone();
        let mut r2 = state.shuffle.clone();
        prop_assert_eq!(rand::RngCore::next_u64(&mut r1), rand::RngCore::next_u64(&mut r2));
    }
}

fn small_checkpoint() -> Checkpoint {
    let net = FieldNetConfig { in_dim: 2, out_dim: 1, hidden: vec![4], omega0: 30.0, latent_dim: 2 };
    let train = TrainConfig {
        k_encode: 1,
        alpha: 1e-2,
        lr: LrSchedule { start: 1e-3, end: 1e-3 },
        batch_size: 1,
        epochs: 1,
        grad_norm: false,
        first_order: false,
        seed: 1,
    };
    let mesh = generate_grid(2, &[2, 2], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
    let state = TrainState::new(init_params(&net, 0).unwrap(), &train);
    Checkpoint::from_state(&state, &net, &CoordNorm::from_mesh(&mesh), &train, mesh.fingerprint())
}

#[test]
fn malformed_checkpoints_are_rejected() {
    let good = small_checkpoint().to_bytes();
    let mut magic = good.clone();
    magic[0] = b'X';
    let mut version = good.clone();
    version[8] = 99;
    let truncated = &good[..good.len() - 8];
    let mut extra = good.clone();
    extra.extend_from_slice(&[0; 8]);
    for (bytes, needle) in [
        (&magic[..], "not an ifol checkpoint"),
        (&version[..], "version 99"),
        (truncated, "payload"),
        (&extra[..], "payload"),
        (&good[..10], "not an ifol checkpoint"),
    ] {
        let err = Checkpoint::from_bytes(bytes).unwrap_err();
        assert!(err.to_string().contains(needle), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
    let bad_rng = RngState { seed: "zz".repeat(32), stream: 0, word_pos: "0".into() };
    assert!(bad_rng.restore().is_err());
}

#[test]
fn datasets_round_trip_and_check_their_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = generate_grid(2, &[3, 3], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
    let other = generate_grid(2, &[3, 4], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
    let samples = vec![
        Sample::stationary(3, vec![0.1, 1.0 / 3.0, 0.7, 1e-17, 0.2, 0.3, 0.4, 0.5, std::f64::consts::PI]),
        Sample::transient(4, vec![1.0; 9], (0..9).map(|i| (i as f64).sqrt()).collect()),
    ];
    let header = DatasetHeader {
        format: dataset::FORMAT.into(),
        version: 1,
        mesh: mesh.fingerprint(),
        n_samples: 2,
        base_seed: 3,
        source: SampleKind::Fourier {
            fourier: FourierSpec {
                freq_x: vec![1],
                freq_y: vec![1],
                freq_z: vec![0],
                coeff_range: (-1.0, 1.0),
                out_range: (0.0, 1.0),
            },
            sigmoid: None,
        },
    };
    let path = dir.path().join("d/set.jsonl");
    dataset::write(&path, &header, &samples).unwrap();
    let (h, back) = dataset::read(&path, &mesh.fingerprint()).unwrap();
    assert_eq!(h, header);
    assert_eq!(back, samples);
    let err = dataset::read(&path, &other.fingerprint()).unwrap_err();
    assert!(err.to_string().contains("different mesh"));

    let text = std::fs::read_to_string(&path).unwrap();
    let first_two: Vec<&str> = text.lines().take(2).collect();
    std::fs::write(&path, first_two.join("\n")).unwrap();
    assert!(dataset::read(&path, &mesh.fingerprint()).unwrap_err().to_string().contains("announces 2"));
    std::fs::write(&path, format!("{}\n{{broken\n", first_two[0])).unwrap();
    assert!(dataset::read(&path, &mesh.fingerprint()).unwrap_err().to_string().contains(":2:"));
}

#[test]
fn vtk_and_csv_describe_the_mesh() {
    let mesh = generate_grid(2, &[3, 2], &[(0.0, 2.0), (0.0, 1.0)]).unwrap();
    let s: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
    let v: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let fields = [Field { name: "t", values: &s, n_comp: 1 }, Field { name: "u", values: &v, n_comp: 2 }];
    let vtk = vtk_string(&mesh, &fields);
    let lines: Vec<&str> = vtk.lines().collect();
    assert_eq!(lines[0], "# vtk DataFile Version 3.0");
    assert!(vtk.contains("POINTS 6 double"));
    assert!(vtk.contains("CELLS 2 10"));
    let ct = lines.iter().position(|l| l.starts_with("CELL_TYPES")).unwrap();
    assert_eq!(&lines[ct + 1..ct + 3], &["9", "9"]);
    assert!(vtk.contains("SCALARS t double 1\nLOOKUP_TABLE default\n0e0\n5e-1\n"));
    assert!(vtk.contains("VECTORS u double\n0e0 1e0 0e0\n"));
    let csv = csv_string(&mesh, &fields);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "node,x,y,t,u_0,u_1");
    assert_eq!(rows.len(), 7);
    let last: Vec<f64> = rows[6].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(last, vec![5.0, 2.0, 1.0, 2.5, 10.0, 11.0]);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &smoke_with(&[("batch_size = 2", "batch_size = 0")]));
    let out = ifol(&["sample", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));

    let missing = dir.path().join("nope.toml");
    assert_eq!(ifol(&["sample", "--config", missing.to_str().unwrap()]).status.code(), Some(4));

    let good = write_config(dir.path(), SMOKE);
    assert_eq!(ifol(&["train", "--config", &good]).status.code(), Some(4), "no dataset yet");
    assert_eq!(ifol(&["sample", "--config", &good, "--threads", "0"]).status.code(), Some(2));
    assert_eq!(ifol(&["sample"]).status.code(), Some(2), "--config is required");
    ok(&ifol(&["sample", "--config", &good]));
    assert_eq!(ifol(&["rollout", "--config", &good]).status.code(), Some(2), "stationary problem");
    assert_eq!(ifol(&["infer", "--config", &good]).status.code(), Some(4), "no checkpoint yet");
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn the_pipeline_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out = dir.path().join("out/smoke");
    ok(&ifol(&["sample", "--config", &cfg]));
    let train_set = read(&out.join("train.jsonl"));
    ok(&ifol(&["sample", "--config", &cfg]));
    assert_eq!(read(&out.join("train.jsonl")), train_set);
    let test_set = read(&out.join("test.jsonl"));
    assert_ne!(train_set, test_set);

    let mut runs = Vec::new();
    for threads in ["1", "2", "1"] {
        ok(&ifol(&["train", "--config", &cfg, "--threads", threads]));
        runs.push((read(&out.join("history.csv")), read(&out.join("model.ckpt"))));
    }
    assert_eq!(runs[0], runs[2]);
    assert_eq!(runs[0].0, runs[1].0);
    let history = String::from_utf8(runs[0].0.clone()).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.starts_with("epoch,mean_loss,grad_norm,lr\n0,"));

    // Resuming from the epoch-2 snapshot reproduces the uninterrupted run.
    let snap_cfg = write_config(dir.path(), &smoke_with(&[("epochs = 3", "epochs = 3\ncheckpoint_every = 2")]));
    ok(&ifol(&["train", "--config", &snap_cfg]));
    assert_eq!(read(&out.join("model.ckpt")), runs[0].1);
    let short = dir.path().join("short");
    let short_out = short.join("out/smoke");
    std::fs::create_dir_all(&short_out).unwrap();
    std::fs::copy(out.join("train.jsonl"), short_out.join("train.jsonl")).unwrap();
    std::fs::copy(out.join("model.epoch0002.ckpt"), short_out.join("model.ckpt")).unwrap();
    let short_cfg = write_config(&short, SMOKE);
    ok(&ifol(&["train", "--config", &short_cfg, "--resume"]));
    assert_eq!(read(&short_out.join("model.ckpt")), runs[0].1);
    let resumed = String::from_utf8(read(&short_out.join("history.csv"))).unwrap();
    assert_eq!(resumed.lines().nth(1), history.lines().last());
    let mismatched = write_config(&short, &smoke_with(&[("seed = 7", "seed = 8")]));
    assert_eq!(ifol(&["train", "--config", &mismatched, "--resume"]).status.code(), Some(2));

    ok(&ifol(&["infer", "--config", &cfg]));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    for line in metrics.lines().skip(1) {
        let rel: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(rel.is_finite() && rel >= 0.0);
    }
    let seed = metrics.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let vtk = std::fs::read_to_string(out.join(format!("infer_{seed}.vtk"))).unwrap();
    for name in ["ifol", "fem", "error", "control"] {
        assert!(vtk.contains(&format!("SCALARS {name} double 1")));
    }

    // A finer mesh over the same square: Dirichlet values survive the transfer.
    let fine = generate_grid(2, &[11, 11], &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
    let fine_path = dir.path().join("fine.json");
    std::fs::write(&fine_path, fine.to_json()).unwrap();
    ok(&ifol(&["infer", "--config", &cfg, "--eval-mesh", fine_path.to_str().unwrap(), "--sample", "0"]));
    let csv = std::fs::read_to_string(out.join(format!("infer_{seed}.csv"))).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 121);
    for r in &rows {
        if r[1] == 0.0 {
            assert_eq!(r[3], 1.0);
        }
        if r[1] == 1.0 {
            assert_eq!(r[3], 0.0);
        }
    }

    ok(&ifol(&["sensitivity", "--config", &cfg]));
    ok(&ifol(&["fem", "--config", &cfg, "--sample", "1"]));
    assert_eq!(ifol(&["fem", "--config", &cfg, "--sample", "9"]).status.code(), Some(2));
}

#[test]
fn gradient_suites_pass() {
    let results = gradcheck::run_all(3).unwrap();
    assert_eq!(results.len(), 5 * 2 + 3 + 2);
    for r in &results {
        assert!(r.passed(), "{} {}: {:e} ≥ {:e}", r.suite, r.case, r.rel_err, r.tol);
    }
}
