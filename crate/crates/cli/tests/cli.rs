use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bnews(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnews"))
        .args(args)
        .current_dir(dir)
        .env_remove("BNEWS_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn simulate_linear_demo_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let o = bnews(&["simulate", "--out", "a", "--seed", "5"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = dir.path().join("a/series.csv");
    let lines = data_lines(&a);
    assert_eq!(lines[0], "x");
    let xs: Vec<f64> = lines[1..].iter().map(|l| l.parse().unwrap()).collect();
    assert_eq!(xs.len(), 100_000);
    assert!(xs.iter().all(|x| (-2.0..=2.0).contains(x)));

    // the embedded configuration reproduces the run exactly
    let o = bnews(&["simulate", "--config", "a/series.csv", "--out", "b"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(lines, data_lines(&dir.path().join("b/series.csv")));
}

#[test]
fn simulate_binary_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[simulate]\nn = 500\nformat = \"bnts\"\nfile = \"s.bnts\"\ncount = 2\n").unwrap();
    let o = bnews(&["simulate", "--config", "c.toml", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..2 {
        let (ch, data, meta) = bnews_core::rdsim::read_bnts(&dir.path().join(format!("o/s_{i}.bnts"))).unwrap();
        assert_eq!((ch, data.len()), (1, 500));
        assert!(meta.contains("[simulate]"));
    }
}

#[test]
fn usage_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bnews(&["simulate"], dir.path())), 3);
    assert_eq!(code(&bnews(&["frobnicate"], dir.path())), 3);
    assert_eq!(code(&bnews(&["--help"], dir.path())), 0);
    fs::write(dir.path().join("bad.toml"), "[simulate]\nnoise = { kind = \"uniform-interval\", lo = 1.0, hi = -1.0 }\n").unwrap();
    assert_eq!(code(&bnews(&["simulate", "--config", "bad.toml", "--out", "o"], dir.path())), 3);
    fs::write(dir.path().join("typo.toml"), "[simulate]\nsteps = 10\n").unwrap();
    assert_eq!(code(&bnews(&["simulate", "--config", "typo.toml", "--out", "o"], dir.path())), 3);
    fs::write(dir.path().join("empty.toml"), "[scan]\nalpha_min = 2.0\nalpha_max = 2.0\n").unwrap();
    assert_eq!(code(&bnews(&["scan", "--config", "empty.toml", "--out", "o"], dir.path())), 3);
    assert_eq!(code(&bnews(&["simulate", "--config", "missing.toml", "--out", "o"], dir.path())), 2);
}

#[test]
fn scan_pitchfork_and_doubling() {
    let dir = tempfile::tempdir().unwrap();
    let o = bnews(&["scan", "--out", "p"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_lines(&dir.path().join("p/scan.csv"));
    assert_eq!(rows.len(), 2, "{rows:?}");
    assert!(rows[1].contains("boundary-saddle-node"));
    assert!(rows[1].ends_with(",1"), "conditions should hold: {}", rows[1]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("p/scan.json")).unwrap()).unwrap();
    assert_eq!(json["reports"].as_array().unwrap().len(), 1);

    fs::write(
        dir.path().join("d.toml"),
        "[scan]\nfamily = \"doubling\"\nsigma = 0.015\nalpha_min = 0.8\nalpha_max = 0.95\nn_alpha = 61\n",
    )
    .unwrap();
    let o = bnews(&["scan", "--config", "d.toml", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0);
    let rows = data_lines(&dir.path().join("d/scan.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[1].contains("composition-saddle-node"), "{rows:?}");
    let alpha: f64 = rows[1].split(',').next().unwrap().parse().unwrap();
    assert!((alpha - 0.8664).abs() < 1e-3);
}

const PITCHFORK_WARN: &str = "[warn]
family = \"pitchfork\"
sigma = 0.1
alpha_min = 1.48
alpha_max = 3.0
n_alpha = 9
x0 = 1.5
n = 1000000
threshold = 0.55
";

#[test]
fn warn_flags_near_the_pitchfork_bifurcation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("w.toml"), PITCHFORK_WARN).unwrap();
    let o = bnews(&["warn", "--config", "w.toml", "--out", "o"], dir.path());
    assert_eq!(code(&o), 10, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_lines(&dir.path().join("o/warn.csv"));
    assert_eq!(rows[0], "alpha,D,k1,k2,slack,flag");
    let flagged: Vec<f64> = rows[1..]
        .iter()
        .filter(|r| r.ends_with(",1"))
        .map(|r| r.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!flagged.is_empty());
    // the flag sits next to alpha0 ≈ 1.47, never at the far end
    assert!(flagged.iter().all(|&a| a < 2.0), "{flagged:?}");

    // worker count does not change the output
    let o1 = bnews(&["warn", "--config", "w.toml", "--out", "t1", "--threads", "1"], dir.path());
    let o4 = Command::new(env!("CARGO_BIN_EXE_bnews"))
        .args(["warn", "--config", "w.toml", "--out", "t4"])
        .env("BNEWS_THREADS", "4")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!((code(&o1), code(&o4)), (10, 10));
    assert_eq!(
        fs::read(dir.path().join("t1/warn.csv")).unwrap(),
        fs::read(dir.path().join("t4/warn.csv")).unwrap()
    );
}

#[test]
fn warn_linear_sweep_stays_quiet() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("w.toml"),
        "[warn]\nfamily = \"linear\"\nslope = 0.5\nsigma = 0.5\nalpha_min = -1.0\nalpha_max = 1.0\nn_alpha = 5\nx0 = 0.0\n",
    )
    .unwrap();
    let o = bnews(&["warn", "--config", "w.toml", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn warn_reads_series_files_and_rejects_corrupt_ones() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("s.toml"), "[simulate]\nn = 50000\ncount = 2\n").unwrap();
    assert_eq!(code(&bnews(&["simulate", "--config", "s.toml", "--out", "data"], p)), 0);
    fs::write(
        p.join("w.toml"),
        "[warn]\nseries = [{ alpha = 0.0, file = \"data/series_0.csv\" }, { alpha = 1.0, file = \"data/series_1.csv\" }]\n",
    )
    .unwrap();
    let o = bnews(&["warn", "--config", "w.toml", "--out", "o"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_lines(&p.join("o/warn.csv")).len(), 3);

    fs::write(p.join("data/series_1.csv"), "x\n0.1\nnot-a-number\n").unwrap();
    assert_eq!(code(&bnews(&["warn", "--config", "w.toml", "--out", "o"], p)), 2);
}

#[test]
fn koper_small_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("k.toml"),
        "gnuplot = true\n[koper]\ntasks = [\"return-map\", \"cloud\", \"sweep\", \"derivative\", \"deterministic\", \"trajectory\"]
lambda_min = -6.9\nlambda_max = -6.86\nlambda_step = 0.01\nn_real = 20\nz_grid_n = 21\nn_per_z = 2\ncloud_lambdas = [-6.9]
[koper.model]\ndt = 0.01\n[koper.orbit]\nlength = 60\n",
    )
    .unwrap();
    let o = bnews(&["koper", "--config", "k.toml", "--out", "o", "--dt-check"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("o");
    let rm = data_lines(&out.join("koper_return_map.csv"));
    assert_eq!(rm[0], "lambda,z_in,z_out,steps,early_flag");
    assert_eq!(rm.len(), 22);
    let sweep = data_lines(&out.join("koper_sweep.csv"));
    assert!(sweep[0].starts_with("lambda,comp_count,lo_1,hi_1"));
    assert_eq!(sweep.len(), 6);
    let deriv = data_lines(&out.join("koper_derivative.csv"));
    assert!(deriv.iter().any(|l| l.ends_with(",min-crn")));
    assert!(deriv.iter().any(|l| l.ends_with(",deterministic")));
    let dt = data_lines(&out.join("koper_dt_check.csv"));
    assert_eq!(dt.len(), 3);
    assert!(out.join("koper_sweep.gp").exists());
    let (ch, data, _) = bnews_core::rdsim::read_bnts(&out.join("koper_trajectory.bnts")).unwrap();
    assert_eq!(ch, 3);
    assert_eq!(data.len() % 3, 0);
}
