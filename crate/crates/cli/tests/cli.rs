use std::fs;
use std::path::Path;
use std::process::Command as Process;

use entry_lab::config::{ConfigError, ProbabilitySection};
use entry_lab::report::parse_kv;
use entry_lab::ExperimentConfig;

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_entry-lab"))
}

fn errors(text: &str) -> Vec<String> {
    match ExperimentConfig::parse(text) {
        Err(ConfigError::Invalid(e)) => e,
        other => panic!("expected validation errors, got {other:?}"),
    }
}

#[test]
fn empty_file_gives_documented_defaults() {
    let cfg = ExperimentConfig::parse("").unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!((cfg.model.m, cfg.model.mc, cfg.model.h, cfg.model.tau), (11, 3.0, 0.1, 0.01));
    assert_eq!(cfg.pde.grid.n_cells, 800);
    assert_eq!(cfg.pde.t_end, 500.0);
    assert_eq!(cfg.abm.replicas, 100);
    assert_eq!(cfg.diagnostics.windows, vec![1.0, 2.0]);
}

#[test]
fn capacity_equal_to_agents_names_the_field() {
    let e = errors("[model]\nM = 5\nMc = 5.0\n");
    assert_eq!(e.len(), 1);
    assert!(e[0].starts_with("model.Mc:"), "{e:?}");
}

#[test]
fn all_errors_are_reported() {
    let e = errors("[model]\nh = -1.0\ntau = 0.0\n[pde]\nrecord_interval = 0.0\n[pde.solver]\ncfl = 2.0\n[abm]\nreplicas = 0\n");
    for field in ["model.h", "model.tau", "pde.record_interval", "pde.solver.cfl", "abm.replicas"] {
        assert!(e.iter().any(|m| m.starts_with(field)), "missing {field} in {e:?}");
    }
}

#[test]
fn unknown_keys_are_rejected() {
    for text in ["[model]\nMM = 3\n", "[pdee]\n", "[pde.solver]\nthetaa = 1.0\n", "[abm]\nx0 = { kind = \"gaussian\", mean = 0.0, std = 1.0, skew = 1.0 }\n"] {
        assert!(matches!(ExperimentConfig::parse(text), Err(ConfigError::Parse(_))), "{text}");
    }
}

#[test]
fn sweep_points_are_validated() {
    let e = errors("[sweep]\nMc = [2.0, 20.0]\n");
    assert!(e.iter().any(|m| m.starts_with("sweep[1].Mc")), "{e:?}");
}

#[test]
fn config_round_trips() {
    let mut cfg = ExperimentConfig::default();
    cfg.model.h = 0.1 + 0.2;
    cfg.pde.t_end = 1.0 / 3.0;
    cfg.pde.snapshot_times = vec![0.1, 1.0 / 7.0];
    cfg.sweep.h = vec![0.5, 0.1, 0.02];
    cfg.probability = ProbabilitySection::RationalTails { alpha: 1.3, p_min: 0.05 };
    let text = cfg.to_toml();
    let back = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_toml(), text);
    assert_eq!(back.hash(), cfg.hash());
}

#[test]
fn fixed_h2_over_tau_sweep() {
    let cfg = ExperimentConfig::parse("[sweep]\nh = [0.5, 0.1, 0.02]\nfixed_h2_over_tau = true\n").unwrap();
    let points = cfg.sweep_points();
    assert_eq!(points.len(), 3);
    for p in points {
        assert!((p.h * p.h / p.tau - 1.0).abs() < 1e-12);
    }
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn kv(dir: &Path) -> Vec<(String, String)> {
    parse_kv(&fs::read_to_string(dir.join("report.kv")).unwrap())
}

fn value(pairs: &[(String, String)], key: &str) -> String {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone()).unwrap()
}

#[test]
fn exit_status_for_invalid_config_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "[model]\nM = 4\nMc = 4.0\n");
    let out = bin().arg("pde").arg("--config").arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.Mc"));
}

#[test]
fn exit_status_for_failed_check_is_two() {
    let tmp = tempfile::tempdir().unwrap();
    // T = 5 is past the sorting time but far too short for sorting to finish
    let path = write_config(tmp.path(), "[pde]\nT = 5.0\nrecord_interval = 0.1\n");
    let out = bin().arg("pde").arg("--config").arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let pairs = kv(tmp.path());
    assert_eq!(value(&pairs, "verdict_sorting"), "fail");
    assert_eq!(value(&pairs, "status"), "fail");
}

#[test]
fn checkclosure_passes_and_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().arg("checkclosure").arg("--out").arg(tmp.path()).arg("--threads").arg("2").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = fs::read_to_string(tmp.path().join("closure_table.csv")).unwrap();
    assert!(table.starts_with("check,M,cases,max_error,tol,status\n"));
    assert_eq!(table.lines().count(), 11);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",pass")));
}

#[test]
fn checkp_with_relative_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rows = String::from("# x p dp\n");
    for k in 0..=200 {
        let x = -5.0 + 0.05 * k as f64;
        let s = 1.0 / (1.0 + (-x).exp());
        rows.push_str(&format!("{x} {} {}\n", 0.1 + 0.9 * s, 0.9 * s * (1.0 - s)));
    }
    fs::write(tmp.path().join("p.txt"), rows).unwrap();
    let path = write_config(tmp.path(), "[probability]\nfamily = \"tabulated\"\ntable = \"p.txt\"\n");
    let out = bin().arg("checkp").arg("--config").arg(&path).arg("--out").arg(tmp.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let pairs = kv(&tmp.path().join("o"));
    assert_eq!(value(&pairs, "certified"), "true");
    assert_eq!(value(&pairs, "violations"), "0");
}

#[test]
fn seed_flag_overrides_base_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "[abm]\nreplicas = 4\nrounds = 50\n");
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        let st = bin().arg("abm").arg("--config").arg(&path).arg("--out").arg(&out).arg("--seed").arg(seed).output().unwrap().status;
        assert_eq!(st.code(), Some(0));
        fs::read(out.join("abm_series.csv")).unwrap()
    };
    let (a, b, c) = (run("7", "a"), run("7", "b"), run("8", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let echoed = ExperimentConfig::parse(&fs::read_to_string(tmp.path().join("a/config.toml")).unwrap()).unwrap();
    assert_eq!(echoed.abm.base_seed, 7);
}

#[test]
fn abm_csv_schema_and_alignment() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(
        tmp.path(),
        "[model]\ntau = 0.02\n[abm]\nreplicas = 3\nrounds = 30\n[output.cadence]\nkind = \"every\"\nstride = 5\n",
    );
    let st = bin().arg("abm").arg("--config").arg(&path).arg("--out").arg(tmp.path()).output().unwrap().status;
    assert_eq!(st.code(), Some(0));
    let text = fs::read_to_string(tmp.path().join("abm_series.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,t,m_mean,m_se,alpha_hat,a_hat,sort_frac_R1,sort_frac_R2,replica_count,alpha_hat_se"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 7);
    for r in &rows {
        let n: u64 = r[0].parse().unwrap();
        let t: f64 = r[1].parse().unwrap();
        assert_eq!(t, 0.02 * n as f64);
        assert_eq!(r[8], "3");
    }
    assert_eq!(rows[0][2], "NaN");
    for n in [15, 30] {
        let hist = fs::read_to_string(tmp.path().join(format!("abm_hist_n{n}.csv"))).unwrap();
        assert!(hist.starts_with("x_center,f_hat\n"));
        assert_eq!(hist.lines().count(), 801);
    }
}

#[test]
fn sweep_summary_has_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(
        tmp.path(),
        "[pde]\nT = 3.0\nrecord_interval = 0.1\n[sweep]\nh = [0.2, 0.1]\nMc = [2.5, 3.0]\n",
    );
    let out = bin().arg("sweep").arg("--config").arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    // three time units is too short for sorting, so every point is flagged
    assert_eq!(out.status.code(), Some(2));
    let summary = fs::read_to_string(tmp.path().join("sweep_summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.split(',').nth(5) == Some("fail")));
    for k in 0..4 {
        let dir = tmp.path().join(format!("point_{k:03}"));
        assert!(dir.join("moments.csv").exists());
        assert!(dir.join("report.kv").exists());
    }
    let pairs = kv(tmp.path());
    assert_eq!(value(&pairs, "points"), "4");
    assert_eq!(value(&pairs, "failed_points"), "4");
}

#[test]
fn pde_outputs_follow_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "[pde]\nT = 1.0\nrecord_interval = 0.25\nsnapshot_times = [0.5]\n");
    bin().arg("pde").arg("--config").arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    let moments = fs::read_to_string(tmp.path().join("moments.csv")).unwrap();
    assert_eq!(
        moments.lines().next().unwrap(),
        "t,mass,alpha,beta,a,b,c,d,energy,grad_energy,phi,sorting_R1,sorting_R2,bmass_left,bmass_right"
    );
    assert_eq!(moments.lines().count(), 6);
    let snap = fs::read_to_string(tmp.path().join("snapshot_000.csv")).unwrap();
    assert!(snap.starts_with("x_center,f,p,pf_flux_left_face\n"));
    assert_eq!(value(&kv(tmp.path()), "snapshot_000_t"), "0.5");
}
