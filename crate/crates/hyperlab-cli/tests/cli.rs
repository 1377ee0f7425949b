use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DEFAULT: &str = include_str!("../../../configs/default.toml");

/// The default walk on a coarse truncation, so that every command runs in seconds.
fn small_config(out: &Path) -> String {
    DEFAULT
        .replace("max_mode = 64", "max_mode = 16")
        .replace("nodes = 512", "nodes = 128")
        .replace("r_nodes = 128", "r_nodes = 32")
        .replace("n_range = [8, 16, 32, 64, 128, 256]", "n_range = [2, 4, 12]")
        .replace("mc_samples = 100000", "mc_samples = 20000")
        .replace("levels = [1, 2, 3, 4, 5, 6, 7]", "levels = [1, 2, 3, 4, 5]")
        .replace("directory = \"out\"", &format!("directory = {:?}", out.display().to_string()))
}

fn hyperlab(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperlab")).args(args).env("HYPERLAB_CACHE_DIR", cache).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn decompose_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let id = hyperlab(&["decompose", "[[1,0],[0,1]]"], tmp.path());
    assert!(id.status.success());
    assert!(stdout(&id).contains("theta = 0, t = H(g) = 0, x = 0"), "{}", stdout(&id));

    let shear = hyperlab(&["decompose", "[[1,0],[1,1]]"], tmp.path());
    assert!(stdout(&shear).contains(&format!("t = H(g) = {}", 2f64.ln())), "{}", stdout(&shear));

    let scaled = hyperlab(&["decompose", "[[2,0],[0,2]]"], tmp.path());
    assert!(scaled.status.success());
    assert!(stdout(&scaled).contains("notice: determinant 4"));

    for bad in ["[[1,0]]", "not a matrix", "[[1,0],[0,-1]]"] {
        let o = hyperlab(&["decompose", bad], tmp.path());
        assert_eq!(o.status.code(), Some(2), "{bad}: {}", stderr(&o));
    }
}

#[test]
fn missing_section_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_config(&tmp.path().join("out")).replace("[furstenberg]", "[other]");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let o = hyperlab(&["spectrum", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("furstenberg"), "{}", stderr(&o));
    assert!(!tmp.path().join("out").exists(), "nothing may be written before validation passes");
}

#[test]
fn spectrum_of_a_rotation_walk_has_unit_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let text = small_config(&out).replace("words = [\"K\", \"-K\", \"A\", \"-A\"]", "words = [\"K\", \"-K\"]");
    let cfg = write_config(tmp.path(), "k.toml", &text);
    let o = hyperlab(&["spectrum", &cfg, "--no-cache"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("spectrum.json")).unwrap()).unwrap();
    assert!((json["sigma"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    // λ(r) does not move with r for rotations, so no Hessian exists
    assert!(json["hessian"].is_null() && json["limit_data_error"].is_string());
    let csv = fs::read_to_string(out.join("lambda_curve.csv")).unwrap();
    assert!(csv.starts_with("r,lambda_re,lambda_im,lambda_abs,gap,spectral_radius,operator_norm\n"));
    assert!(fs::read_to_string(out.join("lambda_curve.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn spectrum_output_is_deterministic_with_and_without_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg_a = write_config(tmp.path(), "a.toml", &small_config(&a));
    let cfg_b = write_config(tmp.path(), "b.toml", &small_config(&b));
    let cache = tmp.path().join("cache");
    assert!(hyperlab(&["spectrum", &cfg_a], &cache).status.success());
    assert!(fs::read_dir(&cache).unwrap().count() > 0);
    assert!(hyperlab(&["spectrum", &cfg_b, "--threads", "1"], &cache).status.success());
    for name in ["lambda_curve.csv", "lambda_curve.svg"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let strip = |p: &Path| fs::read_to_string(p.join("spectrum.json")).unwrap();
    assert_eq!(strip(&a), strip(&b));
    let uncached = tmp.path().join("c");
    let cfg_c = write_config(tmp.path(), "c.toml", &small_config(&uncached));
    assert!(hyperlab(&["spectrum", &cfg_c, "--no-cache"], &cache).status.success());
    assert_eq!(fs::read(a.join("lambda_curve.csv")).unwrap(), fs::read(uncached.join("lambda_curve.csv")).unwrap());
}

#[test]
fn llt_records_refusals_and_honours_no_mc() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "llt.toml", &small_config(&out));
    let o = hyperlab(&["llt", &cfg, "--no-cache"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let header = fs::read_to_string(out.join("llt_convergence.csv")).unwrap();
    assert!(header.starts_with("n,lhs_exact,exact_refusal,lhs_mc,mc_stderr,lhs_fourier"));
    let rows = csv_rows(&out.join("llt_convergence.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[2][1].is_empty() && rows[2][2].starts_with("exact convolution at n = 12"), "{:?}", rows[2]);
    assert!(rows.iter().all(|r| !r[3].is_empty()), "MC ran by default");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("llt_summary.json")).unwrap()).unwrap();
    for knob in ["max_mode", "quadrature_nodes", "r_max", "delta0_rule", "plancherel_constant", "prune_threshold"] {
        assert!(!summary["knobs"][knob].is_null(), "{knob}");
    }
    assert!(summary["limit_relative_gap"].as_f64().unwrap() < 1e-3);
    assert!(out.join("psi0_profile.csv").exists() && out.join("llt_error.svg").exists());

    let quiet = tmp.path().join("quiet");
    let cfg = write_config(tmp.path(), "quiet.toml", &small_config(&quiet));
    assert!(hyperlab(&["llt", &cfg, "--no-mc", "--no-cache"], tmp.path()).status.success());
    assert!(csv_rows(&quiet.join("llt_convergence.csv")).iter().all(|r| r[3].is_empty() && r[4].is_empty()));
}

#[test]
fn llt_over_the_sampling_budget_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_config(&tmp.path().join("out")).replace("mc_samples = 20000", "mc_samples = 1000000000");
    let cfg = write_config(tmp.path(), "big.toml", &text);
    let o = hyperlab(&["llt", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn furstenberg_rotation_walk_is_flat_and_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let rot = |dir: &Path| small_config(dir).replace("words = [\"K\", \"-K\", \"A\", \"-A\"]", "words = [\"K\", \"-K\"]");
    let cfg_a = write_config(tmp.path(), "a.toml", &rot(&a));
    let cfg_b = write_config(tmp.path(), "b.toml", &rot(&b));
    assert!(hyperlab(&["furstenberg", &cfg_a], tmp.path()).status.success());
    assert!(hyperlab(&["furstenberg", &cfg_b], tmp.path()).status.success());
    let density = fs::read_to_string(a.join("furstenberg_density.csv")).unwrap();
    assert!(density.lines().skip(1).all(|l| (l.split(',').nth(1).unwrap().parse::<f64>().unwrap() - 1.0).abs() < 1e-12));
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn furstenberg_default_walk_has_a_positive_density() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "d.toml", &small_config(&out));
    assert!(hyperlab(&["furstenberg", &cfg], tmp.path()).status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("furstenberg_verdict.json")).unwrap()).unwrap();
    assert!(v["positivity_min"].as_f64().unwrap() > 0.0);
    assert!(v["eigenvalue_distance"].as_f64().unwrap() < 1e-6);
    let decay = fs::read_to_string(out.join("fourier_decay.csv")).unwrap();
    assert!(decay.starts_with("level,block_norm\n") && decay.lines().count() > 3);
    assert!(fs::read_to_string(out.join("highmode_decay.csv")).unwrap().starts_with("level,s0_plus_norm,t0_norm\n"));
}

#[test]
fn fixed_point_failure_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_config(&tmp.path().join("out"))
        .replace("epsilon = 0.3\n", "")
        .replace("words = [\"K\", \"-K\", \"A\", \"-A\"]", "matrices = [[[1.0, 0.0], [0.0, 1.0]]]");
    let cfg = write_config(tmp.path(), "id.toml", &text);
    let o = hyperlab(&["furstenberg", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn selftest_passes_and_echoes_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hyperlab(&["selftest", "--seed", "7"], tmp.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("seed = 7"));
    assert!(text.contains("corrupted cache entry is rejected") && !text.contains("FAIL"));
}
