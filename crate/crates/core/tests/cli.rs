use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qudit-lab"));
    c.args(args).arg("--out").arg(out);
    if let Some(p) = config {
        c.arg("--config").arg(p);
    }
    c.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[tomography]\nrate_hz = 4\n");
    let o = run(&["tomography"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rate_hz"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn corrupted_tolerance_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.toml",
        "[verify]\ntolerance_scale = 0.0\nmonte_carlo_samples = 4\ncontinuum_settings = 5\n",
    );
    let out = dir.path().join("out");
    let o = run(&["verify"], Some(&cfg), &out);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("expected") && stdout.contains("tolerance") && stdout.contains("FAIL"));
    let report: serde_json::Value = serde_json::from_str(&read(&out.join("verify_report.json"))).unwrap();
    assert_eq!(report["all_passed"], false);
    assert!(read(&out.join("verify.log")).contains("status=fail"));
}

#[test]
fn schmidt_outputs_carry_provenance_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let text = "seed = 3\n[schmidt.model.flat]\nlevels = 8\n";
    let cfg = write_config(dir.path(), "s.toml", text);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["schmidt", "--seed", "11"], Some(&cfg), &a).status.success());
    assert!(run(&["schmidt", "--seed", "11"], Some(&cfg), &b).status.success());
    let json = read(&a.join("schmidt_report.json"));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["seed"], 11);
    assert_eq!(v["config_hash"], qudit_lab::output::config_hash(text));
    assert!((v["entropy_ebits"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!(read(&a.join("schmidt_singular_values.csv")).starts_with(&format!("# config_hash={} seed=11", qudit_lab::output::config_hash(text))));
    for f in ["schmidt_report.json", "schmidt_singular_values.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    // only results and the log, no leftover temporaries
    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["schmidt.log", "schmidt_report.json", "schmidt_singular_values.csv"]);
    assert!(read(&a.join("schmidt.log")).contains("unix_time="));
}

#[test]
fn grid_cap_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", "[schmidt]\nmax_grid_cells = 100\n[schmidt.model.double_gaussian]\ngrid_points = 50\n");
    let o = run(&["schmidt"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tomography_and_bell_scan_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.toml",
        "[tomography]\ndimension = 2\nmonte_carlo_samples = 5\n[bell]\ndimension = 2\nscan_points = 11\n[bell.counts]\ngamma_points = 3\nresamples = 20\n",
    );
    let out = dir.path().join("out");
    let o = run(&["tomography", "--threads", "1"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["tomography_report.json", "density.json", "density_real.csv", "density_imag.csv", "counts.csv", "counts.json"] {
        assert!(read(&out.join(f)).contains("config_hash"), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&read(&out.join("tomography_report.json"))).unwrap();
    let f = report["fidelity"].as_f64().unwrap();
    assert!(f > 0.8 && f <= 1.0, "{f}");
    assert_eq!(read(&out.join("counts.csv")).lines().filter(|l| l.contains('|')).count(), 16);

    assert!(run(&["bell-scan"], Some(&cfg), &out).status.success());
    let curve = read(&out.join("bell_curve.csv"));
    assert!(curve.lines().nth(1).unwrap().starts_with("gamma,ideal,horodecki,local_bound"));
    assert_eq!(curve.lines().count(), 2 + 11);
    let last: Vec<f64> = curve.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[1] - 2.0 * 2f64.sqrt()).abs() < 1e-9 && (last[2] - 2.0 * 2f64.sqrt()).abs() < 1e-9 && last[3] == 2.0);
    assert_eq!(read(&out.join("bell_points.csv")).lines().count(), 2 + 3);
}
