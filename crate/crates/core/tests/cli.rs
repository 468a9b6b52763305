use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SCALAR: &str = "\
domain.dim = 1
domain.r_inner = 0
domain.r_outer = 1
domain.grid_points = 120
system.N = 1
system.lambda = 1
system.mu = 1
system.beta = 1
blocks.p = 1
blocks.prescription = 0
search.budget = 2
";

fn nodalflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nodalflow"))
        .args(args)
        .env("NODALFLOW_THREADS", "2")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn validate_exit_codes() {
    let d = configs_dir();
    let four = nodalflow(&["validate", d.join("four_component.cfg").to_str().unwrap()]);
    assert_eq!(four.status.code(), Some(0), "{}", stdout(&four));
    assert!(stdout(&four).contains("(D)        holds"));
    let weak = nodalflow(&["validate", d.join("weak_repulsion.cfg").to_str().unwrap()]);
    assert_eq!(weak.status.code(), Some(1));
    assert!(stdout(&weak).contains("-6.000000e-1"));

    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(d.join("coupled_n2.cfg")).unwrap();
    let bad = write(tmp.path(), "bad.cfg", &text.replace("1 -1.5, -1.5 1", "1 -1.5, -1.5"));
    let o = nodalflow(&["validate", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("system.beta"));
    let dim4 = write(tmp.path(), "dim4.cfg", &text.replace("domain.dim = 1", "domain.dim = 4"));
    assert_eq!(nodalflow(&["validate", &dim4]).status.code(), Some(2));
    assert_eq!(nodalflow(&["validate", "/nonexistent.cfg"]).status.code(), Some(2));
    assert_eq!(nodalflow(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn solve_then_flow_from_stored_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "scalar.cfg", SCALAR);
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    let refused = nodalflow(&["solve", &cfg, "--out", out_s]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(!out.exists());

    let o = nodalflow(&["solve", &cfg, "--force", "--out", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let lines = fs::read_to_string(out.join("solutions.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 1);
    let rec: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let id = rec["id"].as_str().unwrap();
    assert!(stdout(&o).contains(id));
    assert_eq!(rec["signature"], serde_json::json!([0]));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["shortfall"], false);

    let profile = out.join(format!("profile_{id}.csv"));
    let traj = tmp.path().join("traj.jsonl");
    let f = nodalflow(&["flow", &cfg, "--initial", profile.to_str().unwrap(), "--out", traj.to_str().unwrap()]);
    assert_eq!(f.status.code(), Some(0), "{}", stdout(&f));
    assert!(stdout(&f).contains("Stationary"));
    let last = fs::read_to_string(&traj).unwrap().lines().last().unwrap().to_string();
    assert!(last.contains("stationary"));

    let tiny: String = fs::read_to_string(&profile)
        .unwrap()
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.to_string()
            } else {
                let (r, u) = l.split_once(',').unwrap();
                format!("{r},{:e}", u.parse::<f64>().unwrap() * 1e-3)
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let tiny = write(tmp.path(), "tiny.csv", &tiny);
    let f = nodalflow(&["flow", &cfg, "--initial", &tiny, "--out", traj.to_str().unwrap()]);
    assert!(stdout(&f).contains("Decayed"), "{}", stdout(&f));

    let wrong = write(tmp.path(), "wrong.cfg", &SCALAR.replace("grid_points = 120", "grid_points = 121"));
    let f = nodalflow(&["flow", &wrong, "--initial", profile.to_str().unwrap()]);
    assert_eq!(f.status.code(), Some(2));
}

#[test]
fn zero_budget_is_a_shortfall() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.cfg", &SCALAR.replace("search.budget = 2", "search.budget = 0"));
    let out = tmp.path().join("run");
    let o = nodalflow(&["solve", &cfg, "--force", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("shortfall: 0 of 1"));
    assert_eq!(fs::read_to_string(out.join("solutions.jsonl")).unwrap(), "");
}

#[test]
fn verify_runs_the_suite() {
    let o = nodalflow(&["verify", configs_dir().join("coupled_n2.cfg").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let s = stdout(&o);
    for name in ["dissipation", "nodal_monotonicity", "bump_invariance", "equivariance", "gradient_consistency", "laplacian_order"] {
        assert!(s.contains(&format!("PASS {name}")), "{name}: {s}");
    }
    assert!(!s.contains("FAIL"));
}
