use std::path::Path;
use std::process::{Command, Output};

fn hdg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdg")).args(args).env_remove("HDG_SEED").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: &[&str] = &["run", "--method", "mixed", "--k", "1", "--refine", "2,4"];

#[test]
fn csv_study_has_one_row_per_level() {
    let o = hdg(SMALL);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "method,k,kW,stab,tau,inv_h,err_q,ord_q,err_u,ord_u,err_piwu,ord_piwu,energy_resid,flux_resid");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("mixed,1,1,standard,1,2,"));
    let first: Vec<_> = lines[1].split(',').collect();
    assert_eq!((first[7], first[9], first[11]), ("--", "--", "--"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PASS energy-identity 1/h=4"));
}

#[test]
fn output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |jobs: &str, name: &str| {
        let out = dir.path().join(name);
        let mut args = SMALL.to_vec();
        args.extend(["--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert_eq!(hdg(&args).status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    assert_eq!(a, run("2", "b.csv"));
    assert_eq!(a, run("1", "c.csv"));
}

#[test]
fn markdown_and_json_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("study.json");
    let o = hdg(&["run", "--refine", "2,4", "--format", "md", "--json", json.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("| 1/h |"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["report"]["rows"].as_array().unwrap().len(), 2);
    assert!(v["report"]["rows"][1]["err_q"].as_f64().unwrap() > 0.0);
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    std::fs::write(&cfg, "method = \"neumann\"\nk = 2\nrefine = [2, 4]\nchecks = false\n").unwrap();
    let o = hdg(&["run", "--config", cfg.to_str().unwrap(), "--k", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().nth(1).unwrap().starts_with("neumann,1,1,"));
    assert!(o.stderr.is_empty());
}

#[test]
fn configuration_errors_exit_with_two() {
    for args in [
        &["run", "--refine", "8,4"][..],
        &["run", "--solution", "nope"],
        &["run", "--method", "dirichlet", "--labeling", "all-n"],
        &["run", "--w-degree", "plus-one"],
        &["run", "--tau", "0"],
        &["run", "--mesh", "square"],
        &["run", "--jobs", "0"],
        &["run", "--mesh", "file:/nonexistent/mesh"],
    ] {
        assert_eq!(hdg(args).status.code(), Some(2), "{args:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "colour = 1\n").unwrap();
    assert_eq!(hdg(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

fn write_square(dir: &Path) -> String {
    std::fs::write(dir.join("sq.node"), "5 2 0 0\n1 0 0\n2 1 0\n3 1 1\n4 0 1\n5 0.5 0.5\n").unwrap();
    std::fs::write(dir.join("sq.ele"), "4 3 0\n1 1 2 5\n2 2 3 5\n3 3 4 5\n4 4 1 5\n").unwrap();
    format!("file:{}", dir.join("sq").display())
}

#[test]
fn imported_mesh_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = write_square(dir.path());
    let o = hdg(&["run", "--mesh", &mesh, "--k", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn seeded_labeling_honours_environment() {
    let base = ["run", "--method", "mixed", "--labeling", "seed:3", "--refine", "4"];
    let with_seed = |s: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_hdg")).args(base).env("HDG_SEED", s).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        stdout(&o)
    };
    assert_eq!(stdout(&hdg(&base)), with_seed("3"));
    let five = ["run", "--method", "mixed", "--labeling", "seed:5", "--refine", "4"];
    assert_eq!(stdout(&hdg(&five)), with_seed("5"));
    let o = Command::new(env!("CARGO_BIN_EXE_hdg")).args(base).env("HDG_SEED", "x").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verification_suite_passes_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("suite.json");
    let o = hdg(&["verify", "--json", json.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains(", 0 failed"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!(!v["checks"].as_array().unwrap().is_empty());
}

#[test]
fn negative_tau_fails_checks_without_crashing() {
    let o = hdg(&["verify", "--tau", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL local-definiteness standard"), "{text}");
    assert!(text.contains("not"), "{text}");
}
