//! End-to-end tests of the `dmrfem` binary: exit codes, file round trips,
//! and byte-level determinism of emitted artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmrfem"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should spawn")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn gen_mesh(dir: &Path, n: usize, name: &str) {
    let out = run_in(dir, &["mesh", "gen", "--n", &n.to_string(), "-o", name]);
    assert_exit(&out, 0);
}

#[test]
fn mesh_gen_check_stats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 8, "m.txt");
    assert!(dir.path().join("m.txt").exists());

    let check = run_in(dir.path(), &["mesh", "check", "m.txt"]);
    assert_exit(&check, 0);
    assert!(stdout(&check).contains("acuteness: ok"));

    let stats = run_in(dir.path(), &["mesh", "stats", "m.txt"]);
    assert_exit(&stats, 0);
    let text = stdout(&stats);
    assert!(text.contains("nodes: 81"));
    assert!(text.contains("elements: 128"));
    assert!(text.contains("interior: 49"));
    assert!(text.contains("h: 1.76777e-1"));

    // The emitted file records version, command, and seed.
    let mesh_text = std::fs::read_to_string(dir.path().join("m.txt")).unwrap();
    assert!(mesh_text.starts_with("# dmrfem "));
    assert!(mesh_text.contains("# command: dmrfem mesh gen --n 8 -o m.txt"));
    assert!(mesh_text.contains("# seed: 0"));
}

#[test]
fn malformed_mesh_file_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "dim 2\nnodes 3\n0 0 1\n").unwrap();
    let out = run_in(dir.path(), &["mesh", "check", "bad.txt"]);
    assert_exit(&out, 2);
    assert!(stderr(&out).contains("error"));
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let unknown_flag = run_in(dir.path(), &["mesh", "gen", "--n", "4", "--bogus", "x"]);
    assert_exit(&unknown_flag, 64);
    let unknown_cmd = run_in(dir.path(), &["frobnicate"]);
    assert_exit(&unknown_cmd, 64);
    let help = run_in(dir.path(), &["--help"]);
    assert_exit(&help, 0);
}

#[test]
fn solve_refuses_unstable_steps_and_force_overrides() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 8, "m.txt");
    let refused = run_in(
        dir.path(),
        &["solve", "--mesh", "m.txt", "--theta", "0", "--tau", "0.01", "--T", "0.05"],
    );
    assert_exit(&refused, 2);
    assert!(stderr(&refused).contains("tau_max"));

    // Forcing runs the scheme anyway; over a long horizon the unstable
    // iteration overflows, which surfaces as a runtime failure.
    let forced = run_in(
        dir.path(),
        &[
            "solve", "--mesh", "m.txt", "--theta", "0", "--tau", "0.01", "--T", "6",
            "--force",
        ],
    );
    assert_exit(&forced, 1);
    assert!(stderr(&forced).contains("non-finite"));

    // A stable step completes.
    let ok = run_in(
        dir.path(),
        &["solve", "--mesh", "m.txt", "--theta", "0", "--tau", "0.0008", "--T", "0.01"],
    );
    assert_exit(&ok, 0);
    assert!(stdout(&ok).contains("tau_max:"));
    assert!(stdout(&ok).contains("satisfied: true"));
}

#[test]
fn invalid_scheme_parameters_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 4, "m.txt");
    let out = run_in(
        dir.path(),
        &["solve", "--mesh", "m.txt", "--theta", "1.5", "--tau", "0.01", "--T", "0.05"],
    );
    assert_exit(&out, 2);
}

#[test]
fn solve_trajectory_is_deterministic_and_dumps_states() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 8, "m.txt");
    let args = [
        "solve", "--mesh", "m.txt", "--theta", "0.5", "--tau", "0.01", "--T", "0.05",
        "--out", "traj.csv", "--dump-states", "states",
    ];
    assert_exit(&run_in(dir.path(), &args), 0);
    let first = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_exit(&run_in(dir.path(), &args), 0);
    let second = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert_eq!(first, second, "identical flags must reproduce bytes");

    // Header then one row per state, including the initial one.
    assert!(first.contains("n,t,linf,l2"));
    let data_rows: Vec<&str> = first
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("n,"))
        .collect();
    assert_eq!(data_rows.len(), 6); // steps 0..=5
    for (k, row) in data_rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[0], k.to_string());
        for f in &fields[1..] {
            f.parse::<f64>().expect("numeric field");
        }
    }

    // One dump per state with one value per interior node (7x7 for n=8).
    for k in 0..=5 {
        let path = dir.path().join("states").join(format!("state_{k:06}.txt"));
        let text = std::fs::read_to_string(&path).unwrap();
        let values: Vec<f64> = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| l.trim().parse::<f64>().unwrap())
            .collect();
        assert_eq!(values.len(), 49, "{path:?}");
    }
}

#[test]
fn diag_range_passes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 8, "m.txt");
    let args = [
        "diag", "range", "--mesh", "m.txt", "--q", "4", "--samples", "60", "--seed", "11",
        "--out", "range.csv",
    ];
    assert_exit(&run_in(dir.path(), &args), 0);
    let first = std::fs::read_to_string(dir.path().join("range.csv")).unwrap();
    assert!(first.contains("sample,re,im"));
    assert!(first.contains("violations=0"));
    assert!(first.contains("# seed: 11"));
    assert_exit(&run_in(dir.path(), &args), 0);
    let second = std::fs::read_to_string(dir.path().join("range.csv")).unwrap();
    assert_eq!(first, second);

    // A different seed changes the sampled points.
    let args2 = [
        "diag", "range", "--mesh", "m.txt", "--q", "4", "--samples", "60", "--seed", "12",
        "--out", "range2.csv",
    ];
    assert_exit(&run_in(dir.path(), &args2), 0);
    let other = std::fs::read_to_string(dir.path().join("range2.csv")).unwrap();
    let payload = |s: &str| -> Vec<String> {
        s.lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_owned)
            .collect()
    };
    assert_ne!(payload(&first), payload(&other));
}

#[test]
fn diag_positivity_passes_on_structured_and_fails_on_obtuse() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 8, "m.txt");
    let ok = run_in(
        dir.path(),
        &["diag", "positivity", "--mesh", "m.txt", "--samples", "20", "--seed", "3"],
    );
    assert_exit(&ok, 0);
    assert!(stdout(&ok).contains("acute mesh: true"));

    // A mesh with an obtuse shared edge has a resolvent with a negative
    // entry; the diagnostic must detect it and fail.
    let obtuse = dmrfem::mesh::obtuse_pair_mesh().unwrap();
    dmrfem::mesh::save_mesh(&obtuse, &dir.path().join("obtuse.txt"), &[]).unwrap();
    let bad = run_in(
        dir.path(),
        &["diag", "positivity", "--mesh", "obtuse.txt", "--samples", "5", "--seed", "3"],
    );
    assert_exit(&bad, 2);
    assert!(stdout(&bad).contains("acute mesh: false"));
}

#[test]
fn diag_power_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 8, "m.txt");
    let frac = run_in(
        dir.path(),
        &["diag", "fracpower", "--mesh", "m.txt", "--z", "-0.5", "--samples", "3"],
    );
    assert_exit(&frac, 0);
    let imag = run_in(dir.path(), &["diag", "imagpower", "--mesh", "m.txt"]);
    assert_exit(&imag, 0);
    assert!(stdout(&imag).contains("deviation from 1"));
    let gn = run_in(
        dir.path(),
        &["diag", "gn", "--mesh", "m.txt", "--q", "2", "--samples", "5"],
    );
    assert_exit(&gn, 0);
    let sob = run_in(
        dir.path(),
        &[
            "diag", "sobolev", "--mesh", "m.txt", "--q", "2", "--alpha", "0.75",
            "--samples", "5",
        ],
    );
    assert_exit(&sob, 0);

    // Out-of-domain exponents are validation failures.
    let bad_alpha = run_in(
        dir.path(),
        &[
            "diag", "sobolev", "--mesh", "m.txt", "--q", "2", "--alpha", "0.4",
            "--samples", "2",
        ],
    );
    assert_exit(&bad_alpha, 2);
    let bad_z = run_in(
        dir.path(),
        &["diag", "fracpower", "--mesh", "m.txt", "--z", "1.5", "--samples", "2"],
    );
    assert_exit(&bad_z, 2);
}

/// Study reports must be byte-identical across reruns except for the
/// wall-clock runtime column, which is stripped before comparing.
fn strip_runtime(text: &str) -> String {
    text.lines()
        .map(|line| {
            if line.starts_with('#') || line.starts_with("case,") {
                line.to_string()
            } else {
                match line.rsplit_once(',') {
                    Some((rest, _runtime)) => rest.to_string(),
                    None => line.to_string(),
                }
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn study_linear_emits_reports_with_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "study", "linear", "--cases", "5", "--variant", "A", "--levels", "8,16",
        "--out", "rep",
    ];
    let out = run_in(dir.path(), &args);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("fitted slope"));

    let main_path = dir.path().join("rep").join("case5_variantA.csv");
    let log_path = dir.path().join("rep").join("case5_variantA_log10.csv");
    let first = std::fs::read_to_string(&main_path).unwrap();
    assert!(first.contains("case,variant,n,h,tau,error,runtime_s"));
    assert!(first.contains("# fitted_slope="));
    assert!(first.contains("case5,A,8,"));
    assert!(first.contains("case5,A,16,"));
    let log_first = std::fs::read_to_string(&log_path).unwrap();
    assert!(log_first.contains("log10_h"));

    // Rerun: identical up to the runtime column; log file exactly equal.
    assert_exit(&run_in(dir.path(), &args), 0);
    let second = std::fs::read_to_string(&main_path).unwrap();
    assert_eq!(strip_runtime(&first), strip_runtime(&second));
    assert_eq!(log_first, std::fs::read_to_string(&log_path).unwrap());
}

#[test]
fn study_semilinear_small_run_reports_two_norms() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "study", "semilinear", "--f", "usq", "--levels", "4,8", "--ref-n", "16",
            "--ref-tau", "0.0005", "--out", "rep",
        ],
    );
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("time-integrated slope"));
    assert!(text.contains("max-norm slope"));
    assert!(dir.path().join("rep").join("semilinear_lptlq.csv").exists());
    assert!(dir.path().join("rep").join("semilinear_linf.csv").exists());
    assert!(dir.path().join("rep").join("semilinear_lptlq_log10.csv").exists());

    // Levels that do not divide the reference are refused up front.
    let bad = run_in(
        dir.path(),
        &[
            "study", "semilinear", "--levels", "4,8", "--ref-n", "12", "--out", "rep2",
        ],
    );
    assert_exit(&bad, 2);
}

#[test]
fn jobs_env_and_flag_control_threads() {
    let dir = tempfile::tempdir().unwrap();
    gen_mesh(dir.path(), 4, "m.txt");
    let with_flag = bin()
        .args(["mesh", "stats", "m.txt", "--jobs", "1"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(with_flag.status.code(), Some(0));

    let with_env = bin()
        .args(["mesh", "stats", "m.txt"])
        .env("DMRFEM_JOBS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(with_env.status.code(), Some(0));

    let bad_env = bin()
        .args(["mesh", "stats", "m.txt"])
        .env("DMRFEM_JOBS", "lots")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
}
