//! End-to-end tests of the binary: exit codes, output files, and
//! reproducibility, driven exactly the way a user would.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_curvspec"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process not signalled")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    let path = dir.join(name);
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing output {}: {e}", path.display()))
}

#[test]
fn spectrum_writes_the_table_and_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["spectrum", "--config"])
        .arg(scenario("flat-torus-spectrum.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let dir = tmp.path().join("flat-torus-spectrum");
    let table = read(&dir, "spectrum.csv");
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("k,lambda,multiplicity,cluster,cluster_mean"),
        "schema header row"
    );
    let lambdas: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(lambdas.len(), 6);
    for (got, want) in lambdas.iter().zip([0.0, 1.0, 1.0, 1.0, 1.0, 2.0]) {
        assert!((got - want).abs() < 1e-12, "{lambdas:?}");
    }

    let resolved = read(&dir, "resolved.toml");
    assert!(resolved.contains("scenario = \"flat-torus-spectrum\""));
    assert!(!resolved.contains("\nout"), "out path must not leak:\n{resolved}");
    let version = read(&dir, "version.txt");
    assert!(version.contains("curvspec "), "{version}");
}

#[test]
fn evolve_tracks_the_closed_form_path_and_reruns_bit_identically() {
    let config = r#"
        [state.sphere]
        dimension = 3

        [flow]
        a = 1.0
        rho = 0.0
        coupling = 0.0

        [run]
        horizon = 0.02
        step = 1e-3
        eigenpairs = 2

        # Rate comparisons difference the eigenvalue path in time, so their
        # gate tracks truncation at this step size; the path itself is exact.
        [tolerances]
        rate = 1e-3

        [expect]
        lambda_path = "3/(1-4*t)"
        lambda_pair = 1
    "#;
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sphere.toml");
    std::fs::write(&path, config).unwrap();

    let mut runs = Vec::new();
    for sub in ["a", "b"] {
        let out_root = tmp.path().join(sub);
        let out = bin()
            .args(["evolve", "--config"])
            .arg(&path)
            .arg("--out")
            .arg(&out_root)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        runs.push(out_root.join("sphere"));
    }

    let table = read(&runs[0], "trajectory.csv");
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "t,weighted_volume,r_average,lambda_0,lambda_1");
    for line in lines {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        let (t, lambda_1) = (fields[0], fields[4]);
        assert!(
            (lambda_1 - 3.0 / (1.0 - 4.0 * t)).abs() < 1e-10,
            "t = {t}: {lambda_1}"
        );
    }

    for name in ["trajectory.csv", "trajectory.json", "rates.csv", "report.json", "resolved.toml"] {
        assert_eq!(
            read(&runs[0], name),
            read(&runs[1], name),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn output_root_prefers_flag_over_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env_root = tmp.path().join("from-env");
    let flag_root = tmp.path().join("from-flag");

    let out = bin()
        .args(["spectrum", "--config"])
        .arg(scenario("flat-torus-spectrum.toml"))
        .env("CURVSPEC_OUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(env_root.join("flat-torus-spectrum/spectrum.csv").exists());

    let out = bin()
        .args(["spectrum", "--config"])
        .arg(scenario("flat-torus-spectrum.toml"))
        .arg("--out")
        .arg(&flag_root)
        .env("CURVSPEC_OUT", &env_root)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(flag_root.join("flat-torus-spectrum/spectrum.csv").exists());
}

#[test]
fn unknown_config_keys_are_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("typo.toml");
    std::fs::write(
        &path,
        "[state.sphere]\ndimension = 3\n\n[flow]\na = 1.0\nrho = 0.0\ncoupling = 0.0\nhorizont = 0.1\n",
    )
    .unwrap();
    let out = bin()
        .args(["spectrum", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("horizont"), "{}", stderr(&out));
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = bin().arg("evolve").output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--config"), "{}", stderr(&out));
}

#[test]
fn empty_check_selection_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["verify", "--config"])
        .arg(scenario("drifted-torus-identities.toml"))
        .arg("--out")
        .arg(tmp.path())
        .args(["--only", ""])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("empty check selection"), "{}", stderr(&out));
}

#[test]
fn rejected_hypotheses_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["check-hypotheses", "--config"])
        .arg(scenario("torus-drift-gate.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("drift_laplacian_bound"), "{}", stderr(&out));
    // The report still lands on disk for inspection.
    assert!(tmp.path().join("torus-drift-gate/hypotheses.json").exists());
}

#[test]
fn broken_reference_spectrum_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["verify", "--config"])
        .arg(scenario("broken-coupling.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("spectrum"), "{}", stderr(&out));
}

#[test]
fn oversized_mesh_steps_abort_with_code_four() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bigstep.toml");
    std::fs::write(
        &path,
        "[state.mesh]\nsource = \"icosphere\"\nsubdivisions = 2\n\n\
         [flow]\na = 1.0\nrho = 0.0\ncoupling = 0.0\n\n\
         [run]\nhorizon = 0.5\nstep = 0.2\neigenpairs = 0\n",
    )
    .unwrap();
    let out = bin()
        .args(["evolve", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("aborted"), "{}", stderr(&out));
}

#[test]
fn verify_all_matches_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("verify-all")
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        stdout.contains("all 12 scenarios matched their expected outcome"),
        "{stdout}"
    );
    // Expected-failure fixtures report their exit codes in the table.
    assert!(stdout.contains("broken-coupling"), "{stdout}");
    assert!(stdout.contains("expected 3 got 3 ok"), "{stdout}");
    assert!(stdout.contains("expected 2 got 2 ok"), "{stdout}");
}

#[test]
fn help_and_bad_usage_follow_the_exit_contract() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), 1, "usage errors are code 1");
}
