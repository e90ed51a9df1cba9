//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them all). Criteria pin
//! their tolerances here; nothing is deferred to later calibration.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qflow_core::verify;

fn qflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qflow"))
}

fn report(criterion: usize, name: &str, passed: bool, details: &str) {
    println!(
        "ACCEPTANCE {criterion:>2} {name}: {} - {details}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} ({name}) failed: {details}");
}

/// 1. Downfolding theorem: cluster-analyzed exact states stay eigenvectors
/// of every generated effective Hamiltonian, residual <= 1e-9, within 60 s.
#[test]
fn criterion_01_ses_theorem() {
    let start = Instant::now();
    let r = verify::ses_suite(20250808, 10).unwrap();
    let elapsed = start.elapsed();
    let in_time = elapsed.as_secs() < 60;
    report(
        1,
        "ses-theorem",
        r.passed && in_time,
        &format!("{} in {elapsed:.2?} (limit 60 s)", r.details),
    );
}

/// 2. Flow/projected-equation equivalence: fixed-point residual <= 1e-7 and
/// both energy expressions agree to 1e-9 on 5 instances, within 120 s.
#[test]
fn criterion_02_equivalence_theorem() {
    let start = Instant::now();
    let r = verify::equivalence_suite(20250809, 5).unwrap();
    let elapsed = start.elapsed();
    let in_time = elapsed.as_secs() < 120;
    report(
        2,
        "equivalence-theorem",
        r.passed && in_time,
        &format!("{} in {elapsed:.2?} (limit 120 s)", r.details),
    );
}

/// 3. Variational bound: exact-unitary flows never record an energy below
/// the exact ground energy minus 1e-10, on 10 instances.
#[test]
fn criterion_03_variational_bound() {
    let r = verify::variational_suite(20250810, 10).unwrap();
    report(3, "variational-bound", r.passed, &r.details);
}

/// 4. Gradient fidelity: the commutator gradient matches central finite
/// differences (h = 1e-5) to relative 1e-6 on at least 100 samples.
#[test]
fn criterion_04_gradient_fidelity() {
    let r = verify::gradient_suite(20250811, 100).unwrap();
    report(4, "gradient-fidelity", r.passed, &r.details);
}

/// 5. Trotter decay: the product-formula deviation halves (within 20%) when
/// the rank doubles over N in {1,2,4,8} on 5 non-commuting pairs.
#[test]
fn criterion_05_trotter_decay() {
    let r = verify::trotter_suite(20250812, 5).unwrap();
    report(5, "trotter-decay", r.passed, &r.details);
}

/// 6. Size consistency: two non-interacting identical fragments give twice
/// the single-fragment flow energy within 1e-8.
#[test]
fn criterion_06_size_consistency() {
    let r = verify::size_consistency_suite().unwrap();
    report(6, "size-consistency", r.passed, &r.details);
}

/// 7. Sub-flow consistency: K = M reproduces the full flow bitwise and the
/// energy gap is non-increasing in K (1e-10 slack).
#[test]
fn criterion_07_subflow_consistency() {
    let r = verify::subflow_sweep_suite().unwrap();
    report(7, "subflow-consistency", r.passed, &r.details);
}

/// 8. Parameter accounting: a synthetic system with 4 occupied + 5 virtual
/// spatial orbitals and all 4-electron/4-orbital spaces reports 60 spaces,
/// and the unique-parameter count equals the reference value of 1100.
#[test]
fn criterion_08_parameter_accounting() {
    use qflow_core::integrals::serialize_synthetic;
    use qflow_core::synthetic::random_store;
    use rand::SeedableRng;

    // library-level count
    let lib = verify::parameter_count_suite().unwrap();

    // CLI-level report on a 9-orbital synthetic model, setup-only run
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(88);
    let store = random_store(9, 8, 0.05, &mut rng);
    let input = dir.path().join("nine_orbital.json");
    std::fs::write(&input, serialize_synthetic(&store)).unwrap();
    let out = dir.path().join("out");
    let status = qflow()
        .args(["run", "--in"])
        .arg(&input)
        .args(["--mode", "qflow", "--ne", "4", "--no", "4", "--cycles", "0", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let spaces = summary["n_spaces"].as_u64().unwrap();
    let params = summary["parameters_optimized"].as_u64().unwrap();
    let passed = lib.passed && status.success() && spaces == 60 && params == 1100;
    report(
        8,
        "parameter-accounting",
        passed,
        &format!(
            "CLI reports {spaces} spaces and {params} unique parameters (reference count 1100; \
             spin-orbital excitations of all ranks inside each space)"
        ),
    );
}

/// 9. Perturbation oracle: background E(2) equals dense second-order
/// Rayleigh-Schrodinger to 1e-10 on 10 nondegenerate models.
#[test]
fn criterion_09_perturbation_oracle() {
    let r = verify::e2_suite(20250813, 10).unwrap();
    report(9, "perturbation-oracle", r.passed, &r.details);
}

/// 10. I/O: FCIDUMP parse/serialize round-trip equality with deterministic
/// bytes on random stores and on a written fixture file.
#[test]
fn criterion_10_io_round_trip() {
    let r = verify::io_suite(20250814, 10).unwrap();

    // fixture file: byte-deterministic CLI artifacts for one invocation
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fixture.fcidump");
    {
        use qflow_core::integrals::serialize_fcidump;
        use qflow_core::synthetic::random_store;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        std::fs::write(&fixture, serialize_fcidump(&random_store(4, 4, 0.1, &mut rng))).unwrap();
    }
    let run = |out: &Path| {
        assert!(qflow()
            .args(["run", "--in"])
            .arg(&fixture)
            .args(["--ne", "2", "--no", "2", "--cycles", "20", "--out"])
            .arg(out)
            .status()
            .unwrap()
            .success());
    };
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    run(&out1);
    run(&out2);
    let mut stable = true;
    for f in ["trace.csv", "trace.json", "summary.json", "amplitudes.txt"] {
        stable &= std::fs::read(out1.join(f)).unwrap() == std::fs::read(out2.join(f)).unwrap();
    }
    report(
        10,
        "io-round-trip",
        r.passed && stable,
        &format!("{}; CLI artifacts byte-stable across invocations", r.details),
    );
}

/// 11. Conditional numeric hook. A desk-scale downfolded-style Hamiltonian
/// runs through the exact CLI invocation shape and lands within 5 mHartree
/// of the exact diagonalization of the same file. When the environment
/// variable QFLOW_H8_FCIDUMP names a user-supplied 9-orbital downfolded
/// Hamiltonian, the same pipeline runs on it.
#[test]
fn criterion_11_conditional_numeric_hook() {
    run_hook_model();
    match std::env::var("QFLOW_H8_FCIDUMP") {
        Ok(path) if !path.is_empty() => run_user_supplied(&path),
        _ => println!(
            "ACCEPTANCE 11 conditional-hook: SKIP user file - set QFLOW_H8_FCIDUMP to a \
             9-orbital downfolded FCIDUMP to exercise it"
        ),
    }
}

fn flow_vs_ed(input: &Path, out: &Path, cycles: &str) -> (f64, Option<f64>) {
    let status = qflow()
        .args(["run", "--in"])
        .arg(input)
        .args([
            "--mode",
            "qflow",
            "--ne",
            "4",
            "--no",
            "4",
            "--cycles",
            cycles,
            "--tol",
            "1e-10",
            "--eta",
            "0.05",
            "--line-search",
            "on",
            "--out",
        ])
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success(), "hook run failed");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let energy = summary["energy"].as_f64().unwrap();

    // exact diagonalization of the same file
    use qflow_core::fock::{SectorBasis, SpinOrbitalBasis};
    use qflow_core::hamiltonian::build_matrix;
    use qflow_core::oracle::{exact_diagonalize, ORACLE_DIM_CAP};
    use std::sync::Arc;
    let text = std::fs::read_to_string(input).unwrap();
    let store = if input.extension().and_then(|e| e.to_str()) == Some("json") {
        qflow_core::integrals::parse_synthetic(&text).unwrap()
    } else {
        qflow_core::integrals::parse_fcidump(&text).unwrap()
    };
    let na = store.n_alpha().unwrap();
    let basis = SpinOrbitalBasis::new(store.n_orb, na, store.n_beta().unwrap()).unwrap();
    let sector = Arc::new(SectorBasis::for_sector(&basis, na, store.n_beta().unwrap()).unwrap());
    if sector.len() > ORACLE_DIM_CAP {
        return (energy, None);
    }
    let h = build_matrix(&store, sector).unwrap();
    let ed = exact_diagonalize(&h.matrix, 1, None).unwrap().eigenvalues[0];
    (energy, Some(ed))
}

fn run_hook_model() {
    use qflow_core::integrals::serialize_fcidump;
    use qflow_core::synthetic::random_store;
    use rand::SeedableRng;

    let dir = tempfile::tempdir().unwrap();
    // a 5-orbital, 4-electron stand-in with downfolded-style dense
    // interactions; ne=4/no=4 spaces cover it the way the 9-orbital
    // production runs are shaped
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20250815);
    let store = random_store(5, 4, 0.08, &mut rng);
    let input = dir.path().join("downfolded_model.fcidump");
    std::fs::write(&input, serialize_fcidump(&store)).unwrap();
    let (energy, ed) = flow_vs_ed(&input, &dir.path().join("out"), "800");
    let ed = ed.expect("desk model fits the oracle");
    let gap = (energy - ed).abs();
    report(
        11,
        "conditional-hook(model)",
        gap <= 5e-3,
        &format!("flow {energy:.8} vs ED {ed:.8}, |gap| = {:.3e} (limit 5e-3)", gap),
    );
}

fn run_user_supplied(path: &str) {
    let input = std::path::PathBuf::from(path);
    let dir = tempfile::tempdir().unwrap();
    let (energy, ed) = flow_vs_ed(&input, &dir.path().join("out"), "400");
    match ed {
        Some(ed) => {
            let gap = (energy - ed).abs();
            report(
                11,
                "conditional-hook(user)",
                gap <= 5e-3,
                &format!("flow {energy:.8} vs ED {ed:.8}, |gap| = {:.3e}", gap),
            );
        }
        None => println!(
            "ACCEPTANCE 11 conditional-hook(user): flow energy {energy:.8}; ED reference \
             skipped (sector exceeds the dense-oracle cap)"
        ),
    }
}
