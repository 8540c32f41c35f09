//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use qpstab::{
    conservation_check, find_equilibrium, integrate, search_certificate, verify_certificate,
    CertificateConfig, Classification, DiagonalScaling, DynamicsError, EquilibriumConfig,
    IntegratorConfig, LiapunovFunction, QpSystem, StateVector, Thresholds, CONSERVATION_THRESHOLD,
};
use qpstab_testkit::{self as kit, PlantedSystem, TestRng};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn system(sys: &PlantedSystem) -> QpSystem {
    QpSystem::new(sys.lambda.clone(), sys.a.clone(), sys.b.clone())
        .expect("planted system is valid")
}

fn planted_liapunov(sys: &PlantedSystem) -> LiapunovFunction {
    let c = sys
        .scaling
        .as_ref()
        .expect("planted scaling")
        .iter()
        .copied()
        .collect();
    LiapunovFunction::new(
        &system(sys),
        &DiagonalScaling::new(c).expect("positive scaling"),
        &StateVector::from_vector(sys.xstar.clone()).expect("interior"),
    )
    .expect("dimensions agree")
}

fn around(rng: &mut TestRng, xstar: &DVector<f64>, spread: f64) -> DVector<f64> {
    let s = kit::uniform_vector(rng, xstar.len(), -spread, spread);
    xstar.zip_map(&s, |x, s| x * s.exp())
}

fn state(x: DVector<f64>) -> StateVector {
    StateVector::from_vector(x).expect("interior")
}

/// Scaling normalized to `sum c = m`, as stored by the library.
fn normalized(c: &DVector<f64>) -> DVector<f64> {
    c * (c.len() as f64 / c.sum())
}

fn criterion_1() -> Outcome {
    let mut rng = kit::rng(101);
    let (mut worst_w, mut worst_w_dot) = (0.0f64, 0.0f64);
    for case in 0..1000 {
        let sys = kit::lotka_volterra(&mut rng, 1 + case % 6);
        let lf = planted_liapunov(&sys);
        let c = normalized(sys.scaling.as_ref().unwrap());
        let x = around(&mut rng, &sys.xstar, 1.5);
        let xs = state(x.clone());
        worst_w = worst_w.max(kit::relative_error(
            lf.value(&xs),
            kit::lotka_volterra_w(&c, &x, &sys.xstar),
        ));
        worst_w_dot = worst_w_dot.max(kit::relative_error(
            lf.derivative(&xs).unwrap(),
            kit::lotka_volterra_w_dot(&sys.a, &c, &x, &sys.xstar),
        ));
    }
    outcome(
        worst_w <= 1e-12 && worst_w_dot <= 1e-12,
        format!("1000 LV systems, worst relative error W {worst_w:.2e}, dW/dt {worst_w_dot:.2e} (bound 1e-12)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = kit::rng(102);
    let mut worst_chain = 0.0f64;
    let mut count = 0;
    let mut pair = 0;
    for n in 1..=6 {
        for m in n..=6 {
            // 21 (n, m) pairs share 500 systems.
            let systems = 500 / 21 + usize::from(pair < 500 % 21);
            pair += 1;
            for _ in 0..systems {
                let sys = kit::certified_system(&mut rng, n, m, 1.0);
                let lf = planted_liapunov(&sys);
                for _ in 0..4 {
                    let x = state(around(&mut rng, &sys.xstar, 1.5));
                    let quad = lf.derivative(&x).unwrap();
                    let chain = lf.chain_rule_derivative(&x).unwrap();
                    worst_chain = worst_chain.max(kit::relative_error(quad, chain));
                }
                count += 1;
            }
        }
    }

    let mut worst_fd = 0.0f64;
    for case in 0..20 {
        let n = 1 + case % 4;
        let sys = kit::certified_system(&mut rng, n, n + case % 3, 1.0);
        let lf = planted_liapunov(&sys);
        let x0 = state(around(&mut rng, &sys.xstar, 0.7));
        let config = IntegratorConfig {
            samples: 20_001,
            ..IntegratorConfig::default()
        };
        let record = integrate(lf.system(), &x0, 2.0, &config, Some(&lf)).unwrap();
        let w = &record.w_samples;
        let scale = record
            .w_dot_samples
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 1..record.len() - 1 {
            let fd = (w[k + 1] - w[k - 1]) / (record.times[k + 1] - record.times[k - 1]);
            worst_fd = worst_fd.max((fd - record.w_dot_samples[k]).abs() / scale);
        }
    }
    outcome(
        count == 500 && worst_chain <= 1e-10 && worst_fd <= 1e-6,
        format!(
            "{count} certified systems, quadratic form vs chain rule {worst_chain:.2e} (bound 1e-10); \
             finite differences along 20 trajectories {worst_fd:.2e} (bound 1e-6)"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = kit::rng(103);
    let mut nonpositive = 0;
    let mut worst_at_xstar = 0.0f64;
    let mut worst_oracle = 0.0f64;
    let mut tall = 0;
    for case in 0..50 {
        let n = 1 + case % 4;
        let m = n + case % 3;
        tall += usize::from(m > n);
        let sys = kit::certified_system(&mut rng, n, m, 1.0);
        let lf = planted_liapunov(&sys);
        worst_at_xstar = worst_at_xstar.max(lf.value(&state(sys.xstar.clone())));
        for _ in 0..10_000 {
            let x = state(around(&mut rng, &sys.xstar, 2.0));
            let w = lf.value(&x);
            if !(w > 0.0) {
                nonpositive += 1;
            }
            worst_oracle =
                worst_oracle.max(kit::relative_error(w, lf.positivity_oracle(&x).unwrap()));
        }
    }
    outcome(
        nonpositive == 0 && worst_at_xstar <= 1e-14 && worst_oracle <= 1e-12,
        format!(
            "50 systems ({tall} with m > n) x 10^4 samples: {nonpositive} nonpositive, W(x*) max {worst_at_xstar:.2e}, \
             oracle agreement {worst_oracle:.2e} (bound 1e-12)"
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = kit::rng(104);
    let config = CertificateConfig::default();
    let (mut definite, mut verified) = (0, 0);
    let mut worst_margin = f64::NEG_INFINITY;
    for case in 0..100 {
        let (q, _) = kit::planted_certificate(&mut rng, 1 + case % 8);
        let cert = search_certificate(&q, &config).unwrap();
        definite += usize::from(cert.classification == Classification::NegativeDefinite);
        worst_margin = worst_margin.max(cert.margin);
        if let Ok(report) = verify_certificate(&q, &cert, &config.thresholds) {
            verified += usize::from(report.classification == Classification::NegativeDefinite);
        }
    }
    outcome(
        definite == 100 && verified == 100,
        format!("{definite}/100 negative definite, {verified}/100 verified, worst margin {worst_margin:.3e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = kit::rng(105);
    let config = CertificateConfig::default();
    let mut inconclusive = 0;
    for case in 0..100 {
        let q = kit::positive_diagonal_matrix(&mut rng, 1 + case % 8);
        let cert = search_certificate(&q, &config).unwrap();
        inconclusive += usize::from(cert.classification == Classification::Inconclusive);
    }
    outcome(
        inconclusive == 100,
        format!("{inconclusive}/100 inconclusive"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = kit::rng(106);
    let (mut runs, mut underflows, mut converged, mut uncertified) = (0, 0, 0, 0);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let sys = kit::definite_system(&mut rng, 1 + case % 6);
        let qp = system(&sys);
        let cert =
            search_certificate(&qp.interaction_matrix(), &CertificateConfig::default()).unwrap();
        if cert.classification != Classification::NegativeDefinite {
            uncertified += 1;
            continue;
        }
        let xstar = state(sys.xstar.clone());
        let lf = LiapunovFunction::new(&qp, &cert.scaling, &xstar).unwrap();
        for _ in 0..50 {
            runs += 1;
            let x0 = state(around(&mut rng, &sys.xstar, 2.0));
            let config = IntegratorConfig {
                samples: 2,
                ..IntegratorConfig::default()
            };
            match integrate(&qp, &x0, 200.0, &config, Some(&lf)) {
                Ok(record) => {
                    let d = (record.final_state().unwrap().as_vector() - xstar.as_vector()).amax();
                    worst = worst.max(d);
                    converged += usize::from(d < 1e-6);
                }
                Err(DynamicsError::StepSizeUnderflow { .. }) => underflows += 1,
                Err(_) => {}
            }
        }
    }
    let completed = runs - underflows;
    outcome(
        uncertified == 0 && runs == 1000 && converged == completed && underflows * 100 <= runs,
        format!(
            "{converged}/{completed} non-underflow runs within 1e-6 (worst {worst:.2e}), \
             {underflows}/{runs} underflows, {uncertified} systems uncertified"
        ),
    )
}

fn drifts(sys: &PlantedSystem, x0: &StateVector) -> Vec<f64> {
    let lf = planted_liapunov(sys);
    [1e-8, 1e-9, 1e-10]
        .into_iter()
        .map(|rtol| {
            let config = IntegratorConfig {
                rtol,
                atol: rtol * 1e-3,
                ..IntegratorConfig::default()
            };
            let record = integrate(lf.system(), x0, 100.0, &config, Some(&lf)).unwrap();
            conservation_check(&lf, &record, &Thresholds::default(), CONSERVATION_THRESHOLD)
                .unwrap()
                .relative_drift
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let x0 = StateVector::new(vec![2.0, 1.0]).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, sys) in [
        ("predator-prey", kit::predator_prey()),
        ("skew QP n=2 m=3", kit::skew_qp()),
    ] {
        let d = drifts(&sys, &x0);
        let below = d[1] < CONSERVATION_THRESHOLD;
        let monotone = d[0] > d[1] && d[1] > d[2];
        passed &= below && monotone;
        parts.push(format!(
            "{name}: drift {:.2e} at default tolerances ({}), {:.2e} / {:.2e} / {:.2e} at rtol 1e-8 / 1e-9 / 1e-10 ({})",
            d[1],
            if below { "below 1e-8" } else { "ABOVE 1e-8" },
            d[0],
            d[1],
            d[2],
            if monotone { "monotone" } else { "NOT monotone" }
        ));
    }
    outcome(passed, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let mut rng = kit::rng(108);
    let config = EquilibriumConfig::default();
    let (mut recovered, mut worst) = (0, 0.0f64);
    for _ in 0..200 {
        let sys = kit::planted_equilibrium(&mut rng);
        let Ok(eq) = find_equilibrium(&system(&sys), None, &config) else {
            continue;
        };
        let err = (0..sys.n())
            .map(|i| kit::relative_error(eq.xstar.as_slice()[i], sys.xstar[i]))
            .fold(0.0, f64::max);
        worst = worst.max(err);
        recovered += usize::from(err <= 1e-10);
    }
    outcome(
        recovered == 200,
        format!("{recovered}/200 planted equilibria recovered, worst relative error {worst:.2e} (bound 1e-10)"),
    )
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_qpstab"))
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let certified = write(
        dir.path(),
        "lv.json",
        r#"{"n": 2, "m": 2, "lambda": [1, 1], "A": [[-1, 0], [0, -1]], "B": [[1, 0], [0, 1]]}"#,
    );
    let inconclusive = write(
        dir.path(),
        "diag.json",
        r#"{"n": 2, "m": 2, "lambda": [-0.5, 1], "A": [[0.5, -1], [1, -3]], "B": [[1, 0], [0, 1]]}"#,
    );
    let malformed = write(
        dir.path(),
        "bad.json",
        r#"{"n": 2, "m": 2, "lambda": [1, 1], "A": [[-1, 0], [0, -1]]"#,
    );
    let no_root = write(
        dir.path(),
        "noroot.json",
        r#"{"n": 1, "m": 1, "lambda": [1], "A": [[1]], "B": [[1]]}"#,
    );

    let mut problems = Vec::new();
    for file in [&certified, &inconclusive] {
        for seed in ["0", "17"] {
            let first = run_cli(&["analyze", file, "--format", "json", "--seed", seed]);
            let second = run_cli(&["analyze", file, "--format", "json", "--seed", seed]);
            if first != second || first.1.is_empty() {
                problems.push(format!("analyze {file} --seed {seed} not byte-identical"));
            }
        }
        let first = run_cli(&["certificate", file, "--format", "json"]);
        if first != run_cli(&["certificate", file, "--format", "json"]) {
            problems.push(format!("certificate {file} not byte-identical"));
        }
    }

    let table = [
        ("certified", certified.as_str(), 0),
        ("inconclusive", inconclusive.as_str(), 2),
        ("parse error", malformed.as_str(), 3),
        ("numerical failure", no_root.as_str(), 4),
    ];
    let mut codes = Vec::new();
    for (label, file, expected) in table {
        let (code, _) = run_cli(&["analyze", file, "--format", "json"]);
        codes.push(format!("{label}={code}"));
        if code != expected {
            problems.push(format!("{label}: exit {code}, expected {expected}"));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "byte-identical JSON over 2 seeds x 2 systems; exit codes {}{}",
            codes.join(", "),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {}", problems.join("; "))
            }
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, u64); 9] = [
        (1, "LV reduction", criterion_1, 10),
        (2, "dW/dt identity", criterion_2, 60),
        (3, "positivity of W", criterion_3, 60),
        (4, "planted certificate recovery", criterion_4, 120),
        (5, "necessary-condition soundness", criterion_5, 30),
        (6, "global asymptotic stability", criterion_6, 300),
        (7, "conservation", criterion_7, 30),
        (8, "equilibrium solver", criterion_8, 20),
        (9, "CLI determinism and exit codes", criterion_9, 60),
    ];
    let mut failures = 0;
    for (id, name, run, limit) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let passed = result.passed && in_time;
        failures += usize::from(!passed);
        println!(
            "{} criterion {id} ({name}): {} [{:.1} s, limit {limit} s{}]",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", OVER TIME" }
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
