//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::time::Instant;

use common::{random_params, rng, scalar_postselected, structure};
use qnbm::cli;
use qnbm::model::{
    build_qnbm, exact_distribution_classical_control, exact_distribution_postselected, SamplingMode,
};
use qnbm::neuron::{rus_success_projection, rus_unitaries};
use qnbm::statevector::{GateOp, StateVector};
use qnbm::stress::{
    fit_trend, gate_census, run_stress_test, shot_requirements, StressConfig, StressReport,
};
use qnbm::target::{cardinality_distribution, CardinalitySpec};
use qnbm::training::{train, TrainingConfig};
use rand::Rng;

type Check = std::result::Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn shot_formulas() -> Check {
    let cc: Vec<u64> = (2..=4)
        .map(|n| shot_requirements(n, 100, SamplingMode::ClassicalControl).unwrap())
        .collect();
    let ps: Vec<u64> = (2..=4)
        .map(|n| shot_requirements(n, 100, SamplingMode::PostSelection).unwrap())
        .collect();
    let detail = format!("cc {cc:?} ps {ps:?}");
    if cc == [400, 800, 1600] && ps == [1600, 6400, 25600] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn census() -> Check {
    let get = |s: &str| {
        let c = gate_census(&structure(s), 6).unwrap();
        (c.parameterized_2q, c.fixed_1q, c.fixed_2q)
    };
    let (a, b) = (get("2,0,3"), get("3,0,4"));
    let detail = format!("2,0,3 -> {a:?}, 3,0,4 -> {b:?}");
    if a == (12, 3, 3) && b == (24, 4, 4) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random basis input on a (1,0,2) model; returns (state, block index, θ).
fn random_case<R: Rng>(r: &mut R) -> (StateVector, qnbm::neuron::RusBlock, f64) {
    let st = structure("1,0,2");
    let params = random_params(&st, r);
    let model = build_qnbm(&st, &params).unwrap();
    let x: u8 = r.gen_range(0..=1);
    let j = r.gen_range(0..2);
    let mut s = StateVector::new(st.total_qubits()).unwrap();
    if x == 1 {
        s.apply(&GateOp::X { target: 0 }).unwrap();
    }
    let theta = params.weights[j][0] * x as f64 + params.biases[j];
    (s, model.blocks()[j].clone(), theta)
}

fn activation_calibration() -> Check {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (s, block, theta) = random_case(&mut r);
        let (_, after) = rus_success_projection(&s, &block).unwrap();
        let out = after
            .marginal_distribution(&[block.output_qubit()])
            .unwrap();
        let half_angle = out.prob(1).sqrt().atan2(out.prob(0).sqrt());
        let oracle = (2.0 * theta).tan().powi(2).atan();
        worst = worst.max((half_angle - oracle).abs());
    }
    let detail = format!("200 cases, max |half-angle - arctan(tan^2 2θ)| = {worst:.2e} (tol 1e-9)");
    if worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn success_probability() -> Check {
    let mut r = rng(4);
    let (mut worst, mut min_p) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let (mut s, block, theta) = random_case(&mut r);
        for op in rus_unitaries(&block) {
            s.apply(&op).unwrap();
        }
        let p = s.probability_of(block.ancilla(), 0).unwrap();
        let oracle = 1.0 - (4.0 * theta).sin().powi(2) / 2.0;
        worst = worst.max((p - oracle).abs());
        min_p = min_p.min(p);
    }
    let detail = format!("200 cases, max error {worst:.2e} (tol 1e-10), min p {min_p:.6}");
    if worst <= 1e-10 && min_p >= 0.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Check {
    let mut r = rng(5);
    let (mut worst_tv, mut worst_cc) = (0.0f64, 0.0f64);
    for s in ["1,0,2", "2,0,3"] {
        let st = structure(s);
        for _ in 0..50 {
            let params = random_params(&st, &mut r);
            let ps = exact_distribution_postselected(&st, &params).unwrap();
            worst_tv = worst_tv.max(
                ps.total_variation(&scalar_postselected(&st, &params))
                    .unwrap(),
            );
            let cc = exact_distribution_classical_control(&st, &params, 1)
                .unwrap()
                .distribution;
            let diff = ps
                .probabilities()
                .iter()
                .zip(cc.probabilities())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_cc = worst_cc.max(diff);
        }
    }
    let detail = format!(
        "100 parameter sets, max TV vs scalar oracle {worst_tv:.2e} (tol 1e-9), max |cc(1) - ps| {worst_cc:.2e} (tol 1e-12, round-off)"
    );
    if worst_tv <= 1e-9 && worst_cc <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sampling_convergence() -> Check {
    let mut r = rng(6);
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, s) in ["1,0,2", "2,0,3", "3,0,4"].iter().enumerate() {
        let st = structure(s);
        let params = random_params(&st, &mut r);
        let model = build_qnbm(&st, &params).unwrap();
        let exact = model
            .classical_control(6, qnbm::model::DEFAULT_BRANCH_CAP)
            .unwrap()
            .distribution;
        let h = model
            .sample(SamplingMode::ClassicalControl, 100_000, 6, 600 + i as u64)
            .unwrap();
        let tv = h
            .to_distribution()
            .unwrap()
            .total_variation(&exact)
            .unwrap();
        ok &= tv < 0.02;
        parts.push(format!("{s} TV {tv:.4}"));
    }
    let detail = format!("{} (tol 0.02, 1e5 shots, cap 6)", parts.join(", "));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn training_reproduction(sweep: &StressReport) -> Check {
    let st = structure("1,0,2");
    let target = cardinality_distribution(CardinalitySpec::new(2, 1).unwrap()).unwrap();
    let finals: Vec<f64> = (0..8)
        .map(|seed| {
            let config = TrainingConfig {
                seed,
                ..TrainingConfig::default()
            };
            train(&st, &target, &config).unwrap().final_loss()
        })
        .collect();
    let converged = finals.iter().filter(|&&kl| kl < 0.05).count();

    let best = |i: usize| {
        sweep
            .cell(i, SamplingMode::ClassicalControl)
            .and_then(|c| c.kl_best)
            .unwrap_or(f64::INFINITY)
    };
    let (b102, b203, b304) = (best(0), best(1), best(2));
    let detail = format!(
        "1,0,2 seeds below 0.05: {converged}/8; best-of-8 cc KL vs P': 1,0,2 {b102:.4} (< 0.083), 2,0,3 {b203:.4} (< 0.37), 3,0,4 {b304:.4} (< 0.39)"
    );
    if converged >= 6 && b102 < 0.053 + 0.03 && b203 < 0.37 && b304 < 0.39 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn trend(sweep: &StressReport) -> Check {
    let t = fit_trend(&[(0.0, 0.053), (1.0, 0.231), (2.0, 0.409)]).unwrap();
    let exact = (t.slope - 0.178).abs() <= 1e-12 && (t.intercept - 0.053).abs() <= 1e-12;
    let sweep_slope = sweep.trend.map(|t| t.slope);
    let detail = format!(
        "collinear fit slope {:.15} intercept {:.15}; sweep slope {:?}",
        t.slope, t.intercept, sweep_slope
    );
    match sweep_slope {
        Some(s) if exact && s.is_finite() && s >= 0.0 => Ok(detail),
        _ => Err(detail),
    }
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.json"), dir.path().join("b.json")];
    for p in &paths {
        let code = cli::run([
            "qnbm",
            "stress",
            "--seed",
            "11",
            "--reproducible",
            "--output",
            p.to_str().unwrap(),
        ]);
        if code != 0 {
            return Err(format!("stress exited with {code}"));
        }
    }
    let (a, b) = (
        std::fs::read(&paths[0]).unwrap(),
        std::fs::read(&paths[1]).unwrap(),
    );
    let detail = format!("two default sweeps with seed 11, {} bytes each", a.len());
    if a == b {
        Ok(detail)
    } else {
        Err(format!("{detail}: reports differ"))
    }
}

fn main() {
    let start = Instant::now();
    let sweep = run_stress_test(
        &[structure("1,0,2"), structure("2,0,3"), structure("3,0,4")],
        &SamplingMode::ALL,
        8,
        &StressConfig::default(),
        &|_| {},
    )
    .expect("default sweep");

    let criteria: Vec<Criterion> = vec![
        ("shot formulas", Box::new(shot_formulas)),
        ("gate census", Box::new(census)),
        ("activation calibration", Box::new(activation_calibration)),
        ("success probability", Box::new(success_probability)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("sampling convergence", Box::new(sampling_convergence)),
        (
            "training reproduction",
            Box::new(|| training_reproduction(&sweep)),
        ),
        ("trend fit", Box::new(|| trend(&sweep))),
        ("determinism", Box::new(determinism)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (status, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{status} {}: {name}: {detail} [{:.1}s]",
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
