//! Acceptance suite on the two-state benchmark. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use mflqg::benchmark;
use mflqg::linalg::{self, Mat};
use mflqg::pipeline::{self, run_experiment, RunOptions};
use mflqg::ExperimentConfig;

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn within(actual: &Mat, expected: &[f64], tol: f64) -> (bool, f64) {
    let worst = actual
        .transpose()
        .iter()
        .zip(expected)
        .map(|(a, e)| (a - e).abs())
        .fold(0.0, f64::max);
    (worst <= tol, worst)
}

fn sym(v: [f64; 3]) -> [f64; 4] {
    [v[0], v[1], v[1], v[2]]
}

fn fmt(m: &Mat) -> String {
    format!("{:?}", linalg::rowmajor::to_rows(m))
}

fn oracle_feedforward(cfg: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let result = pipeline::run_oracle(cfg);
    let elapsed = start.elapsed();
    let title = "feedforward oracle at the reference feedback estimate";
    let Some(ff) = result.ok().and_then(|o| o.reference_feedforward) else {
        return Outcome { id: 1, title, pass: false, detail: "oracle failed".into() };
    };
    let (s_ok, s_err) = within(&ff.s, &sym(benchmark::REFERENCE_S_TRUE), 5e-4);
    let (k_ok, k_err) = within(&ff.ks, &benchmark::REFERENCE_KS_TRUE, 5e-4);
    let fast = elapsed < Duration::from_secs(1);
    Outcome {
        id: 1,
        title,
        pass: s_ok && k_ok && fast,
        detail: format!(
            "S = {}, Ks = {}, max |ΔS| = {s_err:.2e}, max |ΔKs| = {k_err:.2e}, {elapsed:.2?}",
            fmt(&ff.s),
            fmt(&ff.ks)
        ),
    }
}

fn value_consistency(cfg: &ExperimentConfig) -> Outcome {
    let start = Instant::now();
    let result = pipeline::run_oracle(cfg);
    let elapsed = start.elapsed();
    let title = "oracle P against the reference estimate and its Riccati residual";
    let Ok(oracle) = result else {
        return Outcome { id: 2, title, pass: false, detail: "oracle failed".into() };
    };
    let p_ref = benchmark::reference_p();
    let rel = linalg::spectral_norm(&(&oracle.feedback.p - &p_ref)) / linalg::spectral_norm(&p_ref);
    let residual = oracle.reference_sare_residual.unwrap_or(f64::NAN);
    let res_ok = (residual - benchmark::REFERENCE_RESIDUAL).abs() <= 0.1 * benchmark::REFERENCE_RESIDUAL;
    let fast = elapsed < Duration::from_secs(1);
    Outcome {
        id: 2,
        title,
        pass: rel <= 0.02 && res_ok && fast,
        detail: format!(
            "P = {}, relative error {:.2}% (limit 2%), residual norm {residual:.4} (target {} ± 10%), {elapsed:.2?}",
            fmt(&oracle.feedback.p),
            100.0 * rel,
            benchmark::REFERENCE_RESIDUAL
        ),
    }
}

fn exact_data_equivalence() -> Outcome {
    let title = "learned gains equal model-based gains on noise-free data";
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/deterministic.toml");
    let cfg = match ExperimentConfig::load(path.as_ref()) {
        Ok(c) => c,
        Err(e) => return Outcome { id: 3, title, pass: false, detail: e.to_string() },
    };
    let start = Instant::now();
    let result = run_experiment(&cfg, RunOptions::GAINS);
    let elapsed = start.elapsed();
    let report = match result {
        Ok((r, _)) => r,
        Err((_, e)) => return Outcome { id: 3, title, pass: false, detail: e.to_string() },
    };
    let (Some(oracle), Some(learned)) = (&report.oracle, &report.learned) else {
        return Outcome { id: 3, title, pass: false, detail: "missing stage output".into() };
    };
    let dk = linalg::frobenius(&(&learned.feedback.k - &oracle.feedback.k));
    let dks = learned
        .feedforward
        .as_ref()
        .map(|ff| linalg::frobenius(&(&ff.ks - &oracle.feedforward.ks)))
        .unwrap_or(f64::INFINITY);
    let fast = elapsed < Duration::from_secs(30);
    Outcome {
        id: 3,
        title,
        pass: dk <= 1e-6 && dks <= 1e-6 && fast,
        detail: format!("‖ΔK‖_F = {dk:.2e}, ‖ΔKs‖_F = {dks:.2e}, {elapsed:.2?}"),
    }
}

fn stochastic_criteria(cfg: &ExperimentConfig) -> Vec<Outcome> {
    let start = Instant::now();
    let result = run_experiment(cfg, RunOptions::FULL);
    let elapsed = start.elapsed();
    let report = match result {
        Ok((r, _)) => r,
        Err((_, e)) => {
            return [
                (4, "learned gains on the benchmark ensemble"),
                (5, "identified mean-field model"),
                (6, "Monte Carlo and identified mean-field routes agree"),
                (8, "learned decentralized policy cost"),
            ]
            .into_iter()
            .map(|(id, title)| Outcome { id, title, pass: false, detail: format!("run failed: {e}") })
            .collect();
        }
    };
    let mut out = Vec::new();

    let learned = report.learned.as_ref().expect("learned stage present");
    let k_ref = benchmark::reference_k();
    let k_rel = learned
        .feedback
        .k
        .iter()
        .zip(k_ref.iter())
        .map(|(a, e)| ((a - e) / e).abs())
        .fold(0.0, f64::max);
    let lambda = learned.feedback.lambda[(0, 0)];
    let lambda_ok = (lambda - benchmark::REFERENCE_LAMBDA).abs() <= 0.05;
    let ff = learned.feedforward.as_ref();
    let (ks_ok, ks_err) = ff
        .map(|f| within(&f.ks, &benchmark::REFERENCE_KS_LEARNED, 0.05))
        .unwrap_or((false, f64::INFINITY));
    let fb_iters = learned.feedback_trace.len();
    let ff_iters = learned.feedforward_trace.as_ref().map_or(usize::MAX, |t| t.len());
    out.push(Outcome {
        id: 4,
        title: "learned gains on the benchmark ensemble",
        pass: k_rel <= 0.10
            && lambda_ok
            && ks_ok
            && fb_iters <= 10
            && ff_iters <= 10
            && elapsed < Duration::from_secs(300),
        detail: format!(
            "K = {}, max rel err {:.1}% (limit 10%), Λ = {lambda:.4}, Ks = {}, max |ΔKs| = {ks_err:.3}, iterations {fb_iters}/{ff_iters}, {elapsed:.2?}",
            fmt(&learned.feedback.k),
            100.0 * k_rel,
            ff.map(|f| fmt(&f.ks)).unwrap_or_default()
        ),
    });

    let mf = report.meanfield.as_ref();
    let identified = mf.and_then(|m| m.identified.as_ref());
    out.push(match identified {
        Some(id) => {
            let (b_ok, b_err) = within(&id.b_hat, benchmark::reference_b_hat().as_slice(), 0.01);
            let a_ref = benchmark::reference_a_hat().transpose();
            let (a_ok, a_err) = within(&id.a_hat, a_ref.as_slice(), 0.05);
            Outcome {
                id: 5,
                title: "identified mean-field model",
                pass: b_ok && a_ok,
                detail: format!(
                    "B̂ = {}, max |ΔB| = {b_err:.4} (limit 0.01), Â = {}, max |ΔA| = {a_err:.4} (limit 0.05)",
                    fmt(&id.b_hat),
                    fmt(&id.a_hat)
                ),
            }
        }
        None => Outcome {
            id: 5,
            title: "identified mean-field model",
            pass: false,
            detail: mf.and_then(|m| m.identification_note.clone()).unwrap_or_else(|| "no identification".into()),
        },
    });

    let discrepancy = mf.and_then(|m| m.route_discrepancy).unwrap_or(f64::INFINITY);
    out.push(Outcome {
        id: 6,
        title: "Monte Carlo and identified mean-field routes agree",
        pass: discrepancy <= 0.1,
        detail: format!("sup-norm distance {discrepancy:.4} on [0, 10] (limit 0.1)"),
    });

    out.push(match &report.social_cost {
        Some(c) => Outcome {
            id: 8,
            title: "learned decentralized policy cost",
            pass: c.relative_gap.abs() <= 0.02,
            detail: format!(
                "per-agent cost {:.4} vs oracle {:.4}, gap {:.2}% (limit 2%), N = {}, {} replications",
                c.learned,
                c.oracle,
                100.0 * c.relative_gap,
                c.agents,
                c.replications
            ),
        },
        None => Outcome {
            id: 8,
            title: "learned decentralized policy cost",
            pass: false,
            detail: "no social-cost stage".into(),
        },
    });
    out
}

fn property_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut count = 0;
    for seed in 0..24u64 {
        let n = 1 + (seed as usize % 4);
        let m = 1 + (seed as usize / 4 % 2);
        count += 1;
        if let Err(e) = common::check_instance(1000 + seed, n, m) {
            failures.push(format!("seed {seed} (n = {n}, m = {m}): {e}"));
        }
    }
    Outcome {
        id: 7,
        title: "policy-iteration, pairing, identification and Lyapunov properties",
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{count} random instances")
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let cfg = pipeline::benchmark_config();
    let mut outcomes = vec![oracle_feedforward(&cfg), value_consistency(&cfg), exact_data_equivalence()];
    outcomes.extend(stochastic_criteria(&cfg));
    outcomes.push(property_suites());
    outcomes.sort_by_key(|o| o.id);
    let mut failed = 0;
    for o in &outcomes {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {}: {}", o.id, o.title, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
