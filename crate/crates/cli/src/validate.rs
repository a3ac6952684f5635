//! Quick calibration suites behind `manisamp validate`.
//!
//! Each suite is small enough to finish in seconds. Statistical suites pass
//! when their calibration p-value exceeds `ALPHA`.

use manisamp::gamma::{gamma_metropolis_chain, GammaChainOptions};
use manisamp::geometry::{cauchy_binet_oracle, gram_jacobian};
use manisamp::moment::{neyman_chain_step, power_sums, sqrt_jacobian_acceptance};
use manisamp::pitfall::{verify_pitfall, NeighborhoodSystem};
use manisamp::torus::{sample_torus_area, sample_torus_naive, theta_cdf};
use manisamp::validation::{besag_serial_test, chi_square_counts, ks_statistic, IidKernel};
use manisamp::{
    stream_rng, ChainConfig, DerivativeMatrix, Envelope, GammaConstraint, GammaTarget, MomentState,
    NeymanKernel, Orientation, Result, TorusParams,
};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

const ALPHA: f64 = 0.001;

#[derive(Debug, Serialize)]
pub struct Suite {
    pub name: &'static str,
    pub passed: bool,
    pub metrics: Value,
}

pub fn run_all(seed: u64, reps: usize) -> Result<Vec<Suite>> {
    Ok(vec![
        jacobian(seed, reps)?,
        torus(seed, reps)?,
        pitfall(seed)?,
        besag(seed, reps)?,
        acceptance(seed, reps)?,
        gamma(seed)?,
        moment(seed)?,
    ])
}

fn jacobian(seed: u64, reps: usize) -> Result<Suite> {
    let mut rng = stream_rng(seed, 10);
    let mut worst = 0.0f64;
    for _ in 0..reps {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=8);
        let entries = (0..rows * cols)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let d = DerivativeMatrix::new(rows, cols, entries, Orientation::ParamsAsColumns)?;
        let j = gram_jacobian(&d)?.value;
        let oracle = cauchy_binet_oracle(&d)?;
        if oracle > 1e-6 {
            worst = worst.max((j - oracle).abs() / oracle);
        }
    }
    Ok(Suite {
        name: "jacobian",
        passed: worst <= 1e-10,
        metrics: json!({ "matrices": reps, "max_relative_error": worst }),
    })
}

fn torus(seed: u64, reps: usize) -> Result<Suite> {
    let params = TorusParams::new(1.0, 0.9)?;
    let runs = reps.min(100);
    let (mut area_pass, mut naive_detect) = (0usize, 0usize);
    for i in 0..runs as u64 {
        let mut rng = stream_rng(seed, 100 + i);
        let area: Vec<f64> = sample_torus_area(1000, &params, Envelope::Tight, &mut rng)
            .samples
            .iter()
            .map(|s| s.theta)
            .collect();
        let naive: Vec<f64> = sample_torus_naive(1000, &params, &mut rng)
            .iter()
            .map(|s| s.theta)
            .collect();
        let cdf = |t: f64| theta_cdf(t, &params).unwrap_or(f64::NAN);
        if ks_statistic(&area, cdf)?.p_value > 0.01 {
            area_pass += 1;
        }
        if ks_statistic(&naive, cdf)?.p_value < 0.001 {
            naive_detect += 1;
        }
    }
    Ok(Suite {
        name: "torus",
        passed: area_pass * 100 >= 90 * runs && naive_detect * 100 >= 95 * runs,
        metrics: json!({ "runs": runs, "area_ks_pass": area_pass, "naive_ks_reject": naive_detect }),
    })
}

fn pitfall(seed: u64) -> Result<Suite> {
    let path = verify_pitfall(&NeighborhoodSystem::path3())?;
    let mut rng = stream_rng(seed, 11);
    let mut worst = path
        .formula_error
        .max(path.metropolized_error.unwrap_or(f64::INFINITY));
    for i in 0..20 {
        let n = rng.random_range(3..=50);
        let sys = NeighborhoodSystem::random(n, i % 2 == 0, &mut rng)?;
        let r = verify_pitfall(&sys)?;
        worst = worst
            .max(r.formula_error)
            .max(r.metropolized_error.unwrap_or(f64::INFINITY));
    }
    Ok(Suite {
        name: "pitfall",
        passed: worst < 1e-10,
        metrics: json!({ "path3_sigma": path.sigma_empirical, "path3_bias": path.bias, "max_error": worst }),
    })
}

fn besag(seed: u64, reps: usize) -> Result<Suite> {
    let kernel = IidKernel {
        quantile: |u: f64| -(1.0 - u).ln(),
    };
    let mut counts = [0u64; 20];
    for r in 0..reps as u64 {
        let case = seed.wrapping_add(r);
        let x0 = (kernel.quantile)(stream_rng(case, 13).random());
        let report = besag_serial_test(&kernel, &x0, 1, 19, |x| *x, case)?;
        counts[report.rank - 1] += 1;
    }
    let chi = chi_square_counts(&counts, &[0.05; 20])?;
    Ok(Suite {
        name: "besag",
        passed: chi.p_value > ALPHA,
        metrics: json!({ "replications": reps, "rank_counts": counts, "chi_square_p": chi.p_value }),
    })
}

fn acceptance(seed: u64, reps: usize) -> Result<Suite> {
    let proposals = 100 * reps;
    let mut rng = stream_rng(seed, 14);
    let mut worst_sigma = 0.0f64;
    let mut rows = Vec::new();
    for ratio in [0.04f64, 0.25, 1.0, 4.0] {
        let expected = ratio.sqrt().min(1.0);
        let mut hits = 0usize;
        for _ in 0..proposals {
            if sqrt_jacobian_acceptance(ratio, 1.0, &mut rng)? {
                hits += 1;
            }
        }
        let freq = hits as f64 / proposals as f64;
        let sd = (expected * (1.0 - expected) / proposals as f64).sqrt();
        let z = if sd > 0.0 {
            (freq - expected).abs() / sd
        } else if freq == expected {
            0.0
        } else {
            f64::INFINITY
        };
        worst_sigma = worst_sigma.max(z);
        rows.push(json!({ "ratio": ratio, "expected": expected, "observed": freq }));
    }
    Ok(Suite {
        name: "acceptance",
        passed: worst_sigma <= 4.0,
        metrics: json!({ "proposals_per_ratio": proposals, "ratios": rows, "max_sigma": worst_sigma }),
    })
}

fn gamma(seed: u64) -> Result<Suite> {
    let c = GammaConstraint::new(5, 5.0, 0.5)?;
    let cfg = ChainConfig::new(seed, 0.25, 20_000, 0, 1)?;
    let run = gamma_metropolis_chain(&c, &cfg, GammaTarget::Area, &GammaChainOptions::default())?;
    let (mut sum_err, mut prod_err) = (0.0f64, 0.0f64);
    for d in &run.draws {
        sum_err = sum_err.max((d.coords.iter().sum::<f64>() - c.sum()).abs());
        prod_err = prod_err.max((d.coords.iter().product::<f64>() / c.product() - 1.0).abs());
    }
    Ok(Suite {
        name: "gamma",
        passed: sum_err < 1e-8 && prod_err < 1e-8,
        metrics: json!({
            "steps": cfg.steps,
            "acceptance_rate": run.tally.acceptance_rate(),
            "max_sum_error": sum_err,
            "max_product_relative_error": prod_err,
        }),
    })
}

fn moment(seed: u64) -> Result<Suite> {
    let mut rng = stream_rng(seed, 15);
    let x: Vec<f64> = (0..25).map(|_| rng.random()).collect();
    let start = MomentState::new(x, 4)?;
    let mut state = start.clone();
    let kernel = NeymanKernel::new(0.1);
    let steps = 20_000;
    let mut accepted = 0usize;
    for _ in 0..steps {
        if neyman_chain_step(&mut state, &kernel, &mut rng)?.accepted {
            accepted += 1;
        }
    }
    let drift = power_sums(&state.x, 4)
        .iter()
        .zip(&start.p)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Suite {
        name: "moment",
        passed: drift < 1e-7 && accepted > 0,
        metrics: json!({ "steps": steps, "accepted": accepted, "max_power_sum_drift": drift }),
    })
}
