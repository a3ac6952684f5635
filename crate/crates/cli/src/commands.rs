use std::fs;

use manisamp::gamma::{default_eps, gamma_metropolis_chain, GammaChainOptions};
use manisamp::moment::neyman_smooth_gof;
use manisamp::pitfall::{verify_pitfall, NeighborhoodSystem};
use manisamp::torus::{sample_torus_area, sample_torus_naive};
use manisamp::{
    stream_rng, AcceptanceRule, ChainConfig, Envelope, GammaConstraint, GammaTarget, NeymanKernel,
    NeymanStatistic, TorusParams,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::output::{num, write_json, Csv};
use crate::CliError;

/// Full resolved configuration embedded in every output.
#[derive(Serialize)]
struct RunConfig<'a, A: Serialize> {
    command: &'static str,
    version: &'static str,
    #[serde(flatten)]
    args: &'a A,
    resolved: Value,
}

fn config<'a, A: Serialize>(
    command: &'static str,
    args: &'a A,
    resolved: Value,
) -> RunConfig<'a, A> {
    RunConfig {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
        resolved,
    }
}

fn json_only(format: Option<Format>, command: &str) -> Result<(), CliError> {
    match format {
        Some(Format::Csv) => Err(CliError::Usage(format!(
            "--format csv is not supported by `{command}`, which writes JSON"
        ))),
        _ => Ok(()),
    }
}

/// Attaches the configuration to a serialized report object.
fn with_config<T: Serialize, C: Serialize>(report: &T, config: &C) -> Result<Value, CliError> {
    let mut value = serde_json::to_value(report)?;
    if let Value::Object(map) = &mut value {
        map.insert("config".into(), serde_json::to_value(config)?);
    }
    Ok(value)
}

pub fn torus(args: &TorusArgs) -> Result<(), CliError> {
    let params = TorusParams::new(args.major, args.minor)?;
    let mut rng = stream_rng(args.common.seed, 0);
    let (samples, proposals) = match args.method {
        TorusMethod::Area => {
            let envelope = match args.envelope {
                EnvelopeArg::Tight => Envelope::Tight,
                EnvelopeArg::Loose => Envelope::Loose,
            };
            let run = sample_torus_area(args.n, &params, envelope, &mut rng);
            (run.samples, Some(run.proposals))
        }
        TorusMethod::Naive => (sample_torus_naive(args.n, &params, &mut rng), None),
    };
    let cfg = config(
        "torus",
        args,
        json!({ "surface_area": params.surface_area() }),
    );
    match args.common.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let header = ["theta", "psi", "x", "y", "z", "method"].map(String::from);
            let mut csv = Csv::new(&header);
            for s in &samples {
                csv.row([
                    num(s.theta),
                    num(s.psi),
                    num(s.point[0]),
                    num(s.point[1]),
                    num(s.point[2]),
                    s.method.as_str().to_string(),
                ]);
            }
            csv.finish(&args.common.out, &cfg)
        }
        Format::Json => {
            let rows: Vec<Value> = samples
                .iter()
                .map(|s| {
                    json!({
                        "theta": s.theta,
                        "psi": s.psi,
                        "x": s.point[0],
                        "y": s.point[1],
                        "z": s.point[2],
                        "method": s.method.as_str(),
                    })
                })
                .collect();
            write_json(
                &args.common.out,
                &json!({ "config": cfg, "proposals": proposals, "samples": rows }),
            )
        }
    }
}

pub fn gamma(args: &GammaArgs) -> Result<(), CliError> {
    let c = GammaConstraint::new(args.n, args.sum, args.product)?;
    let eps = args.eps.unwrap_or_else(|| default_eps(&c));
    if !(0.0..=1.0).contains(&args.permute_prob) {
        return Err(CliError::Usage(format!(
            "--permute-prob must lie in [0, 1], got {}",
            args.permute_prob
        )));
    }
    let chain = ChainConfig::new(args.common.seed, eps, args.steps, args.burnin, args.thin)?;
    let target = match args.mode {
        GammaMode::Area => GammaTarget::Area,
        GammaMode::Conditional => GammaTarget::Conditional,
    };
    let options = GammaChainOptions {
        symmetrize: args.symmetrize,
        permute_prob: args.permute_prob,
        start: None,
    };
    let run = gamma_metropolis_chain(&c, &chain, target, &options)?;
    if let Some(w) = &run.warning {
        eprintln!("warning: {w}");
    }
    let cfg = config("gamma", args, json!({ "eps": eps, "warning": run.warning }));
    match args.common.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut header: Vec<String> = (1..=args.n).map(|i| format!("x{i}")).collect();
            header.push("logdensity".into());
            header.push("accepted".into());
            let mut csv = Csv::new(&header);
            for d in &run.draws {
                csv.row(
                    d.coords
                        .iter()
                        .map(|&v| num(v))
                        .chain([num(d.log_density), (d.accepted as u8).to_string()]),
                );
            }
            csv.finish(&args.common.out, &cfg)
        }
        Format::Json => {
            let draws: Vec<Value> = run
                .draws
                .iter()
                .map(|d| json!({ "x": d.coords, "logdensity": d.log_density, "accepted": d.accepted }))
                .collect();
            write_json(
                &args.common.out,
                &json!({ "config": cfg, "tally": run.tally, "draws": draws }),
            )
        }
    }
}

fn read_data(path: &std::path::Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("--data {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| {
                CliError::Usage(format!("--data {} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect()
}

pub fn neyman(args: &NeymanArgs) -> Result<(), CliError> {
    json_only(args.common.format, "neyman")?;
    let statistic = match (args.statistic, args.degree) {
        (StatisticArg::Legendre5, None) => NeymanStatistic::Legendre5,
        (StatisticArg::Legendre5, Some(_)) => {
            return Err(CliError::Usage(
                "--degree requires --statistic custom".into(),
            ))
        }
        (StatisticArg::Custom, Some(k)) if k >= 5 => NeymanStatistic::Legendre(k),
        (StatisticArg::Custom, Some(k)) => {
            return Err(CliError::Usage(format!(
                "--degree must be at least 5, got {k}"
            )))
        }
        (StatisticArg::Custom, None) => {
            return Err(CliError::Usage("--statistic custom needs --degree".into()))
        }
    };
    if !(args.eps.is_finite() && args.eps > 0.0) {
        return Err(CliError::Usage(format!(
            "--eps must be positive, got {}",
            args.eps
        )));
    }
    let data = read_data(&args.data)?;
    let kernel = NeymanKernel {
        rule: match args.rule {
            RuleArg::SquareRoot => AcceptanceRule::SquareRoot,
            RuleArg::Hastings => AcceptanceRule::Hastings,
        },
        ..NeymanKernel::new(args.eps)
    };
    let report = neyman_smooth_gof(
        &data,
        &kernel,
        args.common.seed,
        args.replicates,
        args.steps,
        statistic,
    )?;
    let cfg = config(
        "neyman",
        args,
        json!({ "n": data.len(), "degree": statistic.degree() }),
    );
    write_json(&args.common.out, &with_config(&report, &cfg)?)
}

pub fn pitfall(args: &PitfallArgs) -> Result<(), CliError> {
    json_only(args.common.format, "pitfall")?;
    let sys = match args.demo {
        Demo::Path3 => NeighborhoodSystem::path3(),
        Demo::Random => {
            NeighborhoodSystem::random(args.n, !args.open, &mut stream_rng(args.common.seed, 0))?
        }
    };
    let report = verify_pitfall(&sys)?;
    let neighborhoods: Vec<&[usize]> = (0..sys.len()).map(|x| sys.neighborhood(x)).collect();
    let cfg = config("pitfall", args, json!({ "neighborhoods": neighborhoods }));
    write_json(&args.common.out, &with_config(&report, &cfg)?)
}

pub fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    json_only(args.common.format, "validate")?;
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    let suites = crate::validate::run_all(args.common.seed, args.reps)?;
    let passed = suites.iter().all(|s| s.passed);
    let cfg = config("validate", args, Value::Null);
    write_json(
        &args.common.out,
        &json!({ "config": cfg, "passed": passed, "suites": suites }),
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(
            suites
                .iter()
                .filter(|s| !s.passed)
                .map(|s| s.name)
                .collect::<Vec<_>>()
                .join(", "),
        ))
    }
}
