//! `cldiv`: composite-likelihood divergence tests from the command line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cldiv::normal4::{self, Normal4};
use cldiv::sim::{self, TableSpec};
use cldiv::{
    clrt, hphi_test, power_approx_composite, sample_size, CompositeModel, ConstraintSpec, HFunction,
    NullHypothesis, ParamVector, PhiFamily, Sample, Statistic, TestOptions, TestOutcome,
};

#[derive(Parser, Debug)]
#[command(name = "cldiv", version, about = "Divergence-based hypothesis tests for composite likelihood models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a null hypothesis on a data file or a simulated sample.
    Test(TestArgs),
    /// Reproduce a level or power table by Monte Carlo.
    Simulate(SimulateArgs),
    /// Approximate power at a given n, or the n reaching a target power.
    Plan(PlanArgs),
}

#[derive(Args, Debug)]
struct TestArgs {
    #[arg(long, default_value = "normal4")]
    model: String,
    /// `rho=<v>` fixes ρ with the means free; `theta=<m1>,<m2>,<m3>,<m4>,<rho>` is a simple null.
    #[arg(long)]
    null: String,
    /// `clrt`, `cr:<lambda>` or `renyi:<r>`.
    #[arg(long, default_value = "cr:0")]
    stat: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// CSV file with one observation per row.
    #[arg(long, conflicts_with_all = ["n", "rho_true"], required_unless_present = "n")]
    data: Option<PathBuf>,
    /// Skip the first line of the data file.
    #[arg(long, requires = "data")]
    header: bool,
    /// Simulate a sample of this size instead of reading data.
    #[arg(long, requires = "rho_true")]
    n: Option<usize>,
    /// True ρ for the simulated sample (means are zero).
    #[arg(long)]
    rho_true: Option<f64>,
    #[arg(long, env = "CLDIV_SEED", default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Table id, 1 to 4.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    table: u8,
    #[arg(long, default_value_t = 10_000)]
    reps: usize,
    #[arg(long, env = "CLDIV_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Divergence at the alternative.
    #[arg(long)]
    divergence: f64,
    /// Asymptotic variance of the divergence estimator.
    #[arg(long)]
    sigma2: f64,
    /// Critical value of the test.
    #[arg(long)]
    critical: f64,
    /// Report power at this sample size.
    #[arg(long, conflicts_with = "power", required_unless_present = "power")]
    n: Option<usize>,
    /// Report the smallest n reaching this power.
    #[arg(long)]
    power: Option<f64>,
    /// φ''(1) of the divergence.
    #[arg(long, default_value_t = 1.0)]
    phi2: f64,
}

/// Numbers as JSON, with non-finite values spelled out.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn parse_null(spec: &str) -> anyhow::Result<NullHypothesis> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("null must look like rho=<v> or theta=<v1>,...,<v5>, got `{spec}`"))?;
    let values = value
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad number `{v}` in --null")))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    match (key.trim(), values.as_slice()) {
        ("rho", &[rho]) => Ok(NullHypothesis::Composite(ConstraintSpec::fix_coordinates(
            normal4::PARAM_DIM,
            &[(normal4::RHO_INDEX, rho)],
        )?)),
        ("theta", v) if v.len() == normal4::PARAM_DIM => Ok(NullHypothesis::Simple(ParamVector::new(v.to_vec()))),
        _ => bail!("unsupported null `{spec}`"),
    }
}

fn run_statistic(
    model: &dyn CompositeModel,
    sample: &Sample,
    null: &NullHypothesis,
    stat: Statistic,
    opts: &TestOptions,
) -> anyhow::Result<TestOutcome> {
    let outcome = match stat {
        Statistic::Clrt => match null {
            NullHypothesis::Composite(c) => clrt(model, sample, c, opts)?,
            NullHypothesis::Simple(_) => bail!("clrt needs a composite null such as rho=<v>"),
        },
        Statistic::CressieRead(lambda) => {
            hphi_test(model, sample, null, &HFunction::Identity, &PhiFamily::cressie_read(lambda)?, opts)?
        }
        Statistic::Renyi(r) => {
            let h = HFunction::renyi(r)?;
            let family = h.paired_phi().expect("Renyi pairs with a Cressie-Read member");
            hphi_test(model, sample, null, &h, &family, opts)?
        }
    };
    Ok(outcome)
}

fn cmd_test(args: &TestArgs) -> anyhow::Result<(Value, bool)> {
    if args.model != "normal4" {
        return Err(cldiv::Error::UnknownModel(args.model.clone()).into());
    }
    let model = Normal4::new();
    let stat: Statistic = args.stat.parse()?;
    let null = parse_null(&args.null)?;
    let (sample, source) = match (&args.data, args.n, args.rho_true) {
        (Some(path), _, _) => {
            let s = Sample::read_csv(path, args.header).with_context(|| format!("reading {}", path.display()))?;
            (s, json!({ "data": path.display().to_string() }))
        }
        (None, Some(n), Some(rho)) => {
            let theta = [0.0, 0.0, 0.0, 0.0, rho];
            let s = model.sample(&theta, n, args.seed)?;
            (s, json!({ "simulated": { "n": n, "rho_true": rho, "seed": args.seed } }))
        }
        _ => bail!("give either --data or both --n and --rho-true"),
    };
    let opts = TestOptions::with_alpha(args.alpha);
    let out = run_statistic(&model, &sample, &null, stat, &opts)?;
    let adjusted = out.adjusted.map(|a| {
        json!({
            "t1": num(a.t1), "t2": num(a.t2), "t3": num(a.t3), "t4": num(a.t4),
            "nu": num(a.nu), "a": num(a.a), "b": num(a.b), "c": num(a.c),
            "dof3": num(a.dof3), "r": a.r, "p_values": nums(&a.p_values),
        })
    });
    let report = json!({
        "model": args.model,
        "source": source,
        "n": sample.n(),
        "null": args.null,
        "statistic_kind": stat.to_string(),
        "estimates": {
            "theta_hat": nums(out.theta_hat.as_slice()),
            "theta_null": nums(out.theta_null.as_slice()),
        },
        "statistic": num(out.statistic),
        "spectrum": nums(out.spectrum.retained()),
        "alpha": args.alpha,
        "critical_value": num(out.critical_value),
        "p_value": num(out.p_value),
        "adjusted": adjusted,
        "domain_violation": out.domain_violation,
        "decision": if out.reject { "reject" } else { "accept" },
    });
    Ok((report, out.reject && out.statistic.is_infinite()))
}

fn open_out(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<bool> {
    let table = sim::run_table(&TableSpec::Builtin(args.table), args.reps, args.seed, args.alpha)?;
    let mut w = open_out(&args.out)?;
    table.write_csv(&mut w)?;
    w.flush()?;
    let level_rows: Vec<_> = table.rows.iter().filter(|r| r.is_level()).collect();
    let dale_ok = level_rows.iter().filter(|r| r.dale_pass == Some(true)).count();
    let max_se = table.rows.iter().map(|r| r.se).filter(|s| s.is_finite()).fold(0.0, f64::max);
    eprintln!(
        "table {} ({}): {} rows, {} reps, max SE {}",
        args.table,
        table.label,
        table.rows.len(),
        args.reps,
        sim::sig6(max_se)
    );
    if !level_rows.is_empty() {
        eprintln!("Dale screen: {dale_ok} of {} level cells inside the band", level_rows.len());
    }
    let mut failed = false;
    for r in table.errors() {
        failed = true;
        eprintln!("cell {} n={} rho0={} rho={} failed: {}", r.statistic, r.n, r.rho0, r.rho_true, r.error.as_deref().unwrap_or(""));
    }
    Ok(failed)
}

fn cmd_plan(args: &PlanArgs) -> anyhow::Result<String> {
    match (args.n, args.power) {
        (Some(n), None) => {
            let p = power_approx_composite(args.divergence, args.sigma2, n, args.critical, args.phi2)?;
            Ok(format!("power = {p}"))
        }
        (None, Some(pi)) => {
            let n = sample_size(args.divergence, args.sigma2, args.critical, pi)?;
            Ok(format!("n = {n}"))
        }
        _ => bail!("give exactly one of --n or --power"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a).and_then(|(report, infinite_reject)| {
            let mut w = open_out(&a.out)?;
            writeln!(w, "{}", serde_json::to_string_pretty(&report)?)?;
            w.flush()?;
            Ok(if infinite_reject { 2 } else { 0 })
        }),
        Command::Simulate(a) => cmd_simulate(a).map(u8::from),
        Command::Plan(a) => cmd_plan(a).map(|line| {
            println!("{line}");
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
