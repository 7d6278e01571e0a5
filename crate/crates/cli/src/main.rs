//! `anytime`: certify lower bounds on the anytime last-iterate error of
//! projected subgradient descent.
//!
//! Exit status: 0 when every check passes, 1 when a check fails, 2 for
//! usage, configuration or construction errors.

mod config;
mod output;

use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use anytime_core::bounds::{
    bound_row, chain_check, final_bound_crossover, parse_envelope, StepStatus,
    BOUND_CSV_HEADER, BOUND_CSV_HEADER_ANALYTIC,
};
use anytime_core::harness::{
    audit_schedule, density_experiment, verify_trajectories, DensityMode, EnvelopeChoice,
    Experiment,
};
use anytime_core::instances::Instance;
use anytime_core::schedules::parse_descriptor;
use clap::Parser;
use serde::Serialize;

use crate::config::{Cli, Command, Config};
use crate::output::OutDir;

enum Status {
    Pass,
    Fail,
}

fn experiment(cfg: &Config) -> Result<Experiment> {
    let schedule = parse_descriptor(&cfg.schedule).context("schedule")?;
    let envelope = match cfg.phi.trim() {
        "empirical" => EnvelopeChoice::Empirical,
        other => EnvelopeChoice::Named(parse_envelope(other).context("phi")?),
    };
    Ok(Experiment::new(
        schedule,
        cfg.horizons.clone(),
        cfg.families.clone(),
        envelope,
        cfg.tolerances,
        cfg.jobs,
    )?)
}

fn verify(cfg: &Config) -> Result<Status> {
    let exp = experiment(cfg)?;
    let out = OutDir::create(cfg)?;
    let report = verify_trajectories(&exp)?;

    let phi = exp.resolve_envelope()?;
    let mut dumps = Vec::new();
    for &t in &exp.horizons {
        for &family in &exp.families {
            dumps.push(Instance::build(family, &exp.schedule, t, &phi)?.dump());
        }
    }

    for check in &report.checks {
        println!(
            "{:<10} T={:<6} max_dev={:.3e} tol={:.0e} err={:.6e} bound={:.6e} {}",
            check.family.name(),
            check.horizon,
            check.max_coord_deviation,
            check.tolerance,
            check.final_error,
            check.certified_bound,
            if check.pass { "ok" } else { "FAIL" }
        );
    }

    #[derive(Serialize)]
    struct Verify<'a, R, D> {
        pass: bool,
        report: &'a R,
        instances: &'a D,
    }
    let path = out.json(
        "verify.json",
        &Verify {
            pass: report.pass(),
            report: &report,
            instances: &dumps,
        },
    )?;
    println!("wrote {}", path.display());
    Ok(if report.pass() { Status::Pass } else { Status::Fail })
}

fn audit(cfg: &Config) -> Result<Status> {
    let exp = experiment(cfg)?;
    let out = OutDir::create(cfg)?;
    let report = audit_schedule(&exp)?;

    for w in &report.witnesses {
        match (&w.skipped, w.measured_err, w.certified_bound, w.dominates) {
            (Some(why), ..) => println!("{:<10} T={:<6} skipped: {why}", w.family.name(), w.t),
            (None, Some(m), Some(b), Some(d)) => println!(
                "{:<10} T={:<6} err={m:.6e} bound={b:.6e} {}",
                w.family.name(),
                w.t,
                if d { "ok" } else { "FAIL" }
            ),
            _ => {}
        }
    }
    println!(
        "envelope {}: {}",
        report.envelope,
        if report.envelope_check.pass() { "ok" } else { "FAIL" }
    );

    let csv = out.csv("audit.csv", |w| {
        use std::io::Write;
        writeln!(w, "{BOUND_CSV_HEADER}")?;
        for row in &report.rows {
            writeln!(w, "{}", row.csv_line())?;
        }
        Ok(())
    })?;

    #[derive(Serialize)]
    struct Audit<'a, R> {
        pass: bool,
        dominance_failures: usize,
        report: &'a R,
    }
    let json = out.json(
        "audit.json",
        &Audit {
            pass: report.pass(),
            dominance_failures: report.dominance_failures(),
            report: &report,
        },
    )?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(if report.pass() { Status::Pass } else { Status::Fail })
}

fn density(cfg: &Config) -> Result<Status> {
    let exp = experiment(cfg)?;
    let out = OutDir::create(cfg)?;
    let mode = if cfg.per_t { DensityMode::PerT } else { DensityMode::SingleRun };
    let table = density_experiment(&exp, &cfg.thresholds, mode)?;

    for row in &table.rows {
        println!("c={:<8} T={:<6} count={:<6} density={}", row.c, row.horizon, row.count, row.density);
    }

    let csv = out.csv("density.csv", |w| table.write_csv(w))?;
    let profiles = out.csv("profiles.csv", |w| {
        use std::io::Write;
        writeln!(w, "T,t,err,scaled")?;
        for p in &table.profiles {
            for (i, e) in p.errors.iter().enumerate() {
                let t = i as u64 + 1;
                match e {
                    Some(e) => writeln!(w, "{},{t},{e},{}", p.horizon, (t as f64).sqrt() * e)?,
                    None => writeln!(w, "{},{t},,", p.horizon)?,
                }
            }
        }
        Ok(())
    })?;
    println!("wrote {} and {}", csv.display(), profiles.display());
    Ok(Status::Pass)
}

fn bounds(cfg: &Config) -> Result<Status> {
    let schedule = parse_descriptor(&cfg.schedule).context("schedule")?;
    if cfg.phi.trim() == "empirical" {
        bail!("phi: the empirical envelope needs simulation; use `audit`");
    }
    let phi = parse_envelope(&cfg.phi).context("phi")?;
    let horizon = cfg
        .horizon
        .unwrap_or_else(|| *cfg.horizons.iter().max().expect("resolved horizons are non-empty"));
    let chain = chain_check(&schedule, &phi, horizon)?;
    if let Some(support) = schedule.support() {
        if support < horizon + 1 {
            bail!("schedule: table has {support} entries but horizon {horizon} needs {}", horizon + 1);
        }
    }
    let out = OutDir::create(cfg)?;

    for step in &chain.steps {
        let status = match step.status {
            StepStatus::Pass => "pass",
            StepStatus::Fail => "FAIL",
            StepStatus::Inconclusive => "inconclusive",
            StepStatus::NotApplicable => "n/a",
        };
        println!("{:<30} {status:<12} {}", step.name, step.note);
    }

    let csv = out.csv("bounds.csv", |w| {
        use std::io::Write;
        writeln!(w, "{BOUND_CSV_HEADER_ANALYTIC}")?;
        for &t in &cfg.horizons {
            writeln!(w, "{}", bound_row(&schedule, t, &phi).csv_line_analytic())?;
        }
        Ok(())
    })?;

    #[derive(Serialize)]
    struct Bounds<'a, R> {
        pass: bool,
        /// Smallest even T in [4, T] from which the harmonic closing form
        /// dominates the log form, if any.
        final_bound_crossover: Option<u64>,
        chain: &'a R,
    }
    let json = out.json(
        "chain.json",
        &Bounds {
            pass: !chain.any_failed(),
            final_bound_crossover: final_bound_crossover(4, horizon),
            chain: &chain,
        },
    )?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(if chain.any_failed() { Status::Fail } else { Status::Pass })
}

fn run(command: &Command) -> Result<Status> {
    let cfg = Config::resolve(command.name(), command.flags())?;
    match command {
        Command::Verify(_) => verify(&cfg),
        Command::Audit(_) => audit(&cfg),
        Command::Density(_) => density(&cfg),
        Command::Bounds(_) => bounds(&cfg),
    }
}

fn is_numeric_fault(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        matches!(
            e.downcast_ref::<anytime_core::Error>(),
            Some(anytime_core::Error::NumericFault { .. })
        )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(Status::Pass) => ExitCode::SUCCESS,
        Ok(Status::Fail) => {
            eprintln!("anytime: one or more checks failed");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("anytime: {err:#}");
            ExitCode::from(if is_numeric_fault(&err) { 1 } else { 2 })
        }
    }
}
