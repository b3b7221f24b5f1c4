mod compare;
mod config;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use driftguard_core::lifelong::OperatorMode;
use driftguard_core::scenario::{
    run_approach, run_matrix, run_scenario, scenario_matrix, Approach, RunReport, ScenarioContext, ScenarioSpec,
};
use driftguard_service::{serve, start_run, RunOptions, ServiceState};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "driftguard", version, about = "Lifelong self-adaptation under drifting adaptation spaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (JSON). Falls back to ./driftguard.json, then defaults.
    #[arg(long, env = "DRIFTGUARD_CONFIG")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cycles: Option<u32>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<ScenarioSpec> {
        let (spec, source) = config::load_spec(self.scenario.as_deref())?;
        match source {
            config::Source::File(p) => eprintln!("scenario: {}", p.display()),
            config::Source::Defaults => eprintln!("scenario: defaults"),
        }
        config::finish(spec, self.seed, self.cycles)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario with one approach, or all approaches for its operator mode.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// baseline, predefined, ml2asr, lsa_feedback, lsa_nofeedback or all.
        #[arg(long, default_value = "all")]
        approach: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the 24-scenario evaluation matrix.
    Matrix {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        cycles: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the exhaustive archive and the ideal ranks of a scenario.
    Baseline {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate the run reports found in a directory.
    Report {
        #[arg(long)]
        compare: PathBuf,
        /// Also write the per-run table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a scenario with a human operator behind the HTTP service.
    Serve {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Seconds a feedback request stays open; waits forever if unset.
        #[arg(long)]
        feedback_timeout: Option<f64>,
        /// Pause after every cycle, in milliseconds.
        #[arg(long, default_value_t = 0)]
        pace_ms: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, approach, out } => cmd_run(&scenario.resolve()?, &approach, &out),
        Command::Matrix { seed, cycles, out } => cmd_matrix(seed, cycles, &out),
        Command::Baseline { scenario, out } => cmd_baseline(&scenario.resolve()?, &out),
        Command::Report { compare, csv } => cmd_report(&compare, csv.as_deref()),
        Command::Serve { scenario, port, host, feedback_timeout, pace_ms } => {
            let mut spec = scenario.resolve()?;
            spec.operator = OperatorMode::Human;
            let options = RunOptions {
                feedback_timeout: feedback_timeout.map(Duration::from_secs_f64),
                pace: (pace_ms > 0).then(|| Duration::from_millis(pace_ms)),
            };
            cmd_serve(spec, SocketAddr::new(host, port), options)
        }
    }
}

fn summarize(r: &RunReport) {
    let drift = r.summary.drift.as_ref();
    println!(
        "{:40} {:14} rsm {:.3}  drift rsm {}  drift utility {}  classes {}",
        r.label,
        r.approach.slug(),
        r.summary.overall.rsm,
        drift.map_or("-".into(), |d| format!("{:.3}", d.rsm)),
        drift.map_or("-".into(), |d| format!("{:.3}", d.mean_utility)),
        r.summary.final_class_count
    );
}

fn export_all(reports: &[RunReport], out: &Path) -> Result<()> {
    for r in reports {
        r.export(out, &r.stem()).with_context(|| format!("exporting {}", r.stem()))?;
        summarize(r);
    }
    Ok(())
}

fn cmd_run(spec: &ScenarioSpec, approach: &str, out: &Path) -> Result<()> {
    let started = Instant::now();
    let reports = if approach == "all" {
        run_scenario(spec)?
    } else {
        let approach: Approach = approach.parse()?;
        if approach == Approach::LsaFeedback && spec.operator == OperatorMode::Human {
            bail!("human-operated runs need the service; use `driftguard serve`");
        }
        let ctx = ScenarioContext::build(spec)?;
        vec![run_approach(&ctx, approach, None, &mut ())?]
    };
    export_all(&reports, out)?;
    eprintln!("{} run(s) in {:.1}s, written to {}", reports.len(), started.elapsed().as_secs_f64(), out.display());
    Ok(())
}

fn cmd_matrix(seed: u64, cycles: Option<u32>, out: &Path) -> Result<()> {
    let specs =
        scenario_matrix(seed).into_iter().map(|s| config::finish(s, None, cycles)).collect::<Result<Vec<_>>>()?;
    let started = Instant::now();
    let reports = run_matrix(&specs)?;
    export_all(&reports, out)?;
    compare::write_csv(&reports, &out.join("matrix_summary.csv"))?;
    eprintln!("{} runs in {:.1}s, written to {}", reports.len(), started.elapsed().as_secs_f64(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ArchiveRow {
    cycle: u32,
    option_id: usize,
    pl: f64,
    ec: f64,
    truth: u8,
    cluster: String,
    truth_rank: usize,
}

#[derive(Serialize)]
struct IdealRow {
    cycle: u32,
    ideal_rank: usize,
}

fn cmd_baseline(spec: &ScenarioSpec, out: &Path) -> Result<()> {
    let started = Instant::now();
    let ctx = ScenarioContext::build(spec)?;
    std::fs::create_dir_all(out)?;
    let stem = spec.label();

    let mut archive = csv::Writer::from_path(out.join(format!("{stem}.archive.csv")))?;
    for c in &ctx.archive.cycles {
        for (i, (q, t)) in c.qualities.iter().zip(&c.truths).enumerate() {
            archive.serialize(ArchiveRow {
                cycle: c.cycle,
                option_id: i,
                pl: q.packet_loss,
                ec: q.energy,
                truth: t.0,
                cluster: ctx.sim.cluster(*t).name.clone(),
                truth_rank: ctx.ideal.rank_of(*t).context("every archived cluster is ranked")?,
            })?;
        }
    }
    archive.flush()?;

    let mut ideal = csv::Writer::from_path(out.join(format!("{stem}.ideal.csv")))?;
    for (i, r) in ctx.ideal.ideal_ranks.iter().enumerate() {
        ideal.serialize(IdealRow { cycle: i as u32 + 1, ideal_rank: *r })?;
    }
    ideal.flush()?;

    let model = serde_json::json!({
        "label": stem,
        "spec": spec,
        "model": ctx.ideal.model,
        "ranking": ctx.ideal.ranking,
    });
    std::fs::write(out.join(format!("{stem}.ideal_model.json")), serde_json::to_string_pretty(&model)?)?;

    let report = run_approach(&ctx, Approach::Baseline, None, &mut ())?;
    export_all(std::slice::from_ref(&report), out)?;
    eprintln!(
        "archived {} cycles x {} options in {:.1}s, written to {}",
        ctx.archive.cycles.len(),
        ctx.archive.option_count,
        started.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn cmd_report(dir: &Path, csv: Option<&Path>) -> Result<()> {
    let (reports, skipped) = compare::load_reports(dir)?;
    for p in skipped {
        eprintln!("skipping {} (not a run report)", p.display());
    }
    if reports.is_empty() {
        bail!("no run reports in {}", dir.display());
    }
    print!("{}", compare::render(&reports));
    if let Some(path) = csv {
        compare::write_csv(&reports, path)?;
    }
    Ok(())
}

fn cmd_serve(spec: ScenarioSpec, addr: SocketAddr, options: RunOptions) -> Result<()> {
    let state = ServiceState::new();
    eprintln!("preparing {} ...", spec.label());
    let run = start_run(spec, Approach::LsaFeedback, state.clone(), options)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("operator service listening on http://{}", listener.local_addr()?);
        let server = tokio::spawn(serve(listener, state));
        let report = tokio::task::spawn_blocking(move || run.join()).await?;
        match report {
            Ok(Ok(r)) => {
                summarize(&r);
                eprintln!("run finished; the service keeps serving its final state (Ctrl-C to stop)");
            }
            Ok(Err(e)) => eprintln!("run failed: {e}"),
            Err(_) => eprintln!("run thread panicked"),
        }
        server.await??;
        Ok(())
    })
}
