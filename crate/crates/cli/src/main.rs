//! `ntail`: noise-tailoring experiments on the BCS benchmark.
//!
//! Stages communicate only through files: `gen-noise` writes a device
//! model, `pnt` learns channels from it, `plan` turns the learned channels
//! into a mitigation plan and `run` executes a trial from those artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ntail::analysis::{AwaeReport, CircuitOutputs};
use ntail::experiment::{
    device_model, gen_noise, layout, learn, plan_targets, read_csv, references_from_rows, report_from_outputs, run_trial,
    with_injection, write_csv, write_json, write_outputs, ExperimentConfig, ExpectationRow, Inputs, Learned, NoiseSource,
    StageTiming, Trial,
};
use ntail::mitigation::MitigationPlan;
use ntail::simulator::NoiseModel;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ntail", version, about = "Noise tailoring with RC, PNT and NEC on an emulated device")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic anisotropic Pauli noise model.
    GenNoise(GenNoise),
    /// Run Pauli noise tomography against a device model.
    Pnt(Pnt),
    /// Optimize target channels and compute the sampling overhead.
    Plan(Plan),
    /// Run one trial from persisted artifacts.
    Run(Run),
    /// Recompute AWAE, batch curve and extrapolation for a run directory.
    Report(Report),
    /// Emit CSV data for the time-evolution, AWAE and extrapolation figures.
    ReproduceFigures(Figures),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<(ExperimentConfig, Option<PathBuf>)> {
        match &self.config {
            None => Ok((ExperimentConfig::default(), None)),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let c = ExperimentConfig::from_json(&text)?;
                Ok((c, p.parent().map(Path::to_path_buf)))
            }
        }
    }
}

#[derive(Args)]
struct GenNoise {
    #[command(flatten)]
    config: ConfigArg,
    /// Mean total error per CNOT.
    #[arg(long)]
    mean_error: Option<f64>,
    /// Coefficient of variation of the Pauli rates.
    #[arg(long)]
    dispersion: Option<f64>,
    /// Share of error moved onto the neighbor qubit.
    #[arg(long)]
    crosstalk: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Pnt {
    #[command(flatten)]
    config: ConfigArg,
    /// Device model; the config's noise source is used when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Plan {
    #[command(flatten)]
    config: ConfigArg,
    /// Learned model written by `pnt`.
    #[arg(long)]
    learned: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct Run {
    #[command(flatten)]
    config: ConfigArg,
    /// Overrides the trial in the config.
    #[arg(long)]
    trial: Option<Trial>,
    #[arg(long)]
    n_nt: Option<usize>,
    #[arg(long)]
    device: Option<PathBuf>,
    #[arg(long)]
    learned: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, short)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Report {
    /// Output directory of `run`.
    dir: PathBuf,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    fit_max_n: Option<usize>,
}

#[derive(Args)]
struct Figures {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    n_nt: Option<usize>,
    #[arg(long, short)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (code, result) = match &cli.command {
        Command::GenNoise(a) => (10, gen_noise_cmd(a)),
        Command::Pnt(a) => (11, pnt_cmd(a)),
        Command::Plan(a) => (12, plan_cmd(a)),
        Command::Run(a) => (13, run_cmd(a)),
        Command::Report(a) => (14, report_cmd(a)),
        Command::ReproduceFigures(a) => (15, figures_cmd(a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn read_model(p: &Path) -> Result<NoiseModel> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(NoiseModel::from_json(&text)?)
}

/// Device with the config's injections. A file overrides the noise source.
fn load_device(config: &ExperimentConfig, base: Option<&Path>, file: Option<&Path>) -> Result<NoiseModel> {
    match file {
        Some(p) => Ok(with_injection(&read_model(p)?, &config.injection)?),
        None => Ok(device_model(config, base)?),
    }
}

fn gen_noise_cmd(a: &GenNoise) -> Result<()> {
    let (config, _) = a.config.load()?;
    let mut spec = match &config.noise {
        NoiseSource::Synthetic(s) => s.clone(),
        NoiseSource::File { .. } => Default::default(),
    };
    spec.mean_error = a.mean_error.unwrap_or(spec.mean_error);
    spec.dispersion = a.dispersion.unwrap_or(spec.dispersion);
    spec.crosstalk = a.crosstalk.unwrap_or(spec.crosstalk);
    spec.seed = a.seed.unwrap_or(spec.seed);
    let model = gen_noise(&spec, config.bcs.n_qubits(), &layout(&config.bcs))?;
    fs::write(&a.out, model.to_json()?)?;
    println!("wrote {} ({} junctions)", a.out.display(), model.junctions().len());
    Ok(())
}

fn pnt_cmd(a: &Pnt) -> Result<()> {
    let (config, base) = a.config.load()?;
    config.validate()?;
    let device = load_device(&config, base.as_deref(), a.model.as_deref())?;
    let learned = learn(&config, &device)?;
    fs::create_dir_all(&a.out_dir)?;
    let model = learned.model(config.bcs.n_qubits())?;
    fs::write(a.out_dir.join("learned_model.json"), model.to_json()?)?;
    write_json(&a.out_dir.join("tomography.json"), &learned.tomography)?;
    write_csv(&a.out_dir.join("signals.csv"), &learned.signals)?;
    for t in &learned.tomography {
        let flagged = if !t.invalid.is_empty() || !t.anomalies.is_empty() { " (flagged)" } else { "" };
        let process = t.fidelities.iter().sum::<f64>() / t.fidelities.len() as f64;
        let worst = t.std.iter().cloned().fold(0.0, f64::max);
        println!("{} {}>{}: process fidelity {process:.5}, max std {worst:.5}{flagged}", t.junction_id, t.control, t.target);
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn plan_cmd(a: &Plan) -> Result<()> {
    let (config, _) = a.config.load()?;
    config.validate()?;
    let learned = Learned::from_model(&read_model(&a.learned)?);
    let plan = plan_targets(&config, &learned)?;
    fs::write(&a.out, plan.to_json()?)?;
    for e in &plan.edges {
        println!("{} {}>{}: gamma = {:.6}, n_cnot = {}", e.junction_id, e.control, e.target, e.gamma, e.n_cnot);
    }
    println!("F_NEC = {:.6}, sigma = {:.4}", plan.f_nec, plan.sigma());
    Ok(())
}

fn run_cmd(a: &Run) -> Result<()> {
    let (mut config, base) = a.config.load()?;
    if let Some(t) = a.trial {
        config.trial = t;
    }
    if let Some(n) = a.n_nt {
        config.n_nt = n;
    }
    config.validate()?;
    let mut timings = Vec::new();
    let t = Instant::now();
    let device = load_device(&config, base.as_deref(), a.device.as_deref())?;
    let learned = Learned::from_model(&read_model(&a.learned)?);
    let plan = MitigationPlan::from_json(&fs::read_to_string(&a.plan).with_context(|| format!("reading {}", a.plan.display()))?)?;
    timings.push(stage("load", t));
    let t = Instant::now();
    let out = run_trial(&Inputs {
        config: &config,
        device: &device,
        learned: &learned,
        plan: &plan,
    })?;
    timings.push(stage("run", t));
    write_outputs(&a.out_dir, &config, &out, timings)?;
    print_report(config.trial.label(), &out.awae_all, &out.awae_last_two);
    if let Some(d) = &out.diagnostics {
        println!("diagnostics: {}", serde_json::to_string(d)?);
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

fn stage(name: &str, t: Instant) -> StageTiming {
    StageTiming {
        stage: name.into(),
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn print_report(label: &str, all: &AwaeReport, last: &AwaeReport) {
    println!("{label}: zeta(all) = {:.5}, zeta(last two) = {:.5}", all.zeta, last.zeta);
    for (name, rep) in [("all", all), ("last two", last)] {
        if let Some(f) = &rep.fit {
            println!("  fit ({name}): zeta(N) = {:.4}/sqrt(N) + {:.5} (b std {:.5})", f.a, f.b, f.b_std());
        }
    }
}

#[derive(Serialize)]
struct CurveRow<'a> {
    subset: &'a str,
    n: usize,
    zeta: f64,
    std: f64,
    batches: usize,
}

fn curve_rows<'a>(reports: &[(&'a str, &AwaeReport)]) -> Vec<CurveRow<'a>> {
    reports
        .iter()
        .flat_map(|(name, rep)| {
            rep.curve.iter().map(move |p| CurveRow {
                subset: name,
                n: p.n,
                zeta: p.zeta,
                std: p.std,
                batches: p.batches,
            })
        })
        .collect()
}

fn report_cmd(a: &Report) -> Result<()> {
    let text = fs::read_to_string(a.dir.join("config.json")).context("run directory has no config.json")?;
    let mut config = ExperimentConfig::from_json(&text)?;
    config.batch_size = a.batch_size.unwrap_or(config.batch_size);
    config.fit_max_n = a.fit_max_n.unwrap_or(config.fit_max_n);
    let rows: Vec<ExpectationRow> = read_csv(&a.dir.join("expectations.csv"))?;
    let refs = references_from_rows(&rows);
    let circuits = a.dir.join("circuits.json");
    if circuits.exists() {
        let out: CircuitOutputs = serde_json::from_slice(&fs::read(&circuits)?)?;
        let last_two = config.last_two();
        let all = report_from_outputs(&config, &out, &refs, None, 0)?;
        let last = report_from_outputs(&config, &out, &refs, Some(&last_two), 1)?;
        write_json(&a.dir.join("report.json"), &serde_json::json!({ "all": all, "last_two": last }))?;
        write_csv(&a.dir.join("report_curve.csv"), &curve_rows(&[("all", &all), ("last_two", &last)]))?;
        print_report(config.trial.label(), &all, &last);
        let grid: Vec<String> = all.curve.iter().map(|p| p.n.to_string()).collect();
        println!("  curve N: {}", grid.join(" "));
    } else {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.dir.join("awae.json"))?)?;
        let all: AwaeReport = serde_json::from_value(v["all"].clone())?;
        let last: AwaeReport = serde_json::from_value(v["last_two"].clone())?;
        print_report(config.trial.label(), &all, &last);
    }
    let diag = a.dir.join("diagnostics.json");
    if diag.exists() {
        println!("diagnostics: {}", fs::read_to_string(diag)?.trim());
    }
    Ok(())
}

#[derive(Serialize)]
struct TimeRow {
    trial: String,
    observable: String,
    step: usize,
    time: f64,
    perfect: f64,
    estimate: f64,
    std: f64,
}

#[derive(Serialize)]
struct AwaeRow {
    trial: String,
    subset: &'static str,
    zeta: f64,
}

#[derive(Serialize)]
struct FitRow {
    subset: &'static str,
    a: f64,
    b: f64,
    b_std: f64,
    zeta_infinite: f64,
    zeta_finite: f64,
}

fn figures_cmd(a: &Figures) -> Result<()> {
    let (mut config, base) = a.config.load()?;
    if let Some(n) = a.n_nt {
        config.n_nt = n;
    }
    config.validate()?;
    fs::create_dir_all(&a.out_dir)?;
    let device = device_model(&config, base.as_deref())?;
    let learned = learn(&config, &device)?;
    let plan = plan_targets(&config, &learned)?;

    let mut time_rows = Vec::new();
    let mut awae_rows = Vec::new();
    let mut t2 = None;
    let mut t3 = None;
    for trial in [Trial::T1, Trial::T2, Trial::T3, Trial::T4] {
        let c = ExperimentConfig { trial, ..config.clone() };
        let out = run_trial(&Inputs {
            config: &c,
            device: &device,
            learned: &learned,
            plan: &plan,
        })?;
        print_report(trial.label(), &out.awae_all, &out.awae_last_two);
        time_rows.extend(out.rows.iter().map(|r| TimeRow {
            trial: r.trial.clone(),
            observable: r.observable.clone(),
            step: r.step,
            time: r.time,
            perfect: r.perfect,
            estimate: r.estimate,
            std: r.std,
        }));
        for (subset, rep) in [("all", &out.awae_all), ("last_two", &out.awae_last_two)] {
            awae_rows.push(AwaeRow {
                trial: trial.label().into(),
                subset,
                zeta: rep.zeta,
            });
        }
        match trial {
            Trial::T2 => t2 = Some(out),
            Trial::T3 => t3 = Some(out),
            _ => {}
        }
    }
    let (t2, t3) = (t2.expect("ran"), t3.expect("ran"));
    write_csv(&a.out_dir.join("fig3_time_evolution.csv"), &time_rows)?;
    write_csv(&a.out_dir.join("fig4_awae.csv"), &awae_rows)?;
    write_csv(
        &a.out_dir.join("fig6_curve.csv"),
        &curve_rows(&[("all", &t3.awae_all), ("last_two", &t3.awae_last_two)]),
    )?;
    let fits: Vec<FitRow> = [
        ("all", &t3.awae_all, &t2.awae_all),
        ("last_two", &t3.awae_last_two, &t2.awae_last_two),
    ]
    .into_iter()
    .filter_map(|(subset, fin, inf)| {
        fin.fit.as_ref().map(|f| FitRow {
            subset,
            a: f.a,
            b: f.b,
            b_std: f.b_std(),
            zeta_infinite: inf.zeta,
            zeta_finite: fin.zeta,
        })
    })
    .collect();
    write_csv(&a.out_dir.join("fig6_fit.csv"), &fits)?;
    write_json(&a.out_dir.join("plan.json"), &plan)?;
    println!("wrote {}", a.out_dir.display());
    Ok(())
}
