//! `belh`: command-line driver for the identity suite, tensor runs, the
//! uniaxial reduction, tail monitoring and the hyperviscosity sweep.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use belh_core::checkpoint::write_checkpoint;
use belh_core::config::{parse, RunFile, UniaxialFile};
use belh_core::dynamics::{initial_state, run, run_with, InitialData, RunObserver, Solver, SolverConfig, StepReport};
use belh_core::output::{CsvWriter, RunManifest};
use belh_core::uniaxial::{cross_validate, run_scalar, run_sweep, BlowupReport, CompareConfig, ScalarRun};
use belh_core::verify::{run_identity_suite, VerifyOptions};
use belh_core::{DiagnosticsRecord, DiagnosticsSeries, Error, FieldSet};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "belh", version, about = "Q-tensor / Navier-Stokes experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "belh-out")]
    out: PathBuf,
    /// Overrides the seed of random initial data (and of `verify`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "BELH_THREADS")]
    threads: Option<usize>,
    /// Write a checkpoint every N steps (run and tail).
    #[arg(long, global = true)]
    checkpoint_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Randomized identity suite.
    Verify {
        /// Flip the sign of tau in the cancellation check.
        #[arg(long, hide = true)]
        inject_tau_sign_error: bool,
    },
    /// Tensor run with diagnostics.
    Run,
    /// Scalar Dirichlet runs of the uniaxial reduction.
    Uniaxial,
    /// Tensor run from embedded scalar data against the scalar solver.
    CompareUniaxial,
    /// Tensor run with localized tail energies.
    Tail,
    /// Hyperviscosity sweep.
    EpsSweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify { .. } => "verify",
            Command::Run => "run",
            Command::Uniaxial => "uniaxial",
            Command::CompareUniaxial => "compare-uniaxial",
            Command::Tail => "tail",
            Command::EpsSweep => "eps-sweep",
        }
    }
}

enum Failure {
    Config(String),
    Numerical(String),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Verification(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

struct Context<'a> {
    cli: &'a Cli,
    out: &'a Path,
    /// Seed actually used, recorded in the manifest.
    seed: std::cell::Cell<Option<u64>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("belh: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("belh: {f}");
            ExitCode::from(f.code())
        }
    }
}

fn read_config(cli: &Cli, required: bool) -> Result<(String, Option<PathBuf>), Failure> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: cannot read: {e}", path.display())))?;
            Ok((text, Some(path.clone())))
        }
        None if required => Err(Failure::Config("--config is required for this subcommand".into())),
        None => Ok((String::new(), None)),
    }
}

fn origin(path: &Option<PathBuf>) -> String {
    path.as_ref().map_or_else(|| "<none>".into(), |p| p.display().to_string())
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let required = !matches!(cli.command, Command::Verify { .. });
    let (text, path) = read_config(cli, required)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Config(format!("{}: cannot create output directory: {e}", cli.out.display())))?;
    let mut manifest = RunManifest::start(cli.command.name(), text.clone(), path.clone(), cli.seed, &cli.out, rayon::current_num_threads());
    manifest.write()?;
    let ctx = Context { cli, out: &cli.out, seed: std::cell::Cell::new(cli.seed) };
    let src = origin(&path);
    let result = match &cli.command {
        Command::Verify { inject_tau_sign_error } => cmd_verify(&ctx, &text, &src, *inject_tau_sign_error),
        Command::Run => cmd_run(&ctx, &text, &src, false),
        Command::Tail => cmd_run(&ctx, &text, &src, true),
        Command::Uniaxial => cmd_uniaxial(&ctx, &text, &src),
        Command::CompareUniaxial => cmd_compare(&ctx, &text, &src),
        Command::EpsSweep => cmd_eps_sweep(&ctx, &text, &src),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(f) => f.to_string(),
    };
    manifest.seed = ctx.seed.get();
    manifest.finish(&status)?;
    result
}

fn cmd_verify(ctx: &Context, text: &str, src: &str, flip_tau: bool) -> Result<(), Failure> {
    let mut opts: VerifyOptions = if text.trim().is_empty() { VerifyOptions::default() } else { parse(text, src)? };
    if let Some(seed) = ctx.cli.seed {
        opts.seed = seed;
    }
    opts.flip_tau = flip_tau;
    ctx.seed.set(Some(opts.seed));
    let report = run_identity_suite(&opts)?;
    let mut csv = CsvWriter::create(&ctx.out.join("verify.csv"), &["name", "samples", "max_residual", "tolerance", "passed"])?;
    for c in &report.checks {
        println!(
            "{} {:<40} samples {:>8}  max residual {:.3e}  tolerance {:.1e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.samples,
            c.max_residual,
            c.tolerance
        );
        csv.row(&format!(
            "{},{},{:.17e},{:.17e},{}",
            c.name.replace(',', ";"),
            c.samples,
            c.max_residual,
            c.tolerance,
            c.passed as u8
        ))?;
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!("all {} identities pass", report.checks.len());
        return Ok(());
    }
    let listing = serde_json::json!({ "failures": failures }).to_string();
    std::fs::write(ctx.out.join("failures.json"), &listing)?;
    eprintln!("{listing}");
    Err(Failure::Verification(format!("{} of {} identities", failures.len(), report.checks.len())))
}

fn solver_config(ctx: &Context, file: &RunFile) -> Result<SolverConfig, Failure> {
    let mut cfg = file.solver_config()?;
    if let (Some(seed), InitialData::Random { .. }) = (ctx.cli.seed, &cfg.init) {
        cfg = cfg.with_seed(seed);
    }
    if let InitialData::Random { seed, .. } = &cfg.init {
        ctx.seed.set(Some(*seed));
    }
    Ok(cfg)
}

/// Streams diagnostics, step reports, tail energies and checkpoints.
struct Writer<'a> {
    out: &'a Path,
    diagnostics: Option<CsvWriter>,
    steps: CsvWriter,
    tail: Option<CsvWriter>,
    checkpoint_every: usize,
    params: belh_core::BulkParams,
}

impl RunObserver for Writer<'_> {
    fn on_record(&mut self, record: &DiagnosticsRecord) -> belh_core::Result<()> {
        if self.diagnostics.is_none() {
            let header = record.csv_header();
            let cols: Vec<&str> = header.split(',').collect();
            self.diagnostics = Some(CsvWriter::create(&self.out.join("diagnostics.csv"), &cols)?);
        }
        self.diagnostics.as_mut().expect("created above").row(&record.csv_row())?;
        if let Some(tail) = &mut self.tail {
            let mut vals = vec![record.time];
            vals.extend(record.tails.iter().map(|t| t.tail_energy));
            vals.extend(record.tails.iter().map(|t| t.flux));
            tail.values(&vals)?;
        }
        Ok(())
    }

    fn on_step(&mut self, state: &FieldSet, r: &StepReport, step: usize) -> belh_core::Result<()> {
        self.steps.values(&[step as f64, r.time, r.cfl, r.max_q, r.max_u, r.divergence_drift, r.q_drift])?;
        if self.checkpoint_every > 0 && step % self.checkpoint_every == 0 {
            write_checkpoint(&self.out.join(format!("checkpoint_{step:08}.bin")), state, &self.params)?;
        }
        Ok(())
    }
}

fn cmd_run(ctx: &Context, text: &str, src: &str, tail: bool) -> Result<(), Failure> {
    let file: RunFile = parse(text, src)?;
    let cfg = solver_config(ctx, &file)?;
    let radii = cfg.diagnostics.tail_radii.clone();
    if tail && radii.is_empty() {
        return Err(Failure::Config(format!("{src}: tail needs diagnostics.tail_radii")));
    }
    let solver = Solver::new(&cfg)?;
    let state = initial_state(&cfg)?;
    let tail_csv = if tail {
        let mut cols = vec!["time".to_string()];
        cols.extend((0..radii.len()).map(|k| format!("tail_energy_{k}")));
        cols.extend((0..radii.len()).map(|k| format!("flux_{k}")));
        let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
        Some(CsvWriter::create(&ctx.out.join("tail.csv"), &cols)?)
    } else {
        None
    };
    let mut writer = Writer {
        out: ctx.out,
        diagnostics: None,
        steps: CsvWriter::create(
            &ctx.out.join("steps.csv"),
            &["step", "time", "cfl", "max_q", "max_u", "divergence_drift", "q_drift"],
        )?,
        tail: tail_csv,
        checkpoint_every: ctx.cli.checkpoint_every.unwrap_or(file.output.checkpoint_every),
        params: cfg.params,
    };
    let out = run_with(&solver, state, &mut writer)?;
    summarize_run(&out.series, out.reports.len());
    if tail {
        summarize_tail(&out.series, &radii);
    }
    Ok(())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn summarize_run(series: &DiagnosticsSeries, steps: usize) {
    let (Some(first), Some(last)) = (series.records.first(), series.records.last()) else { return };
    println!("steps {steps}, t = {}", last.time);
    println!("energy {:.10e} -> {:.10e}", first.total_energy(), last.total_energy());
    println!("max |physical energy residual| {:.3e}", max_abs(&series.physical_energy_residual()));
    println!("max |chain-rule residual|      {:.3e}", max_abs(&series.chain_rule_residual()));
    println!("sqrt(eps) ||lap u||_L2L2        {:.6e}", series.hyper_norm());
}

fn summarize_tail(series: &DiagnosticsSeries, radii: &[f64]) {
    for (k, r) in radii.iter().enumerate() {
        println!(
            "R = {r}: sup Y_R {:.6e}, |cumulative flux| {:.6e}, max |local residual| {:.3e}",
            series.sup_tail_energy(k),
            series.cumulative_flux(k),
            max_abs(&series.local_energy_residual(k))
        );
    }
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let monotone = series.records.iter().all(|rec| {
        order.windows(2).all(|w| rec.tails[w[1]].tail_energy <= rec.tails[w[0]].tail_energy)
    });
    println!("Y_R non-increasing in R at every record: {}", if monotone { "yes" } else { "no" });
}

fn write_scalar_samples(path: &Path, report: &BlowupReport) -> Result<(), Failure> {
    let mut csv = CsvWriter::create(path, &["time", "max_q", "moment", "comparison", "dt"])?;
    for s in &report.samples {
        csv.values(&[s.time, s.max_q, s.moment, s.comparison, s.dt])?;
    }
    Ok(())
}

fn describe(cfg: &ScalarRun, r: &BlowupReport) -> String {
    let p = cfg.params;
    let head = format!("a = {}, b = {}, c = {}:", p.a, p.b, p.c);
    if r.blowup {
        format!(
            "{head} BLOW-UP at t = {:.6} (max|q| {:.3e}, {} halvings, growth exponent {}, comparison blow-up time {})",
            r.blowup_time.unwrap_or(f64::NAN),
            r.max_q(),
            r.halvings,
            r.growth_exponent.map_or("n/a".into(), |b| format!("{b:.4}")),
            r.comparison_blowup_time.map_or("n/a".into(), |t| format!("{t:.6}"))
        )
    } else if r.ceiling_without_halvings {
        format!("{head} reached the ceiling at t = {:.6} without step halving; not flagged", r.final_time)
    } else {
        format!("{head} bounded up to t = {} (max|q| {:.6})", r.final_time, r.max_q())
    }
}

fn summary_row(cfg: &ScalarRun, r: &BlowupReport) -> Vec<f64> {
    let opt = |v: Option<f64>| v.unwrap_or(f64::NAN);
    vec![
        cfg.params.a,
        cfg.params.b,
        cfg.params.c,
        r.blowup as u8 as f64,
        opt(r.blowup_time),
        r.threshold,
        opt(r.threshold_time),
        opt(r.comparison_blowup_time),
        opt(r.growth_exponent),
        r.halvings as f64,
        r.final_time,
        r.max_q(),
        r.moment_dominates() as u8 as f64,
    ]
}

fn cmd_uniaxial(ctx: &Context, text: &str, src: &str) -> Result<(), Failure> {
    let file: UniaxialFile = parse(text, src)?;
    let mut summary = CsvWriter::create(
        &ctx.out.join("uniaxial_summary.csv"),
        &[
            "a",
            "b",
            "c",
            "blowup",
            "blowup_time",
            "threshold",
            "threshold_time",
            "comparison_blowup_time",
            "growth_exponent",
            "halvings",
            "final_time",
            "max_q",
            "moment_dominates",
        ],
    )?;
    let base = run_scalar(&file.scalar)?;
    write_scalar_samples(&ctx.out.join("uniaxial.csv"), &base)?;
    summary.values(&summary_row(&file.scalar, &base))?;
    println!("{}", describe(&file.scalar, &base));
    let mut numerical = Vec::new();
    for (i, (t, res)) in file.sweep.iter().zip(run_sweep(&file.scalar, &file.sweep)).enumerate() {
        let mut cfg = file.scalar.clone();
        cfg.params.a = t.a;
        cfg.params.b = t.b;
        cfg.params.c = t.c;
        match res {
            Ok(r) => {
                write_scalar_samples(&ctx.out.join(format!("uniaxial_sweep_{i}.csv")), &r)?;
                summary.values(&summary_row(&cfg, &r))?;
                println!("{}", describe(&cfg, &r));
            }
            Err(e) if e.is_numerical() => {
                println!("a = {}, b = {}, c = {}: {e}", t.a, t.b, t.c);
                numerical.push(e.to_string());
            }
            Err(e) => return Err(e.into()),
        }
    }
    if numerical.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(numerical.join("; ")))
    }
}

fn cmd_compare(ctx: &Context, text: &str, src: &str) -> Result<(), Failure> {
    let cfg: CompareConfig = parse(text, src)?;
    let report = cross_validate(&cfg)?;
    let mut csv = CsvWriter::create(&ctx.out.join("compare.csv"), &["time", "max_diff", "deviation", "transverse", "max_q"])?;
    for s in &report.samples {
        csv.values(&[s.time, s.max_diff, s.deviation, s.transverse, s.max_q])?;
    }
    println!("max |q_tensor - q_scalar| {:.3e} (tolerance {:.1e})", report.max_diff, report.tolerance);
    println!("max uniaxial deviation     {:.3e} (tolerance {:.1e})", report.max_deviation, report.uniaxial_tolerance);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verification("tensor and scalar solutions disagree beyond tolerance".into()))
    }
}

fn cmd_eps_sweep(ctx: &Context, text: &str, src: &str) -> Result<(), Failure> {
    let file: RunFile = parse(text, src)?;
    let base = solver_config(ctx, &file)?;
    let sweep = file.sweep.as_ref().ok_or_else(|| Failure::Config(format!("{src}: eps-sweep needs a [sweep] table")))?;
    let configs = sweep.configs(&base)?;
    let results: Vec<_> = configs.par_iter().map(run).collect();
    let mut csv = CsvWriter::create(
        &ctx.out.join("eps_sweep.csv"),
        &["hyperviscosity", "dt", "hyper_norm", "max_energy_residual", "final_energy"],
    )?;
    let mut norms = Vec::new();
    for (i, (cfg, res)) in configs.iter().zip(results).enumerate() {
        let out = res?;
        let s = &out.series;
        let last = s.records.last().map_or(f64::NAN, |r| r.total_energy());
        let resid = max_abs(&s.physical_energy_residual());
        csv.values(&[cfg.params.hyperviscosity, cfg.time.dt, s.hyper_norm(), resid, last])?;
        let rows: Vec<String> = s.records.iter().map(|r| r.csv_row()).collect();
        if let Some(first) = s.records.first() {
            let header = first.csv_header();
            let mut per = CsvWriter::create(&ctx.out.join(format!("diagnostics_eps_{i}.csv")), &header.split(',').collect::<Vec<_>>())?;
            for row in &rows {
                per.row(row)?;
            }
        }
        println!(
            "eps = {:e}: sqrt(eps) ||lap u||_L2L2 = {:.6e} (dt {}, max |energy residual| {:.3e})",
            cfg.params.hyperviscosity,
            s.hyper_norm(),
            cfg.time.dt,
            resid
        );
        norms.push(s.hyper_norm());
    }
    let hi = norms.iter().cloned().fold(f64::MIN, f64::max);
    let lo = norms.iter().cloned().fold(f64::MAX, f64::min);
    if !norms.is_empty() {
        println!("spread max/min = {:.4}", hi / lo);
    }
    Ok(())
}
