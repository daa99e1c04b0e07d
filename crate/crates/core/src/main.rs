use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sphdiff::backward::{sample_backward_batch, sample_backward_path};
use sphdiff::config::{ModelArch, RunConfig};
use sphdiff::data::{sample_data, DataModel, Denoiser, ExactDenoiser};
use sphdiff::diag::{
    commutation_check, kl_contraction_check, mehler_check, score_identity_check, spectrum_report,
    trace_report, verify_kl_bound, BoundReport, ScalarTestFn, ScoreSource, TraceReport,
};
use sphdiff::error::Error;
use sphdiff::forward::simulate_forward;
use sphdiff::harmonics::{synthesize, SphereGrid};
use sphdiff::io;
use sphdiff::learn::{train, AffineByTime, Checkpoint, LearnedDenoiser, TimeMlp};
use sphdiff::rng::{stream, StreamPurpose};
use sphdiff::spectrum::sample_prior;
use sphdiff::Result;

/// Exit codes: 0 success, 1 check failure, 2 config error, 3 i/o error.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::TrainingDiverged { .. } => 1,
        _ => 2,
    }
}

#[derive(Parser)]
#[command(
    name = "sphdiff",
    about = "Score-based diffusion for band-limited spherical random fields",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Also write synthesised grid CSVs next to coefficient files.
    #[arg(long)]
    grid: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Drive the sampler with the exact Bayes denoiser of the data model.
    #[arg(long, conflicts_with = "checkpoint")]
    exact_score: bool,
    /// Drive the sampler with a trained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dump full backward paths (debug).
    #[arg(long)]
    dump_paths: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also verify the convergence bound with this trained checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Coefficient CSV files, or directories scanned for *.csv.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw fields from the Whittle-Matern prior.
    SamplePrior(CommonArgs),
    /// Simulate forward noising trajectories of data samples.
    Forward(CommonArgs),
    /// Fit a denoiser to simulated forward pairs.
    Train(CommonArgs),
    /// Generate fields by the backward Euler-Maruyama sampler.
    Generate(GenerateArgs),
    /// Run the diagnostics suite and write a report.
    Verify(VerifyArgs),
    /// Estimate the angular power spectrum of coefficient files.
    Spectrum(SpectrumArgs),
}

struct Run {
    cfg: RunConfig,
    out_dir: PathBuf,
    seed: u64,
    samples: usize,
}

fn load_run(common: &CommonArgs) -> Result<Run> {
    let cfg = RunConfig::load(&common.config)?;
    let out_dir = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let seed = common.seed.unwrap_or(cfg.seed);
    let samples = common.samples.unwrap_or(cfg.generation.n_samples);
    Ok(Run {
        cfg,
        out_dir,
        seed,
        samples,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::SamplePrior(a) => cmd_sample_prior(a),
        Command::Forward(a) => cmd_forward(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Spectrum(a) => cmd_spectrum(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn write_sample(
    out_dir: &Path,
    prefix: &str,
    i: usize,
    field: &sphdiff::CoeffField,
    with_grid: bool,
) -> Result<()> {
    let path = out_dir.join(format!("{prefix}_{i:05}.csv"));
    io::write_coeff_csv(&path, field)?;
    if with_grid {
        let grid = SphereGrid::for_band_limit(field.band_limit());
        let gpath = out_dir.join(format!("{prefix}_{i:05}_grid.csv"));
        io::write_grid_csv(&gpath, &synthesize(field, &grid))?;
    }
    Ok(())
}

fn cmd_sample_prior(common: &CommonArgs) -> Result<u8> {
    let run = load_run(common)?;
    let spec = run.cfg.spectrum()?;
    for i in 0..run.samples {
        let mut rng = stream(run.seed, StreamPurpose::PriorSample, i as u64);
        let field = sample_prior(&spec, &mut rng);
        write_sample(&run.out_dir, "prior", i, &field, common.grid)?;
    }
    println!(
        "wrote {} prior sample(s) to {}",
        run.samples,
        run.out_dir.display()
    );
    Ok(0)
}

fn cmd_forward(common: &CommonArgs) -> Result<u8> {
    let run = load_run(common)?;
    let spec = run.cfg.spectrum()?;
    let data = run.cfg.data_model(&spec)?;
    let grid = run.cfg.time_grid();
    let mut trajectories = Vec::with_capacity(run.samples);
    for i in 0..run.samples {
        let mut data_rng = stream(run.seed, StreamPurpose::DataSample, i as u64);
        let x0 = sample_data(&data, &mut data_rng);
        let mut sim_rng = stream(run.seed, StreamPurpose::ForwardSim, i as u64);
        trajectories.push(simulate_forward(&x0, &spec, &grid, &mut sim_rng)?);
    }
    let path = run.out_dir.join("forward.csv");
    io::write_trajectory_csv(&path, &trajectories)?;
    println!(
        "wrote {} forward trajectorie(s) to {}",
        run.samples,
        path.display()
    );
    Ok(0)
}

fn cmd_train(common: &CommonArgs) -> Result<u8> {
    let run = load_run(common)?;
    let spec = run.cfg.spectrum()?;
    let data = run.cfg.data_model(&spec)?;
    let grid = run.cfg.time_grid();
    let mut model = match &run.cfg.train.model {
        ModelArch::PerTimeAffine => {
            LearnedDenoiser::PerTimeAffine(AffineByTime::new(&spec, &grid)?)
        }
        ModelArch::TimeMlp { hidden } => {
            let mut init_rng = stream(run.seed, StreamPurpose::TrainInit, 0);
            LearnedDenoiser::TimeMlp(TimeMlp::new(&spec, &grid, hidden, &mut init_rng)?)
        }
    };
    let mut rng = stream(run.seed, StreamPurpose::TrainLoop, 0);
    let report = train(
        &mut model,
        &data,
        &spec,
        &grid,
        &run.cfg.train.optimizer,
        &mut rng,
    )?;
    let ck_path = run.out_dir.join("checkpoint.json");
    io::write_json(&ck_path, &model.to_checkpoint())?;
    io::write_loss_history_csv(&run.out_dir.join("loss_history.csv"), &report.loss_history)?;
    println!(
        "trained {} epochs, loss {} -> {}, checkpoint at {}",
        report.loss_history.len() - 1,
        report.loss_history.first().expect("nonempty"),
        report.loss_history.last().expect("nonempty"),
        ck_path.display()
    );
    Ok(0)
}

fn load_checkpoint(path: &Path, band_limit: u32) -> Result<LearnedDenoiser> {
    let ck: Checkpoint = io::read_json(path)?;
    let model = LearnedDenoiser::from_checkpoint(&ck)?;
    if model.band_limit() != band_limit {
        return Err(Error::config(format!(
            "checkpoint band limit {} does not match config band limit {band_limit}",
            model.band_limit()
        )));
    }
    Ok(model)
}

fn cmd_generate(args: &GenerateArgs) -> Result<u8> {
    let run = load_run(&args.common)?;
    let spec = run.cfg.spectrum()?;
    let grid = run.cfg.time_grid();
    if args.exact_score {
        let data = run.cfg.data_model(&spec)?;
        let den = ExactDenoiser::new(data, spec.clone())?;
        generate_with(&run, &spec, &grid, &den, args)
    } else if let Some(ck) = &args.checkpoint {
        let model = load_checkpoint(ck, run.cfg.band_limit)?;
        generate_with(&run, &spec, &grid, &model, args)
    } else {
        Err(Error::config(
            "generate needs either --exact-score or --checkpoint PATH",
        ))
    }
}

fn generate_with<D: Denoiser + Sync>(
    run: &Run,
    spec: &sphdiff::Spectrum,
    grid: &sphdiff::forward::TimeGrid,
    den: &D,
    args: &GenerateArgs,
) -> Result<u8> {
    if args.dump_paths {
        let mut paths = Vec::with_capacity(run.samples);
        for i in 0..run.samples {
            let mut rng = stream(run.seed, StreamPurpose::BackwardSample, i as u64);
            paths.push(sample_backward_path(spec, grid, den, &mut rng)?);
        }
        for (i, path) in paths.iter().enumerate() {
            let field = path.last().expect("path has M+1 states");
            write_sample(&run.out_dir, "sample", i, field, args.common.grid)?;
        }
        io::write_path_csv(&run.out_dir.join("paths.csv"), grid, &paths)?;
    } else {
        let fields = sample_backward_batch(spec, grid, den, run.samples, |i| {
            stream(run.seed, StreamPurpose::BackwardSample, i)
        })?;
        for (i, field) in fields.iter().enumerate() {
            write_sample(&run.out_dir, "sample", i, field, args.common.grid)?;
        }
    }
    println!(
        "wrote {} generated sample(s) to {}",
        run.samples,
        run.out_dir.display()
    );
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum CheckStatus {
    Pass,
    Fail,
    Undefined,
}

#[derive(Serialize)]
struct CheckLine {
    name: String,
    status: CheckStatus,
    detail: String,
}

#[derive(Serialize)]
struct VerifyReport {
    checks: Vec<CheckLine>,
    bound_exact: Option<BoundReport>,
    bound_learned: Option<BoundReport>,
    trace: TraceReport,
}

fn push(checks: &mut Vec<CheckLine>, name: &str, status: CheckStatus, detail: String) {
    checks.push(CheckLine {
        name: name.to_string(),
        status,
        detail,
    });
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let run = load_run(&args.common)?;
    let spec = run.cfg.spectrum()?;
    let data = run.cfg.data_model(&spec)?;
    let grid = run.cfg.time_grid();
    let mut checks = Vec::new();
    let mut bound_exact = None;
    let mut bound_learned = None;

    let gaussian = match &data {
        DataModel::GaussianShift(m) => Some(m),
        _ => None,
    };

    // score identity against the analytic Gaussian marginal
    match gaussian {
        Some(model) => {
            let times = [0.1, 0.5, 1.0, 2.0, 4.0, grid.horizon()];
            let probes: Vec<f64> = (0..21).map(|i| -5.0 + 0.5 * i as f64).collect();
            let dev = score_identity_check(model, &spec, &times, &probes)?;
            let status = if dev <= 1e-10 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            };
            push(
                &mut checks,
                "score-identity",
                status,
                format!("max deviation {dev:.3e}"),
            );
        }
        None => push(
            &mut checks,
            "score-identity",
            CheckStatus::Undefined,
            "closed-form check needs Gaussian data".to_string(),
        ),
    }

    // KL contraction sweep and convergence bound
    match gaussian {
        Some(model) if data.kl_defined() => {
            let mut worst: Option<(f64, f64, f64)> = None;
            let mut all_pass = true;
            for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
                let c = kl_contraction_check(model, &spec, t)?;
                all_pass &= c.pass;
                let slack = c.rhs - c.lhs;
                if worst.map(|(s, _, _)| slack < s).unwrap_or(true) {
                    worst = Some((slack, c.t, c.lhs));
                }
            }
            let (slack, t, lhs) = worst.expect("nonempty sweep");
            push(
                &mut checks,
                "kl-contraction",
                if all_pass {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                },
                format!("tightest at t={t}: lhs {lhs:.6e}, slack {slack:.3e}"),
            );

            let report = verify_kl_bound(model, &spec, &grid, ScoreSource::Exact, run.seed)?;
            push(
                &mut checks,
                "kl-bound-exact-score",
                if report.pass {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Fail
                },
                format!(
                    "measured {:.6e} <= bound {:.6e} ({})",
                    report.measured_kl, report.bound, report.measured_method
                ),
            );
            bound_exact = Some(report);

            if let Some(ck) = &args.checkpoint {
                let learned = load_checkpoint(ck, run.cfg.band_limit)?;
                let report = verify_kl_bound(
                    model,
                    &spec,
                    &grid,
                    ScoreSource::Learned(&learned),
                    run.seed,
                )?;
                push(
                    &mut checks,
                    "kl-bound-learned-score",
                    if report.pass {
                        CheckStatus::Pass
                    } else {
                        CheckStatus::Fail
                    },
                    format!(
                        "eps^2 {:.3e} (se {:.1e}), measured {:.6e} <= bound {:.6e} ({})",
                        report.eps_sq,
                        report.eps_se,
                        report.measured_kl,
                        report.bound,
                        report.measured_method
                    ),
                );
                bound_learned = Some(report);
            }
        }
        _ => {
            let why = if gaussian.is_none() {
                "KL diagnostics need Gaussian data"
            } else {
                "KL to the prior is infinite (some degree variance is zero)"
            };
            push(
                &mut checks,
                "kl-contraction",
                CheckStatus::Undefined,
                why.to_string(),
            );
            push(
                &mut checks,
                "kl-bound-exact-score",
                CheckStatus::Undefined,
                why.to_string(),
            );
        }
    }

    // Mehler contraction of the forward semigroup on the monopole channel
    for order in 1..=3u32 {
        let mut rng = stream(run.seed, StreamPurpose::Verify, 100 + order as u64);
        let c = mehler_check(
            spec.c(0),
            0.8,
            order,
            0.9 * spec.c(0).sqrt(),
            200_000,
            &mut rng,
        )?;
        push(
            &mut checks,
            &format!("mehler-order-{order}"),
            if c.pass {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            format!(
                "mc {:.5} vs analytic {:.5} (se {:.1e})",
                c.mc_estimate, c.analytic, c.se
            ),
        );
    }

    // gradient/semigroup commutation on the monopole channel
    for (k, f) in [
        ScalarTestFn::Square,
        ScalarTestFn::Cube,
        ScalarTestFn::Cosine,
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = stream(run.seed, StreamPurpose::Verify, 200 + k as u64);
        let c = commutation_check(spec.c(0), 0.6, 0.9, 1e-3, f, 200_000, &mut rng)?;
        let name = match f {
            ScalarTestFn::Square => "commutation-square",
            ScalarTestFn::Cube => "commutation-cube",
            ScalarTestFn::Cosine => "commutation-cosine",
        };
        push(
            &mut checks,
            name,
            if c.pass {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            format!("mean diff {:.3e} (se {:.1e})", c.diff_mean, c.se),
        );
    }

    // prior sampling matches its own spectrum
    {
        let samples: Vec<_> = (0..2000)
            .map(|i| {
                let mut rng = stream(run.seed, StreamPurpose::Verify, 300 + i as u64);
                sample_prior(&spec, &mut rng)
            })
            .collect();
        let rows = spectrum_report(&samples, &spec)?;
        let all = rows.iter().all(|r| r.pass);
        let worst = rows
            .iter()
            .map(|r| (r.c_hat / r.c_true - 1.0).abs())
            .fold(0.0f64, f64::max);
        push(
            &mut checks,
            "prior-spectrum",
            if all {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            format!("worst relative deviation {worst:.3e}"),
        );
    }

    let trace = trace_report(&run.cfg.matern, 256)?;

    let report = VerifyReport {
        checks,
        bound_exact,
        bound_learned,
        trace,
    };
    io::write_json(&run.out_dir.join("verify_report.json"), &report)?;

    let mut failed = 0;
    for line in &report.checks {
        let tag = match line.status {
            CheckStatus::Pass => "PASS ",
            CheckStatus::Fail => {
                failed += 1;
                "FAIL "
            }
            CheckStatus::Undefined => "UNDEF",
        };
        println!("{tag} {:<24} {}", line.name, line.detail);
    }
    println!(
        "trace(L=256) = {:.6} vs closed-form reference {:.6} (ratio {:.4}; recorded, not asserted)",
        report.trace.trace, report.trace.reference, report.trace.ratio
    );
    if failed > 0 {
        println!("{failed} check(s) failed");
        Ok(1)
    } else {
        println!("all checks passed");
        Ok(0)
    }
}

fn cmd_spectrum(args: &SpectrumArgs) -> Result<u8> {
    let run = load_run(&args.common)?;
    let spec = run.cfg.spectrum()?;
    let mut files = Vec::new();
    for input in &args.input {
        if input.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| Error::io(input.display().to_string(), e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::config("spectrum: no coefficient CSV files found"));
    }
    let samples = files
        .iter()
        .map(|p| io::read_coeff_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let rows = spectrum_report(&samples, &spec)?;
    io::write_spectrum_report_csv(&run.out_dir.join("spectrum_report.csv"), &rows)?;
    for row in &rows {
        println!(
            "l={:<3} C={:.6e} C_hat={:.6e} ci=[{:.6e}, {:.6e}] {}",
            row.ell,
            row.c_true,
            row.c_hat,
            row.ci_lo,
            row.ci_hi,
            if row.pass { "ok" } else { "outside" }
        );
    }
    println!("report over {} sample file(s)", samples.len());
    Ok(0)
}
