use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bqvc::config::RunConfig;
use bqvc::envelope::{build_envelope, directional_quantiles, write_vertices_csv, ProbeEnvelope};
use bqvc::harness::{evaluate_checks, format_checks, format_report_text, run_replications, write_report_csv};
use bqvc::io::{write_json, EnvelopeExport, ReproduceExport};
use bqvc::ps::{fit_direction_field, write_stage_trace_csv, ProjectedProblem};
use bqvc::sim::{gen_dataset, replication_seed, CoeffSet, ErrorDist, SimConfig};
use bqvc::spline::BasisSpec;
use bqvc::{DirectionGrid, Error, Estimate, FitArtifact, FunctionalDataset, PqrSolver};

const OUT_DIR_ENV: &str = "BQVC_OUT_DIR";

#[derive(Parser)]
#[command(name = "bqvc", version, about = "Bivariate directional quantile envelopes for functional responses")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides BQVC_OUT_DIR and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives bit-reproducible output across machines.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one dataset from the simulation design.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit initial and updated coefficient fields at each quantile level.
    Fit {
        /// Dataset CSV (`subject_id,t,y1,y2,x1,...,xp`).
        data: Option<PathBuf>,
        /// Comma-separated quantile levels.
        #[arg(long, value_delimiter = ',')]
        tau: Option<Vec<f64>>,
        /// Fixed penalty weight instead of cross-validation.
        #[arg(long)]
        lambda: Option<f64>,
        /// Also write per-iteration ADMM residuals of the Stage I solves.
        #[arg(long)]
        admm_trace: bool,
    },
    /// Build envelopes from a saved fit.
    Envelope {
        /// Fit artifact written by `fit`.
        fit: PathBuf,
        /// Full covariate vector, intercept included (default: simulation probe).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        /// Location along the curve (default: simulation probe).
        #[arg(long, conflicts_with = "t_sweep")]
        t: Option<f64>,
        /// Evaluate at this many evenly spaced locations in [0, 1] instead.
        #[arg(long)]
        t_sweep: Option<usize>,
        /// Subset of the fitted quantile levels.
        #[arg(long, value_delimiter = ',')]
        tau: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = Which::Updated)]
        estimate: Which,
    },
    /// Rerun the simulation study and compare coverage against reference values.
    Reproduce {
        #[arg(long, value_enum, default_value_t = Variant::Study)]
        variant: Variant,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Initial,
    Updated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    /// Both coefficient sets under all three error laws.
    Study,
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) => 2,
        Error::Validation(_) | Error::InvalidInput(_) | Error::Domain(_) | Error::Csv(_) | Error::Json(_) => 3,
        Error::Numerical(_) | Error::UndefinedMetric(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> bqvc::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = cli.out.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)) {
        config.output.dir = dir;
    }
    match cli.command {
        Command::Simulate { seed } => {
            if let Some(s) = seed {
                config.sim.seed = s;
            }
            simulate(config)
        }
        Command::Fit { data, tau, lambda, admm_trace } => {
            if let Some(t) = tau {
                config.fit.tau_levels = t;
            }
            if lambda.is_some() {
                config.ps.lambda = lambda;
            }
            if data.is_some() {
                config.fit.data = data;
            }
            fit(config, admm_trace)
        }
        Command::Envelope { fit, x, t, t_sweep, tau, estimate } => {
            let which = match estimate {
                Which::Initial => Estimate::Initial,
                Which::Updated => Estimate::Updated,
            };
            envelope(config, &fit, x, t, t_sweep, tau, which)
        }
        Command::Reproduce { variant: Variant::Study, seed, replications } => {
            if let Some(s) = seed {
                config.sim.seed = s;
            }
            if let Some(r) = replications {
                config.sim.replications = r;
            }
            reproduce(config)
        }
    }
}

fn prepare_out(config: &RunConfig) -> bqvc::Result<PathBuf> {
    let dir = config.output.dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("effective_config.toml"), config.to_toml()?)?;
    Ok(dir)
}

fn simulate(config: RunConfig) -> bqvc::Result<()> {
    config.validate()?;
    let dir = prepare_out(&config)?;
    let data = gen_dataset(&config.sim, replication_seed(config.sim.seed, 0));
    let path = dir.join("dataset.csv");
    data.write_csv(fs::File::create(&path)?)?;
    println!("wrote {} ({} subjects x {} grid points)", path.display(), data.n_subjects(), data.n_grid());
    Ok(())
}

fn fit(mut config: RunConfig, admm_trace: bool) -> bqvc::Result<()> {
    let basis_spec = config.resolve_basis(BasisSpec::default());
    config.validate()?;
    let data_path =
        config.fit.data.clone().ok_or_else(|| Error::Config("no dataset: pass a CSV path or set fit.data".into()))?;
    let file = fs::File::open(&data_path)
        .map_err(|e| Error::Validation(format!("cannot open {}: {e}", data_path.display())))?;
    let data = FunctionalDataset::read_csv(file)?;
    let basis = basis_spec.build()?;
    let grid = DirectionGrid::new(config.fit.directions)?;
    let dir = prepare_out(&config)?;

    let mut fits = Vec::new();
    for &tau in &config.fit.tau_levels {
        let f = fit_direction_field(&data, &basis, &grid, tau, &config.ps, &config.admm)?;
        let frozen = f.updated.frozen.iter().filter(|&&b| b).count();
        println!(
            "tau = {tau}: lambda = {}, {} stages, {frozen}/{} directions frozen",
            f.lambda,
            f.trace.len(),
            grid.len()
        );
        write_stage_trace_csv(&f.trace, fs::File::create(dir.join(format!("stage_trace_tau{tau}.csv")))?)?;
        fits.push(f);
    }
    if admm_trace {
        write_admm_trace(&config, &data, &basis, &grid, &fits, &dir.join("admm_trace.csv"))?;
    }
    let artifact = FitArtifact::new(config, basis_spec, &grid, data.n_covariates(), &fits);
    let path = dir.join("fit.json");
    artifact.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_admm_trace(
    config: &RunConfig,
    data: &FunctionalDataset,
    basis: &bqvc::SplineBasis,
    grid: &DirectionGrid,
    fits: &[bqvc::MultistageFit],
    path: &Path,
) -> bqvc::Result<()> {
    let problem = ProjectedProblem::new(data, basis, grid)?;
    let opts = bqvc::AdmmOptions { trace: true, ..config.admm.clone() };
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "tau,direction,iteration,r_pri,r_dual,objective")?;
    for f in fits {
        let solver = PqrSolver::new(problem.design(), f.lambda, problem.omega(), &opts)?;
        for r in 0..grid.len() {
            let res = solver.solve(problem.projection(r), f.initial.tau)?;
            for row in &res.trace {
                writeln!(
                    w,
                    "{},{r},{},{},{},{}",
                    f.initial.tau, row.iteration, row.primal_residual, row.dual_residual, row.objective
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn envelope(
    mut config: RunConfig,
    fit_path: &Path,
    x: Option<Vec<f64>>,
    t: Option<f64>,
    t_sweep: Option<usize>,
    tau: Option<Vec<f64>>,
    which: Estimate,
) -> bqvc::Result<()> {
    let artifact = FitArtifact::load(fit_path)?;
    let basis = artifact.spline_basis()?;
    let x = x.unwrap_or_else(|| config.sim.probe_x().to_vec());
    if x.len() != artifact.covariates {
        return Err(Error::InvalidInput(format!(
            "probe has {} covariates but the fit uses {} (intercept included)",
            x.len(),
            artifact.covariates
        )));
    }
    let ts: Vec<f64> = match t_sweep {
        Some(0) | Some(1) => return Err(Error::InvalidInput("--t-sweep needs at least 2 points".into())),
        Some(k) => (0..k).map(|i| i as f64 / (k - 1) as f64).collect(),
        None => vec![t.unwrap_or(config.sim.probe_t())],
    };
    let taus = tau.unwrap_or_else(|| artifact.taus());
    let grid = artifact.grid()?;

    let mut envelopes = Vec::new();
    for &tau in &taus {
        let field = artifact.field(tau, which)?;
        for &t in &ts {
            let q = directional_quantiles(&field, &basis, &x, t)?;
            let env = build_envelope(&grid, &q)?;
            if env.empty {
                println!("warning: envelope at tau = {tau}, t = {t} is empty");
            }
            envelopes.push(ProbeEnvelope::new(tau, t, &x, env));
        }
    }
    // Record what the envelopes came from, not the caller's fit settings.
    let out_dir = config.output.dir.clone();
    config = artifact.config.clone();
    config.output.dir = out_dir;
    let dir = prepare_out(&config)?;
    write_vertices_csv(&envelopes, fs::File::create(dir.join("envelope_vertices.csv"))?)?;
    let n = envelopes.len();
    let empty = envelopes.iter().filter(|e| e.empty).count();
    write_json(
        &EnvelopeExport { format_version: bqvc::config::FORMAT_VERSION, config, estimate: which, envelopes },
        &dir.join("envelopes.json"),
    )?;
    println!("wrote {n} envelopes ({empty} empty) to {}", dir.display());
    Ok(())
}

fn reproduce(mut config: RunConfig) -> bqvc::Result<()> {
    let basis_spec = config.resolve_basis(BasisSpec::reproduction());
    config.validate()?;
    let basis = basis_spec.build()?;
    let dir = prepare_out(&config)?;
    let mut reports = Vec::new();
    for coeff_set in [CoeffSet::Smooth, CoeffSet::Rough] {
        for error in [ErrorDist::I, ErrorDist::II, ErrorDist::III] {
            let sim = SimConfig { coeff_set, error, ..config.sim.clone() };
            eprintln!("running {}/{} ({} replications)", coeff_set.label(), error.label(), sim.replications);
            reports.push(run_replications(&sim, &basis, &config.ps, &config.admm)?);
        }
    }
    let checks = evaluate_checks(&reports, &config.reproduce.tolerances);
    let text = format_report_text(&reports);
    let check_text = format_checks(&checks);
    print!("{text}{check_text}");
    fs::write(dir.join("report.txt"), format!("{text}{check_text}"))?;
    write_report_csv(&reports, fs::File::create(dir.join("report.csv"))?)?;
    write_json(
        &ReproduceExport { format_version: bqvc::config::FORMAT_VERSION, config, reports, checks },
        &dir.join("report.json"),
    )?;
    Ok(())
}
