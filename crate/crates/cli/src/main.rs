use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use glrm::analysis::{certify_global, qrpca_solve};
use glrm::data::{read_csv, read_csv_with_schema, write_csv};
use glrm::fit::{FitConfig, fit};
use glrm::init::{InitMethod, initialize};
use glrm::losses::default_loss;
use glrm::model::{embedding_offsets, impute_cells};
use glrm::persist::{load_model, save_model};
use glrm::select::{CvOptions, Holdout, cross_validate, reg_path, write_path_tsv};
use glrm::synth::{Preset, generate};
use glrm::{DataTable, Factors, GlrmProblem, LossSpec, ModelSpec, RegSpec, Value};

const NA: &str = "NA";

/// Fit generalized low rank models to CSV tables.
#[derive(Parser)]
#[command(name = "glrm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write it with its convergence history.
    Fit {
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Model file; defaults to the data path with a `.glrm` extension.
        #[arg(long)]
        out: Option<PathBuf>,
        /// History file; defaults to the model path with `.history.tsv` appended.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Fill every cell of a table from a fitted (or freshly fitted) model.
    Impute {
        data: PathBuf,
        /// Previously saved model; without it a model is fitted first.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        spec: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
        /// Copy observed cells through instead of their denoised values.
        #[arg(long)]
        keep_observed: bool,
    },
    /// Cross-validate over ranks and penalties.
    Cv {
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        ranks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        holdout_fraction: f64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a warm-started regularization path.
    Path {
        data: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_delimiter = ',', default_value = "10,5,2,1,0.5,0.2,0.1,0.05")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        holdout_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check global optimality of a model with quadratic penalties.
    Certify {
        data: PathBuf,
        /// Saved model; without it the data is solved as quadratically
        /// regularized PCA in closed form.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Rank of the closed-form solve (default: full rank).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
    },
    /// Generate a synthetic table.
    Synth {
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Observed table; a fully observed copy goes to `<stem>_truth.csv`
        /// when cells are hidden.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// `COL=NAME`, where COL is a 1-based index, a column name, or `*`.
    #[arg(long, value_name = "COL=NAME")]
    loss_override: Vec<String>,
    #[arg(long, value_name = "NAME", default_value = "quadreg")]
    reg: String,
    /// Column regularizer; defaults to `--reg`.
    #[arg(long, value_name = "NAME")]
    col_reg: Option<String>,
    #[arg(long)]
    no_offset: bool,
    #[arg(long)]
    no_scaling: bool,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = InitMethod::Svd)]
    init: InitMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

impl SolverArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            max_iters: self.max_iters,
            rel_tol: self.tol,
            seed: self.seed,
            threads: self.threads,
            ..FitConfig::default()
        }
    }
}

fn override_targets(table: &DataTable, col: &str) -> Result<Vec<usize>> {
    if col == "*" {
        return Ok((0..table.n()).collect());
    }
    if let Some(j) = table.columns().iter().position(|c| c.name == col) {
        return Ok(vec![j]);
    }
    match col.parse::<usize>() {
        Ok(j) if (1..=table.n()).contains(&j) => Ok(vec![j - 1]),
        _ => bail!("no column `{col}` (use a name, a 1-based index up to {}, or *)", table.n()),
    }
}

fn build_spec(table: &DataTable, args: &ModelArgs) -> Result<ModelSpec> {
    let mut losses: Vec<LossSpec> = table.columns().iter().map(|c| default_loss(&c.kind)).collect();
    for o in &args.loss_override {
        let (col, name) = o
            .split_once('=')
            .with_context(|| format!("--loss-override `{o}` is not COL=NAME"))?;
        for j in override_targets(table, col)? {
            let kind = table.kind(j);
            let loss = LossSpec::parse(name, Some(kind)).with_context(|| format!("column {}", j + 1))?;
            if !loss.accepts(kind) {
                bail!("loss {loss} does not accept {kind} column {}", j + 1);
            }
            losses[j] = loss;
        }
    }
    let row = RegSpec::parse(&args.reg, args.gamma)?;
    let col = RegSpec::parse(args.col_reg.as_deref().unwrap_or(&args.reg), args.gamma)?;
    Ok(ModelSpec::new(losses, args.rank)
        .with_regs(row, col)
        .with_offset(!args.no_offset)
        .with_scaling(!args.no_scaling))
}

fn fit_table(table: DataTable, model: &ModelArgs, solver: &SolverArgs) -> Result<(GlrmProblem, Factors, glrm::fit::FitReport)> {
    let spec = build_spec(&table, model)?;
    let problem = GlrmProblem::new(table, spec)?;
    let init = initialize(&problem, solver.init, solver.seed)?;
    let (f, report) = fit(&problem, init, &solver.config())?;
    log::info!(
        "{} iterations, objective {} ({:?})",
        report.iterations(),
        report.final_objective(),
        report.termination
    );
    Ok((problem, f, report))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_fit(data: &Path, model: &ModelArgs, solver: &SolverArgs, out: Option<PathBuf>, history: Option<PathBuf>) -> Result<()> {
    let table = read_csv(data, NA, None)?;
    let (problem, f, report) = fit_table(table, model, solver)?;
    let out = out.unwrap_or_else(|| data.with_extension("glrm"));
    let history = history.unwrap_or_else(|| with_suffix(&out, ".history.tsv"));
    save_model(&problem, &f, &out)?;
    let mut w = create(&history)?;
    report.write_objective_tsv(&mut w)?;
    w.flush()?;
    println!("{}\t{}", out.display(), report.final_objective());
    Ok(())
}

fn cmd_impute(data: &Path, model: Option<&Path>, spec: &ModelArgs, solver: &SolverArgs, out: &Path, keep: bool) -> Result<()> {
    let (table, mut imputed) = match model {
        Some(path) => {
            let saved = load_model(path)?;
            let table = read_csv_with_schema(data, NA, &saved.columns)?;
            if table.m() != saved.factors.x.nrows() {
                bail!("model has {} rows, {} has {}", saved.factors.x.nrows(), data.display(), table.m());
            }
            let embed = embedding_offsets(&saved.spec.losses);
            let imputed = impute_cells(&saved.columns, &saved.spec.losses, &embed, &saved.factors);
            (table, imputed)
        }
        None => {
            let table = read_csv(data, NA, None)?;
            let (problem, f, _) = fit_table(table.clone(), spec, solver)?;
            (table, problem.impute_table(&f))
        }
    };
    if keep {
        for (i, j) in table.observed() {
            imputed.set(i, j, table.get(i, j).cloned())?;
        }
    }
    write_csv(&imputed, out, NA)?;
    Ok(())
}

fn cmd_cv(
    data: &Path,
    model: &ModelArgs,
    solver: &SolverArgs,
    ranks: Vec<usize>,
    gammas: Vec<f64>,
    fraction: f64,
    folds: usize,
    out: &Path,
) -> Result<()> {
    let table = read_csv(data, NA, None)?;
    let spec = build_spec(&table, model)?;
    let problem = GlrmProblem::new(table, spec)?;
    let opts = CvOptions {
        ranks,
        gammas,
        fraction,
        folds,
        seed: solver.seed,
        init: solver.init,
        config: solver.config(),
    };
    let result = cross_validate(&problem, &opts)?;
    let mut w = create(out)?;
    result.write_tsv(&mut w)?;
    w.flush()?;
    println!("gamma\targmin_k");
    for (g, k) in result.best_rank_per_gamma() {
        println!("{g}\t{k}");
    }
    let best = result.best();
    println!("best\tk={}\tgamma={}\ttest_error={}", best.k, best.gamma, best.mean_test);
    Ok(())
}

fn cmd_path(data: &Path, model: &ModelArgs, solver: &SolverArgs, mut gammas: Vec<f64>, fraction: f64, out: &Path) -> Result<()> {
    gammas.sort_by(|a, b| b.total_cmp(a));
    gammas.dedup();
    let truth = read_csv(data, NA, None)?;
    let (train, heldout) = glrm::data::split_holdout(&truth, fraction, solver.seed)?;
    let spec = build_spec(&train, model)?;
    let problem = GlrmProblem::new(train, spec)?;
    let init = initialize(&problem, solver.init, solver.seed)?;
    let holdout = Holdout {
        truth: &truth,
        entries: &heldout,
    };
    let points = reg_path(&problem, &gammas, init, &solver.config(), Some(holdout))?;
    let mut w = create(out)?;
    write_path_tsv(&points, &mut w)?;
    w.flush()?;
    if let Some(best) = points
        .iter()
        .filter(|p| p.test_error.is_some())
        .min_by(|a, b| a.test_error.unwrap().total_cmp(&b.test_error.unwrap()))
    {
        println!("best\tgamma={}\ttest_error={}", best.gamma, best.test_error.unwrap());
    }
    Ok(())
}

fn real_matrix(table: &DataTable) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(table.m(), table.n());
    for i in 0..table.m() {
        for j in 0..table.n() {
            match table.get(i, j) {
                Some(Value::Real(v)) => a[(i, j)] = *v,
                Some(_) => bail!("column {} is not real valued; pass --model", j + 1),
                None => bail!("cell ({}, {}) is missing; pass --model", i + 1, j + 1),
            }
        }
    }
    Ok(a)
}

fn cmd_certify(data: &Path, model: Option<&Path>, rank: Option<usize>, gamma: f64) -> Result<()> {
    let (problem, f) = match model {
        Some(path) => {
            let saved = load_model(path)?;
            let table = read_csv_with_schema(data, NA, &saved.columns)?;
            (GlrmProblem::new(table, saved.spec)?, saved.factors)
        }
        None => {
            let table = read_csv(data, NA, Some(&vec![Some(glrm::FeatureKind::Real); csv_width(data)?]))?;
            let a = real_matrix(&table)?;
            let k = rank.unwrap_or(a.nrows().min(a.ncols()));
            let f = qrpca_solve(&a, k, gamma)?;
            (GlrmProblem::new(table, ModelSpec::quadratic_pca(a.ncols(), k, gamma))?, f)
        }
    };
    let cert = certify_global(&problem, &f)?;
    println!("spectral_norm\t{}", cert.spectral_norm);
    println!("tangent_residual\t{}", cert.tangent_residual);
    println!("{}", if cert.certified { "certified" } else { "not certified" });
    Ok(())
}

fn csv_width(path: &Path) -> Result<usize> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(reader.headers()?.len())
}

fn cmd_synth(preset: Preset, seed: u64, out: &Path) -> Result<()> {
    let s = generate(preset, seed);
    write_csv(&s.observed, out, NA)?;
    if s.observed != s.truth {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("synth");
        let truth = out.with_file_name(format!("{stem}_truth.csv"));
        write_csv(&s.truth, &truth, NA)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            data,
            model,
            solver,
            out,
            history,
        } => cmd_fit(&data, &model, &solver, out, history),
        Command::Impute {
            data,
            model,
            spec,
            solver,
            out,
            keep_observed,
        } => cmd_impute(&data, model.as_deref(), &spec, &solver, &out, keep_observed),
        Command::Cv {
            data,
            model,
            solver,
            ranks,
            gammas,
            holdout_fraction,
            folds,
            out,
        } => cmd_cv(&data, &model, &solver, ranks, gammas, holdout_fraction, folds, &out),
        Command::Path {
            data,
            model,
            solver,
            gammas,
            holdout_fraction,
            out,
        } => cmd_path(&data, &model, &solver, gammas, holdout_fraction, &out),
        Command::Certify {
            data,
            model,
            rank,
            gamma,
        } => cmd_certify(&data, model.as_deref(), rank, gamma),
        Command::Synth { preset, seed, out } => cmd_synth(preset, seed, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
