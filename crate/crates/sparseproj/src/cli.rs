//! Command-line front end: projections, NMF runs, synthetic instances, and
//! projected training, with JSON reports and CSV matrix output.
//!
//! Machine-readable data goes only to `--output` / `--report` files; stdout
//! carries a one-screen human summary. Reports are byte-identical across
//! repeat runs with the same seed (`wall_ms` stays 0 unless `--timing` is
//! given).

use crate::data::{
    gen_synthetic_nmf, load_matrix, radial_weights, save_matrix, write_report, Report,
};
use crate::gsp::{project_group, project_group_relative, ProjectionConfig, ProjectionResult};
use crate::nmf::{run_nmf, NmfProblem, NmfResult, NmfVariant};
use crate::sparsity::{DenseVector, VectorGroup, WeightVector};
use crate::training::{
    train_with_projection, Dataset, Grouping, Loss, Network, OptimizerKind, ProjectionSchedule,
    TrainConfig,
};
use crate::wgsp::{project_group_weighted, WeightGroup};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::time::Instant;

/// Seed override honored by every seeded subcommand.
pub const SEED_ENV_VAR: &str = "SPARSEPROJ_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "sparseproj",
    version,
    about = "Grouped sparse projection, sparse NMF, and projected training",
    after_help = "The SPARSEPROJ_SEED environment variable overrides --seed when set."
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Project matrix rows or columns onto a target average sparsity
    Project(ProjectCmd),
    /// Weighted projection with a weight matrix or a radial weight map
    Wproject(WprojectCmd),
    /// Run an NMF variant on a matrix
    Nmf(NmfCmd),
    /// Generate a synthetic exactly-factorable NMF instance
    Synth(SynthCmd),
    /// Train a dense network with intermittent sparse projection
    Train(TrainCmd),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Rows,
    Cols,
}

fn parse_unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be in [0, 1], got {v}"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

/// `HxW:SIGMA`, e.g. `112x92:5`.
fn parse_radial(s: &str) -> Result<(usize, usize, f64), String> {
    let (dims, sigma) = s
        .split_once(':')
        .ok_or_else(|| format!("expected HxW:SIGMA, got {s:?}"))?;
    let (h, w) = dims
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW:SIGMA, got {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    let sigma: f64 = sigma.parse().map_err(|_| format!("bad sigma in {s:?}"))?;
    if h == 0 || w == 0 || sigma <= 0.0 {
        return Err(format!("dimensions and sigma must be positive in {s:?}"));
    }
    Ok((h, w, sigma))
}

fn parse_arch(s: &str) -> Result<Vec<usize>, String> {
    let dims: Result<Vec<usize>, _> = s.split(',').map(|t| t.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if d.len() >= 2 && d.iter().all(|&x| x > 0) => Ok(d),
        _ => Err(format!("expected >= 2 comma-separated positive widths, got {s:?}")),
    }
}

#[derive(Args, Debug)]
struct ProjectCmd {
    /// Input matrix CSV
    #[arg(long)]
    input: PathBuf,
    /// Target average sparsity in [0, 1]
    #[arg(long, value_parser = parse_unit_interval)]
    s: f64,
    /// Accuracy on the achieved average sparsity
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    eps: f64,
    /// Safeguard bracket shrink ratio in [1/2, 1)
    #[arg(long, default_value_t = 0.9)]
    rl: f64,
    /// Which matrix slices form the vector group
    #[arg(long, value_enum, default_value_t = Axis::Rows)]
    axis: Axis,
    /// Minimize relative instead of absolute error
    #[arg(long)]
    relative: bool,
    /// Projected matrix CSV destination
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON report destination
    #[arg(long)]
    report: Option<PathBuf>,
    /// Record real wall time in the report (breaks byte-reproducibility)
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct WprojectCmd {
    #[command(flatten)]
    base: ProjectCmd,
    /// Weight matrix CSV, same shape as the input
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Radial weight map HxW:SIGMA shared by every vector
    #[arg(long, value_parser = parse_radial)]
    radial: Option<(usize, usize, f64)>,
}

#[derive(Args, Debug)]
struct NmfCmd {
    /// Input matrix CSV (nonnegative)
    #[arg(long)]
    input: PathBuf,
    /// Factorization rank
    #[arg(long)]
    rank: usize,
    /// nenmf | ahals | psnmf | cpsnmf | l1ahals | wsnmf
    #[arg(long)]
    variant: String,
    /// Target average column sparsity (sparse variants)
    #[arg(long, value_parser = parse_unit_interval)]
    s: Option<f64>,
    /// Outer iterations
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Column weight matrix CSV (m x rank) for wsnmf
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Radial weight map HxW:SIGMA for wsnmf (h*w must equal m)
    #[arg(long, value_parser = parse_radial)]
    radial: Option<(usize, usize, f64)>,
    /// Basis factor CSV destination
    #[arg(long)]
    output_x: Option<PathBuf>,
    /// Coefficient factor CSV destination
    #[arg(long)]
    output_h: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct SynthCmd {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data matrix CSV destination
    #[arg(long)]
    output: PathBuf,
    /// True basis factor CSV destination
    #[arg(long)]
    output_x: Option<PathBuf>,
    /// True coefficient factor CSV destination
    #[arg(long)]
    output_h: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Samples CSV; last column holds class labels unless --autoencode
    #[arg(long)]
    data: PathBuf,
    /// Layer widths, e.g. 2,16,2
    #[arg(long, value_parser = parse_arch)]
    arch: Vec<usize>,
    /// Target sparsity for the projected layer
    #[arg(long, value_parser = parse_unit_interval)]
    s: f64,
    /// Optimizer steps between projections
    #[arg(long, default_value_t = 15)]
    period: usize,
    /// Layer whose weights are projected
    #[arg(long, default_value_t = 0)]
    layer: usize,
    /// Group the layer by rows (fan-in vectors) or columns
    #[arg(long, value_enum, default_value_t = Axis::Rows)]
    axis: Axis,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
    lr: f64,
    /// sgd | adam
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// Autoencode (MSE on the inputs) instead of classifying
    #[arg(long)]
    autoencode: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

/// Parse and run, returning the process exit code: 0 success, 2 usage or
/// configuration error, 1 runtime failure.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match CliArgs::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 2 };
        }
    };
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime<E: std::fmt::Display>(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn seed_override(seed: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV_VAR}={v:?} is not a u64"))),
        Err(_) => Ok(seed),
    }
}

fn run_command(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Project(c) => run_project(c, None),
        Command::Wproject(c) => {
            let w = Some((c.weights.clone(), c.radial));
            run_project(c.base, w)
        }
        Command::Nmf(c) => run_nmf_cmd(c),
        Command::Synth(c) => run_synth(c),
        Command::Train(c) => run_train(c),
    }
}

fn matrix_axis_group(m: &Array2<f64>, axis: Axis) -> Result<VectorGroup, CliError> {
    let rows: Vec<Vec<f64>> = match axis {
        Axis::Rows => (0..m.nrows()).map(|i| m.row(i).to_vec()).collect(),
        Axis::Cols => (0..m.ncols()).map(|j| m.column(j).to_vec()).collect(),
    };
    VectorGroup::from_rows(rows).map_err(CliError::runtime)
}

fn group_to_matrix(vectors: &[DenseVector], axis: Axis, nrows: usize, ncols: usize) -> Array2<f64> {
    match axis {
        Axis::Rows => Array2::from_shape_fn((nrows, ncols), |(i, j)| vectors[i][j]),
        Axis::Cols => Array2::from_shape_fn((nrows, ncols), |(i, j)| vectors[j][i]),
    }
}

type WeightSpec = Option<(Option<PathBuf>, Option<(usize, usize, f64)>)>;

fn run_project(cmd: ProjectCmd, weight_spec: WeightSpec) -> Result<(), CliError> {
    let started = Instant::now();
    let matrix = load_matrix(&cmd.input).map_err(CliError::runtime)?;
    let group = matrix_axis_group(&matrix, cmd.axis)?;
    let mut cfg = ProjectionConfig::new(cmd.s).with_eps(cmd.eps);
    cfg.r_l = cmd.rl;

    let (variant, result) = match &weight_spec {
        None => {
            let res = if cmd.relative {
                project_group_relative(&group, &cfg)
            } else {
                project_group(&group, &cfg)
            }
            .map_err(CliError::runtime)?;
            ("project", res)
        }
        Some((weights_path, radial)) => {
            let weights = build_weights(weights_path, radial, &matrix, cmd.axis, &group)?;
            if cmd.relative {
                return Err(CliError::Usage(
                    "--relative is not available for weighted projection".into(),
                ));
            }
            let res = project_group_weighted(&group, &weights, &cfg).map_err(CliError::runtime)?;
            ("wproject", res)
        }
    };

    if let Some(out) = &cmd.output {
        let projected = group_to_matrix(&result.projected, cmd.axis, matrix.nrows(), matrix.ncols());
        save_matrix(&projected, out).map_err(CliError::runtime)?;
    }
    if let Some(report_path) = &cmd.report {
        let mut rep = Report::new(variant, 0, cmd.s, cmd.eps);
        rep.achieved_sparsity = Some(result.achieved_sparsity);
        rep.mu_star = Some(result.mu_star);
        rep.iterations = Some(result.iterations);
        rep.discontinuous = Some(result.discontinuous);
        rep.sparsity_band = result.sparsity_band;
        if cmd.timing {
            rep.wall_ms = started.elapsed().as_millis() as u64;
        }
        write_report(&rep, report_path).map_err(CliError::runtime)?;
    }
    println!("{}", projection_summary(&result, cmd.s));
    Ok(())
}

fn build_weights(
    weights_path: &Option<PathBuf>,
    radial: &Option<(usize, usize, f64)>,
    matrix: &Array2<f64>,
    axis: Axis,
    group: &VectorGroup,
) -> Result<WeightGroup, CliError> {
    match (weights_path, radial) {
        (Some(path), None) => {
            let wm = load_matrix(path).map_err(CliError::runtime)?;
            if wm.dim() != matrix.dim() {
                return Err(CliError::Usage(format!(
                    "weight matrix is {}x{}, input is {}x{}",
                    wm.nrows(),
                    wm.ncols(),
                    matrix.nrows(),
                    matrix.ncols()
                )));
            }
            let rows: Vec<Vec<f64>> = match axis {
                Axis::Rows => (0..wm.nrows()).map(|i| wm.row(i).to_vec()).collect(),
                Axis::Cols => (0..wm.ncols()).map(|j| wm.column(j).to_vec()).collect(),
            };
            let ws = rows
                .into_iter()
                .map(WeightVector::new)
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::runtime)?;
            WeightGroup::new(ws).map_err(CliError::runtime)
        }
        (None, Some((h, w, sigma))) => {
            let wv = radial_weights(*h, *w, *sigma).map_err(CliError::runtime)?;
            if wv.len() != group.vectors()[0].len() {
                return Err(CliError::Usage(format!(
                    "radial map has {} pixels but vectors have length {}",
                    wv.len(),
                    group.vectors()[0].len()
                )));
            }
            WeightGroup::new(vec![wv; group.len()]).map_err(CliError::runtime)
        }
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give either --weights or --radial, not both".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "weighted projection needs --weights or --radial".into(),
        )),
    }
}

fn run_nmf_cmd(cmd: NmfCmd) -> Result<(), CliError> {
    let started = Instant::now();
    let variant = NmfVariant::parse(&cmd.variant)
        .ok_or_else(|| CliError::Usage(format!("unknown variant {:?}", cmd.variant)))?;
    let seed = seed_override(cmd.seed)?;
    let y = load_matrix(&cmd.input).map_err(CliError::runtime)?;
    let m = y.nrows();

    let weights = match variant {
        NmfVariant::Wsnmf => Some(build_column_weights(&cmd, m)?),
        _ => {
            if cmd.weights.is_some() || cmd.radial.is_some() {
                return Err(CliError::Usage(
                    "--weights/--radial only apply to the wsnmf variant".into(),
                ));
            }
            None
        }
    };
    if variant != NmfVariant::Nenmf && variant != NmfVariant::Ahals && cmd.s.is_none() {
        return Err(CliError::Usage(format!(
            "variant {} requires --s",
            variant.name()
        )));
    }

    let mut problem = NmfProblem::new(y, cmd.rank, variant);
    problem.sparsity = cmd.s;
    problem.weights = weights;
    problem.outer_iters = cmd.iters;
    problem.seed = seed;
    let result = run_nmf(&problem).map_err(|e| match e {
        crate::nmf::NmfError::Config(msg) => CliError::Usage(msg),
        other => CliError::runtime(other),
    })?;

    if let Some(path) = &cmd.output_x {
        save_matrix(&result.x, path).map_err(CliError::runtime)?;
    }
    if let Some(path) = &cmd.output_h {
        save_matrix(&result.h, path).map_err(CliError::runtime)?;
    }
    if let Some(path) = &cmd.report {
        let mut rep = Report::new(variant.name(), seed, cmd.s.unwrap_or(-1.0), 1e-4);
        rep.error_trace = result.error_trace.clone();
        rep.sparsity_trace = result.sparsity_trace.clone();
        rep.best_error = Some(result.best_error);
        if cmd.timing {
            rep.wall_ms = started.elapsed().as_millis() as u64;
        }
        write_report(&rep, path).map_err(CliError::runtime)?;
    }
    println!("{}", nmf_summary(variant, &result));
    Ok(())
}

fn build_column_weights(cmd: &NmfCmd, m: usize) -> Result<WeightGroup, CliError> {
    match (&cmd.weights, &cmd.radial) {
        (Some(path), None) => {
            let wm = load_matrix(path).map_err(CliError::runtime)?;
            if wm.nrows() != m || wm.ncols() != cmd.rank {
                return Err(CliError::Usage(format!(
                    "weight matrix must be {m}x{}, got {}x{}",
                    cmd.rank,
                    wm.nrows(),
                    wm.ncols()
                )));
            }
            let ws = (0..wm.ncols())
                .map(|k| WeightVector::new(wm.column(k).to_vec()))
                .collect::<Result<Vec<_>, _>>()
                .map_err(CliError::runtime)?;
            WeightGroup::new(ws).map_err(CliError::runtime)
        }
        (None, Some((h, w, sigma))) => {
            if h * w != m {
                return Err(CliError::Usage(format!(
                    "radial map {h}x{w} has {} pixels but Y has {m} rows",
                    h * w
                )));
            }
            let wv = radial_weights(*h, *w, *sigma).map_err(CliError::runtime)?;
            WeightGroup::new(vec![wv; cmd.rank]).map_err(CliError::runtime)
        }
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give either --weights or --radial, not both".into(),
        )),
        (None, None) => Err(CliError::Usage(
            "variant wsnmf requires --weights or --radial".into(),
        )),
    }
}

fn run_synth(cmd: SynthCmd) -> Result<(), CliError> {
    if cmd.m == 0 || cmd.n == 0 || cmd.rank == 0 {
        return Err(CliError::Usage("m, n, and rank must be positive".into()));
    }
    let seed = seed_override(cmd.seed)?;
    let inst = gen_synthetic_nmf(cmd.m, cmd.n, cmd.rank, seed);
    save_matrix(&inst.y, &cmd.output).map_err(CliError::runtime)?;
    if let Some(path) = &cmd.output_x {
        save_matrix(&inst.x_true, path).map_err(CliError::runtime)?;
    }
    if let Some(path) = &cmd.output_h {
        save_matrix(&inst.h_true, path).map_err(CliError::runtime)?;
    }
    if let Some(path) = &cmd.report {
        let mut rep = Report::new("synth", seed, inst.true_avg_col_sparsity, 0.0);
        rep.achieved_sparsity = Some(inst.true_avg_col_sparsity);
        write_report(&rep, path).map_err(CliError::runtime)?;
    }
    println!(
        "synthetic instance: {}x{} rank {} seed {} true column sparsity {:.4}",
        cmd.m, cmd.n, cmd.rank, seed, inst.true_avg_col_sparsity
    );
    Ok(())
}

fn run_train(cmd: TrainCmd) -> Result<(), CliError> {
    let started = Instant::now();
    let optimizer = match cmd.optimizer.to_ascii_lowercase().as_str() {
        "sgd" => OptimizerKind::Sgd,
        "adam" => OptimizerKind::Adam,
        other => return Err(CliError::Usage(format!("unknown optimizer {other:?}"))),
    };
    let seed = seed_override(cmd.seed)?;
    let matrix = load_matrix(&cmd.data).map_err(CliError::runtime)?;
    let dataset = Dataset::from_matrix(&matrix, !cmd.autoencode).map_err(CliError::runtime)?;
    if dataset.features.ncols() != cmd.arch[0] {
        return Err(CliError::Usage(format!(
            "data has {} feature columns but the architecture expects {}",
            dataset.features.ncols(),
            cmd.arch[0]
        )));
    }
    if !cmd.autoencode {
        let classes = cmd.arch[cmd.arch.len() - 1];
        if let Some(bad) = dataset
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .find(|&&l| l >= classes)
        {
            return Err(CliError::Usage(format!(
                "label {bad} out of range for {classes} output units"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::init_mlp(&cmd.arch, &mut rng).map_err(CliError::runtime)?;
    let mut cfg = TrainConfig::new(cmd.epochs, cmd.batch);
    cfg.learning_rate = cmd.lr;
    cfg.optimizer = optimizer;
    cfg.loss = if cmd.autoencode {
        Loss::MeanSquared
    } else {
        Loss::SoftmaxCrossEntropy
    };
    cfg.projection = Some(ProjectionSchedule {
        layer: cmd.layer,
        grouping: match cmd.axis {
            Axis::Rows => Grouping::Rows,
            Axis::Cols => Grouping::Columns,
        },
        s: cmd.s,
        period: cmd.period,
    });
    cfg.seed = seed;
    let (_, metrics) = train_with_projection(&net, &dataset, &cfg).map_err(|e| match e {
        crate::training::TrainError::Config(msg) => CliError::Usage(msg),
        crate::training::TrainError::LayerIndex(i) => {
            CliError::Usage(format!("projection layer index {i} out of range"))
        }
        other => CliError::runtime(other),
    })?;

    if let Some(path) = &cmd.report {
        let mut rep = Report::new("train", seed, cmd.s, 1e-4);
        rep.error_trace = metrics.epoch_loss.clone();
        rep.sparsity_trace = metrics.epoch_layer_sparsity.clone();
        rep.achieved_sparsity = metrics.epoch_layer_sparsity.last().copied();
        rep.best_error = metrics
            .epoch_loss
            .iter()
            .cloned()
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
        if cmd.timing {
            rep.wall_ms = started.elapsed().as_millis() as u64;
        }
        write_report(&rep, path).map_err(CliError::runtime)?;
    }
    let acc_line = metrics
        .epoch_accuracy
        .last()
        .map(|a| format!(", final accuracy {a:.4}"))
        .unwrap_or_default();
    println!(
        "trained {} epochs: final loss {:.6}{}, layer sparsity {:.4} ({} projection events)",
        cmd.epochs,
        metrics.epoch_loss.last().unwrap(),
        acc_line,
        metrics.epoch_layer_sparsity.last().unwrap(),
        metrics.projection_sparsities.len()
    );
    Ok(())
}

/// One-screen human summary of a projection run.
pub fn projection_summary(res: &ProjectionResult, target: f64) -> String {
    if res.iterations == 0 && res.mu_star == 0.0 {
        return format!(
            "input already satisfies target {target}: average sparsity {:.6}",
            res.achieved_sparsity
        );
    }
    let mut line = format!(
        "projected to average sparsity {:.6} (target {target}) in {} iterations, mu* = {:.6}",
        res.achieved_sparsity, res.iterations, res.mu_star
    );
    if res.discontinuous {
        if let Some((lo, hi)) = res.sparsity_band {
            line.push_str(&format!(
                "\ntarget unattainable: g jumps here; achievable sparsity {lo:.4} or {hi:.4}"
            ));
        }
    }
    line
}

/// One-screen human summary of an NMF run.
pub fn nmf_summary(variant: NmfVariant, res: &NmfResult) -> String {
    format!(
        "{}: best relative error {:.6e}, final relative error {:.6e}, final column sparsity {:.4}",
        variant.name(),
        res.best_error,
        res.error_trace.last().unwrap(),
        res.sparsity_trace.last().unwrap()
    )
}
