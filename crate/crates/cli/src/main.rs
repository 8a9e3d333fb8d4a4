use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparse_psatz::constraints::ConstraintOptions;
use sparse_psatz::prop::interval_propagate;
use sparse_psatz::sdp::{write_sdpa, SolveStatus, SolverMethod, SolverParams};
use sparse_psatz::sparsity::{Mode, RelaxationOrder};
use sparse_psatz::verify::{
    build_program, scaling_study, verify_polytope, write_sweep_csv, Sampling, SweepAxis, SweepSpec, VerifyOptions,
};
use sparse_psatz::{Activation, IntervalBox, NetworkModel, PolytopeSpec};

#[derive(Parser)]
#[command(name = "sparse-psatz", version, about = "Certified output bounds for feed-forward networks")]
struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "SPARSE_PSATZ_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound every polytope face and write a JSON report.
    Verify(VerifyArgs),
    /// Grow the network and time sparse against dense certificates.
    Sweep(SweepArgs),
    /// Write a random model file.
    Gen(GenArgs),
    /// Write the certificate SDP for one face in SDPA sparse format.
    ExportSdpa(ExportArgs),
    /// Dump interval bounds for every layer as CSV.
    Ibp(IbpArgs),
}

#[derive(Args, Clone)]
struct RandomSpec {
    /// Hidden layers of a random model.
    #[arg(long)]
    layers: Option<usize>,
    /// Nodes per hidden layer.
    #[arg(long, default_value_t = 2)]
    nodes: usize,
    #[arg(long, default_value_t = 1)]
    inputs: usize,
    #[arg(long, default_value_t = 1)]
    outputs: usize,
    #[arg(long, default_value = "relu")]
    act: Activation,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ModelSource {
    /// Model JSON file.
    #[arg(long, conflicts_with = "layers")]
    model: Option<PathBuf>,
    #[command(flatten)]
    random: RandomSpec,
    /// Input box as `lo hi` for every input, or one `lo hi` pair per input.
    #[arg(long = "box", num_args = 2.., allow_negative_numbers = true, default_values_t = [-1.0, 1.0])]
    input_box: Vec<f64>,
}

impl ModelSource {
    fn load(&self) -> Result<(NetworkModel, IntervalBox), Failure> {
        let model = match (&self.model, self.random.layers) {
            (Some(path), _) => NetworkModel::load(path)?,
            (None, Some(layers)) => {
                let r = &self.random;
                NetworkModel::random(r.inputs, r.outputs, layers, r.nodes, r.act, r.seed)?
            }
            (None, None) => return Err(Failure::Usage("give --model or --layers".into())),
        };
        let input = parse_box(&self.input_box, model.n_inputs())?;
        Ok((model, input))
    }
}

#[derive(Args)]
struct Relaxation {
    #[arg(long, default_value = "sparse")]
    mode: ModeArg,
    /// Relaxation order: a positive integer, or `min` for constant multipliers.
    #[arg(long, default_value = "min")]
    order: String,
    /// Sector midpoint for sigmoid and tanh; picked per node when unset.
    #[arg(long)]
    xm: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

impl Relaxation {
    fn options(&self) -> Result<VerifyOptions, Failure> {
        let order: RelaxationOrder = self.order.parse()?;
        if order == RelaxationOrder::Fixed(0) {
            return Err(Failure::Usage("relaxation order must be at least 1".into()));
        }
        Ok(VerifyOptions {
            mode: self.mode.into(),
            order,
            solver: self.solver.params(),
            constraints: ConstraintOptions {
                x_m: self.xm,
                ..ConstraintOptions::default()
            },
            sample: None,
        })
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value = "admm")]
    solver: SolverArg,
    /// Primal, dual and gap tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// ADMM penalty.
    #[arg(long)]
    rho: Option<f64>,
    /// ADMM over-relaxation.
    #[arg(long)]
    alpha: Option<f64>,
    /// Wall-clock limit per face solve, in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
}

impl SolverArgs {
    fn params(&self) -> SolverParams {
        let mut p = SolverParams::default();
        if let Some(tol) = self.tol {
            p = p.with_tol(tol);
        }
        p.method = match self.solver {
            SolverArg::Admm => SolverMethod::Admm,
            SolverArg::InteriorPoint => SolverMethod::InteriorPoint,
        };
        p.max_iter = self.max_iter.unwrap_or(p.max_iter);
        p.rho = self.rho.unwrap_or(p.rho);
        p.over_relaxation = self.alpha.unwrap_or(p.over_relaxation);
        p.time_limit = self.time_limit;
        p
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sparse,
    Dense,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sparse => Mode::Sparse,
            ModeArg::Dense => Mode::Dense,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Admm,
    InteriorPoint,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Face normal `c` as comma-separated values; repeat for more faces.
    #[arg(long, allow_negative_numbers = true)]
    face: Vec<String>,
    /// Add the `±e_k` faces for every output.
    #[arg(long)]
    axis_faces: bool,
    #[command(flatten)]
    relaxation: Relaxation,
    /// Also report the sampled lower bound for every face.
    #[arg(long)]
    sample: bool,
    /// Exit with status 2 when any face did not converge.
    #[arg(long)]
    strict: bool,
    /// Report path; standard output when unset.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-face CSV summary.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Layers,
    Nodes,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "layers")]
    axis: AxisArg,
    /// Values of the swept quantity.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 5, 10, 20, 50, 100])]
    counts: Vec<usize>,
    /// Width when sweeping layers.
    #[arg(long, default_value_t = 2)]
    nodes: usize,
    /// Depth when sweeping widths.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    inputs: usize,
    #[arg(long, default_value_t = 2)]
    outputs: usize,
    #[arg(long, default_value = "relu")]
    act: Activation,
    #[arg(long, value_delimiter = ',', default_value = "sparse,dense")]
    modes: Vec<ModeArg>,
    #[arg(long, default_value = "min")]
    order: String,
    /// Seconds per mode before the sweep stops growing.
    #[arg(long, default_value_t = 1000.0)]
    budget: f64,
    #[arg(long = "box", num_args = 2, allow_negative_numbers = true, default_values_t = [-1.0, 1.0])]
    input_box: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// CSV path; standard output when unset.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    random: RandomSpec,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Face normal `c`; defaults to `+e₀`.
    #[arg(long, allow_negative_numbers = true)]
    face: Option<String>,
    #[command(flatten)]
    relaxation: Relaxation,
    #[arg(long)]
    out: PathBuf,
    /// Block map as JSON.
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Args)]
struct IbpArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    NotConverged(String),
}

impl From<sparse_psatz::Error> for Failure {
    fn from(e: sparse_psatz::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn parse_box(values: &[f64], dim: usize) -> Result<IntervalBox, Failure> {
    let b = match values.len() {
        2 => IntervalBox::uniform(dim, values[0], values[1])?,
        n if n == 2 * dim => {
            let lo = values.iter().step_by(2).copied().collect();
            let hi = values.iter().skip(1).step_by(2).copied().collect();
            IntervalBox::new(lo, hi)?
        }
        n => {
            return Err(Failure::Usage(format!(
                "--box takes 2 or {} values for {dim} inputs, got {n}",
                2 * dim
            )))
        }
    };
    Ok(b)
}

fn parse_vector(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Failure::Usage(format!("invalid number '{t}' in '{s}'"))))
        .collect()
}

fn writer(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let (model, input) = args.source.load()?;
    let mut normals = args.face.iter().map(|s| parse_vector(s)).collect::<Result<Vec<_>, _>>()?;
    if args.axis_faces || normals.is_empty() {
        normals.extend(PolytopeSpec::axis_aligned(model.n_outputs()).faces.into_iter().map(|f| f.normal));
    }
    let faces = PolytopeSpec::new(normals)?;
    let mut options = args.relaxation.options()?;
    if args.sample {
        options.sample = Some(Sampling::Auto);
    }
    let report = verify_polytope(&model, &input, &faces, &options)?;
    let mut out = writer(args.out.as_deref())?;
    writeln!(out, "{}", report.to_json())?;
    out.flush()?;
    if let Some(path) = &args.csv {
        let mut f = BufWriter::new(File::create(path)?);
        report.write_faces_csv(&mut f)?;
        f.flush()?;
    }
    let failed: Vec<String> = report
        .faces
        .iter()
        .filter(|f| f.status != Some(SolveStatus::Optimal))
        .map(|f| match (&f.error, f.status) {
            (Some(e), _) => format!("face {}: {e}", f.face),
            (None, Some(s)) => format!("face {}: {}", f.face, s.name()),
            (None, None) => format!("face {}: not solved", f.face),
        })
        .collect();
    for line in &failed {
        eprintln!("warning: {line}");
    }
    if args.strict && !failed.is_empty() {
        return Err(Failure::NotConverged(format!("{} face(s) did not converge", failed.len())));
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let order: RelaxationOrder = args.order.parse()?;
    if order == RelaxationOrder::Fixed(0) {
        return Err(Failure::Usage("relaxation order must be at least 1".into()));
    }
    let axis = match args.axis {
        AxisArg::Layers => SweepAxis::Layers {
            counts: args.counts.clone(),
            nodes: args.nodes,
        },
        AxisArg::Nodes => SweepAxis::Nodes {
            counts: args.counts.clone(),
            layers: args.layers,
        },
    };
    let spec = SweepSpec {
        axis,
        activation: args.act,
        modes: args.modes.iter().map(|&m| m.into()).collect(),
        order,
        time_budget: args.budget,
        n_inputs: args.inputs,
        n_outputs: args.outputs,
        input: (args.input_box[0], args.input_box[1]),
        seed: args.seed,
        solver: args.solver.params(),
    };
    let rows = scaling_study(&spec);
    let mut out = writer(args.out.as_deref())?;
    write_sweep_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn gen(args: &GenArgs) -> Result<(), Failure> {
    let r = &args.random;
    let layers = r.layers.ok_or_else(|| Failure::Usage("gen needs --layers".into()))?;
    let model = NetworkModel::random(r.inputs, r.outputs, layers, r.nodes, r.act, r.seed)?;
    model.save(&args.out)?;
    Ok(())
}

fn export(args: &ExportArgs) -> Result<(), Failure> {
    let (model, input) = args.source.load()?;
    let c = match &args.face {
        Some(s) => parse_vector(s)?,
        None => PolytopeSpec::axis_aligned(model.n_outputs()).faces[0].normal.clone(),
    };
    let options = args.relaxation.options()?;
    let program = build_program(&model, &input, &c, &options)?;
    let layout = write_sdpa(&program.problem, &args.out)?;
    if let Some(path) = &args.layout {
        let text = serde_json::to_string_pretty(&layout).map_err(|e| Failure::Usage(e.to_string()))?;
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn ibp(args: &IbpArgs) -> Result<(), Failure> {
    let (model, input) = args.source.load()?;
    let bounds = interval_propagate(&model, &input)?;
    let mut out = writer(args.out.as_deref())?;
    bounds.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Gen(a) => gen(a),
        Command::ExportSdpa(a) => export(a),
        Command::Ibp(a) => ibp(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
