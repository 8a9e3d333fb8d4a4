//! End-to-end pipeline: interval bounds, constraints, cliques, assembly and one
//! solve per polytope face, plus the sampling and interval baselines.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraints::{build_constraint_set, ConstraintOptions, ConstraintSet};
use crate::error::{Error, Result};
use crate::model::{Activation, IntervalBox, NetworkModel, PolytopeSpec};
use crate::prop::{interval_propagate, LayerBounds};
use crate::rng::CounterRng;
use crate::sdp::{solve_interior, solve_rhs, AffineProjector, SolveStatus, SolverMethod, SolverParams};
use crate::sos::{assemble, output_objective, SosProgram};
use crate::sparsity::{clique_report, cliques_for, plan_multipliers, CliqueEntry, Mode, RelaxationOrder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub mode: Mode,
    pub order: RelaxationOrder,
    pub solver: SolverParams,
    pub constraints: ConstraintOptions,
    /// Compute the sampled lower bound for every face.
    pub sample: Option<Sampling>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Sparse,
            order: RelaxationOrder::Minimum,
            solver: SolverParams::default(),
            constraints: ConstraintOptions::default(),
            sample: Some(Sampling::Auto),
        }
    }
}

/// How the sampled lower bound explores the input box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Grid of 1001 points per axis for up to two inputs, 101 for three, otherwise
    /// 100 000 seeded uniform samples.
    Auto,
    Grid { per_axis: usize },
    Random { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceReport {
    pub face: usize,
    pub normal: Vec<f64>,
    /// Certified upper bound on `cᵀy`.
    pub gamma: Option<f64>,
    /// Solver value of `γ` before residual correction.
    pub gamma_raw: Option<f64>,
    pub residual_slack: Option<f64>,
    pub psd_slack: Option<f64>,
    pub status: Option<SolveStatus>,
    pub primal_residual: Option<f64>,
    pub dual_residual: Option<f64>,
    pub gap: Option<f64>,
    pub iterations: Option<usize>,
    pub solve_s: f64,
    pub ibp_bound: f64,
    pub sampled_max: Option<f64>,
    pub error: Option<String>,
}

impl FaceReport {
    pub fn is_sound(&self, tol: f64) -> Option<bool> {
        Some(self.gamma? + tol >= self.sampled_max?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStats {
    pub psd_blocks: usize,
    pub max_block: usize,
    pub free_scalars: usize,
    pub rows: usize,
    pub decision_vars: usize,
    pub nonzeros: usize,
    pub gram_nonzeros: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub activation: Activation,
    pub widths: Vec<usize>,
    pub input: IntervalBox,
    pub options: VerifyOptions,
    pub constraints: usize,
    pub sector_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub model_fingerprint: String,
    pub config: ConfigEcho,
    pub faces: Vec<FaceReport>,
    pub blocks: Option<BlockStats>,
    pub cliques: Vec<CliqueEntry>,
    pub assembly_s: f64,
    pub factor_s: f64,
    /// Certified bounds are `γ` plus a residual correction; they equal the solver
    /// value only when the certificate is exact.
    pub bound_note: String,
}

impl VerificationReport {
    pub fn gammas(&self) -> Vec<Option<f64>> {
        self.faces.iter().map(|f| f.gamma).collect()
    }

    pub fn all_optimal(&self) -> bool {
        self.faces.iter().all(|f| f.status == Some(SolveStatus::Optimal))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with timing fields zeroed, for run-to-run comparison.
    pub fn to_json_untimed(&self) -> String {
        let mut r = self.clone();
        r.assembly_s = 0.0;
        r.factor_s = 0.0;
        for f in &mut r.faces {
            f.solve_s = 0.0;
        }
        r.to_json()
    }

    pub fn write_faces_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "face,gamma,gamma_raw,ibp_bound,sampled_max,status")?;
        for f in &self.faces {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                f.face,
                opt(f.gamma),
                opt(f.gamma_raw),
                f.ibp_bound,
                opt(f.sampled_max),
                f.status.map(|s| s.name()).unwrap_or("error")
            )?;
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Interval upper bound on `cᵀ(W^ℓ x^ℓ + b^ℓ)` over the last layer's box.
pub fn ibp_output_bound(model: &NetworkModel, bounds: &LayerBounds, c: &[f64]) -> f64 {
    let out = model.output_layer();
    let last = bounds.var_layer(model.hidden_layers());
    let mut total: f64 = c.iter().zip(out.bias.iter()).map(|(a, b)| a * b).sum();
    for j in 0..out.inputs() {
        let w: f64 = (0..c.len()).map(|k| c[k] * out.weights[(k, j)]).sum();
        total += if w >= 0.0 { w * last.hi[j] } else { w * last.lo[j] };
    }
    total
}

fn grid_points(input: &IntervalBox, per_axis: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    let n = input.dim();
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(n as u32);
    (0..total).map(move |mut k| {
        (0..n)
            .map(|d| {
                let i = k % per_axis;
                k /= per_axis;
                if i == per_axis - 1 {
                    input.hi[d]
                } else {
                    input.lo[d] + (input.hi[d] - input.lo[d]) * i as f64 / (per_axis - 1) as f64
                }
            })
            .collect()
    })
}

/// Sample points used by [`sample_lower_bound`].
pub fn sample_points(input: &IntervalBox, sampling: Sampling) -> Vec<Vec<f64>> {
    let resolved = match sampling {
        Sampling::Auto => match input.dim() {
            0..=2 => Sampling::Grid { per_axis: 1001 },
            3 => Sampling::Grid { per_axis: 101 },
            _ => Sampling::Random {
                samples: 100_000,
                seed: 0,
            },
        },
        s => s,
    };
    match resolved {
        Sampling::Grid { per_axis } => grid_points(input, per_axis).collect(),
        Sampling::Random { samples, seed } => {
            let mut rng = CounterRng::new(seed);
            (0..samples)
                .map(|_| {
                    (0..input.dim())
                        .map(|d| rng.uniform_in(input.lo[d], input.hi[d]))
                        .collect()
                })
                .collect()
        }
        Sampling::Auto => unreachable!(),
    }
}

/// Largest observed `c_mᵀ π(u)` per face; a lower bound on the true maximum.
pub fn sample_lower_bound(
    model: &NetworkModel,
    input: &IntervalBox,
    faces: &PolytopeSpec,
    sampling: Sampling,
) -> Result<Vec<f64>> {
    if input.dim() != model.n_inputs() {
        return Err(Error::Dimension {
            expected: model.n_inputs(),
            got: input.dim(),
        });
    }
    let points = sample_points(input, sampling);
    let outputs = crate::parallel::map(&points, |u| model.forward(u).expect("dimension checked"));
    Ok(faces
        .faces
        .iter()
        .map(|f| {
            outputs
                .iter()
                .map(|y| y.iter().zip(&f.normal).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect())
}

struct Prepared {
    bounds: LayerBounds,
    constraints: ConstraintSet,
    program: Result<SosProgram>,
    cliques: Vec<CliqueEntry>,
    assembly_s: f64,
}

fn prepare(
    model: &NetworkModel,
    input: &IntervalBox,
    first_face: &[f64],
    options: &VerifyOptions,
) -> Result<Prepared> {
    let t0 = Instant::now();
    let bounds = interval_propagate(model, input)?;
    let constraints = build_constraint_set(model, &bounds, &options.constraints);
    let cliques = cliques_for(model, options.mode);
    let plan = plan_multipliers(&constraints, &cliques, options.order)?;
    let report = clique_report(&cliques, &plan);
    let program = assemble(model, &bounds, &constraints, &cliques, &plan, first_face);
    Ok(Prepared {
        bounds,
        constraints,
        program,
        cliques: report,
        assembly_s: t0.elapsed().as_secs_f64(),
    })
}

/// IBP, constraints, cliques and assembly for objective `cᵀy`, without solving.
pub fn build_program(
    model: &NetworkModel,
    input: &IntervalBox,
    c: &[f64],
    options: &VerifyOptions,
) -> Result<SosProgram> {
    if input.dim() != model.n_inputs() {
        return Err(Error::Dimension {
            expected: model.n_inputs(),
            got: input.dim(),
        });
    }
    prepare(model, input, c, options)?.program
}

/// Runs the full pipeline for every face. Configuration errors abort; assembly
/// and solver failures are recorded per face.
pub fn verify_polytope(
    model: &NetworkModel,
    input: &IntervalBox,
    faces: &PolytopeSpec,
    options: &VerifyOptions,
) -> Result<VerificationReport> {
    if input.dim() != model.n_inputs() {
        return Err(Error::Dimension {
            expected: model.n_inputs(),
            got: input.dim(),
        });
    }
    for f in &faces.faces {
        if f.normal.len() != model.n_outputs() {
            return Err(Error::Dimension {
                expected: model.n_outputs(),
                got: f.normal.len(),
            });
        }
    }
    let prep = prepare(model, input, &faces.faces[0].normal, options)?;
    let sampled = match options.sample {
        Some(s) => Some(sample_lower_bound(model, input, faces, s)?),
        None => None,
    };

    let t1 = Instant::now();
    let projector = prep
        .program
        .as_ref()
        .map_err(|e| e.to_string())
        .and_then(|p| match options.solver.method {
            SolverMethod::Admm => AffineProjector::new(&p.problem).map(Some).map_err(|e| e.to_string()),
            SolverMethod::InteriorPoint => Ok(None),
        });
    let factor_s = t1.elapsed().as_secs_f64();

    let indices: Vec<usize> = (0..faces.len()).collect();
    let face_reports = crate::parallel::map(&indices, |&m| {
        let normal = faces.faces[m].normal.clone();
        let mut report = FaceReport {
            face: m,
            ibp_bound: ibp_output_bound(model, &prep.bounds, &normal),
            sampled_max: sampled.as_ref().map(|s| s[m]),
            normal,
            gamma: None,
            gamma_raw: None,
            residual_slack: None,
            psd_slack: None,
            status: None,
            primal_residual: None,
            dual_residual: None,
            gap: None,
            iterations: None,
            solve_s: 0.0,
            error: None,
        };
        let result = (|| -> std::result::Result<(), String> {
            let program = prep.program.as_ref().map_err(|e| e.to_string())?;
            let proj = projector.as_ref().map_err(|e| e.clone())?;
            let objective = output_objective(model, &report.normal).map_err(|e| e.to_string())?;
            let rhs = program.rhs_for(&objective).map_err(|e| e.to_string())?;
            let t = Instant::now();
            let sol = match proj {
                Some(proj) => solve_rhs(&program.problem, proj, &rhs, &options.solver),
                None => solve_interior(&program.problem, &rhs, &options.solver),
            }
            .map_err(|e| e.to_string())?;
            report.solve_s = t.elapsed().as_secs_f64();
            let cert = program.certified_bound_rhs(&sol.x, &rhs);
            report.status = Some(sol.status);
            report.iterations = Some(sol.iterations);
            if !cert.gamma.is_finite() {
                return Err(format!("solver iterate is not finite after {} iterations", sol.iterations));
            }
            report.gamma = Some(cert.gamma);
            report.gamma_raw = Some(cert.gamma_raw);
            report.residual_slack = Some(cert.residual_slack);
            report.psd_slack = Some(cert.psd_slack);
            report.primal_residual = Some(sol.primal_residual);
            report.dual_residual = Some(sol.dual_residual);
            report.gap = Some(sol.gap);
            Ok(())
        })();
        if let Err(e) = result {
            report.error = Some(e);
        }
        report
    });

    let blocks = prep.program.as_ref().ok().map(|p| BlockStats {
        psd_blocks: p.problem.blocks.len(),
        max_block: p.problem.max_block(),
        free_scalars: p.problem.n_free,
        rows: p.problem.n_rows(),
        decision_vars: p.problem.n_vars(),
        nonzeros: p.problem.a.nnz(),
        gram_nonzeros: projector.as_ref().ok().and_then(|p| p.as_ref()).map(|p| p.gram_nnz()).unwrap_or(0),
    });
    let sector_fallbacks = prep
        .constraints
        .iter()
        .filter(|c| c.label == "sector_global_fallback")
        .count();
    Ok(VerificationReport {
        model_fingerprint: model.fingerprint(),
        config: ConfigEcho {
            activation: model.activation(),
            widths: model.widths(),
            input: input.clone(),
            options: options.clone(),
            constraints: prep.constraints.len(),
            sector_fallbacks,
        },
        faces: face_reports,
        blocks,
        cliques: prep.cliques,
        assembly_s: prep.assembly_s,
        factor_s,
        bound_note: "gamma = gamma_raw + residual_slack + psd_slack".into(),
    })
}

/// What a scaling sweep varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Hidden-layer counts at a fixed width.
    Layers { counts: Vec<usize>, nodes: usize },
    /// Widths at a fixed depth.
    Nodes { counts: Vec<usize>, layers: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub activation: Activation,
    pub modes: Vec<Mode>,
    pub order: RelaxationOrder,
    /// Seconds; a mode stops once one configuration's solve exceeds it.
    pub time_budget: f64,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub input: (f64, f64),
    pub seed: u64,
    pub solver: SolverParams,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Layers {
                counts: vec![1, 2, 5, 10, 20, 50, 100],
                nodes: 2,
            },
            activation: Activation::Relu,
            modes: vec![Mode::Sparse, Mode::Dense],
            order: RelaxationOrder::Minimum,
            time_budget: 1000.0,
            n_inputs: 2,
            n_outputs: 2,
            input: (-1.0, 1.0),
            seed: 1,
            solver: SolverParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    pub order: RelaxationOrder,
    pub layers: usize,
    pub nodes: usize,
    pub face: usize,
    pub gamma: Option<f64>,
    pub assembly_s: f64,
    pub solve_s: f64,
    pub status: String,
    pub max_block: usize,
    pub over_budget: bool,
}

/// Runs configurations in increasing size per mode, solving the `+e₀` face, until
/// one exceeds the time budget. Budget exhaustion is recorded, never raised.
pub fn scaling_study(spec: &SweepSpec) -> Vec<SweepRow> {
    let configs: Vec<(usize, usize)> = match &spec.axis {
        SweepAxis::Layers { counts, nodes } => counts.iter().map(|&l| (l, *nodes)).collect(),
        SweepAxis::Nodes { counts, layers } => counts.iter().map(|&n| (*layers, n)).collect(),
    };
    let mut rows = Vec::new();
    for &mode in &spec.modes {
        for &(layers, nodes) in &configs {
            let row = sweep_point(spec, mode, layers, nodes);
            let stop = row.over_budget;
            rows.push(row);
            if stop {
                break;
            }
        }
    }
    rows
}

fn sweep_point(spec: &SweepSpec, mode: Mode, layers: usize, nodes: usize) -> SweepRow {
    let mut row = SweepRow {
        mode,
        order: spec.order,
        layers,
        nodes,
        face: 0,
        gamma: None,
        assembly_s: 0.0,
        solve_s: 0.0,
        status: String::new(),
        max_block: 0,
        over_budget: false,
    };
    let mut solver = spec.solver.clone();
    solver.time_limit = Some(spec.time_budget);
    let options = VerifyOptions {
        mode,
        order: spec.order,
        solver,
        sample: None,
        ..Default::default()
    };
    let run = (|| -> Result<VerificationReport> {
        let model = NetworkModel::random(
            spec.n_inputs,
            spec.n_outputs,
            layers,
            nodes,
            spec.activation,
            spec.seed,
        )?;
        let input = IntervalBox::uniform(spec.n_inputs, spec.input.0, spec.input.1)?;
        let mut e0 = vec![0.0; spec.n_outputs];
        e0[0] = 1.0;
        verify_polytope(&model, &input, &PolytopeSpec::new(vec![e0])?, &options)
    })();
    match run {
        Ok(report) => {
            let f = &report.faces[0];
            row.gamma = f.gamma;
            row.assembly_s = report.assembly_s + report.factor_s;
            row.solve_s = f.solve_s;
            row.max_block = report.blocks.as_ref().map(|b| b.max_block).unwrap_or(0);
            row.status = match (&f.status, &f.error) {
                (_, Some(e)) => format!("error: {e}"),
                (Some(s), None) => s.name().to_string(),
                (None, None) => "error".into(),
            };
            row.over_budget = f.status == Some(SolveStatus::TimeLimit)
                || row.solve_s + row.assembly_s > spec.time_budget;
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "mode,omega,layers,nodes,face,gamma,assembly_s,solve_s,status")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{:.6},{}",
            r.mode,
            r.order,
            r.layers,
            r.nodes,
            r.face,
            opt(r.gamma),
            r.assembly_s,
            r.solve_s,
            r.status.replace(',', ";")
        )?;
    }
    Ok(())
}

/// Polytope vertices and sampled outputs as CSV point lists for plotting:
/// `kind,y0,y1` rows with `kind` either `sample` or `bound`, where bound rows are
/// the face normal scaled by γ (`c`, `gamma` in the remaining columns).
pub fn write_plot_csv<W: Write>(
    report: &VerificationReport,
    samples: &[Vec<f64>],
    mut out: W,
) -> std::io::Result<()> {
    let dim = samples.first().map(|s| s.len()).unwrap_or(0);
    let header: Vec<String> = (0..dim).map(|k| format!("y{k}")).collect();
    writeln!(out, "kind,{},gamma", header.join(","))?;
    for s in samples {
        let vals: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        writeln!(out, "sample,{},", vals.join(","))?;
    }
    for f in &report.faces {
        let vals: Vec<String> = f.normal.iter().map(|v| v.to_string()).collect();
        writeln!(out, "face,{},{}", vals.join(","), opt(f.gamma))?;
    }
    Ok(())
}
