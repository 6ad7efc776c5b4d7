//! Subcommand pipelines. Each command reads only the config blocks it needs,
//! computes upstream results on demand (or reuses matching artifacts in the
//! output directory) and writes its artifacts through [`ArtifactWriter`].

use std::path::PathBuf;

use log::info;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    check_bounds, check_eta, check_truncation, EtaCheck, FieldStructure, StructureReport, TruncationCheck, CHECK_TOL,
};
use crate::config::{auto_half_widths, Format, RunConfig};
use crate::error::{Error, Result};
use crate::export::{config_hash, num, read_json, ArtifactWriter, Provenance};
use crate::linalg::Mat;
use crate::mdp::{hold_weight, value_iterate, Grid, IterationReport, Kernel, StageCosts, ValueFunction, ValueSolution};
use crate::model::{diagonalize, solve_steady_state, validate_model, SteadyState, SystemModel, Violation};
use crate::policy::{search_threshold, voi_decision_map, EtaEstimate, Policy, PolicyKind, ThresholdFamily, VoiRule};
use crate::sim::{
    monte_carlo, simulate_episode, stability_diagnostics, theoretical_average_cost, tradeoff_sweep, AverageCost,
    MonteCarloSummary, Plant, SimConfig, StabilityReport,
};

/// Resolved configuration plus the output directory.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    /// Applies command-line overrides; the config hash covers them.
    pub fn new(mut cfg: RunConfig, out: Option<PathBuf>, seed: Option<u64>) -> Context {
        if let Some(dir) = out {
            cfg.output.dir = dir;
        }
        if let Some(seed) = seed {
            cfg.sim.seed = seed;
        }
        let out = cfg.output.dir.clone();
        Context { cfg, out }
    }

    pub fn hash(&self) -> String {
        config_hash(&self.cfg)
    }

    fn writer(&self, command: &str) -> Result<ArtifactWriter> {
        ArtifactWriter::new(&self.out, Provenance::new(command, &self.cfg))
    }

    fn json(&self) -> bool {
        self.cfg.output.wants(Format::Json)
    }

    fn csv(&self) -> bool {
        self.cfg.output.wants(Format::Csv)
    }
}

/// Model, steady state and the holding-cost weight.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: SystemModel,
    pub steady: SteadyState,
    pub weight: Mat,
    pub warnings: Vec<Violation>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let model = cfg.model.build()?;
    let (warnings, fatal): (Vec<_>, Vec<_>) = validate_model(&model)?
        .into_iter()
        .partition(|v| matches!(v, Violation::InputWeightDimension { .. }));
    if !fatal.is_empty() {
        let msg: Vec<String> = fatal.iter().map(|v| v.to_string()).collect();
        return Err(Error::InvalidModel(msg.join("; ")));
    }
    let steady = solve_steady_state(&model, cfg.solver.riccati())?;
    let weight = hold_weight(&model.a, &steady.sigma, cfg.solver.cost_variant);
    Ok(Prepared {
        model,
        steady,
        weight,
        warnings,
    })
}

/// Grid, kernel, costs and value solution for one price.
pub struct ValueStage {
    pub grid: Grid,
    pub kernel: Kernel,
    pub costs: StageCosts,
    pub solution: ValueSolution,
}

/// Solves the average-cost problem at `theta` on `grid`. Returns the solution
/// even when value iteration did not converge; check `report.converged`.
pub fn solve_value(cfg: &RunConfig, prep: &Prepared, theta: f64, grid: Grid) -> Result<ValueStage> {
    let kernel = Kernel::build(&grid, &prep.model.a, &prep.steady.xi, cfg.solver.kernel())?;
    let costs = StageCosts::new(&grid, theta, &prep.weight)?;
    let solution = value_iterate(&kernel, &costs, cfg.solver.vi())?;
    Ok(ValueStage {
        grid,
        kernel,
        costs,
        solution,
    })
}

fn configured_grid(cfg: &RunConfig, prep: &Prepared, theta: f64) -> Result<Grid> {
    cfg.grid.build(theta, &prep.weight, &prep.steady.xi)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteadyStateArtifact {
    pub model: SystemModel,
    pub steady_state: SteadyState,
    /// Holding-cost weight (`AᵀΣA` or `Σ`).
    #[serde(with = "crate::linalg::rows")]
    pub weight: Mat,
    /// Real eigenvalues of A, when real-diagonalizable.
    pub eigenvalues: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

pub fn cmd_solve(ctx: &Context) -> Result<SteadyStateArtifact> {
    let prep = prepare(&ctx.cfg)?;
    let art = SteadyStateArtifact {
        eigenvalues: diagonalize(&prep.model.a).ok().map(|d| d.eigenvalues()),
        model: prep.model,
        steady_state: prep.steady,
        weight: prep.weight,
        warnings: prep.warnings.iter().map(|v| v.to_string()).collect(),
    };
    let mut w = ctx.writer("solve")?;
    w.json("steady_state.json", &art)?;
    w.finish()?;
    Ok(art)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationArtifact {
    pub theta: f64,
    /// See [`value_inputs_hash`].
    pub inputs_hash: String,
    pub grid: Grid,
    pub half_widths: Vec<f64>,
    pub jstar: f64,
    /// `E[h(ξ)]`
    pub eh: f64,
    pub separable_kernel: bool,
    pub report: IterationReport,
}

fn write_iteration(ctx: &Context, w: &mut ArtifactWriter, stage: &ValueStage, theta: f64) -> Result<()> {
    let sol = &stage.solution;
    sol.h.write_csv(w.path("h.csv"), "h")?;
    w.register("h.csv")?;
    let art = IterationArtifact {
        theta,
        inputs_hash: value_inputs_hash(&ctx.cfg),
        grid: stage.grid.clone(),
        half_widths: stage.grid.upper(),
        jstar: sol.jstar,
        eh: sol.eh,
        separable_kernel: stage.kernel.is_separable(),
        report: sol.report.clone(),
    };
    if ctx.json() {
        w.json("iteration.json", &art)?;
    }
    Ok(())
}

pub fn cmd_iterate(ctx: &Context) -> Result<IterationArtifact> {
    let prep = prepare(&ctx.cfg)?;
    let theta = prep.model.theta;
    let stage = solve_value(&ctx.cfg, &prep, theta, configured_grid(&ctx.cfg, &prep, theta)?)?;
    let mut w = ctx.writer("iterate")?;
    write_iteration(ctx, &mut w, &stage, theta)?;
    w.finish()?;
    let sol = stage.solution.into_result()?;
    Ok(IterationArtifact {
        theta,
        inputs_hash: value_inputs_hash(&ctx.cfg),
        half_widths: stage.grid.upper(),
        grid: stage.grid,
        jstar: sol.jstar,
        eh: sol.eh,
        separable_kernel: stage.kernel.is_separable(),
        report: sol.report,
    })
}

/// Reuses `iteration.json` and `h.csv` from the output directory when they
/// were produced under the same configuration; otherwise solves afresh and
/// writes them.
pub fn value_stage(ctx: &Context, prep: &Prepared) -> Result<ValueStage> {
    let theta = prep.model.theta;
    let grid = configured_grid(&ctx.cfg, prep, theta)?;
    if let Some(stage) = load_value_stage(ctx, prep, &grid)? {
        info!("reusing value solution from {}", ctx.out.display());
        return Ok(stage);
    }
    let stage = solve_value(&ctx.cfg, prep, theta, grid)?;
    let mut w = ctx.writer("iterate")?;
    write_iteration(ctx, &mut w, &stage, theta)?;
    w.finish()?;
    if !stage.solution.report.converged {
        stage.solution.clone().into_result()?;
    }
    Ok(stage)
}

fn load_value_stage(ctx: &Context, prep: &Prepared, grid: &Grid) -> Result<Option<ValueStage>> {
    let meta = ctx.out.join("iteration.json");
    let hpath = ctx.out.join("h.csv");
    if !meta.exists() || !hpath.exists() {
        return Ok(None);
    }
    let Ok((_, art)) = read_json::<IterationArtifact>(&meta) else {
        return Ok(None);
    };
    // Only the blocks that determine h have to match.
    if art.inputs_hash != value_inputs_hash(&ctx.cfg) || art.grid != *grid || art.theta != prep.model.theta || !art.report.converged {
        return Ok(None);
    }
    let h = ValueFunction::read_csv(&hpath, grid)?;
    let kernel = Kernel::build(grid, &prep.model.a, &prep.steady.xi, ctx.cfg.solver.kernel())?;
    let costs = StageCosts::new(grid, art.theta, &prep.weight)?;
    let solution = ValueSolution::from_h(h, &kernel, &costs, art.report)?;
    Ok(Some(ValueStage {
        grid: grid.clone(),
        kernel,
        costs,
        solution,
    }))
}

/// Digest of the config blocks that determine the value solution.
pub fn value_inputs_hash(cfg: &RunConfig) -> String {
    let key = RunConfig {
        model: cfg.model.clone(),
        grid: cfg.grid.clone(),
        solver: cfg.solver.clone(),
        ..RunConfig::default()
    };
    config_hash(&key)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub theta: f64,
    pub eh: f64,
    pub transmit_fraction: f64,
    pub eta: Option<EtaEstimate>,
    /// Why no threshold estimate is available.
    pub eta_note: Option<String>,
    pub eta_within_bounds: Option<bool>,
}

pub fn cmd_policy(ctx: &Context) -> Result<PolicyArtifact> {
    let prep = prepare(&ctx.cfg)?;
    let stage = value_stage(ctx, &prep)?;
    let theta = prep.model.theta;
    let (field, eta) = voi_decision_map(&stage.solution, &stage.costs, &prep.model.a);
    let (eta, eta_note) = match eta {
        None => (None, Some("A is not real-diagonalizable".to_string())),
        Some(Ok(e)) => (Some(e), None),
        Some(Err(e)) => (None, Some(e.to_string())),
    };
    let art = PolicyArtifact {
        theta,
        eh: field.eh,
        transmit_fraction: field.transmit_fraction(),
        eta_within_bounds: eta.as_ref().map(|e| check_eta(e.eta, theta)),
        eta,
        eta_note,
    };
    let mut w = ctx.writer("policy")?;
    if ctx.csv() {
        field.write_csv(w.path("decision_map.csv"))?;
        w.register("decision_map.csv")?;
    }
    if ctx.json() {
        w.json("policy.json", &art)?;
    }
    w.finish()?;
    Ok(art)
}

/// The policy named in the config, building the VoI law from the value solve.
pub fn configured_policy(ctx: &Context, prep: &Prepared) -> Result<Policy> {
    if ctx.cfg.policy.kind == PolicyKind::Voi {
        let stage = value_stage(ctx, prep)?;
        let rule = VoiRule::from_solution(&stage.solution, prep.model.theta, &prep.weight, ctx.cfg.solver.lookup)?;
        Ok(Policy::Voi(Box::new(rule)))
    } else {
        ctx.cfg.policy.build_simple(&prep.model, &prep.weight)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationArtifact {
    pub summary: MonteCarloSummary,
    /// Closed-form long-run LQG cost, for the VoI law only.
    pub theoretical: Option<AverageCost>,
}

const TRIAL_HEADER: [&str; 8] = [
    "trial",
    "j",
    "regulation",
    "rate",
    "psi",
    "max_e_norm",
    "contained_fraction",
    "diverged",
];

pub fn cmd_simulate(ctx: &Context) -> Result<SimulationArtifact> {
    let prep = prepare(&ctx.cfg)?;
    let policy = configured_policy(ctx, &prep)?;
    let plant = Plant::new(&prep.model, &prep.steady, &prep.weight)?;
    let sim = ctx.cfg.sim.sim_config();
    let run = monte_carlo(&plant, &policy, &sim)?;
    let theoretical = match &policy {
        Policy::Voi(rule) => Some(theoretical_average_cost(&prep.model, &prep.steady, rule.eh)),
        _ => None,
    };
    let mut w = ctx.writer("simulate")?;
    if ctx.csv() {
        let rows = run.trials.iter().enumerate().map(|(i, m)| {
            vec![
                i.to_string(),
                num(m.j),
                num(m.regulation),
                num(m.rate),
                num(m.psi),
                num(m.max_e_norm),
                num(m.contained_fraction),
                u8::from(m.diverged).to_string(),
            ]
        });
        w.csv("trials.csv", &TRIAL_HEADER, rows)?;
        for t in 0..ctx.cfg.sim.export_traces.min(sim.trials) {
            write_trace(&mut w, &plant, &policy, &sim, t as u64)?;
        }
    }
    let art = SimulationArtifact {
        summary: run.summary,
        theoretical,
    };
    if ctx.json() {
        w.json("summary.json", &art)?;
    }
    w.finish()?;
    Ok(art)
}

fn write_trace(w: &mut ArtifactWriter, plant: &Plant, policy: &Policy, sim: &SimConfig, trial: u64) -> Result<()> {
    let (trace, _) = simulate_episode(plant, policy, sim, trial);
    let (n, m) = (trace.n, trace.m);
    let mut header = vec!["k".to_string()];
    for name in ["x", "xs", "xc", "e"] {
        header.extend((1..=n).map(|i| format!("{name}{i}")));
    }
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("delta".into());
    header.push("g".into());
    let steps = trace.steps();
    let rows = (0..=steps).map(|k| {
        let mut row = vec![k.to_string()];
        for seq in [&trace.x, &trace.xs, &trace.xc, &trace.e] {
            row.extend(trace.at(seq, n, k).iter().map(|v| num(*v)));
        }
        if k < steps {
            row.extend(trace.at(&trace.u, m, k).iter().map(|v| num(*v)));
            row.push(u8::from(trace.delta[k]).to_string());
            row.push(num(trace.g[k]));
        } else {
            row.extend(std::iter::repeat_n(String::new(), m + 2));
        }
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    w.csv(&format!("trace_{trial}.csv"), &header, rows)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub family: ThresholdFamily,
    pub eta_star: f64,
    pub cost: f64,
    pub cost_stderr: f64,
    pub search_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiPoint {
    pub theta: f64,
    pub half_widths: Vec<f64>,
    pub jstar: f64,
    /// Threshold read off the VoI map (`None` if it leaves the box).
    pub eta: Option<f64>,
    pub consistency: Option<f64>,
    pub cost: f64,
    pub cost_stderr: f64,
    pub rate: f64,
    pub regulation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub theta: f64,
    pub policy: String,
    pub param: f64,
    pub j: f64,
    pub j_stderr: f64,
    pub rate: f64,
    pub regulation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepArtifact {
    pub thetas: Vec<f64>,
    pub trials: usize,
    pub horizon: usize,
    pub steps: usize,
    pub thresholds: Vec<SweepPoint>,
    pub voi: Vec<VoiPoint>,
    pub comparison: Vec<ComparisonRow>,
    pub tradeoff: Vec<crate::sim::TradeoffRow>,
}

/// Threshold searches, cost comparison and rate–regulation table over the
/// configured prices. All Monte Carlo evaluations share one seed, so every
/// candidate and every policy sees the same noise. The VoI solve at each price
/// uses a box sized from θ (`grid.half_widths` is ignored here).
pub fn cmd_sweep(ctx: &Context) -> Result<SweepArtifact> {
    let cfg = &ctx.cfg;
    let prep = prepare(cfg)?;
    let thetas = cfg.sweep.theta_values()?;
    let mut sim = cfg.sim.sim_config();
    if let Some(t) = cfg.sweep.trials {
        sim.trials = t;
    }
    let base = Plant::new(&prep.model, &prep.steady, &prep.weight)?;
    let mut thresholds = Vec::new();
    let mut voi = Vec::new();
    let mut comparison = Vec::new();
    let mut tradeoff_policies = Vec::new();
    for &theta in &thetas {
        info!("sweep θ = {theta}");
        let plant = base.with_theta(theta);
        for &family in &cfg.sweep.families {
            let upper = family.default_upper(theta, &prep.steady.sigma, &prep.weight);
            let search = search_threshold(0.0, upper, cfg.sweep.steps, |eta| {
                let run = monte_carlo(&plant, &family.policy(eta, &prep.model.a, &prep.weight), &sim)?;
                Ok((run.summary.j.mean, run.summary.j.stderr))
            })?;
            let policy = family.policy(search.eta, &prep.model.a, &prep.weight);
            let run = monte_carlo(&plant, &policy, &sim)?;
            comparison.push(comparison_row(theta, &policy, &run.summary));
            tradeoff_policies.push(policy);
            thresholds.push(SweepPoint {
                theta,
                family,
                eta_star: search.eta,
                cost: search.cost,
                cost_stderr: search.stderr,
                search_upper: upper,
            });
        }
        let greedy = Policy::greedy(theta, &prep.weight);
        let run = monte_carlo(&plant, &greedy, &sim)?;
        comparison.push(comparison_row(theta, &greedy, &run.summary));

        let half = auto_half_widths(theta, &prep.weight, &prep.steady.xi);
        let grid = Grid::new(&half, &cfg.grid.counts_for(prep.model.n())?)?;
        let stage = solve_value(cfg, &prep, theta, grid)?;
        let sol = stage.solution.into_result()?;
        let (_, est) = voi_decision_map(&sol, &stage.costs, &prep.model.a);
        let est = est.and_then(|r| r.ok());
        let rule = VoiRule::from_solution(&sol, theta, &prep.weight, cfg.solver.lookup)?;
        let policy = Policy::Voi(Box::new(rule));
        let run = monte_carlo(&plant, &policy, &sim)?;
        comparison.push(comparison_row(theta, &policy, &run.summary));
        voi.push(VoiPoint {
            theta,
            half_widths: half,
            jstar: sol.jstar,
            eta: est.as_ref().map(|e| e.eta),
            consistency: est.as_ref().map(|e| e.consistency),
            cost: run.summary.j.mean,
            cost_stderr: run.summary.j.stderr,
            rate: run.summary.rate.mean,
            regulation: run.summary.regulation.mean,
        });
    }
    for &p in &cfg.sweep.periods {
        if p == 0 {
            return Err(Error::Config("sweep.periods must be positive".into()));
        }
        tradeoff_policies.push(Policy::Periodic { period: p, phase: 0 });
    }
    let tradeoff = tradeoff_sweep(&base, &tradeoff_policies, &sim)?;

    let mut w = ctx.writer("sweep")?;
    if ctx.csv() {
        for &family in &cfg.sweep.families {
            let rows = thresholds.iter().filter(|p| p.family == family).map(|p| {
                vec![num(p.theta), num(p.eta_star), num(p.cost), num(p.cost_stderr)]
            });
            w.csv(
                &format!("threshold_sweep_{}.csv", family.name()),
                &["theta", "eta_star", "cost", "cost_stderr"],
                rows,
            )?;
        }
        let rows = voi.iter().map(|p| {
            vec![
                num(p.theta),
                p.eta.map(num).unwrap_or_default(),
                p.consistency.map(num).unwrap_or_default(),
                num(p.jstar),
                num(p.cost),
                num(p.cost_stderr),
            ]
        });
        w.csv(
            "voi_threshold.csv",
            &["theta", "eta", "consistency", "jstar", "cost", "cost_stderr"],
            rows,
        )?;
        let rows = comparison.iter().map(|r| {
            vec![
                num(r.theta),
                r.policy.clone(),
                num(r.param),
                num(r.j),
                num(r.j_stderr),
                num(r.rate),
                num(r.regulation),
            ]
        });
        w.csv(
            "cost_comparison.csv",
            &["theta", "policy", "param", "j", "j_stderr", "rate", "regulation"],
            rows,
        )?;
        let rows = tradeoff.iter().map(|r| {
            vec![
                r.policy.clone(),
                num(r.param),
                num(r.rate),
                num(r.regulation_cost),
                num(r.rate_stderr),
                num(r.regulation_stderr),
            ]
        });
        w.csv(
            "tradeoff.csv",
            &["policy", "param", "rate", "regulation_cost", "rate_stderr", "regulation_stderr"],
            rows,
        )?;
    }
    let art = SweepArtifact {
        thetas,
        trials: sim.trials,
        horizon: sim.horizon,
        steps: cfg.sweep.steps,
        thresholds,
        voi,
        comparison,
        tradeoff,
    };
    if ctx.json() {
        w.json("sweep.json", &art)?;
    }
    w.finish()?;
    Ok(art)
}

fn comparison_row(theta: f64, policy: &Policy, s: &MonteCarloSummary) -> ComparisonRow {
    ComparisonRow {
        theta,
        policy: policy.kind().name().to_string(),
        param: policy.param(),
        j: s.j.mean,
        j_stderr: s.j.stderr,
        rate: s.rate.mean,
        regulation: s.regulation.mean,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckArtifact {
    pub structure: StructureReport,
    pub stability: StabilityReport,
    pub outer_grid: Grid,
    pub passed: bool,
}

/// Structural checks on the configured value solution. The caller maps a
/// failed check to a nonzero exit status.
pub fn cmd_check(ctx: &Context) -> Result<CheckArtifact> {
    let cfg = &ctx.cfg;
    let prep = prepare(cfg)?;
    let theta = prep.model.theta;
    let stage = value_stage(ctx, &prep)?;
    let sol = &stage.solution;
    let diag = diagonalize(&prep.model.a).ok();

    let (field, est) = voi_decision_map(sol, &stage.costs, &prep.model.a);
    let continuation = ValueFunction::new(stage.grid.clone(), sol.continuation.clone())?;
    let fields = vec![
        FieldStructure::evaluate("h", &sol.h, diag.as_ref()),
        FieldStructure::evaluate("continuation", &continuation, diag.as_ref()),
        FieldStructure::evaluate("voi", &field.as_value_function(), diag.as_ref()),
    ];
    let bounds = check_bounds(&sol.h, theta, CHECK_TOL);
    let eta = match est {
        Some(Ok(e)) => Some(EtaCheck {
            eta: e.eta,
            theta,
            consistency: e.consistency,
            passed: check_eta(e.eta, theta) && e.consistency >= 0.99,
        }),
        Some(Err(e)) => {
            info!("no threshold estimate: {e}");
            Some(EtaCheck {
                eta: f64::NAN,
                theta,
                consistency: 0.0,
                passed: false,
            })
        }
        None => None,
    };

    let counts = stage.grid.counts().to_vec();
    let margin = |c: usize| cfg.check.truncation_margin.unwrap_or((c - 1) / 4);
    let outer_counts: Vec<usize> = counts.iter().map(|&c| c + 2 * margin(c)).collect();
    let outer_grid = Grid::with_cell(stage.grid.cell(), &outer_counts)?;
    let outer = solve_value(cfg, &prep, theta, outer_grid.clone())?.solution.into_result()?;
    let report = check_truncation(&outer.h, outer.jstar, &sol.h, sol.jstar)?;
    let tolerance = cfg.check.truncation_tol * theta;
    let truncation = TruncationCheck {
        passed: report.max_h_deviation <= tolerance,
        report,
        tolerance,
    };
    let structure = StructureReport::new(fields, bounds, eta, Some(truncation));

    let plant = Plant::new(&prep.model, &prep.steady, &prep.weight)?;
    let rule = VoiRule::from_solution(sol, theta, &prep.weight, cfg.solver.lookup)?;
    let half: Vec<f64> = stage.grid.upper().iter().map(|h| h * cfg.check.stability_scale).collect();
    let stability = stability_diagnostics(
        &plant,
        &prep.steady,
        &Policy::Voi(Box::new(rule)),
        &half,
        cfg.check.stability_points,
    )?;
    let art = CheckArtifact {
        passed: structure.passed && stability.passed,
        structure,
        stability,
        outer_grid,
    };
    let mut w = ctx.writer("check")?;
    w.json("structure_report.json", &art)?;
    w.finish()?;
    Ok(art)
}
