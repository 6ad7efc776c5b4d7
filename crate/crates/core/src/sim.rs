//! Closed-loop simulation of plant, Kalman sender, one-step-delay channel,
//! remote estimator and certainty-equivalence controller.
//!
//! Conventions per step `k`:
//! `e_k = x̂ˢ_k − x̂ᶜ_k`, `δ_k = γ(e_k, k)`, `u_k = −L·x̂ᶜ_k`,
//! `x_{k+1} = A x_k + B u_k + w_k`, `y_{k+1} = C x_{k+1} + v_{k+1}`,
//! `x̂ˢ_{k+1} = A x̂ˢ_k + B u_k + K(y_{k+1} − C(A x̂ˢ_k + B u_k))`,
//! `x̂ᶜ_{k+1} = A x̂ᶜ_k + B u_k + δ_k·A e_k`.
//! With this sign `e_{k+1} = (1 − δ_k)·A e_k + ξ_k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance_factor, mat_vec, mat_vec_add, norm_sq, quad_form, row_major, Mat};
use crate::model::{SteadyState, SystemModel};
use crate::policy::Policy;

/// States beyond this magnitude count as a diverged episode.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Leading steps excluded from the time averages.
    pub burn_in: usize,
    /// Half-widths of the box used for the containment fraction of `e_k`.
    pub containment_box: Option<Vec<f64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 1000,
            trials: 2000,
            seed: 0,
            burn_in: 0,
            containment_box: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.trials == 0 {
            return Err(Error::InvalidArgument("horizon and trials must be at least 1".into()));
        }
        if self.burn_in >= self.horizon {
            return Err(Error::InvalidArgument("burn_in must be below the horizon".into()));
        }
        Ok(())
    }
}

/// Flattened system data used by the simulation loop.
#[derive(Clone, Debug)]
pub struct Plant {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    k: Vec<f64>,
    l: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
    w_factor: Vec<f64>,
    v_factor: Vec<f64>,
    x0_mean: Vec<f64>,
    x0_factor: Vec<f64>,
    /// Holding-cost weight of the stage cost (`AᵀΣA` by default).
    weight: Vec<f64>,
    pub theta: f64,
}

impl Plant {
    pub fn new(model: &SystemModel, steady: &SteadyState, weight: &Mat) -> Result<Plant> {
        model.check_dimensions()?;
        let n = model.n();
        if weight.nrows() != n || weight.ncols() != n {
            return Err(Error::dim("stage cost weight", n, weight.nrows()));
        }
        Ok(Plant {
            n,
            m: model.m(),
            p: model.p(),
            a: row_major(&model.a),
            b: row_major(&model.b),
            c: row_major(&model.c),
            k: row_major(&steady.k),
            l: row_major(&steady.l),
            q: row_major(&model.q),
            r: row_major(&model.effective_r()),
            w_factor: row_major(&covariance_factor(&model.w)),
            v_factor: row_major(&covariance_factor(&model.v)),
            x0_mean: model.x0_mean.clone(),
            x0_factor: row_major(&covariance_factor(&model.x0_cov)),
            weight: row_major(weight),
            theta: model.theta,
        })
    }

    pub fn with_theta(&self, theta: f64) -> Plant {
        Plant {
            theta,
            ..self.clone()
        }
    }

    pub fn hold_cost(&self, e: &[f64]) -> f64 {
        quad_form(&self.weight, e)
    }
}

/// Full record of one episode. State-like sequences hold `T + 1` entries
/// (`k = 0..=T`), per-step sequences `T` entries. Vectors are stored flat.
#[derive(Clone, Debug, Default)]
pub struct EpisodeTrace {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub x: Vec<f64>,
    pub xs: Vec<f64>,
    pub xc: Vec<f64>,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    pub delta: Vec<bool>,
    pub g: Vec<f64>,
    /// Process noise `w_k`.
    pub w: Vec<f64>,
    /// Measurement noise `v_{k+1}`.
    pub v: Vec<f64>,
}

impl EpisodeTrace {
    pub fn steps(&self) -> usize {
        self.delta.len()
    }

    pub fn at<'a>(&self, seq: &'a [f64], dim: usize, k: usize) -> &'a [f64] {
        &seq[k * dim..(k + 1) * dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Time average of the stage cost `θδ + (1 − δ)·eᵀMe`.
    pub j: f64,
    /// Time average of `eᵀMe`.
    pub regulation: f64,
    pub rate: f64,
    /// Time average of `xᵀQx + uᵀRu + θδ`.
    pub psi: f64,
    pub max_e_norm: f64,
    pub contained_fraction: f64,
    pub diverged: bool,
}

struct Workspace {
    x: Vec<f64>,
    xs: Vec<f64>,
    xc: Vec<f64>,
    e: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
    v: Vec<f64>,
    z: Vec<f64>,
    tmp: Vec<f64>,
    pred: Vec<f64>,
    innov: Vec<f64>,
}

fn draw(rng: &mut ChaCha8Rng, factor: &[f64], z: &mut [f64], out: &mut [f64]) {
    for zi in z.iter_mut() {
        *zi = StandardNormal.sample(rng);
    }
    mat_vec(factor, z, out);
}

/// Random stream for `trial` under master seed `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Runs one episode; fills `trace` when given.
pub fn run_episode(
    plant: &Plant,
    policy: &Policy,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    mut trace: Option<&mut EpisodeTrace>,
) -> EpisodeMetrics {
    let (n, m, p) = (plant.n, plant.m, plant.p);
    let mut ws = Workspace {
        x: vec![0.0; n],
        xs: plant.x0_mean.clone(),
        xc: plant.x0_mean.clone(),
        e: vec![0.0; n],
        u: vec![0.0; m],
        w: vec![0.0; n],
        v: vec![0.0; p],
        z: vec![0.0; n.max(p)],
        tmp: vec![0.0; n],
        pred: vec![0.0; n],
        innov: vec![0.0; p],
    };
    draw(rng, &plant.x0_factor, &mut ws.z[..n], &mut ws.x);
    for (x, mu) in ws.x.iter_mut().zip(&plant.x0_mean) {
        *x += mu;
    }
    if let Some(t) = trace.as_deref_mut() {
        *t = EpisodeTrace {
            n,
            m,
            p,
            ..Default::default()
        };
    }

    let contain = cfg.containment_box.as_deref();
    let (mut sum_g, mut sum_q, mut sum_d, mut sum_psi) = (0.0, 0.0, 0usize, 0.0);
    let mut contained = 0usize;
    let mut max_e: f64 = 0.0;
    let mut diverged = false;
    for k in 0..cfg.horizon {
        for i in 0..n {
            ws.e[i] = ws.xs[i] - ws.xc[i];
        }
        let delta = policy.decide(&ws.e, k as u64);
        mat_vec(&plant.l, &ws.xc, &mut ws.u);
        ws.u.iter_mut().for_each(|v| *v = -*v);
        let q = quad_form(&plant.weight, &ws.e);
        let g = if delta { plant.theta } else { q };

        let e_norm = norm_sq(&ws.e).sqrt();
        max_e = max_e.max(e_norm);
        if k >= cfg.burn_in {
            sum_g += g;
            sum_q += q;
            sum_d += usize::from(delta);
            sum_psi += quad_form(&plant.q, &ws.x) + quad_form(&plant.r, &ws.u) + if delta { plant.theta } else { 0.0 };
            if let Some(bx) = contain {
                contained += usize::from(ws.e.iter().zip(bx).all(|(v, b)| v.abs() <= *b));
            }
        }

        draw(rng, &plant.w_factor, &mut ws.z[..n], &mut ws.w);
        draw(rng, &plant.v_factor, &mut ws.z[..p], &mut ws.v);

        if let Some(t) = trace.as_deref_mut() {
            t.x.extend_from_slice(&ws.x);
            t.xs.extend_from_slice(&ws.xs);
            t.xc.extend_from_slice(&ws.xc);
            t.e.extend_from_slice(&ws.e);
            t.u.extend_from_slice(&ws.u);
            t.delta.push(delta);
            t.g.push(g);
            t.w.extend_from_slice(&ws.w);
            t.v.extend_from_slice(&ws.v);
        }

        // Plant.
        mat_vec(&plant.a, &ws.x, &mut ws.tmp);
        mat_vec_add(&plant.b, &ws.u, &mut ws.tmp);
        for i in 0..n {
            ws.x[i] = ws.tmp[i] + ws.w[i];
        }
        // Sender: predict, then correct with y_{k+1}.
        mat_vec(&plant.a, &ws.xs, &mut ws.pred);
        mat_vec_add(&plant.b, &ws.u, &mut ws.pred);
        mat_vec(&plant.c, &ws.x, &mut ws.innov);
        for j in 0..p {
            ws.innov[j] += ws.v[j];
        }
        // innov = y − C·pred
        for j in 0..p {
            let row = &plant.c[j * n..(j + 1) * n];
            ws.innov[j] -= row.iter().zip(&ws.pred).map(|(a, b)| a * b).sum::<f64>();
        }
        ws.xs.copy_from_slice(&ws.pred);
        mat_vec_add(&plant.k, &ws.innov, &mut ws.xs);
        // Remote estimator.
        mat_vec(&plant.a, &ws.xc, &mut ws.tmp);
        mat_vec_add(&plant.b, &ws.u, &mut ws.tmp);
        if delta {
            mat_vec_add(&plant.a, &ws.e, &mut ws.tmp);
        }
        ws.xc.copy_from_slice(&ws.tmp);

        if ws.x.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            diverged = true;
            break;
        }
    }
    if let Some(t) = trace.as_deref_mut() {
        for i in 0..n {
            ws.e[i] = ws.xs[i] - ws.xc[i];
        }
        t.x.extend_from_slice(&ws.x);
        t.xs.extend_from_slice(&ws.xs);
        t.xc.extend_from_slice(&ws.xc);
        t.e.extend_from_slice(&ws.e);
    }
    if diverged {
        return EpisodeMetrics {
            j: f64::INFINITY,
            regulation: f64::INFINITY,
            rate: sum_d as f64 / (cfg.horizon - cfg.burn_in) as f64,
            psi: f64::INFINITY,
            max_e_norm: f64::INFINITY,
            contained_fraction: 0.0,
            diverged,
        };
    }
    let steps = (cfg.horizon - cfg.burn_in) as f64;
    EpisodeMetrics {
        j: sum_g / steps,
        regulation: sum_q / steps,
        rate: sum_d as f64 / steps,
        psi: sum_psi / steps,
        max_e_norm: max_e,
        contained_fraction: if contain.is_some() { contained as f64 / steps } else { f64::NAN },
        diverged,
    }
}

pub fn simulate_episode(plant: &Plant, policy: &Policy, cfg: &SimConfig, trial: u64) -> (EpisodeTrace, EpisodeMetrics) {
    let mut rng = trial_rng(cfg.seed, trial);
    let mut trace = EpisodeTrace::default();
    let metrics = run_episode(plant, policy, cfg, &mut rng, Some(&mut trace));
    (trace, metrics)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl Stat {
    /// Sample statistics accumulated in slice order.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Stat {
            mean,
            std: var.sqrt(),
            stderr: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub policy: String,
    pub param: Option<f64>,
    pub theta: f64,
    pub trials: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub j: Stat,
    pub regulation: Stat,
    pub rate: Stat,
    pub psi: Stat,
    pub max_e_norm: f64,
    pub contained_fraction: Option<f64>,
    pub diverged: usize,
}

pub struct MonteCarloRun {
    pub summary: MonteCarloSummary,
    pub trials: Vec<EpisodeMetrics>,
}

/// Independent trials on streams `0..trials` of `cfg.seed`, run in parallel and
/// reduced in trial order.
pub fn monte_carlo(plant: &Plant, policy: &Policy, cfg: &SimConfig) -> Result<MonteCarloRun> {
    cfg.validate()?;
    let trials: Vec<EpisodeMetrics> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(cfg.seed, t);
            run_episode(plant, policy, cfg, &mut rng, None)
        })
        .collect();
    let col = |f: fn(&EpisodeMetrics) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
    let param = policy.param();
    let summary = MonteCarloSummary {
        policy: policy.kind().name().to_string(),
        param: param.is_finite().then_some(param),
        theta: plant.theta,
        trials: cfg.trials,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
        j: Stat::of(&col(|m| m.j)),
        regulation: Stat::of(&col(|m| m.regulation)),
        rate: Stat::of(&col(|m| m.rate)),
        psi: Stat::of(&col(|m| m.psi)),
        max_e_norm: trials.iter().map(|m| m.max_e_norm).fold(0.0, f64::max),
        contained_fraction: cfg
            .containment_box
            .as_ref()
            .map(|_| Stat::of(&col(|m| m.contained_fraction)).mean),
        diverged: trials.iter().filter(|m| m.diverged).count(),
    };
    Ok(MonteCarloRun { summary, trials })
}

/// Closed-form long-run LQG cost under the optimal schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageCost {
    /// `tr(S·W)`
    pub control: f64,
    /// `tr(AᵀΣA·P⁺)` with `P⁺` the posterior filter covariance.
    pub filtering: f64,
    /// `tr(Σ·W)`
    pub disturbance: f64,
    /// `E[h(ξ)]`, the optimal average scheduling cost.
    pub scheduling: f64,
    pub total: f64,
}

pub fn theoretical_average_cost(model: &SystemModel, steady: &SteadyState, eh: f64) -> AverageCost {
    let control = (&steady.s * &model.w).trace();
    let filtering = (steady.mismatch_weight(&model.a) * &steady.ps_post).trace();
    let disturbance = (&steady.sigma * &model.w).trace();
    AverageCost {
        control,
        filtering,
        disturbance,
        scheduling: eh,
        total: control + filtering + disturbance + eh,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub policy: String,
    pub param: f64,
    pub rate: f64,
    pub regulation_cost: f64,
    pub rate_stderr: f64,
    pub regulation_stderr: f64,
}

/// One Monte Carlo run per policy, all on the same random streams.
pub fn tradeoff_sweep(plant: &Plant, policies: &[Policy], cfg: &SimConfig) -> Result<Vec<TradeoffRow>> {
    policies
        .iter()
        .map(|p| {
            let run = monte_carlo(plant, p, cfg)?;
            Ok(TradeoffRow {
                policy: p.kind().name().to_string(),
                param: p.param(),
                rate: run.summary.rate.mean,
                regulation_cost: run.summary.regulation.mean,
                rate_stderr: run.summary.rate.stderr,
                regulation_stderr: run.summary.regulation.stderr,
            })
        })
        .collect()
}

/// Residuals of the mismatch and remote-error recursions on a trace, each
/// divided by `1 + ‖(x_k, x̂ˢ_k, x̂ᶜ_k)‖_∞` so diverging traces stay comparable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceResiduals {
    /// `max |e_{k+1} − (1−δ_k)A e_k − ξ_k|` with `ξ_k = KC(A êˢ_k + w_k) + K v_{k+1}`.
    pub mismatch: f64,
    /// `max |êᶜ_{k+1} − (A êᶜ_k − δ_k A e_k + w_k)|`.
    pub remote_error: f64,
    /// `max |e_k − (x̂ˢ_k − x̂ᶜ_k)|`.
    pub definition: f64,
}

/// `ξ_k = KC(A êˢ_k + w_k) + K v_{k+1}` from the raw quantities of a trace.
pub fn reconstruct_xi(plant: &Plant, trace: &EpisodeTrace, k: usize, out: &mut [f64]) {
    let (n, p) = (plant.n, plant.p);
    let x = trace.at(&trace.x, n, k);
    let xs = trace.at(&trace.xs, n, k);
    let w = trace.at(&trace.w, n, k);
    let v = trace.at(&trace.v, p, k);
    let es: Vec<f64> = x.iter().zip(xs).map(|(a, b)| a - b).collect();
    let mut t = vec![0.0; n];
    mat_vec(&plant.a, &es, &mut t);
    for i in 0..n {
        t[i] += w[i];
    }
    let mut y = vec![0.0; p];
    mat_vec(&plant.c, &t, &mut y);
    for j in 0..p {
        y[j] += v[j];
    }
    mat_vec(&plant.k, &y, out);
}

pub fn trace_residuals(plant: &Plant, trace: &EpisodeTrace) -> TraceResiduals {
    let n = plant.n;
    let mut res = TraceResiduals {
        mismatch: 0.0,
        remote_error: 0.0,
        definition: 0.0,
    };
    let mut xi = vec![0.0; n];
    let mut ae = vec![0.0; n];
    let mut aec = vec![0.0; n];
    for k in 0..=trace.steps() {
        let e = trace.at(&trace.e, n, k);
        let xs = trace.at(&trace.xs, n, k);
        let xc = trace.at(&trace.xc, n, k);
        for i in 0..n {
            res.definition = res.definition.max((e[i] - (xs[i] - xc[i])).abs());
        }
    }
    let scale = |k: usize| {
        1.0 + [&trace.x, &trace.xs, &trace.xc]
            .iter()
            .flat_map(|s| trace.at(s, n, k).iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    };
    for k in 0..trace.steps() {
        let d = trace.delta[k];
        let sc = scale(k).max(scale(k + 1));
        let e = trace.at(&trace.e, n, k);
        let e1 = trace.at(&trace.e, n, k + 1);
        reconstruct_xi(plant, trace, k, &mut xi);
        mat_vec(&plant.a, e, &mut ae);
        for i in 0..n {
            let pred = if d { 0.0 } else { ae[i] } + xi[i];
            res.mismatch = res.mismatch.max((e1[i] - pred).abs() / sc);
        }
        let ec: Vec<f64> = (0..n)
            .map(|i| trace.at(&trace.x, n, k)[i] - trace.at(&trace.xc, n, k)[i])
            .collect();
        let ec1: Vec<f64> = (0..n)
            .map(|i| trace.at(&trace.x, n, k + 1)[i] - trace.at(&trace.xc, n, k + 1)[i])
            .collect();
        mat_vec(&plant.a, &ec, &mut aec);
        let w = trace.at(&trace.w, n, k);
        for i in 0..n {
            let pred = aec[i] - if d { ae[i] } else { 0.0 } + w[i];
            res.remote_error = res.remote_error.max((ec1[i] - pred).abs() / sc);
        }
    }
    res
}

/// Empirical covariance of `ξ` and its entrywise standard errors.
#[derive(Clone, Debug)]
pub struct XiEstimate {
    pub samples: usize,
    pub cov: Mat,
    pub stderr: Mat,
}

/// Collects `ξ_k` from traces of `trials × horizon` steps and estimates `E[ξξᵀ]`.
pub fn empirical_xi(plant: &Plant, policy: &Policy, cfg: &SimConfig) -> Result<XiEstimate> {
    cfg.validate()?;
    let n = plant.n;
    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let (trace, _) = simulate_episode(plant, policy, cfg, t);
            let mut s1 = vec![0.0; n * n];
            let mut s2 = vec![0.0; n * n];
            let mut xi = vec![0.0; n];
            for k in cfg.burn_in..trace.steps() {
                reconstruct_xi(plant, &trace, k, &mut xi);
                for i in 0..n {
                    for j in 0..n {
                        let v = xi[i] * xi[j];
                        s1[i * n + j] += v;
                        s2[i * n + j] += v * v;
                    }
                }
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = vec![0.0; n * n];
    let mut s2 = vec![0.0; n * n];
    for (a, b) in &per_trial {
        for i in 0..n * n {
            s1[i] += a[i];
            s2[i] += b[i];
        }
    }
    let samples = cfg.trials * (cfg.horizon - cfg.burn_in);
    let ns = samples as f64;
    let cov = Mat::from_fn(n, n, |i, j| s1[i * n + j] / ns);
    let stderr = Mat::from_fn(n, n, |i, j| {
        let mean = s1[i * n + j] / ns;
        let var = (s2[i * n + j] / ns - mean * mean).max(0.0) * ns / (ns - 1.0);
        (var / ns).sqrt()
    });
    Ok(XiEstimate { samples, cov, stderr })
}

/// Foster–Lyapunov drift of `V(e) = ‖e‖²` on a lattice of mismatch states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub lattice_states: usize,
    /// States outside `M ∪ D` where the drift condition is asserted.
    pub checked_states: usize,
    pub violations: usize,
    /// Largest drift among checked states (`None` when nothing is checked).
    pub worst_drift: Option<f64>,
    /// Radius² of `D = {‖e‖² ≤ √(tr Ξ + 1)}`.
    pub d_radius_sq: f64,
    /// `M = {eᵀMe ≤ 2θ}`.
    pub m_level: f64,
    pub passed: bool,
}

/// Analytic drift `E[‖e⁺‖²] − ‖e‖²`: `tr Ξ − ‖e‖²` when transmitting,
/// `‖Ae‖² + tr Ξ − ‖e‖²` otherwise.
pub fn drift(e: &[f64], transmit: bool, a: &[f64], trace_xi: f64) -> f64 {
    let e2 = norm_sq(e);
    if transmit {
        trace_xi - e2
    } else {
        let mut ae = vec![0.0; e.len()];
        mat_vec(a, e, &mut ae);
        norm_sq(&ae) + trace_xi - e2
    }
}

/// Evaluates the drift on a `per_axis^n` lattice spanning `±half` under the
/// decisions of `policy` and checks it is below −1 outside `M ∪ D`.
pub fn stability_diagnostics(
    plant: &Plant,
    steady: &SteadyState,
    policy: &Policy,
    half: &[f64],
    per_axis: usize,
) -> Result<StabilityReport> {
    let n = plant.n;
    if half.len() != n || per_axis < 2 {
        return Err(Error::InvalidArgument("stability lattice needs n half-widths and ≥ 2 points".into()));
    }
    let trace_xi = steady.xi.trace();
    let d_radius_sq = (trace_xi + 1.0).sqrt();
    let m_level = 2.0 * plant.theta;
    let total = per_axis.pow(n as u32);
    let mut e = vec![0.0; n];
    let (mut checked, mut violations) = (0, 0);
    let mut worst: Option<f64> = None;
    for flat in 0..total {
        let mut rest = flat;
        for i in (0..n).rev() {
            let idx = rest % per_axis;
            rest /= per_axis;
            e[i] = -half[i] + 2.0 * half[i] * idx as f64 / (per_axis - 1) as f64;
        }
        if plant.hold_cost(&e) <= m_level || norm_sq(&e) <= d_radius_sq {
            continue;
        }
        checked += 1;
        let d = drift(&e, policy.decide(&e, 0), &plant.a, trace_xi);
        worst = Some(worst.map_or(d, |w: f64| w.max(d)));
        if !(d < -1.0) {
            violations += 1;
        }
    }
    Ok(StabilityReport {
        lattice_states: total,
        checked_states: checked,
        violations,
        worst_drift: worst,
        d_radius_sq,
        m_level,
        passed: violations == 0,
    })
}
