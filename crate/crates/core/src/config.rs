//! TOML run configuration shared by every subcommand.
//!
//! Every block is optional and falls back to the reference experiment. Unknown
//! keys are rejected with the offending key named.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, Mat};
use crate::mdp::{CostVariant, Grid, KernelOptions, OutOfBox, ViOptions};
use crate::model::{RiccatiOptions, SystemModel};
use crate::policy::{Lookup, Policy, PolicyKind, ThresholdFamily};
use crate::sim::SimConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub solver: SolverBlock,
    pub policy: PolicyBlock,
    pub sim: SimBlock,
    pub sweep: SweepBlock,
    pub check: CheckBlock,
    pub output: OutputBlock,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Diagonal two-axis plant with `B = 0.1·I₂`.
    #[default]
    Reference,
    /// Same plant with the single-column input `B = [0.1, 0.1]ᵀ`.
    ReferenceColumnInput,
}

/// Starts from `preset`; every matrix given here replaces the preset's.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0_cov: Option<Vec<Vec<f64>>>,
}

impl ModelBlock {
    pub fn build(&self) -> Result<SystemModel> {
        let mut m = match self.preset {
            Preset::Reference => SystemModel::reference(),
            Preset::ReferenceColumnInput => SystemModel::reference_column_input(),
        };
        let set = |name: &str, src: &Option<Vec<Vec<f64>>>, dst: &mut Mat| -> Result<()> {
            if let Some(rows) = src {
                *dst = from_rows(rows).map_err(|e| Error::Config(format!("model.{name}: {e}")))?;
            }
            Ok(())
        };
        set("a", &self.a, &mut m.a)?;
        set("b", &self.b, &mut m.b)?;
        set("c", &self.c, &mut m.c)?;
        set("w", &self.w, &mut m.w)?;
        set("v", &self.v, &mut m.v)?;
        set("q", &self.q, &mut m.q)?;
        set("r", &self.r, &mut m.r)?;
        set("x0_cov", &self.x0_cov, &mut m.x0_cov)?;
        if let Some(theta) = self.theta {
            m.theta = theta;
        }
        if let Some(x0) = &self.x0_mean {
            m.x0_mean = x0.clone();
        } else if m.x0_mean.len() != m.n() {
            m.x0_mean = vec![0.0; m.n()];
        }
        if self.x0_cov.is_none() && m.x0_cov.nrows() != m.n() {
            m.x0_cov = Mat::zeros(m.n(), m.n());
        }
        m.check_dimensions()?;
        Ok(m)
    }
}

/// Truncation box. With `auto_box` (or without `half_widths`) the box is sized
/// from θ and the noise level, see [`auto_half_widths`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_widths: Option<Vec<f64>>,
    /// Cells per axis (odd). A single entry applies to every axis.
    pub counts: Vec<usize>,
    pub auto_box: bool,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock {
            half_widths: Some(vec![0.2, 0.2]),
            counts: vec![61],
            auto_box: false,
        }
    }
}

/// Half-widths `1.5·√(θ/M_ii) + 4·√Ξ_ii`, wide enough that the transmission
/// boundary `eᵀMe ≈ θ` and a few noise standard deviations beyond it fit.
pub fn auto_half_widths(theta: f64, weight: &Mat, xi: &Mat) -> Vec<f64> {
    (0..weight.nrows())
        .map(|i| {
            let sd = xi[(i, i)].max(0.0).sqrt();
            let reach = if weight[(i, i)] > 0.0 {
                (theta / weight[(i, i)]).sqrt()
            } else {
                0.0
            };
            1.5 * reach + 4.0 * sd.max(1e-12)
        })
        .collect()
}

impl GridBlock {
    pub fn counts_for(&self, n: usize) -> Result<Vec<usize>> {
        match self.counts.len() {
            1 => Ok(vec![self.counts[0]; n]),
            k if k == n => Ok(self.counts.clone()),
            k => Err(Error::Config(format!("grid.counts has {k} entries, expected 1 or {n}"))),
        }
    }

    pub fn build(&self, theta: f64, weight: &Mat, xi: &Mat) -> Result<Grid> {
        let n = weight.nrows();
        let counts = self.counts_for(n)?;
        let half = match &self.half_widths {
            _ if self.auto_box => auto_half_widths(theta, weight, xi),
            Some(h) if h.len() == n => h.clone(),
            Some(h) => return Err(Error::Config(format!("grid.half_widths has {} entries, expected {n}", h.len()))),
            None => auto_half_widths(theta, weight, xi),
        };
        Grid::new(&half, &counts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
    pub vi_tol: f64,
    pub vi_max_iter: usize,
    pub out_of_box: OutOfBox,
    /// Kernel support in noise standard deviations.
    pub support_sigmas: f64,
    /// Use dense kernel rows even when the separable product form applies.
    pub force_dense: bool,
    pub cost_variant: CostVariant,
    pub lookup: Lookup,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let r = RiccatiOptions::default();
        let v = ViOptions::default();
        let k = KernelOptions::default();
        SolverBlock {
            riccati_tol: r.tol,
            riccati_max_iter: r.max_iter,
            vi_tol: v.tol,
            vi_max_iter: v.max_iter,
            out_of_box: k.out_of_box,
            support_sigmas: k.support_sigmas,
            force_dense: k.force_dense,
            cost_variant: CostVariant::default(),
            lookup: Lookup::default(),
        }
    }
}

impl SolverBlock {
    pub fn riccati(&self) -> RiccatiOptions {
        RiccatiOptions {
            tol: self.riccati_tol,
            max_iter: self.riccati_max_iter,
        }
    }

    pub fn vi(&self) -> ViOptions {
        ViOptions {
            tol: self.vi_tol,
            max_iter: self.vi_max_iter,
        }
    }

    pub fn kernel(&self) -> KernelOptions {
        KernelOptions {
            out_of_box: self.out_of_box,
            support_sigmas: self.support_sigmas,
            force_dense: self.force_dense,
        }
    }
}

/// Policy used by `simulate`. `eta` is required for the threshold laws,
/// `period` for the periodic law; the VoI law is built from the value solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyBlock {
    pub kind: PolicyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<u64>,
    pub phase: u64,
}

impl Default for PolicyBlock {
    fn default() -> Self {
        PolicyBlock {
            kind: PolicyKind::Voi,
            eta: None,
            period: None,
            phase: 0,
        }
    }
}

impl PolicyBlock {
    /// Every law except VoI, which needs the value solve.
    pub fn build_simple(&self, model: &SystemModel, weight: &Mat) -> Result<Policy> {
        let eta = || {
            self.eta
                .ok_or_else(|| Error::Config(format!("policy.eta is required for kind {}", self.kind.name())))
        };
        Ok(match self.kind {
            PolicyKind::Voi => {
                return Err(Error::InvalidArgument("the VoI law is built from the value solve".into()))
            }
            PolicyKind::QuadThreshold => Policy::quad_threshold(eta()?, weight),
            PolicyKind::Greedy => Policy::greedy(model.theta, weight),
            PolicyKind::NormAe => Policy::norm_ae(eta()?, &model.a),
            PolicyKind::NormE => Policy::NormE { eta: eta()? },
            PolicyKind::Periodic => {
                let period = self
                    .period
                    .ok_or_else(|| Error::Config("policy.period is required for kind periodic".into()))?;
                if period == 0 {
                    return Err(Error::Config("policy.period must be positive".into()));
                }
                Policy::Periodic {
                    period,
                    phase: self.phase,
                }
            }
            PolicyKind::Always => Policy::Always,
            PolicyKind::Never => Policy::Never,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimBlock {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub burn_in: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub containment_box: Option<Vec<f64>>,
    /// Number of leading trials whose full trace is exported.
    pub export_traces: usize,
}

impl Default for SimBlock {
    fn default() -> Self {
        let s = SimConfig::default();
        SimBlock {
            horizon: s.horizon,
            trials: s.trials,
            seed: s.seed,
            burn_in: s.burn_in,
            containment_box: None,
            export_traces: 0,
        }
    }
}

impl SimBlock {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            trials: self.trials,
            seed: self.seed,
            burn_in: self.burn_in,
            containment_box: self.containment_box.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    /// Explicit prices, ignored when `theta_range` is set.
    pub thetas: Vec<f64>,
    /// `[start, stop, points]`, uniform and inclusive.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_range: Option<(f64, f64, usize)>,
    pub families: Vec<ThresholdFamily>,
    /// Candidate thresholds per family.
    pub steps: usize,
    /// Periods of the periodic law in the tradeoff table.
    pub periods: Vec<u64>,
    /// Trials per candidate; defaults to `sim.trials`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            thetas: vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0],
            theta_range: None,
            families: vec![
                ThresholdFamily::QuadThreshold,
                ThresholdFamily::NormAe,
                ThresholdFamily::NormE,
            ],
            steps: 64,
            periods: (1..=10).collect(),
            trials: None,
        }
    }
}

impl SweepBlock {
    pub fn theta_values(&self) -> Result<Vec<f64>> {
        let thetas = match self.theta_range {
            Some((a, b, k)) => {
                if k == 0 || !(b >= a) {
                    return Err(Error::Config(format!("sweep.theta_range [{a}, {b}, {k}] is empty")));
                }
                if k == 1 {
                    vec![a]
                } else {
                    (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
                }
            }
            None => self.thetas.clone(),
        };
        if thetas.is_empty() || thetas.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Config("sweep thetas must be finite and nonnegative".into()));
        }
        Ok(thetas)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckBlock {
    /// Extra cells per side of the outer box in the truncation check
    /// (same cell size). `None` uses a quarter of the inner count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_margin: Option<usize>,
    /// Allowed `max |Δh|` as a fraction of θ.
    pub truncation_tol: f64,
    /// The drift lattice spans this multiple of the truncation box.
    pub stability_scale: f64,
    pub stability_points: usize,
}

impl Default for CheckBlock {
    fn default() -> Self {
        CheckBlock {
            truncation_margin: None,
            truncation_tol: 5e-2,
            stability_scale: 3.0,
            stability_points: 41,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: PathBuf::from("out"),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
