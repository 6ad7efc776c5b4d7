//! Plant/network instance and every quantity that can be solved offline.
//!
//! The control Riccati solution `S` and gain `L` give the certainty-equivalence
//! controller `u = −L·x̂ᶜ`. The filter Riccati fixed point `Pˢ` is the one-step
//! prior error covariance of the sender's Kalman filter; `ps_post` is the
//! matching posterior `cov(x − x̂ˢ)`. `Σ` weights the remote estimation error in
//! the LQG cost and `Ξ` is the covariance of the aggregate innovation noise that
//! drives the estimate mismatch.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    controllability_matrix, eigenvalues, inverse_or_pinv, max_abs, min_sym_eigenvalue, pbh_rank,
    psd_sqrt, rank, rows, singular_values, symmetrize, symmetry_defect, Mat,
};

/// Tolerance for symmetry / PSD checks on the noise and weight matrices.
pub const STRUCTURE_TOL: f64 = 1e-10;
/// Singular-value tolerance of the rank and PBH tests.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemModel {
    #[serde(with = "rows")]
    pub a: Mat,
    #[serde(with = "rows")]
    pub b: Mat,
    #[serde(with = "rows")]
    pub c: Mat,
    #[serde(with = "rows")]
    pub w: Mat,
    #[serde(with = "rows")]
    pub v: Mat,
    #[serde(with = "rows")]
    pub q: Mat,
    #[serde(with = "rows")]
    pub r: Mat,
    /// Unit transmission price θ.
    pub theta: f64,
    pub x0_mean: Vec<f64>,
    #[serde(with = "rows")]
    pub x0_cov: Mat,
}

impl SystemModel {
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Output dimension.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Two decoupled axes, A = diag{1.3, −1.1}, B = 0.1·I₂, C = I₂,
    /// W = V = 10⁻³·I₂, Q = R = I₂, θ = 0.2, x₀ = 0.
    ///
    /// With this B the optimal gain is diag{5.4154, −2.2606}, matching the
    /// gain values quoted for the reference experiment.
    pub fn reference() -> Self {
        let i2 = Mat::identity(2, 2);
        SystemModel {
            a: Mat::from_diagonal(&DVector::from_row_slice(&[1.3, -1.1])),
            b: &i2 * 0.1,
            c: i2.clone(),
            w: &i2 * 1e-3,
            v: &i2 * 1e-3,
            q: i2.clone(),
            r: i2.clone(),
            theta: 0.2,
            x0_mean: vec![0.0; 2],
            x0_cov: Mat::zeros(2, 2),
        }
    }

    /// Same as [`SystemModel::reference`] but with the single-column input
    /// B = [0.1, 0.1]ᵀ, which leaves R = I₂ inconsistent with m = 1.
    pub fn reference_column_input() -> Self {
        SystemModel {
            b: Mat::from_column_slice(2, 1, &[0.1, 0.1]),
            ..Self::reference()
        }
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        SystemModel {
            theta,
            ..self.clone()
        }
    }

    /// Shape checks that make every other operation well defined.
    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(Error::dim("A", format!("{n}x{n}"), shape(&self.a)));
        }
        if self.b.nrows() != n {
            return Err(Error::dim("B", format!("{n}xm"), shape(&self.b)));
        }
        if self.c.ncols() != n {
            return Err(Error::dim("C", format!("px{n}"), shape(&self.c)));
        }
        let m = self.b.ncols();
        let p = self.c.nrows();
        for (name, mat, k) in [("W", &self.w, n), ("V", &self.v, p), ("Q", &self.q, n), ("x0_cov", &self.x0_cov, n)] {
            if mat.nrows() != k || mat.ncols() != k {
                return Err(Error::dim(name, format!("{k}x{k}"), shape(mat)));
            }
        }
        if self.r.nrows() != self.r.ncols() {
            return Err(Error::dim("R", "square", shape(&self.r)));
        }
        if self.r.nrows() < m {
            return Err(Error::dim("R", format!("{m}x{m}"), shape(&self.r)));
        }
        if self.x0_mean.len() != n {
            return Err(Error::dim("x0_mean", n, self.x0_mean.len()));
        }
        if n == 0 {
            return Err(Error::dim("A", "at least 1x1", "0x0"));
        }
        Ok(())
    }

    /// Input weight restricted to the leading `m×m` block when R is too large.
    pub fn effective_r(&self) -> Mat {
        let m = self.m();
        if self.r.nrows() == m {
            self.r.clone()
        } else {
            warn!(
                "R is {}x{} but B has {} column(s); using the leading {}x{} block",
                self.r.nrows(),
                self.r.ncols(),
                m,
                m,
                m
            );
            self.r.view((0, 0), (m, m)).into_owned()
        }
    }
}

fn shape(m: &Mat) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// A violated structural assumption together with the measured quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NotControllable { rank: usize, n: usize },
    NotObservable { rank: usize, n: usize },
    NotDetectable { eigenvalue_re: f64, eigenvalue_im: f64, pbh_rank: usize },
    NotSymmetric { matrix: String, defect: f64 },
    NotPsd { matrix: String, min_eigenvalue: f64 },
    NotPd { matrix: String, min_eigenvalue: f64 },
    InputWeightDimension { expected: usize, found: usize },
    InvalidPrice { theta: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotControllable { rank, n } => {
                write!(f, "(A,B) not controllable: controllability rank {rank} < {n}")
            }
            Violation::NotObservable { rank, n } => {
                write!(f, "(A,C) not observable: observability rank {rank} < {n}")
            }
            Violation::NotDetectable { eigenvalue_re, eigenvalue_im, pbh_rank } => write!(
                f,
                "(A,Q^1/2) not detectable: mode {eigenvalue_re}{eigenvalue_im:+}i has PBH rank {pbh_rank}"
            ),
            Violation::NotSymmetric { matrix, defect } => {
                write!(f, "{matrix} not symmetric: defect {defect:.3e}")
            }
            Violation::NotPsd { matrix, min_eigenvalue } => {
                write!(f, "{matrix} not PSD: min eigenvalue {min_eigenvalue:.3e}")
            }
            Violation::NotPd { matrix, min_eigenvalue } => {
                write!(f, "{matrix} not PD: min eigenvalue {min_eigenvalue:.3e}")
            }
            Violation::InputWeightDimension { expected, found } => write!(
                f,
                "R is {found}x{found} but B has {expected} column(s); leading block will be used"
            ),
            Violation::InvalidPrice { theta } => write!(f, "transmission price {theta} is not a finite nonnegative number"),
        }
    }
}

/// Every violated assumption of the model; empty when all hold.
pub fn validate_model(model: &SystemModel) -> Result<Vec<Violation>> {
    model.check_dimensions()?;
    let n = model.n();
    let m = model.m();
    let mut out = Vec::new();

    if model.r.nrows() != m {
        out.push(Violation::InputWeightDimension {
            expected: m,
            found: model.r.nrows(),
        });
    }
    let r = model.r.view((0, 0), (m, m)).into_owned();

    if !(model.theta.is_finite() && model.theta >= 0.0) {
        out.push(Violation::InvalidPrice { theta: model.theta });
    }

    for (name, mat) in [("W", &model.w), ("V", &model.v), ("Q", &model.q), ("x0_cov", &model.x0_cov), ("R", &r)] {
        let defect = symmetry_defect(mat);
        if defect > STRUCTURE_TOL {
            out.push(Violation::NotSymmetric {
                matrix: name.to_string(),
                defect,
            });
        }
        let min_eig = min_sym_eigenvalue(mat);
        if name == "R" {
            if min_eig <= STRUCTURE_TOL {
                out.push(Violation::NotPd {
                    matrix: name.to_string(),
                    min_eigenvalue: min_eig,
                });
            }
        } else if min_eig < -STRUCTURE_TOL {
            out.push(Violation::NotPsd {
                matrix: name.to_string(),
                min_eigenvalue: min_eig,
            });
        }
    }

    let ctrb_rank = rank(&controllability_matrix(&model.a, &model.b), RANK_TOL);
    if ctrb_rank < n {
        out.push(Violation::NotControllable { rank: ctrb_rank, n });
    }
    let obsv_rank = rank(
        &controllability_matrix(&model.a.transpose(), &model.c.transpose()),
        RANK_TOL,
    );
    if obsv_rank < n {
        out.push(Violation::NotObservable { rank: obsv_rank, n });
    }

    let q_half = psd_sqrt(&model.q);
    for lambda in eigenvalues(&model.a) {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let r = pbh_rank(&model.a, &q_half, lambda, RANK_TOL);
        if r < n {
            out.push(Violation::NotDetectable {
                eigenvalue_re: lambda.re,
                eigenvalue_im: lambda.im,
                pbh_rank: r,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiOptions {
    /// Stop when successive iterates differ by less than `tol·max(1, ‖S‖_max)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ControlRiccati {
    pub s: Mat,
    /// Positive-form gain; the controller applies `u = −L·x̂`.
    pub l: Mat,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct FilterRiccati {
    /// Prior (one-step predicted) error covariance, the Riccati fixed point.
    pub ps: Mat,
    /// Posterior error covariance `(I − KC)·Pˢ`.
    pub ps_post: Mat,
    pub k: Mat,
    pub residual: f64,
    pub iterations: usize,
}

fn control_riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: &Mat) -> Mat {
    let bts = b.transpose() * s;
    let inner = r + &bts * b;
    let correction = bts.transpose() * inverse_or_pinv(&inner) * &bts;
    symmetrize(&(q + a.transpose() * (s - correction) * a))
}

/// Riccati residual `‖Q + Aᵀ(S − SB(R+BᵀSB)⁻¹BᵀS)A − S‖_max`.
pub fn control_riccati_residual(a: &Mat, b: &Mat, q: &Mat, r: &Mat, s: &Mat) -> f64 {
    max_abs(&(control_riccati_map(a, b, q, r, s) - s))
}

/// Fixed-point iteration of the control Riccati map from `S₀ = Q`.
pub fn control_riccati_fixed_point(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    opts: RiccatiOptions,
) -> Result<ControlRiccati> {
    let mut s = symmetrize(q);
    let mut diff = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = control_riccati_map(a, b, q, r, &s);
        diff = max_abs(&(&next - &s));
        s = next;
        if !diff.is_finite() {
            break;
        }
        if diff <= opts.tol * max_abs(&s).max(1.0) {
            let bts = b.transpose() * &s;
            let l = inverse_or_pinv(&(r + &bts * b)) * &bts * a;
            return Ok(ControlRiccati {
                residual: control_riccati_residual(a, b, q, r, &s),
                s,
                l,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "control Riccati",
        iterations: opts.max_iter,
        residual: diff,
    })
}

pub fn solve_control_riccati(model: &SystemModel, opts: RiccatiOptions) -> Result<ControlRiccati> {
    model.check_dimensions()?;
    control_riccati_fixed_point(&model.a, &model.b, &model.q, &model.effective_r(), opts)
}

fn filter_update(a: &Mat, c: &Mat, w: &Mat, v: &Mat, p: &Mat) -> (Mat, Mat, Mat) {
    let innovation = c * p * c.transpose() + v;
    let k = p * c.transpose() * inverse_or_pinv(&innovation);
    let post = symmetrize(&(p - &k * c * p));
    let next = symmetrize(&(a * &post * a.transpose() + w));
    (next, post, k)
}

pub fn filter_riccati_residual(a: &Mat, c: &Mat, w: &Mat, v: &Mat, p: &Mat) -> f64 {
    max_abs(&(filter_update(a, c, w, v, p).0 - p))
}

/// Predict/update covariance recursion from `P₀ = W` until it settles.
pub fn solve_filter_riccati(model: &SystemModel, opts: RiccatiOptions) -> Result<FilterRiccati> {
    model.check_dimensions()?;
    let (a, c, w, v) = (&model.a, &model.c, &model.w, &model.v);
    let mut p = symmetrize(w);
    let mut diff = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let (next, _, _) = filter_update(a, c, w, v, &p);
        diff = max_abs(&(&next - &p));
        p = next;
        if !diff.is_finite() {
            break;
        }
        if diff <= opts.tol * max_abs(&p).max(1.0) {
            let (_, post, k) = filter_update(a, c, w, v, &p);
            return Ok(FilterRiccati {
                residual: filter_riccati_residual(a, c, w, v, &p),
                ps: p,
                ps_post: post,
                k,
                iterations: it,
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "filter Riccati",
        iterations: opts.max_iter,
        residual: diff,
    })
}

/// Cost-of-information matrix `Σ = AᵀSB(R + BᵀSB)⁻¹BᵀSA`, i.e. `Lᵀ(R + BᵀSB)L`.
///
/// This is the weight of the remote estimation error in the LQG cost; the
/// mismatch penalty is `eᵀAᵀΣAe` because the remote error one step later
/// carries `A·e`.
pub fn compute_sigma(model: &SystemModel, s: &Mat) -> Mat {
    let r = model.effective_r();
    let bts = model.b.transpose() * s;
    let inner = &r + &bts * &model.b;
    let sba = &bts * &model.a;
    symmetrize(&(sba.transpose() * inverse_or_pinv(&inner) * sba))
}

/// Covariance of `ξ = KC(A·êˢ + w) + K·v'`, `Ξ = K(C(A P⁺ Aᵀ + W)Cᵀ + V)Kᵀ`
/// with `P⁺` the posterior filter covariance.
pub fn compute_xi_cov(model: &SystemModel, ps_post: &Mat, k: &Mat) -> Mat {
    let prop = &model.a * ps_post * model.a.transpose() + &model.w;
    let inner = &model.c * prop * model.c.transpose() + &model.v;
    symmetrize(&(k * inner * k.transpose()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteadyState {
    #[serde(with = "rows")]
    pub s: Mat,
    #[serde(with = "rows")]
    pub l: Mat,
    #[serde(with = "rows")]
    pub ps: Mat,
    #[serde(with = "rows")]
    pub ps_post: Mat,
    #[serde(with = "rows")]
    pub k: Mat,
    #[serde(with = "rows")]
    pub sigma: Mat,
    #[serde(with = "rows")]
    pub xi: Mat,
    pub residuals: BTreeMap<String, f64>,
}

impl SteadyState {
    /// `AᵀΣA`, the quadratic weight of the no-transmission stage cost.
    pub fn mismatch_weight(&self, a: &Mat) -> Mat {
        symmetrize(&(a.transpose() * &self.sigma * a))
    }
}

pub fn solve_steady_state(model: &SystemModel, opts: RiccatiOptions) -> Result<SteadyState> {
    let ctrl = solve_control_riccati(model, opts)?;
    let filt = solve_filter_riccati(model, opts)?;
    let sigma = compute_sigma(model, &ctrl.s);
    let xi = compute_xi_cov(model, &filt.ps_post, &filt.k);
    let mut residuals = BTreeMap::new();
    residuals.insert("control_riccati".to_string(), ctrl.residual);
    residuals.insert("filter_riccati".to_string(), filt.residual);
    Ok(SteadyState {
        s: ctrl.s,
        l: ctrl.l,
        ps: filt.ps,
        ps_post: filt.ps_post,
        k: filt.k,
        sigma,
        xi,
        residuals,
    })
}

/// Real eigendecomposition `A = U·Λ·U⁻¹` with eigenvalues sorted descending.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagonalizedModel {
    #[serde(with = "rows")]
    pub u: Mat,
    #[serde(with = "rows")]
    pub lambda: Mat,
    #[serde(with = "rows")]
    pub u_inv: Mat,
    /// Covariance of `ζ = U⁻¹ξ`; zero until [`DiagonalizedModel::with_noise`].
    #[serde(with = "rows")]
    pub zeta_cov: Mat,
}

impl DiagonalizedModel {
    pub fn with_noise(mut self, xi: &Mat) -> Self {
        self.zeta_cov = symmetrize(&(&self.u_inv * xi * self.u_inv.transpose()));
        self
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.lambda.diagonal().iter().copied().collect()
    }

    pub fn reconstruction_residual(&self, a: &Mat) -> f64 {
        max_abs(&(&self.u * &self.lambda * &self.u_inv - a))
    }

    /// True when `U` is a signed permutation, so the e-lattice is the s-lattice.
    pub fn is_axis_aligned(&self) -> bool {
        self.u.column_iter().all(|col| {
            let big = col.iter().filter(|v| v.abs() > 1e-12).count();
            big == 1
        })
    }
}

pub fn diagonalize(a: &Mat) -> Result<DiagonalizedModel> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(Error::dim("A", "square", shape(a)));
    }
    let scale = 1.0 + max_abs(a);
    let mut vals = Vec::with_capacity(n);
    for ev in eigenvalues(a) {
        if ev.im.abs() > 1e-9 * scale {
            return Err(Error::NotDiagonalizable(format!(
                "complex eigenvalue {}{:+}i",
                ev.re, ev.im
            )));
        }
        vals.push(ev.re);
    }
    vals.sort_by(|x, y| y.total_cmp(x));

    let mut columns: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (vals[j] - vals[i]).abs() <= 1e-8 * scale {
            j += 1;
        }
        let mult = j - i;
        let lambda = vals[i..j].iter().sum::<f64>() / mult as f64;
        let shifted = a - Mat::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]));
        let basis: Vec<DVector<f64>> = order[..mult]
            .iter()
            .map(|&k| v_t.row(k).transpose().into_owned())
            .collect();
        let worst = order[..mult]
            .iter()
            .map(|&k| svd.singular_values[k])
            .fold(0.0_f64, f64::max);
        if worst > 1e-6 * scale {
            return Err(Error::NotDiagonalizable(format!(
                "eigenvalue {lambda} has geometric multiplicity below {mult} (residual singular value {worst:.3e})"
            )));
        }
        for v in canonical_basis(&basis, n) {
            columns.push(v);
            diag.push(lambda);
        }
        i = j;
    }

    let u = Mat::from_columns(&columns);
    let u_inv = u
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotDiagonalizable("eigenvector matrix is singular".into()))?;
    let out = DiagonalizedModel {
        lambda: Mat::from_diagonal(&DVector::from_vec(diag)),
        u,
        u_inv,
        zeta_cov: Mat::zeros(n, n),
    };
    let resid = out.reconstruction_residual(a);
    if resid > 1e-8 * scale {
        return Err(Error::NotDiagonalizable(format!(
            "reconstruction residual {resid:.3e}"
        )));
    }
    Ok(out)
}

/// Deterministic orthonormal basis of span(`basis`): Gram–Schmidt on the
/// projections of the standard basis vectors, then sign-normalized so the
/// largest-magnitude entry is positive.
fn canonical_basis(basis: &[DVector<f64>], n: usize) -> Vec<DVector<f64>> {
    let want = basis.len();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(want);
    if want == 1 {
        out.push(basis[0].normalize());
    } else {
        let mut proj = Mat::zeros(n, n);
        for b in basis {
            proj += b * b.transpose();
        }
        for j in 0..n {
            if out.len() == want {
                break;
            }
            let mut v = proj.column(j).into_owned();
            for o in &out {
                let d = o.dot(&v);
                v -= o * d;
            }
            let norm = v.norm();
            if norm > 1e-8 {
                out.push(v / norm);
            }
        }
    }
    for v in &mut out {
        let mut best = 0;
        for k in 0..n {
            if v[k].abs() > v[best].abs() * (1.0 + 1e-12) {
                best = k;
            }
        }
        if v[best] < 0.0 {
            *v = -v.clone();
        }
    }
    out
}

/// Smallest singular value of the controllability matrix (diagnostic).
pub fn controllability_margin(model: &SystemModel) -> f64 {
    singular_values(&controllability_matrix(&model.a, &model.b))
        .last()
        .copied()
        .unwrap_or(0.0)
}
