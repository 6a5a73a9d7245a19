//! Levenberg-Marquardt least squares with smooth box-bound transforms, and
//! the three analysis models: Voigt PLE with a pinned Lorentzian width,
//! g2 with uncorrelated background, and the plateau exponential used for
//! linewidth narrowing.

use crate::error::{require_positive, Error, Result};
use crate::spectral::{
    estimate_fwhm, gaussian_density, lorentzian_density, voigt_density,
};
use crate::tls::{self, TlsParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Measured samples `y(x)` with optional per-point uncertainties.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSeries {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl DataSeries {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let d = DataSeries { x, y, sigma: None };
        d.validate(0)?;
        Ok(d)
    }

    pub fn with_sigma(x: Vec<f64>, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let d = DataSeries {
            x,
            y,
            sigma: Some(sigma),
        };
        d.validate(0)?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Checks lengths, finiteness and that there are more points than `free`
    /// parameters.
    pub fn validate(&self, free: usize) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::invalid("y", "length differs from x"));
        }
        if self.x.len() < free + 1 {
            return Err(Error::invalid(
                "data",
                format!("{} points cannot constrain {} parameters", self.x.len(), free),
            ));
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("data", "contains non-finite values"));
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.x.len() {
                return Err(Error::invalid("sigma", "length differs from x"));
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("sigma", "uncertainties must be > 0"));
            }
        }
        Ok(())
    }

    fn argmax(&self) -> usize {
        self.y
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    fn y_range(&self) -> (f64, f64) {
        let lo = self.y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Box constraint on a parameter, enforced by a smooth reparametrization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bound {
    Free,
    Lower(f64),
    Range(f64, f64),
}

impl Bound {
    fn contains(&self, p: f64) -> bool {
        match *self {
            Bound::Free => p.is_finite(),
            Bound::Lower(lo) => p >= lo,
            Bound::Range(lo, hi) => p >= lo && p <= hi,
        }
    }

    fn to_external(&self, u: f64) -> f64 {
        match *self {
            Bound::Free => u,
            Bound::Lower(lo) => lo - 1.0 + (u * u + 1.0).sqrt(),
            Bound::Range(lo, hi) => lo + 0.5 * (hi - lo) * (u.sin() + 1.0),
        }
    }

    fn to_internal(&self, p: f64) -> f64 {
        match *self {
            Bound::Free => p,
            Bound::Lower(lo) => {
                let a = p - lo + 1.0;
                (a * a - 1.0).max(0.0).sqrt()
            }
            Bound::Range(lo, hi) => (2.0 * (p - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0).asin(),
        }
    }

    fn derivative(&self, u: f64) -> f64 {
        match *self {
            Bound::Free => 1.0,
            Bound::Lower(_) => u / (u * u + 1.0).sqrt(),
            Bound::Range(lo, hi) => 0.5 * (hi - lo) * u.cos(),
        }
    }

    // |dp/du| relative to its largest value; small means the optimizer sits
    // on the bound
    fn pinned(&self, u: f64) -> bool {
        match *self {
            Bound::Free => false,
            Bound::Lower(_) => self.derivative(u).abs() < 1e-3,
            Bound::Range(lo, hi) => self.derivative(u).abs() < 1e-3 * 0.5 * (hi - lo),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub init: f64,
    pub bound: Bound,
}

impl ParamSpec {
    pub fn new(name: &str, init: f64, bound: Bound) -> Self {
        ParamSpec {
            name: name.to_string(),
            init,
            bound,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FitWarning {
    /// `J^T J` is singular or numerically so; some stderr values are not
    /// meaningful.
    RankDeficient,
    /// The named parameter converged onto its bound.
    AtBound(String),
    /// The named parameter is not constrained by the data.
    Unidentifiable(String),
    /// Parameters are weakly distinguishable at this optimum.
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Sum of squared (weighted) residuals.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<FitWarning>,
    pub diagnostic: Option<String>,
}

impl FitResult {
    /// Value of the parameter called `name`.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn stderr_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.stderr[i])
    }

    pub fn has_warning(&self, w: &FitWarning) -> bool {
        self.warnings.contains(w)
    }

    /// Reduced chi-square `residual_norm / (n - k)`.
    pub fn reduced_chi2(&self, n_points: usize) -> f64 {
        self.residual_norm / (n_points - self.params.len()) as f64
    }
}

/// A curve `f(x; p)` evaluated over all abscissae at once.
pub trait Model {
    fn eval(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>>;

    /// Analytic `df/dp` (rows: points, columns: parameters), if available.
    fn jacobian(&self, _params: &[f64], _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Wraps a pointwise closure as a [`Model`].
pub struct FnModel<F>(pub F);

impl<F: Fn(&[f64], f64) -> f64> Model for FnModel<F> {
    fn eval(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.iter().map(|&xi| (self.0)(params, xi)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Use `sigma = sqrt(y)` floored at 1 when the data carry no sigma.
    pub poisson_weights: bool,
    /// Replaces the model's initialization heuristics.
    pub init: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            poisson_weights: false,
            init: None,
        }
    }
}

const REL_STEP: f64 = 1e-6;
const RSS_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-12;
const COND_LIMIT: f64 = 1e12;

fn fd_step(p: f64, init: f64) -> f64 {
    REL_STEP * p.abs().max(init.abs()).max(1e-3)
}

/// Forward-difference `df/dp` honouring the parameter bounds (steps back
/// when a forward step would leave the box).
pub fn finite_difference_jacobian(
    model: &dyn Model,
    params: &[f64],
    x: &[f64],
    specs: &[ParamSpec],
) -> Result<DMatrix<f64>> {
    let f0 = model.eval(params, x)?;
    let mut jac = DMatrix::zeros(x.len(), params.len());
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let mut h = fd_step(params[j], specs.get(j).map_or(0.0, |s| s.init));
        if let Some(s) = specs.get(j) {
            if !s.bound.contains(params[j] + h) {
                h = -h;
            }
        }
        p[j] = params[j] + h;
        let f1 = model.eval(&p, x)?;
        p[j] = params[j];
        for i in 0..x.len() {
            jac[(i, j)] = (f1[i] - f0[i]) / h;
        }
    }
    Ok(jac)
}

struct Problem<'a> {
    model: &'a dyn Model,
    specs: &'a [ParamSpec],
    x: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
}

impl Problem<'_> {
    fn external(&self, u: &DVector<f64>) -> Vec<f64> {
        self.specs
            .iter()
            .zip(u.iter())
            .map(|(s, &ui)| s.bound.to_external(ui))
            .collect()
    }

    fn residuals(&self, u: &DVector<f64>) -> Option<DVector<f64>> {
        let p = self.external(u);
        let f = self.model.eval(&p, self.x).ok()?;
        let r = DVector::from_iterator(
            self.y.len(),
            (0..self.y.len()).map(|i| self.w[i] * (self.y[i] - f[i])),
        );
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    // Jacobian of the residual vector with respect to the internal variables.
    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let p = self.external(u);
        let jp = match self.model.jacobian(&p, self.x) {
            Some(j) => j,
            None => finite_difference_jacobian(self.model, &p, self.x, self.specs)?,
        };
        let mut j = jp;
        for c in 0..self.specs.len() {
            let d = self.specs[c].bound.derivative(u[c]);
            for r in 0..self.x.len() {
                j[(r, c)] *= -self.w[r] * d;
            }
        }
        Ok(j)
    }
}

/// Levenberg-Marquardt minimization of `sum ((y - f(x; p)) / sigma)^2`.
///
/// Converges when an accepted step lowers the residual norm by less than
/// 1e-10 relative, when the gradient norm drops below 1e-12, or when no
/// damping level produces a decrease. Running out of iterations returns the
/// best point with `converged = false`.
pub fn least_squares(
    model: &dyn Model,
    data: &DataSeries,
    specs: &[ParamSpec],
    opts: &FitOptions,
) -> Result<FitResult> {
    let k = specs.len();
    data.validate(k)?;
    for s in specs {
        if !s.bound.contains(s.init) {
            return Err(Error::InvalidParameter {
                name: "init",
                reason: format!("initial {} = {} lies outside its bounds", s.name, s.init),
            });
        }
        if let Bound::Range(lo, hi) = s.bound {
            if !(hi > lo) {
                return Err(Error::invalid("bounds", format!("empty range for {}", s.name)));
            }
        }
    }
    let w: Vec<f64> = match (&data.sigma, opts.poisson_weights) {
        (Some(s), _) => s.iter().map(|v| 1.0 / v).collect(),
        (None, true) => data.y.iter().map(|v| 1.0 / v.max(0.0).sqrt().max(1.0)).collect(),
        (None, false) => vec![1.0; data.len()],
    };
    let prob = Problem {
        model,
        specs,
        x: &data.x,
        y: &data.y,
        w,
    };
    // an init exactly on a lower bound has zero derivative; nudge inside
    let mut u = DVector::from_iterator(
        k,
        specs.iter().map(|s| {
            let u = s.bound.to_internal(s.init);
            if matches!(s.bound, Bound::Lower(_)) && u.abs() < 1e-3 {
                1e-3
            } else {
                u
            }
        }),
    );
    let mut r = prob
        .residuals(&u)
        .ok_or_else(|| Error::invalid("init", "model is not finite at the initial parameters"))?;
    let mut rss = r.norm_squared();
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if rss == 0.0 {
            converged = true;
            break;
        }
        let j = prob.jacobian(&u)?;
        let g = j.transpose() * &r;
        if g.norm() < GRAD_TOL {
            converged = true;
            break;
        }
        let a = j.transpose() * &j;
        let dmax = a.diagonal().max().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for i in 0..k {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12 * dmax);
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match damped.svd(true, true).solve(&(-&g), 1e-14) {
                    Ok(s) => s,
                    Err(_) => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial = &u + &step;
            match prob.residuals(&trial) {
                Some(rt) if rt.norm_squared() < rss => {
                    let new_rss = rt.norm_squared();
                    let rel = (rss - new_rss) / rss;
                    u = trial;
                    r = rt;
                    rss = new_rss;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if rel < RSS_TOL {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // no damping level decreases the residual: a minimum to
            // working precision
            converged = true;
        }
        if converged {
            break;
        }
    }

    let params = prob.external(&u);
    let mut warnings = Vec::new();
    let j = prob.jacobian(&u)?;
    let a = j.transpose() * &j;
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > COND_LIMIT {
        warnings.push(FitWarning::RankDeficient);
    }
    let cov = svd
        .pseudo_inverse(smax * 1e-14)
        .unwrap_or_else(|_| DMatrix::zeros(k, k));
    let dof = (data.len() - k).max(1) as f64;
    let scale = if data.sigma.is_some() { 1.0 } else { rss / dof };
    let stderr = (0..k)
        .map(|i| {
            let d = specs[i].bound.derivative(u[i]).abs();
            (cov[(i, i)].max(0.0) * scale).sqrt() * d
        })
        .collect();
    for (i, s) in specs.iter().enumerate() {
        if s.bound.pinned(u[i]) {
            warnings.push(FitWarning::AtBound(s.name.clone()));
        }
    }
    Ok(FitResult {
        names: specs.iter().map(|s| s.name.clone()).collect(),
        params,
        stderr,
        residual_norm: rss,
        converged,
        iterations,
        warnings,
        diagnostic: (!converged).then(|| format!("no convergence in {iterations} iterations")),
    })
}

fn specs_with_init(names: &[(&str, Bound)], init: &[f64], opts: &FitOptions) -> Result<Vec<ParamSpec>> {
    let init = match &opts.init {
        Some(v) if v.len() != names.len() => {
            return Err(Error::invalid(
                "init",
                format!("expected {} initial values, got {}", names.len(), v.len()),
            ))
        }
        Some(v) => v.clone(),
        None => init.to_vec(),
    };
    Ok(names
        .iter()
        .zip(init)
        .map(|((n, b), v)| ParamSpec::new(n, v, *b))
        .collect())
}

/// Peak-normalized Voigt on a baseline with the Lorentzian width pinned.
/// Parameters: amplitude, center, gaussian_fwhm, baseline.
pub struct PleVoigtModel {
    pub l_fwhm: f64,
}

impl Model for PleVoigtModel {
    fn eval(&self, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let (amp, center, g, base) = (p[0], p[1], p[2].max(0.0), p[3]);
        let peak = voigt_density(0.0, self.l_fwhm, g)?;
        x.iter()
            .map(|&xi| Ok(base + amp * voigt_density(xi - center, self.l_fwhm, g)? / peak))
            .collect()
    }
}

/// Lorentzian FWHM (GHz) of a power-broadened line,
/// `sqrt(gamma^2 + 2 omega_r^2) / 2 pi`.
pub fn pinned_lorentzian_fwhm(omega_r: f64, gamma: f64) -> Result<f64> {
    require_positive("omega_r", omega_r)?;
    require_positive("gamma", gamma)?;
    tls::power_broadened_fwhm(gamma, omega_r)
}

/// Fits a PLE scan (counts vs laser frequency in GHz) with a Voigt whose
/// Lorentzian width is fixed by the drive. A Gaussian width below 1% of the
/// Lorentzian one raises `AtBound("gaussian_fwhm")`.
pub fn fit_ple_voigt(
    data: &DataSeries,
    omega_r: f64,
    gamma: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    let l = pinned_lorentzian_fwhm(omega_r, gamma)?;
    data.validate(4)?;
    let (lo, hi) = data.y_range();
    let imax = data.argmax();
    let g0 = estimate_fwhm(&data.x, &data.y)
        .ok()
        .map(|f| {
            // invert the Olivero approximation for the Gaussian part
            let rest = f - 0.5346 * l;
            let g2 = rest * rest - 0.2166 * l * l;
            if g2 > 0.0 && rest > 0.0 {
                g2.sqrt()
            } else {
                0.3 * l
            }
        })
        .unwrap_or(0.3 * l)
        .max(0.05 * l);
    let specs = specs_with_init(
        &[
            ("amplitude", Bound::Free),
            ("center", Bound::Free),
            ("gaussian_fwhm", Bound::Lower(0.0)),
            ("baseline", Bound::Free),
        ],
        &[hi - lo, data.x[imax], g0, lo],
        opts,
    )?;
    let mut fit = least_squares(&PleVoigtModel { l_fwhm: l }, data, &specs, opts)?;
    let flag = FitWarning::AtBound("gaussian_fwhm".into());
    if fit.params[2] < 0.01 * l && !fit.has_warning(&flag) {
        fit.warnings.push(flag);
    }
    Ok(fit)
}

/// g2 of the resonantly driven emitter with background; parameters
/// omega (rad/ns), gamma (ns^-1), signal_fraction.
pub struct G2Model;

impl Model for G2Model {
    fn eval(&self, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let params = TlsParams::resonant(p[1], p[0])?;
        let g = tls::g2_at(&params, x)?;
        tls::apply_background(&g, p[2])
    }
}

/// Fits `g2(tau)` data for the Rabi frequency, decay rate and signal
/// fraction. Warns when omega lands within 10% of the oscillation threshold
/// `gamma / 4`, where omega and gamma trade off against each other.
pub fn fit_g2(data: &DataSeries, opts: &FitOptions) -> Result<FitResult> {
    data.validate(3)?;
    if data.x.iter().any(|t| *t < 0.0) {
        return Err(Error::invalid("tau", "delays must be >= 0"));
    }
    let specs = match &opts.init {
        Some(_) => specs_with_init(&g2_bounds(), &[], opts)?,
        None => specs_with_init(&g2_bounds(), &g2_initial_guess(data), opts)?,
    };
    let mut fit = least_squares(&G2Model, data, &specs, opts)?;
    let (omega, gamma) = (fit.params[0], fit.params[1]);
    if (omega - 0.25 * gamma).abs() <= 0.1 * 0.25 * gamma {
        fit.warnings.push(FitWarning::Degenerate(
            "omega is close to gamma / 4; omega and gamma are weakly identifiable".into(),
        ));
    }
    Ok(fit)
}

fn g2_bounds() -> [(&'static str, Bound); 3] {
    [
        ("omega", Bound::Lower(0.0)),
        ("gamma", Bound::Lower(0.0)),
        ("signal_fraction", Bound::Range(0.0, 1.0)),
    ]
}

// Coarse grid search over (omega, gamma) with the signal fraction read off
// the shortest delay.
fn g2_initial_guess(data: &DataSeries) -> Vec<f64> {
    let i0 = (0..data.len())
        .min_by(|&a, &b| data.x[a].total_cmp(&data.x[b]))
        .unwrap_or(0);
    let rho = (1.0 - data.y[i0]).clamp(0.05, 1.0).sqrt().min(0.999);
    let mut best = (f64::INFINITY, vec![1.0, 1.0, rho]);
    for gi in 0..13 {
        let gamma = 0.05 * 2f64.powf(gi as f64 * 0.75);
        for &ratio in &[0.1, 0.2, 0.35, 0.6, 1.0, 1.7, 3.0, 5.0] {
            let p = [ratio * gamma, gamma, rho];
            if let Ok(f) = G2Model.eval(&p, &data.x) {
                let rss: f64 = f.iter().zip(&data.y).map(|(a, b)| (a - b) * (a - b)).sum();
                if rss < best.0 {
                    best = (rss, p.to_vec());
                }
            }
        }
    }
    best.1
}

/// `c + A exp(-P / p0)`; parameters amplitude, decay_scale, plateau.
pub struct PlateauModel;

impl Model for PlateauModel {
    fn eval(&self, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.iter().map(|&xi| p[2] + p[0] * (-xi / p[1]).exp()).collect())
    }

    fn jacobian(&self, p: &[f64], x: &[f64]) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(x.len(), 3);
        for (i, &xi) in x.iter().enumerate() {
            let e = (-xi / p[1]).exp();
            j[(i, 0)] = e;
            j[(i, 1)] = p[0] * e * xi / (p[1] * p[1]);
            j[(i, 2)] = 1.0;
        }
        Some(j)
    }
}

/// Fits linewidth-vs-power data with a decaying exponential on a plateau.
///
/// Monotone increasing data return `converged = false` without fitting.
/// When the amplitude collapses to zero the decay scale is flagged as
/// unidentifiable.
pub fn fit_exponential_plateau(data: &DataSeries, opts: &FitOptions) -> Result<FitResult> {
    data.validate(3)?;
    if data.len() < 5 {
        return Err(Error::invalid("data", "needs at least 5 points"));
    }
    if data.x.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid("power", "powers must be >= 0"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.x[a].total_cmp(&data.x[b]));
    let ys: Vec<f64> = order.iter().map(|&i| data.y[i]).collect();
    let xs: Vec<f64> = order.iter().map(|&i| data.x[i]).collect();
    let (lo, hi) = data.y_range();
    let c0 = lo.max(1e-9);
    let a0 = (ys[0] - lo).max(1e-3 * (hi.abs() + 1e-9));
    // first power where the excess falls below 1/e of the initial excess
    let p0 = xs
        .iter()
        .zip(&ys)
        .find(|(_, &y)| y - lo < a0 / std::f64::consts::E)
        .map(|(&x, _)| x)
        .filter(|&x| x > 0.0)
        .unwrap_or_else(|| (xs[xs.len() - 1] - xs[0]).max(1e-9) / 3.0);
    let specs = specs_with_init(
        &[
            ("amplitude", Bound::Lower(0.0)),
            ("decay_scale", Bound::Lower(0.0)),
            ("plateau", Bound::Lower(0.0)),
        ],
        &[a0, p0, c0],
        opts,
    )?;
    if ys.windows(2).all(|w| w[1] >= w[0]) && ys[ys.len() - 1] > ys[0] {
        return Ok(FitResult {
            names: specs.iter().map(|s| s.name.clone()).collect(),
            params: specs.iter().map(|s| s.init).collect(),
            stderr: vec![0.0; 3],
            residual_norm: f64::NAN,
            converged: false,
            iterations: 0,
            warnings: Vec::new(),
            diagnostic: Some("data increase monotonically; a decaying exponential does not apply".into()),
        });
    }
    let mut fit = least_squares(&PlateauModel, data, &specs, opts)?;
    let (a, c) = (fit.params[0], fit.params[2]);
    let se_p0 = fit.stderr[1];
    if a <= 1e-6 * c.abs().max(1e-12)
        || fit.has_warning(&FitWarning::RankDeficient)
        || !(se_p0 < fit.params[1])
    {
        fit.warnings
            .push(FitWarning::Unidentifiable("decay_scale".into()));
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakShape {
    Gaussian,
    Lorentzian,
}

/// Peak-height parametrized profile on a baseline; parameters amplitude,
/// center, fwhm, baseline.
pub struct PeakModel(pub PeakShape);

impl Model for PeakModel {
    fn eval(&self, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let fwhm = p[2];
        let density = |d: f64| match self.0 {
            PeakShape::Gaussian => gaussian_density(d, fwhm),
            PeakShape::Lorentzian => lorentzian_density(d, fwhm),
        };
        let peak = density(0.0)?;
        x.iter()
            .map(|&xi| Ok(p[3] + p[0] * density(xi - p[1])? / peak))
            .collect()
    }

    fn jacobian(&self, p: &[f64], x: &[f64]) -> Option<DMatrix<f64>> {
        let (a, c, w) = (p[0], p[1], p[2]);
        let mut j = DMatrix::zeros(x.len(), 4);
        for (i, &xi) in x.iter().enumerate() {
            let d = xi - c;
            let (s, ds_dd, ds_dw) = match self.0 {
                PeakShape::Gaussian => {
                    let k = 4.0 * std::f64::consts::LN_2 / (w * w);
                    let s = (-k * d * d).exp();
                    (s, -2.0 * k * d * s, 2.0 * k * d * d / w * s)
                }
                PeakShape::Lorentzian => {
                    let q = 2.0 * d / w;
                    let s = 1.0 / (1.0 + q * q);
                    (s, -2.0 * q * s * s * 2.0 / w, 2.0 * q * q / w * s * s)
                }
            };
            j[(i, 0)] = s;
            j[(i, 1)] = -a * ds_dd;
            j[(i, 2)] = a * ds_dw;
            j[(i, 3)] = 1.0;
        }
        Some(j)
    }
}

/// Fits a single Gaussian or Lorentzian peak on a constant baseline.
pub fn fit_peak(data: &DataSeries, shape: PeakShape, opts: &FitOptions) -> Result<FitResult> {
    data.validate(4)?;
    let (lo, hi) = data.y_range();
    let imax = data.argmax();
    let span = data.x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - data.x.iter().copied().fold(f64::INFINITY, f64::min);
    let w0 = estimate_fwhm(&data.x, &data.y).unwrap_or(span / 4.0).max(1e-9);
    let specs = specs_with_init(
        &[
            ("amplitude", Bound::Free),
            ("center", Bound::Free),
            ("fwhm", Bound::Lower(0.0)),
            ("baseline", Bound::Free),
        ],
        &[hi - lo, data.x[imax], w0, lo],
        opts,
    )?;
    least_squares(&PeakModel(shape), data, &specs, opts)
}
