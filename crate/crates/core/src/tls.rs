//! Optical Bloch dynamics of a coherently driven two-level system.
//!
//! All quantities are in angular units: `gamma` and `dephasing` in ns^-1,
//! `rabi` and `detuning` in rad/ns, `detuning = omega_L - omega_0`. The
//! coherence `s = <sigma^->` lives in the frame rotating at the laser
//! frequency.
//!
//! One generator serves every observable. With `x = (Re s, Im s, rho_ee)`
//!
//! ```text
//! dx/dt = M x + c,
//! M = [[-g_perp, -detuning, 0], [detuning, -g_perp, rabi], [0, -rabi, -gamma]],
//! c = (0, -rabi / 2, 0),        g_perp = gamma / 2 + dephasing.
//! ```
//!
//! The steady state solves `M x = -c`; the emission spectrum is the resolvent
//! of the same generator applied to the fluctuation correlations (quantum
//! regression); g2 propagates the ground state under it.

use crate::error::{require_finite, require_non_negative, require_positive, Error, Result};
use crate::ode::{DormandPrince, Tolerances};
use crate::spectral::{Grid1D, TWO_PI};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Driven two-level system parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlsParams {
    /// Radiative decay rate (ns^-1).
    pub gamma: f64,
    /// Rabi frequency (rad/ns).
    pub rabi: f64,
    /// Laser detuning `omega_L - omega_0` (rad/ns).
    pub detuning: f64,
    /// Pure dephasing rate (ns^-1).
    pub dephasing: f64,
}

impl TlsParams {
    pub fn new(gamma: f64, rabi: f64, detuning: f64, dephasing: f64) -> Result<Self> {
        let p = TlsParams {
            gamma,
            rabi,
            detuning,
            dephasing,
        };
        p.validate()?;
        Ok(p)
    }

    /// Resonant drive without dephasing.
    pub fn resonant(gamma: f64, rabi: f64) -> Result<Self> {
        TlsParams::new(gamma, rabi, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("gamma", self.gamma)?;
        require_non_negative("rabi", self.rabi)?;
        require_finite("detuning", self.detuning)?;
        require_non_negative("dephasing", self.dephasing)
    }

    /// Total coherence decay rate `gamma / 2 + dephasing`.
    pub fn coherence_decay(&self) -> f64 {
        0.5 * self.gamma + self.dephasing
    }

    pub fn with_detuning(&self, detuning: f64) -> Self {
        TlsParams { detuning, ..*self }
    }

    fn generator(&self) -> Matrix3<f64> {
        let g = self.coherence_decay();
        let d = self.detuning;
        let w = self.rabi;
        Matrix3::new(-g, -d, 0.0, d, -g, w, 0.0, -w, -self.gamma)
    }

    fn drive_term(&self) -> Vector3<f64> {
        Vector3::new(0.0, -0.5 * self.rabi, 0.0)
    }

    /// Generator acting on `(s, s*, rho_ee)`.
    fn complex_generator(&self) -> Matrix3<Complex64> {
        let i = Complex64::i();
        let g = self.coherence_decay();
        let d = self.detuning;
        let w = self.rabi;
        let z = Complex64::new(0.0, 0.0);
        Matrix3::new(
            i * d - g,
            z,
            i * w,
            z,
            -i * d - g,
            -i * w,
            i * (0.5 * w),
            -i * (0.5 * w),
            Complex64::new(-self.gamma, 0.0),
        )
    }
}

/// Excited-state population and optical coherence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochState {
    pub population: f64,
    pub coherence: Complex64,
}

impl BlochState {
    pub fn ground() -> Self {
        BlochState {
            population: 0.0,
            coherence: Complex64::new(0.0, 0.0),
        }
    }

    fn from_vector(x: &Vector3<f64>) -> Self {
        BlochState {
            population: x[2],
            coherence: Complex64::new(x[0], x[1]),
        }
    }

    fn to_array(self) -> [f64; 3] {
        [self.coherence.re, self.coherence.im, self.population]
    }
}

/// Unique fixed point of the optical Bloch equations.
pub fn steady_state(params: &TlsParams) -> Result<BlochState> {
    params.validate()?;
    let m = params.generator();
    let rhs = -params.drive_term();
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("singular Bloch generator".into()))?;
    Ok(BlochState::from_vector(&x))
}

/// Fraction of the emission that is elastically scattered,
/// `|<sigma^->|^2 / rho_ee`.
pub fn coherent_fraction(params: &TlsParams) -> Result<f64> {
    params.validate()?;
    if params.rabi == 0.0 {
        return Err(Error::UndefinedFraction);
    }
    let ss = steady_state(params)?;
    Ok(ss.coherence.norm_sqr() / ss.population)
}

/// Emission split into the elastic delta at the laser frequency and the
/// inelastic density over photon offsets `omega_ph - omega_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    /// Weight of the delta component, `gamma |<sigma^->|^2` (photons/ns).
    pub coherent_weight: f64,
    /// Offsets `omega_ph - omega_L` (rad/ns).
    pub offsets: Vec<f64>,
    /// Inelastic density in photons/ns per rad/ns.
    pub incoherent: Vec<f64>,
    /// Total emission rate `gamma rho_ee` (photons/ns).
    pub total_rate: f64,
}

impl SpectrumResult {
    /// Riemann sum of the incoherent density over the sampled offsets.
    pub fn incoherent_integral(&self) -> f64 {
        if self.offsets.len() < 2 {
            return 0.0;
        }
        let step = self.offsets[1] - self.offsets[0];
        self.incoherent.iter().sum::<f64>() * step
    }
}

/// Emission spectrum via the quantum regression theorem. For each offset
/// `delta` the incoherent density is
/// `(gamma / pi) Re[-(L + i delta)^-1 z0]_0`, with `L` the generator on
/// `(s, s*, rho_ee)` and `z0` the equal-time fluctuation correlations
/// `<dsigma^+ dA>`.
///
/// `photon_offsets` is in rad/ns.
pub fn emission_spectrum(params: &TlsParams, photon_offsets: &Grid1D) -> Result<SpectrumResult> {
    params.validate()?;
    photon_offsets.validate()?;
    let ss = steady_state(params)?;
    let s = ss.coherence;
    let p = ss.population;
    let sc = s.conj();
    let z0 = Vector3::new(Complex64::new(p, 0.0) - sc * s, -(sc * sc), -(sc * p));
    let l = params.complex_generator();
    let offsets = photon_offsets.points();
    let mut incoherent = Vec::with_capacity(offsets.len());
    for &delta in &offsets {
        let shifted = l + Matrix3::from_diagonal_element(Complex64::new(0.0, delta));
        let sol = shifted
            .lu()
            .solve(&z0)
            .ok_or_else(|| Error::Internal("singular resolvent".into()))?;
        incoherent.push(-(params.gamma / PI) * sol[0].re);
    }
    let scale = incoherent.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for v in incoherent.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 * scale {
                return Err(Error::Internal(format!("negative spectral density {v}")));
            }
            *v = 0.0;
        }
    }
    Ok(SpectrumResult {
        coherent_weight: params.gamma * s.norm_sqr(),
        offsets,
        incoherent,
        total_rate: params.gamma * p,
    })
}

/// Excited-state population after starting in the ground state, at every
/// delay in `taus` (ns, any order, all >= 0).
pub fn population_from_ground(params: &TlsParams, taus: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::invalid("tau", format!("delays must be >= 0 (got {t})")));
    }
    let m = params.generator();
    let c = params.drive_term();
    let rhs = move |_t: f64, x: &[f64; 3]| -> [f64; 3] {
        let v = m * Vector3::new(x[0], x[1], x[2]) + c;
        [v[0], v[1], v[2]]
    };
    let fastest = params.gamma + params.rabi + params.detuning.abs() + params.dephasing;
    let mut dp = DormandPrince::new(rhs, Tolerances::default(), 0.01 / fastest);

    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].total_cmp(&taus[b]));
    let mut out = vec![0.0; taus.len()];
    let mut t = 0.0;
    let mut y = BlochState::ground().to_array();
    for idx in order {
        y = dp.advance(t, y, taus[idx])?;
        t = taus[idx];
        out[idx] = y[2];
    }
    Ok(out)
}

/// Second-order correlation `g2(tau) = rho_ee(tau | ground at 0) / rho_ee(ss)`.
pub fn g2_at(params: &TlsParams, taus: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    if params.rabi == 0.0 {
        return Err(Error::invalid("rabi", "must be > 0 for a defined g2"));
    }
    let p_ss = steady_state(params)?.population;
    Ok(population_from_ground(params, taus)?
        .into_iter()
        .map(|p| (p / p_ss).max(0.0))
        .collect())
}

/// `g2` sampled on a delay grid that must start at a non-negative delay.
pub fn g2(params: &TlsParams, tau_grid: &Grid1D) -> Result<Vec<f64>> {
    tau_grid.validate()?;
    if tau_grid.start < 0.0 {
        return Err(Error::invalid("tau_grid", "delays must be >= 0"));
    }
    g2_at(params, &tau_grid.points())
}

/// Uncorrelated-background correction `1 + rho^2 (g2 - 1)` for a signal
/// fraction `rho` in (0, 1].
pub fn apply_background(g2_values: &[f64], signal_fraction: f64) -> Result<Vec<f64>> {
    if !(signal_fraction > 0.0 && signal_fraction <= 1.0) {
        return Err(Error::invalid(
            "signal_fraction",
            format!("must lie in (0, 1] (got {signal_fraction})"),
        ));
    }
    let r2 = signal_fraction * signal_fraction;
    Ok(g2_values.iter().map(|g| 1.0 + r2 * (g - 1.0)).collect())
}

pub fn g2_with_background(
    params: &TlsParams,
    signal_fraction: f64,
    tau_grid: &Grid1D,
) -> Result<Vec<f64>> {
    apply_background(&[], signal_fraction)?;
    apply_background(&g2(params, tau_grid)?, signal_fraction)
}

/// Weak-drive emission FWHM in GHz, `gamma / 2 pi`.
pub fn natural_linewidth(gamma: f64) -> Result<f64> {
    require_positive("gamma", gamma)?;
    Ok(gamma / TWO_PI)
}

/// Power-broadened PLE FWHM in GHz, `sqrt(gamma^2 + 2 rabi^2) / 2 pi`.
pub fn power_broadened_fwhm(gamma: f64, rabi: f64) -> Result<f64> {
    require_positive("gamma", gamma)?;
    require_non_negative("rabi", rabi)?;
    Ok((gamma * gamma + 2.0 * rabi * rabi).sqrt() / TWO_PI)
}
