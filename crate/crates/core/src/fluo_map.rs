//! Fluorescence maps `I(nu_L, nu_Ph)`, their broadening, per-column
//! envelopes, PLE spectra and the Gaussian-vs-Lorentzian discriminator.
//!
//! Map values are emission densities in photons/ns per GHz of photon
//! frequency; axes are absolute frequencies in GHz.

use crate::error::{require_finite, require_non_negative, Error, Result};
use crate::fit::{fit_peak, DataSeries, FitOptions, FitResult, PeakShape};
use crate::spectral::{convolve_map, gaussian_density, Curve, Grid1D, LineShape, Map2D, MapAxis, TWO_PI};
use crate::tls::{emission_spectrum, steady_state, TlsParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the emitter's own spectrum enters the ideal map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regime {
    /// Every photon is scattered at the laser frequency from a point at
    /// `(nu0, nu0)`; homogeneous broadening is an optional Lorentzian along
    /// the diagonal (an approximation valid only at weak drive).
    Elastic { homogeneous_fwhm: f64 },
    /// Full Mollow spectrum per laser column, dephasing included. With
    /// `include_coherent = false` only the inelastically scattered part is
    /// kept.
    Inelastic {
        #[serde(default = "yes")]
        include_coherent: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Transition frequency nu0 (GHz).
    pub center: f64,
    pub laser_axis: Grid1D,
    pub photon_axis: Grid1D,
    /// Lorentzian FWHM of the laser (GHz).
    pub laser_linewidth: f64,
    /// Lorentzian FWHM of the spectral filter (GHz).
    pub detector_fwhm: f64,
    /// Gaussian FWHM of spectral wandering (GHz).
    pub inhomogeneous_fwhm: f64,
    /// Emitter parameters; the detuning is set per column and must be 0 here.
    pub tls: TlsParams,
    pub regime: Regime,
}

pub const DEFAULT_PIXELS: usize = 256;
pub const DEFAULT_SPAN_GHZ: f64 = 12.0;

impl MapConfig {
    /// 256 x 256 pixels over `center +- 6 GHz` with the given emitter.
    pub fn with_defaults(center: f64, tls: TlsParams) -> Result<Self> {
        let axis = Grid1D::centered(center, DEFAULT_SPAN_GHZ, DEFAULT_PIXELS)?;
        Ok(MapConfig {
            center,
            laser_axis: axis,
            photon_axis: axis,
            laser_linewidth: 2e-4,
            detector_fwhm: 0.2,
            inhomogeneous_fwhm: 2.5,
            tls,
            regime: Regime::Inelastic {
                include_coherent: true,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        require_finite("center", self.center)?;
        self.laser_axis.validate()?;
        self.photon_axis.validate()?;
        self.tls.validate()?;
        if self.tls.detuning != 0.0 {
            return Err(Error::invalid(
                "tls.detuning",
                "is derived per laser column and must be 0 in a map config",
            ));
        }
        require_non_negative("laser_linewidth", self.laser_linewidth)?;
        require_non_negative("detector_fwhm", self.detector_fwhm)?;
        require_non_negative("inhomogeneous_fwhm", self.inhomogeneous_fwhm)?;
        if let Regime::Elastic { homogeneous_fwhm } = self.regime {
            require_non_negative("homogeneous_fwhm", homogeneous_fwhm)?;
        }
        let a = (self.laser_axis.step, self.photon_axis.step);
        if (a.0 - a.1).abs() > 1e-9 * a.0.max(a.1) {
            return Err(Error::GridMismatch(format!(
                "laser step {} and photon step {} differ",
                a.0, a.1
            )));
        }
        for (name, ax) in [("laser_axis", &self.laser_axis), ("photon_axis", &self.photon_axis)] {
            if self.center < ax.start || self.center > ax.last() {
                return Err(Error::invalid(name, "must bracket the transition frequency"));
            }
        }
        Ok(())
    }

    fn detuned(&self, nu_laser: f64) -> TlsParams {
        self.tls.with_detuning(TWO_PI * (nu_laser - self.center))
    }
}

// Spreads `weight` over the two photon pixels bracketing `nu` as a density.
fn deposit(column: &mut [f64], axis: &Grid1D, nu: f64, weight: f64) {
    let f = axis.fractional_index(nu);
    if f < 0.0 || f > (axis.count - 1) as f64 {
        return;
    }
    let j = (f.floor() as usize).min(axis.count - 1);
    let frac = f - j as f64;
    column[j] += weight * (1.0 - frac) / axis.step;
    if frac > 0.0 && j + 1 < axis.count {
        column[j + 1] += weight * frac / axis.step;
    }
}

/// Unbroadened map.
///
/// In the inelastic regime each laser column holds the emission spectrum at
/// detuning `nu_L - nu0`: the coherent weight as a density spike at
/// `nu_Ph = nu_L` plus the incoherent density. In the elastic regime the map
/// is a single point of total weight `gamma rho_ee(0)` at `(nu0, nu0)`.
pub fn ideal_map(config: &MapConfig) -> Result<Map2D> {
    config.validate()?;
    let lax = config.laser_axis;
    let pax = config.photon_axis;
    let mut map = Map2D::zeros(lax, pax);
    match config.regime {
        Regime::Elastic { .. } => {
            let weight = config.tls.gamma * steady_state(&config.tls)?.population;
            let fi = lax.fractional_index(config.center);
            let i = (fi.floor() as usize).min(lax.count - 1);
            let frac = fi - i as f64;
            let np = pax.count;
            let mut col = vec![0.0; np];
            deposit(&mut col, &pax, config.center, weight / lax.step);
            for (ii, w) in [(i, 1.0 - frac), (i + 1, frac)] {
                if w > 0.0 && ii < lax.count {
                    for (dst, src) in map.values[ii * np..(ii + 1) * np].iter_mut().zip(&col) {
                        *dst += w * src;
                    }
                }
            }
        }
        Regime::Inelastic { include_coherent } => {
            let np = pax.count;
            map.values
                .par_chunks_mut(np)
                .enumerate()
                .try_for_each(|(i, column)| -> Result<()> {
                    let nu_l = lax.at(i);
                    let offsets = Grid1D::new(TWO_PI * (pax.start - nu_l), TWO_PI * pax.step, np)?;
                    let s = emission_spectrum(&config.detuned(nu_l), &offsets)?;
                    for (dst, v) in column.iter_mut().zip(&s.incoherent) {
                        // per rad/ns -> per GHz
                        *dst = v * TWO_PI;
                    }
                    if include_coherent {
                        deposit(column, &pax, nu_l, s.coherent_weight);
                    }
                    Ok(())
                })?;
        }
    }
    Ok(map)
}

/// Kernel applied along the diagonal for this configuration.
pub fn diagonal_kernel(config: &MapConfig) -> Result<LineShape> {
    let l = match config.regime {
        Regime::Elastic { homogeneous_fwhm } => homogeneous_fwhm,
        Regime::Inelastic { .. } => 0.0,
    };
    LineShape::from_widths(l, config.inhomogeneous_fwhm)
}

/// Laser lineshape along `nu_L`, filter response along `nu_Ph`, then
/// transition-frequency broadening along the diagonal. Zero widths are
/// skipped.
pub fn broaden_map(map: &Map2D, config: &MapConfig) -> Result<Map2D> {
    config.validate()?;
    let laser = LineShape::from_widths(config.laser_linewidth, 0.0)?;
    let detector = LineShape::from_widths(config.detector_fwhm, 0.0)?;
    let m = convolve_map(map, &laser, MapAxis::Laser)?;
    let m = convolve_map(&m, &detector, MapAxis::Photon)?;
    convolve_map(&m, &diagonal_kernel(config)?, MapAxis::Diagonal)
}

/// `broaden_map(ideal_map(config), config)`.
pub fn fluorescence_map(config: &MapConfig) -> Result<Map2D> {
    broaden_map(&ideal_map(config)?, config)
}

/// Per-column maxima of a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub laser: Vec<f64>,
    /// Interpolated peak value of each column.
    pub value: Vec<f64>,
    /// Interpolated photon frequency of each column's peak.
    pub position: Vec<f64>,
    /// False where the column maximum sits on the photon-axis boundary (or
    /// the column is empty); such columns carry the raw maximum.
    pub valid: Vec<bool>,
}

impl Envelope {
    /// Peak value vs laser frequency over the valid columns.
    pub fn curve(&self) -> Curve {
        let (x, y) = self
            .laser
            .iter()
            .zip(&self.value)
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|((x, y), _)| (*x, *y))
            .unzip();
        Curve { x, y }
    }
}

/// Envelope of per-column maxima with 3-point parabolic refinement.
pub fn envelope(map: &Map2D) -> Result<Envelope> {
    map.validate()?;
    let pax = map.photon_axis;
    let n = map.laser_axis.count;
    let mut env = Envelope {
        laser: map.laser_axis.points(),
        value: Vec::with_capacity(n),
        position: Vec::with_capacity(n),
        valid: Vec::with_capacity(n),
    };
    for i in 0..n {
        let col = map.column(i);
        let (j, &ymax) = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty column");
        if j == 0 || j + 1 == col.len() || !(ymax > 0.0) {
            env.value.push(ymax);
            env.position.push(pax.at(j));
            env.valid.push(false);
            continue;
        }
        let (y0, y1, y2) = (col[j - 1], col[j], col[j + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        let off = if denom < 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
        env.value.push(y1 - 0.25 * (y0 - y2) * off);
        env.position.push(pax.at(j) + off * pax.step);
        env.valid.push(true);
    }
    Ok(env)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Broadening {
    Gaussian,
    Lorentzian,
    /// Residuals of the two fits differ by less than 5%.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadeningReport {
    pub label: Broadening,
    pub gaussian: FitResult,
    pub lorentzian: FitResult,
}

/// Fits a Gaussian and a Lorentzian peak to an envelope and names the one
/// with the smaller residual.
pub fn classify_broadening(curve: &Curve) -> Result<BroadeningReport> {
    if curve.len() < 15 {
        return Err(Error::invalid("envelope", "needs at least 15 points"));
    }
    let data = DataSeries::new(curve.x.clone(), curve.y.clone())?;
    let opts = FitOptions::default();
    let g = fit_peak(&data, PeakShape::Gaussian, &opts)?;
    let l = fit_peak(&data, PeakShape::Lorentzian, &opts)?;
    let label = match (g.converged, l.converged) {
        (false, false) => {
            return Err(Error::ClassificationFailed(
                "neither the Gaussian nor the Lorentzian fit converged".into(),
            ))
        }
        (true, false) => Broadening::Gaussian,
        (false, true) => Broadening::Lorentzian,
        (true, true) => {
            let (a, b) = (g.residual_norm, l.residual_norm);
            if (a - b).abs() < 0.05 * a.max(b) {
                Broadening::Ambiguous
            } else if a < b {
                Broadening::Gaussian
            } else {
                Broadening::Lorentzian
            }
        }
    };
    Ok(BroadeningReport {
        label,
        gaussian: g,
        lorentzian: l,
    })
}

/// Total emission `gamma rho_ee` vs laser frequency, averaged over a
/// Gaussian distribution of transition frequencies of FWHM
/// `inhomogeneous_fwhm`. The spectral filter is not applied.
pub fn ple_spectrum(config: &MapConfig, laser_sweep: &Grid1D) -> Result<Curve> {
    config.validate()?;
    laser_sweep.validate()?;
    let tls = config.tls;
    let rate = |nu_l: f64| -> Result<f64> {
        Ok(tls.gamma * steady_state(&config.detuned(nu_l))?.population)
    };
    let x = laser_sweep.points();
    let wg = config.inhomogeneous_fwhm;
    if wg == 0.0 {
        let y = x.iter().map(|&v| rate(v)).collect::<Result<Vec<_>>>()?;
        return Ok(Curve { x, y });
    }
    // homogeneous width including dephasing sets the quadrature step
    let gp = tls.coherence_decay();
    let hom = 2.0 * (gp * gp + tls.rabi * tls.rabi * gp / tls.gamma).sqrt() / TWO_PI;
    let h = wg.min(hom) / 40.0;
    let half = (8.0 * wg / h).ceil() as i64;
    let nodes: Vec<(f64, f64)> = (-half..=half)
        .map(|k| {
            let u = k as f64 * h;
            (u, gaussian_density(u, wg).expect("positive width"))
        })
        .collect();
    let norm: f64 = nodes.iter().map(|n| n.1).sum();
    let y = x
        .par_iter()
        .map(|&nu_l| {
            let mut acc = 0.0;
            for &(u, w) in &nodes {
                acc += w * rate(nu_l - u)?;
            }
            Ok(acc / norm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve { x, y })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutDirection {
    /// Varying laser frequency at fixed photon frequency.
    Laser,
    /// Varying photon frequency at fixed laser frequency.
    Photon,
    /// Along `nu_Ph - nu_L = const`.
    Diagonal,
    /// Along `nu_Ph + nu_L = const`.
    AntiDiagonal,
}

/// Values along a straight line of pixels. `coord` is the laser-frequency
/// offset from the anchor pixel (photon offset for [`CutDirection::Photon`]);
/// path length along the line is `coord * metric`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub coord: Vec<f64>,
    pub values: Vec<f64>,
    pub metric: f64,
}

impl Cut {
    pub fn fwhm(&self) -> Result<f64> {
        crate::spectral::estimate_fwhm(&self.coord, &self.values)
    }

    /// Intensity-weighted variance of the path length along the cut.
    pub fn path_variance(&self) -> f64 {
        let w: f64 = self.values.iter().sum();
        if !(w > 0.0) {
            return 0.0;
        }
        let mean = self.coord.iter().zip(&self.values).map(|(c, v)| c * v).sum::<f64>() / w;
        let var = self
            .coord
            .iter()
            .zip(&self.values)
            .map(|(c, v)| (c - mean) * (c - mean) * v)
            .sum::<f64>()
            / w;
        var * self.metric * self.metric
    }
}

/// Pixel holding the map maximum as (laser index, photon index).
pub fn peak_pixel(map: &Map2D) -> (usize, usize) {
    let np = map.photon_axis.count;
    let k = map
        .values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    (k / np, k % np)
}

/// Cut through pixel `(i0, j0)` in the given direction.
pub fn cut(map: &Map2D, anchor: (usize, usize), direction: CutDirection) -> Cut {
    let (i0, j0) = (anchor.0 as isize, anchor.1 as isize);
    let (nl, np) = (map.laser_axis.count as isize, map.photon_axis.count as isize);
    let (di, dj, metric) = match direction {
        CutDirection::Laser => (1, 0, 1.0),
        CutDirection::Photon => (0, 1, 1.0),
        CutDirection::Diagonal => (1, 1, std::f64::consts::SQRT_2),
        CutDirection::AntiDiagonal => (1, -1, std::f64::consts::SQRT_2),
    };
    let step = if di == 0 { map.photon_axis.step } else { map.laser_axis.step };
    let inside = |t: isize| {
        let (i, j) = (i0 + di * t, j0 + dj * t);
        i >= 0 && i < nl && j >= 0 && j < np
    };
    let mut lo = 0;
    while inside(lo - 1) {
        lo -= 1;
    }
    let mut hi = 0;
    while inside(hi + 1) {
        hi += 1;
    }
    let (coord, values) = (lo..=hi)
        .map(|t| {
            let v = map.get((i0 + di * t) as usize, (j0 + dj * t) as usize);
            (t as f64 * step, v)
        })
        .unzip();
    Cut {
        coord,
        values,
        metric,
    }
}

/// Path-length variances of the four cuts through the map maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutVariances {
    pub laser: f64,
    pub photon: f64,
    pub diagonal: f64,
    pub anti_diagonal: f64,
}

impl CutVariances {
    /// Diagonal over anti-diagonal variance: elongation along `nu_Ph = nu_L`.
    pub fn elongation(&self) -> f64 {
        self.diagonal / self.anti_diagonal
    }

    /// True when both axis-aligned cuts are wider than the diagonal one.
    pub fn is_diamond(&self) -> bool {
        self.laser > self.diagonal && self.photon > self.diagonal
    }
}

pub fn cut_variances(map: &Map2D) -> CutVariances {
    let p = peak_pixel(map);
    let v = |d| cut(map, p, d).path_variance();
    CutVariances {
        laser: v(CutDirection::Laser),
        photon: v(CutDirection::Photon),
        diagonal: v(CutDirection::Diagonal),
        anti_diagonal: v(CutDirection::AntiDiagonal),
    }
}
