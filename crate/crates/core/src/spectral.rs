//! Frequency conventions, normalized lineshape kernels and discrete
//! convolution of sampled profiles and two-dimensional maps.
//!
//! Frequencies are stored internally as angular frequencies in rad/ns and
//! exchanged at the boundary in GHz (ordinary frequency). The single
//! conversion point is [`ghz_to_angular`] / [`angular_to_ghz`]:
//! `nu [GHz] = omega [rad/ns] / 2 pi`.
//!
//! Rabi frequencies quoted as plain numbers (for example `0.47`) are taken
//! to be numerically in rad/ns, which keeps `sqrt(gamma^2 + 2 rabi^2)`
//! dimensionally uniform in ns^-1.

use crate::error::{require_finite, require_positive, Error, Result};
use crate::faddeeva::faddeeva;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

pub const TWO_PI: f64 = 2.0 * PI;

/// Kernels are truncated at this many FWHM on either side of the centre.
pub const KERNEL_HALF_WIDTH_FWHM: f64 = 8.0;

#[inline]
pub fn ghz_to_angular(nu_ghz: f64) -> f64 {
    nu_ghz * TWO_PI
}

#[inline]
pub fn angular_to_ghz(omega: f64) -> f64 {
    omega / TWO_PI
}

/// Gaussian standard deviation for a given FWHM.
#[inline]
pub fn gaussian_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

/// Normalized Lorentzian with full width at half maximum `fwhm`.
pub fn lorentzian_density(x: f64, fwhm: f64) -> Result<f64> {
    require_positive("fwhm", fwhm)?;
    Ok(lorentzian_unchecked(x, fwhm))
}

#[inline]
fn lorentzian_unchecked(x: f64, fwhm: f64) -> f64 {
    let u = 2.0 * x / fwhm;
    (2.0 / (PI * fwhm)) / (1.0 + u * u)
}

/// Normalized Gaussian with full width at half maximum `fwhm`.
pub fn gaussian_density(x: f64, fwhm: f64) -> Result<f64> {
    require_positive("fwhm", fwhm)?;
    Ok(gaussian_unchecked(x, fwhm))
}

#[inline]
fn gaussian_unchecked(x: f64, fwhm: f64) -> f64 {
    let sigma = gaussian_sigma(fwhm);
    let u = x / sigma;
    (-0.5 * u * u).exp() / (sigma * TWO_PI.sqrt())
}

/// Normalized Voigt profile: a Lorentzian of FWHM `l_fwhm` convolved with a
/// Gaussian of FWHM `g_fwhm`. Either width may be zero, not both.
pub fn voigt_density(x: f64, l_fwhm: f64, g_fwhm: f64) -> Result<f64> {
    crate::error::require_non_negative("l_fwhm", l_fwhm)?;
    crate::error::require_non_negative("g_fwhm", g_fwhm)?;
    if l_fwhm == 0.0 && g_fwhm == 0.0 {
        return Err(Error::invalid(
            "l_fwhm/g_fwhm",
            "both widths are zero (use a delta lineshape)",
        ));
    }
    Ok(voigt_unchecked(x, l_fwhm, g_fwhm))
}

fn voigt_unchecked(x: f64, l_fwhm: f64, g_fwhm: f64) -> f64 {
    if g_fwhm == 0.0 {
        return lorentzian_unchecked(x, l_fwhm);
    }
    if l_fwhm == 0.0 {
        return gaussian_unchecked(x, g_fwhm);
    }
    let sigma = gaussian_sigma(g_fwhm);
    let scale = sigma * 2f64.sqrt();
    let z = Complex64::new(x / scale, 0.5 * l_fwhm / scale);
    faddeeva(z).re / (sigma * TWO_PI.sqrt())
}

/// Olivero-Longbothum estimate of the Voigt FWHM (accurate to ~0.02%).
pub fn voigt_fwhm_approx(l_fwhm: f64, g_fwhm: f64) -> f64 {
    0.5346 * l_fwhm + (0.2166 * l_fwhm * l_fwhm + g_fwhm * g_fwhm).sqrt()
}

/// A normalized lineshape used as a convolution kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineShape {
    Delta,
    Lorentzian { fwhm: f64 },
    Gaussian { fwhm: f64 },
    Voigt { l_fwhm: f64, g_fwhm: f64 },
}

impl LineShape {
    /// Picks the kind implied by which widths are non-zero.
    pub fn from_widths(l_fwhm: f64, g_fwhm: f64) -> Result<Self> {
        crate::error::require_non_negative("l_fwhm", l_fwhm)?;
        crate::error::require_non_negative("g_fwhm", g_fwhm)?;
        Ok(match (l_fwhm > 0.0, g_fwhm > 0.0) {
            (false, false) => LineShape::Delta,
            (true, false) => LineShape::Lorentzian { fwhm: l_fwhm },
            (false, true) => LineShape::Gaussian { fwhm: g_fwhm },
            (true, true) => LineShape::Voigt { l_fwhm, g_fwhm },
        })
    }

    pub fn lorentzian(fwhm: f64) -> Result<Self> {
        require_positive("fwhm", fwhm)?;
        Ok(LineShape::Lorentzian { fwhm })
    }

    pub fn gaussian(fwhm: f64) -> Result<Self> {
        require_positive("fwhm", fwhm)?;
        Ok(LineShape::Gaussian { fwhm })
    }

    pub fn voigt(l_fwhm: f64, g_fwhm: f64) -> Result<Self> {
        require_positive("l_fwhm", l_fwhm)?;
        require_positive("g_fwhm", g_fwhm)?;
        Ok(LineShape::Voigt { l_fwhm, g_fwhm })
    }

    pub fn widths(&self) -> (f64, f64) {
        match *self {
            LineShape::Delta => (0.0, 0.0),
            LineShape::Lorentzian { fwhm } => (fwhm, 0.0),
            LineShape::Gaussian { fwhm } => (0.0, fwhm),
            LineShape::Voigt { l_fwhm, g_fwhm } => (l_fwhm, g_fwhm),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LineShape::Delta => Ok(()),
            LineShape::Lorentzian { fwhm } | LineShape::Gaussian { fwhm } => {
                require_positive("fwhm", fwhm)
            }
            LineShape::Voigt { l_fwhm, g_fwhm } => {
                require_positive("l_fwhm", l_fwhm)?;
                require_positive("g_fwhm", g_fwhm)
            }
        }
    }

    /// FWHM of the profile (approximate for Voigt).
    pub fn fwhm(&self) -> f64 {
        match *self {
            LineShape::Delta => 0.0,
            LineShape::Lorentzian { fwhm } | LineShape::Gaussian { fwhm } => fwhm,
            LineShape::Voigt { l_fwhm, g_fwhm } => voigt_fwhm_approx(l_fwhm, g_fwhm),
        }
    }

    /// Density at offset `x`. Undefined (returns 0) for the delta kind.
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            LineShape::Delta => 0.0,
            LineShape::Lorentzian { fwhm } => lorentzian_unchecked(x, fwhm),
            LineShape::Gaussian { fwhm } => gaussian_unchecked(x, fwhm),
            LineShape::Voigt { l_fwhm, g_fwhm } => voigt_unchecked(x, l_fwhm, g_fwhm),
        }
    }

    /// Sampled kernel on a grid of spacing `step`, centred at index
    /// `(len - 1) / 2`, truncated at +-8 FWHM and renormalized to unit sum.
    pub fn discrete_kernel(&self, step: f64) -> Result<Vec<f64>> {
        require_positive("step", step)?;
        self.validate()?;
        if let LineShape::Delta = self {
            return Ok(vec![1.0]);
        }
        let half = (KERNEL_HALF_WIDTH_FWHM * self.fwhm() / step).floor() as usize;
        let mut k: Vec<f64> = (0..=2 * half)
            .map(|i| self.density((i as f64 - half as f64) * step))
            .collect();
        let total: f64 = k.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Internal("kernel sums to zero".into()));
        }
        k.iter_mut().for_each(|v| *v /= total);
        Ok(k)
    }
}

/// Uniform grid `start + i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Grid1D {
    pub fn new(start: f64, step: f64, count: usize) -> Result<Self> {
        require_finite("start", start)?;
        require_positive("step", step)?;
        if count == 0 {
            return Err(Error::invalid("count", "must be >= 1"));
        }
        Ok(Grid1D { start, step, count })
    }

    /// `count` points spanning `[lo, hi]` inclusive.
    pub fn linspace(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(hi > lo) {
            return Err(Error::invalid("count", "linspace needs count >= 2 and hi > lo"));
        }
        Grid1D::new(lo, (hi - lo) / (count - 1) as f64, count)
    }

    /// `count` cells of width `span / count` starting at `center - span / 2`,
    /// so that `center` itself lies on the grid when `count` is even.
    pub fn centered(center: f64, span: f64, count: usize) -> Result<Self> {
        require_positive("span", span)?;
        if count < 2 {
            return Err(Error::invalid("count", "must be >= 2"));
        }
        Grid1D::new(center - 0.5 * span, span / count as f64, count)
    }

    pub fn validate(&self) -> Result<()> {
        Grid1D::new(self.start, self.step, self.count).map(|_| ())
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.at(i)).collect()
    }

    pub fn last(&self) -> f64 {
        self.at(self.count - 1)
    }

    /// Fractional index of `x` on this grid.
    pub fn fractional_index(&self, x: f64) -> f64 {
        (x - self.start) / self.step
    }

    /// Nearest grid index, if `x` lies within half a step of the grid.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        let f = self.fractional_index(x).round();
        if f >= 0.0 && (f as usize) < self.count {
            Some(f as usize)
        } else {
            None
        }
    }

    pub fn scaled(&self, factor: f64) -> Grid1D {
        Grid1D {
            start: self.start * factor,
            step: self.step * factor,
            count: self.count,
        }
    }
}

/// A sampled one-dimensional curve.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid("y", "length differs from x"));
        }
        Ok(Curve { x, y })
    }

    pub fn sample(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let x = grid.points();
        let y = x.iter().map(|&v| f(v)).collect();
        Curve { x, y }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy scaled so that the maximum is 1.
    pub fn normalized_to_peak(&self) -> Curve {
        let m = self.max();
        Curve {
            x: self.x.clone(),
            y: self.y.iter().map(|v| v / m).collect(),
        }
    }

    /// Trapezoid integral.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.y.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }
}

/// Full width at half maximum of a sampled single-peak profile, from linear
/// interpolation of the two half-maximum crossings.
pub fn estimate_fwhm(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("y", "length differs from x"));
    }
    if x.len() < 5 {
        return Err(Error::invalid("profile", "needs at least 5 points"));
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    if imax == 0 || imax == y.len() - 1 {
        return Err(Error::NoPeak("maximum at the profile boundary".into()));
    }
    if !(ymax > 0.0) {
        return Err(Error::NoPeak("profile maximum is not positive".into()));
    }
    let half = 0.5 * ymax;
    let crossing = |i_in: usize, i_out: usize| -> f64 {
        let (x0, y0, x1, y1) = (x[i_in], y[i_in], x[i_out], y[i_out]);
        x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    };
    let left = (1..=imax)
        .rev()
        .find(|&i| y[i - 1] < half)
        .map(|i| crossing(i, i - 1))
        .ok_or_else(|| Error::NoPeak("no half-maximum crossing on the left".into()))?;
    let right = (imax..y.len() - 1)
        .find(|&i| y[i + 1] < half)
        .map(|i| crossing(i, i + 1))
        .ok_or_else(|| Error::NoPeak("no half-maximum crossing on the right".into()))?;
    Ok(right - left)
}

/// Direction of a map convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapAxis {
    Laser,
    Photon,
    /// Along lines of constant `omega_ph - omega_l`.
    Diagonal,
}

/// Intensity over (laser frequency, photon frequency). Row-major with the
/// laser index outermost: `values[i * photon.count + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Map2D {
    pub laser_axis: Grid1D,
    pub photon_axis: Grid1D,
    pub values: Vec<f64>,
}

impl Map2D {
    pub fn zeros(laser_axis: Grid1D, photon_axis: Grid1D) -> Self {
        Map2D {
            laser_axis,
            photon_axis,
            values: vec![0.0; laser_axis.count * photon_axis.count],
        }
    }

    pub fn from_fn(laser_axis: Grid1D, photon_axis: Grid1D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut m = Map2D::zeros(laser_axis, photon_axis);
        for i in 0..laser_axis.count {
            for j in 0..photon_axis.count {
                m.values[i * photon_axis.count + j] = f(laser_axis.at(i), photon_axis.at(j));
            }
        }
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.laser_axis.validate()?;
        self.photon_axis.validate()?;
        if self.values.len() != self.laser_axis.count * self.photon_axis.count {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} map",
                self.values.len(),
                self.laser_axis.count,
                self.photon_axis.count
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid("values", format!("must be finite and >= 0, found {v}")));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, laser: usize, photon: usize) -> f64 {
        self.values[laser * self.photon_axis.count + photon]
    }

    #[inline]
    pub fn get_mut(&mut self, laser: usize, photon: usize) -> &mut f64 {
        &mut self.values[laser * self.photon_axis.count + photon]
    }

    /// Values of one laser column as a function of photon frequency.
    pub fn column(&self, laser: usize) -> &[f64] {
        let n = self.photon_axis.count;
        &self.values[laser * n..(laser + 1) * n]
    }

    pub fn cell_area(&self) -> f64 {
        self.laser_axis.step * self.photon_axis.step
    }

    /// Sum of values times cell area.
    pub fn total_intensity(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn same_steps(&self) -> bool {
        let (a, b) = (self.laser_axis.step, self.photon_axis.step);
        (a - b).abs() <= 1e-9 * a.max(b)
    }
}

/// Zero-padded direct convolution of a strided line with a centred kernel.
fn convolve_line(input: &[f64], kernel: &[f64], out: &mut [f64]) {
    let half = (kernel.len() / 2) as isize;
    let n = input.len() as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let i = i as isize;
        let lo = (i - n + 1).max(-half);
        let hi = half.min(i);
        let mut acc = 0.0;
        // out[i] = sum_k kernel[k + half] * input[i - k]
        let mut k = lo;
        while k <= hi {
            acc += kernel[(k + half) as usize] * input[(i - k) as usize];
            k += 1;
        }
        *o = acc;
    }
}

/// Discrete convolution of `map` with `kernel` along `axis`.
///
/// The kernel is sampled on the grid step of the convolved direction. The
/// diagonal direction shifts both coordinates by the same offset, so mass
/// moves along lines of constant `omega_ph - omega_l`; it requires equal
/// steps on both axes. Outside the grid the map is taken as zero, so total
/// intensity is conserved only for kernels that fit inside the margins.
pub fn convolve_map(map: &Map2D, kernel: &LineShape, axis: MapAxis) -> Result<Map2D> {
    map.validate()?;
    kernel.validate()?;
    if let LineShape::Delta = kernel {
        return Ok(map.clone());
    }
    let nl = map.laser_axis.count;
    let np = map.photon_axis.count;
    let mut out = Map2D::zeros(map.laser_axis, map.photon_axis);
    match axis {
        MapAxis::Photon => {
            let k = kernel.discrete_kernel(map.photon_axis.step)?;
            for i in 0..nl {
                let src = &map.values[i * np..(i + 1) * np];
                convolve_line(src, &k, &mut out.values[i * np..(i + 1) * np]);
            }
        }
        MapAxis::Laser => {
            let k = kernel.discrete_kernel(map.laser_axis.step)?;
            let mut line = vec![0.0; nl];
            let mut res = vec![0.0; nl];
            for j in 0..np {
                for (i, v) in line.iter_mut().enumerate() {
                    *v = map.values[i * np + j];
                }
                convolve_line(&line, &k, &mut res);
                for (i, v) in res.iter().enumerate() {
                    out.values[i * np + j] = *v;
                }
            }
        }
        MapAxis::Diagonal => {
            if !map.same_steps() {
                return Err(Error::GridMismatch(format!(
                    "diagonal convolution needs equal steps (laser {}, photon {})",
                    map.laser_axis.step, map.photon_axis.step
                )));
            }
            let k = kernel.discrete_kernel(map.laser_axis.step)?;
            // sheared coordinate d = j - i indexes lines of constant omega_ph - omega_l
            let mut line = Vec::with_capacity(nl.min(np));
            let mut res = Vec::with_capacity(nl.min(np));
            for d in -(nl as isize - 1)..np as isize {
                let i0 = (-d).max(0) as usize;
                let len = (nl - i0).min((np as isize - (i0 as isize + d)) as usize);
                line.clear();
                line.extend((0..len).map(|t| map.get(i0 + t, (i0 as isize + d) as usize + t)));
                res.clear();
                res.resize(len, 0.0);
                convolve_line(&line, &k, &mut res);
                for (t, v) in res.iter().enumerate() {
                    *out.get_mut(i0 + t, (i0 as isize + d) as usize + t) = *v;
                }
            }
        }
    }
    Ok(out)
}

/// Convolves uniformly sampled values with `kernel` (zero padding).
pub fn convolve_samples(y: &[f64], step: f64, kernel: &LineShape) -> Result<Vec<f64>> {
    let k = kernel.discrete_kernel(step)?;
    let mut out = vec![0.0; y.len()];
    convolve_line(y, &k, &mut out);
    Ok(out)
}
