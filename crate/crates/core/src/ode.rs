//! Adaptive Dormand-Prince 5(4) integrator for small fixed-size systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-9,
            atol: 1e-12,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 1_000_000;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], terms: &[(f64, &[f64; N])], h: f64) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates `dy/dt = f(t, y)` with adaptive step control.
///
/// `h` carries the step size between calls so a caller stepping through a
/// sequence of output times does not restart from a tiny step each time.
pub struct DormandPrince<F, const N: usize> {
    f: F,
    tol: Tolerances,
    h: f64,
}

impl<F, const N: usize> DormandPrince<F, N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    pub fn new(f: F, tol: Tolerances, initial_step: f64) -> Self {
        DormandPrince {
            f,
            tol,
            h: initial_step,
        }
    }

    /// Advances `y` from `t0` to `t1` (`t1 >= t0`).
    pub fn advance(&mut self, t0: f64, y: [f64; N], t1: f64) -> Result<[f64; N]> {
        if t1 < t0 {
            return Err(Error::invalid("t1", "integration must move forward in time"));
        }
        let mut t = t0;
        let mut y = y;
        if t1 == t0 {
            return Ok(y);
        }
        let mut k1 = (self.f)(t, &y);
        let mut steps = 0;
        while t < t1 {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::Internal("ODE step budget exhausted".into()));
            }
            let mut h = self.h.min(t1 - t);
            let last = h >= t1 - t;
            let f = &self.f;
            let k2 = f(t + C2 * h, &axpy(&y, &[(A21, &k1)], h));
            let k3 = f(t + C3 * h, &axpy(&y, &[(A31, &k1), (A32, &k2)], h));
            let k4 = f(t + C4 * h, &axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
            let k5 = f(
                t + C5 * h,
                &axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
            );
            let k6 = f(
                t + h,
                &axpy(&y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h),
            );
            let y_new = axpy(&y, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
            let k7 = f(t + h, &y_new);
            let mut err = 0.0f64;
            for i in 0..N {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                return Err(Error::Internal("non-finite ODE error estimate".into()));
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                y = y_new;
                k1 = k7;
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // keep the pre-truncation step for the next call
                if !last {
                    self.h = h * grow;
                } else {
                    self.h = self.h.max(h * grow);
                }
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                self.h = h;
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut dp = DormandPrince::new(|_t, y: &[f64; 1]| [-2.0 * y[0]], Tolerances::default(), 0.01);
        let y = dp.advance(0.0, [1.0], 3.0).unwrap();
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_chained_calls() {
        let mut dp = DormandPrince::new(|_t, y: &[f64; 2]| [y[1], -y[0]], Tolerances::default(), 0.1);
        let mut y = [1.0, 0.0];
        let mut t = 0.0;
        for _ in 0..100 {
            y = dp.advance(t, y, t + 0.1).unwrap();
            t += 0.1;
        }
        assert!((y[0] - t.cos()).abs() < 1e-8);
        assert!((y[1] + t.sin()).abs() < 1e-8);
    }

    #[test]
    fn backwards_rejected() {
        let mut dp = DormandPrince::new(|_t, y: &[f64; 1]| [y[0]], Tolerances::default(), 0.1);
        assert!(dp.advance(1.0, [1.0], 0.5).is_err());
    }
}
