//! Faddeeva function `w(z) = exp(-z^2) erfc(-iz)` for `Im z >= 0`.
//!
//! Uses Weideman's rational expansion (SIAM J. Numer. Anal. 31, 1994) with
//! 32 terms. The expansion coefficients are computed once from a cosine sum
//! and cached.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::OnceLock;

const TERMS: usize = 32;

struct Weideman {
    scale: f64,
    coeffs: [f64; TERMS],
}

fn weideman() -> &'static Weideman {
    static TABLE: OnceLock<Weideman> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = TERMS as f64;
        let m = 2 * TERMS;
        let scale = (n / 2f64.sqrt()).sqrt();
        // f(k) for k = -M+1 .. M-1 (f(-M) = 0); even in k
        let f = |k: i64| -> f64 {
            let theta = k as f64 * PI / m as f64;
            let t = scale * (theta / 2.0).tan();
            (-t * t).exp() * (scale * scale + t * t)
        };
        let mut coeffs = [0.0; TERMS];
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let order = (idx + 1) as f64;
            let mut acc = 0.0;
            for k in -(m as i64) + 1..m as i64 {
                acc += f(k) * (PI * order * k as f64 / m as f64).cos();
            }
            *c = acc / (2 * m) as f64;
        }
        Weideman { scale, coeffs }
    })
}

/// Evaluates `w(z)` in the closed upper half plane.
///
/// Lower half plane arguments are mapped with `w(z) = 2 exp(-z^2) - w(-z)`.
pub fn faddeeva(z: Complex64) -> Complex64 {
    if z.im < 0.0 {
        let minus = faddeeva(-z);
        return 2.0 * (-z * z).exp() - minus;
    }
    let table = weideman();
    let l = Complex64::new(table.scale, 0.0);
    let iz = Complex64::i() * z;
    let denom = l - iz;
    let big_z = (l + iz) / denom;
    // Horner: p = sum_{m=1}^{N} a_m Z^{m-1}
    let mut p = Complex64::new(0.0, 0.0);
    for &c in table.coeffs.iter().rev() {
        p = p * big_z + c;
    }
    2.0 * p / (denom * denom) + (1.0 / PI.sqrt()) / denom
}
