use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resofluo::spectral::*;

fn random_map(seed: u64, n: usize, step: f64) -> Map2D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ax = Grid1D::new(-1.0, step, n).unwrap();
    let mut m = Map2D::zeros(ax, ax);
    m.values.iter_mut().for_each(|v| *v = rng.random::<f64>());
    m
}

// Direct double sum over every source pixel: out(i, j) = sum over sources of
// w(offset) * in(src), where the offset must lie along the convolved axis.
fn brute_force(map: &Map2D, shape: &LineShape, axis: MapAxis) -> Map2D {
    let n_l = map.laser_axis.count as isize;
    let n_p = map.photon_axis.count as isize;
    let step = map.laser_axis.step;
    let reach = (8.0 * shape.fwhm() / step).floor() as isize;
    let norm: f64 = (-reach..=reach).map(|k| shape.density(k as f64 * step)).sum();
    let w = |k: isize| {
        if k.abs() > reach {
            0.0
        } else {
            shape.density(k as f64 * step) / norm
        }
    };
    let mut out = Map2D::zeros(map.laser_axis, map.photon_axis);
    for i in 0..n_l {
        for j in 0..n_p {
            let mut acc = 0.0;
            for si in 0..n_l {
                for sj in 0..n_p {
                    let (di, dj) = (i - si, j - sj);
                    let weight = match axis {
                        MapAxis::Laser if dj == 0 => w(di),
                        MapAxis::Photon if di == 0 => w(dj),
                        MapAxis::Diagonal if di == dj => w(di),
                        _ => 0.0,
                    };
                    acc += weight * map.get(si as usize, sj as usize);
                }
            }
            *out.get_mut(i as usize, j as usize) = acc;
        }
    }
    out
}

#[test]
fn convolution_equals_direct_summation() {
    let shapes = [
        LineShape::gaussian(0.31).unwrap(),
        LineShape::lorentzian(0.12).unwrap(),
        LineShape::voigt(0.1, 0.2).unwrap(),
    ];
    for seed in 0..4 {
        let m = random_map(seed, 32, 0.05);
        for s in &shapes {
            for axis in [MapAxis::Laser, MapAxis::Photon, MapAxis::Diagonal] {
                let fast = convolve_map(&m, s, axis).unwrap();
                let slow = brute_force(&m, s, axis);
                let err = fast
                    .values
                    .iter()
                    .zip(&slow.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-10, "{s:?} {axis:?}: {err}");
            }
        }
    }
}

#[test]
fn convolution_conserves_intensity_inside_margins() {
    let ax = Grid1D::new(0.0, 0.02, 200).unwrap();
    let m = Map2D::from_fn(ax, ax, |l, p| {
        (-((l - 2.0).powi(2) + (p - 2.0).powi(2)) / 0.02).exp()
    });
    let total = m.total_intensity();
    for s in [LineShape::gaussian(0.2).unwrap(), LineShape::voigt(0.01, 0.15).unwrap()] {
        for axis in [MapAxis::Laser, MapAxis::Photon, MapAxis::Diagonal] {
            let c = convolve_map(&m, &s, axis).unwrap();
            assert!((c.total_intensity() / total - 1.0).abs() < 1e-6, "{s:?} {axis:?}");
        }
    }
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn voigt_equals_numeric_convolution() {
    for &(l, g) in &[(0.5, 1.0), (1.0, 0.3), (0.2387, 2.5), (2.0, 2.0)] {
        for &x in &[0.0, 0.3, 1.1, 2.7, -4.0] {
            let sg = g / (8.0 * std::f64::consts::LN_2).sqrt();
            let direct = simpson(
                |y| gaussian_density(y, g).unwrap() * lorentzian_density(x - y, l).unwrap(),
                -12.0 * sg,
                12.0 * sg,
                20_000,
            );
            let v = voigt_density(x, l, g).unwrap();
            assert!((v - direct).abs() < 1e-6, "l={l} g={g} x={x}: {v} vs {direct}");
        }
    }
}

#[test]
fn voigt_fwhm_approximation_tracks_numeric_width() {
    for &(l, g) in &[(0.24, 2.5), (1.0, 1.0), (2.0, 0.5)] {
        let grid = Grid1D::linspace(-10.0, 10.0, 40_001).unwrap();
        let c = Curve::sample(&grid, |x| voigt_density(x, l, g).unwrap());
        let w = estimate_fwhm(&c.x, &c.y).unwrap();
        assert!((voigt_fwhm_approx(l, g) / w - 1.0).abs() < 3e-4, "{l} {g}: {w}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in 0.0f64..3.0, b in 0.0f64..3.0, w in 0.05f64..0.4) {
        let m1 = random_map(s1, 24, 0.05);
        let m2 = random_map(s2, 24, 0.05);
        let mut mix = m1.clone();
        for (v, (x, y)) in mix.values.iter_mut().zip(m1.values.iter().zip(&m2.values)) {
            *v = a * x + b * y;
        }
        let k = LineShape::voigt(w / 2.0, w).unwrap();
        for axis in [MapAxis::Laser, MapAxis::Photon, MapAxis::Diagonal] {
            let c = convolve_map(&mix, &k, axis).unwrap();
            let c1 = convolve_map(&m1, &k, axis).unwrap();
            let c2 = convolve_map(&m2, &k, axis).unwrap();
            for i in 0..c.values.len() {
                prop_assert!((c.values[i] - (a * c1.values[i] + b * c2.values[i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn densities_are_normalized(fwhm in 0.05f64..5.0) {
        let g = simpson(|x| gaussian_density(x, fwhm).unwrap(), -5.0 * fwhm, 5.0 * fwhm, 4000);
        prop_assert!((g - 1.0).abs() < 1e-8);
        // Lorentzian tails: analytic mass outside +-R is (2/pi) atan(fwhm / 2R)
        let r = 200.0 * fwhm;
        let l = simpson(|x| lorentzian_density(x, fwhm).unwrap(), -r, r, 200_000);
        let tail = 2.0 / std::f64::consts::PI * (fwhm / (2.0 * r)).atan();
        prop_assert!((l + tail - 1.0).abs() < 1e-6);
    }

    #[test]
    fn grid_round_trip(start in -10.0f64..10.0, step in 0.001f64..1.0, n in 2usize..500) {
        let g = Grid1D::new(start, step, n).unwrap();
        for i in [0, n / 2, n - 1] {
            prop_assert!((g.fractional_index(g.at(i)) - i as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn unit_conversion_examples() {
    assert!((angular_to_ghz(1.5) - 0.238_732_414_637_843).abs() < 1e-12);
    assert!((ghz_to_angular(1.0) - 2.0 * std::f64::consts::PI).abs() < 1e-15);
}
