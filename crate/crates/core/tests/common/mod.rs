//! Test oracles kept apart from the library code paths.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

/// Exact stationary solution of the dot's charge master equation on the
/// state space reachable from the empty dot, with excited reservoirs capped
/// at `cap` carriers (generation is blocked at the cap).
///
/// State encoding: bit 0 e-up, bit 1 e-down, bit 2 h-up, bit 3 h-down, plus
/// the two reservoir counts. The transition catalog is written out here
/// independently of the simulator.
pub struct MasterEquation {
    pub states: Vec<(u8, u32, u32)>,
    pub pi: Vec<f64>,
    /// Emission rates per tag: exciton, positive trion, negative trion, other.
    pub tag_rates: [f64; 4],
}

#[derive(Clone, Copy)]
pub struct Rates {
    pub gamma: f64,
    pub gen: f64,
    pub pump: f64,
    pub relax: f64,
    pub loss: f64,
}

fn tag_index(g: u8) -> usize {
    let ne = (g & 1) + ((g >> 1) & 1);
    let nh = ((g >> 2) & 1) + ((g >> 3) & 1);
    match (ne, nh) {
        (1, 1) => 0,
        (1, 2) => 1,
        (2, 1) => 2,
        _ => 3,
    }
}

// (target, rate, emission tag of the source if radiative)
fn transitions(s: (u8, u32, u32), r: &Rates, cap: u32) -> Vec<((u8, u32, u32), f64, Option<usize>)> {
    let (g, ne, nh) = s;
    let mut out = Vec::new();
    let has = |b: u8| g & b != 0;
    // e-up with h-down (bits 0 and 3), e-down with h-up (bits 1 and 2)
    for mask in [0b1001u8, 0b0110] {
        if g & mask == mask && r.gamma > 0.0 {
            out.push(((g & !mask, ne, nh), r.gamma, Some(tag_index(g))));
        }
    }
    if r.gen > 0.0 && ne < cap && nh < cap {
        out.push(((g, ne + 1, nh + 1), r.gen, None));
    }
    let open: Vec<u8> = [0b1001u8, 0b0110].into_iter().filter(|m| g & m == 0).collect();
    if r.pump > 0.0 {
        for m in &open {
            out.push(((g | m, ne, nh), r.pump / open.len() as f64, None));
        }
    }
    let free_e: Vec<u8> = [1u8, 2].into_iter().filter(|b| !has(*b)).collect();
    let free_h: Vec<u8> = [4u8, 8].into_iter().filter(|b| !has(*b)).collect();
    if r.relax > 0.0 {
        if ne > 0 {
            for b in &free_e {
                out.push(((g | b, ne - 1, nh), r.relax * ne as f64 / free_e.len() as f64, None));
            }
        }
        if nh > 0 {
            for b in &free_h {
                out.push(((g | b, ne, nh - 1), r.relax * nh as f64 / free_h.len() as f64, None));
            }
        }
    }
    if r.loss > 0.0 {
        for b in [1u8, 2, 4, 8] {
            if has(b) {
                out.push(((g & !b, ne, nh), r.loss, None));
            }
        }
    }
    out
}

impl MasterEquation {
    pub fn solve(r: &Rates, cap: u32) -> MasterEquation {
        let start = (0u8, 0u32, 0u32);
        let mut seen: HashMap<(u8, u32, u32), ()> = HashMap::new();
        seen.insert(start, ());
        let mut queue = VecDeque::from([start]);
        while let Some(s) = queue.pop_front() {
            for (t, _, _) in transitions(s, r, cap) {
                if seen.insert(t, ()).is_none() {
                    queue.push_back(t);
                }
            }
        }
        let mut states: Vec<(u8, u32, u32)> = seen.into_keys().collect();
        // reservoir-major ordering keeps the generator banded
        states.sort_by_key(|&(g, ne, nh)| (ne, nh, g));
        let index: HashMap<(u8, u32, u32), usize> =
            states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let n = states.len();
        if n == 1 {
            return MasterEquation {
                states,
                pi: vec![1.0],
                tag_rates: [0.0; 4],
            };
        }
        // A = Q^T: A[to][from] += rate, A[from][from] -= rate
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut bw = 0usize;
        for (i, s) in states.iter().enumerate() {
            for (t, rate, _) in transitions(*s, r, cap) {
                let j = index[&t];
                entries.push((j, i, rate));
                entries.push((i, i, -rate));
                bw = bw.max(i.abs_diff(j));
            }
        }
        // unknowns pi_1..pi_{n-1} with pi_0 = 1; equations 1..n-1
        let m = n - 1;
        let width = 2 * bw + 1;
        let mut band = vec![0.0; m * width];
        let mut rhs = vec![0.0; m];
        let at = |row: usize, col: usize| row * width + (col + bw - row);
        for (row, col, v) in entries {
            if row == 0 {
                continue;
            }
            if col == 0 {
                rhs[row - 1] -= v;
            } else {
                band[at(row - 1, col - 1)] += v;
            }
        }
        // banded Gaussian elimination without pivoting
        for k in 0..m {
            let pivot = band[at(k, k)];
            assert!(pivot.abs() > 0.0, "zero pivot at {k}");
            for row in k + 1..(k + bw + 1).min(m) {
                let f = band[at(row, k)] / pivot;
                if f == 0.0 {
                    continue;
                }
                for col in k..(k + bw + 1).min(m) {
                    band[at(row, col)] -= f * band[at(k, col)];
                }
                rhs[row] -= f * rhs[k];
            }
        }
        let mut x = vec![0.0; m];
        for k in (0..m).rev() {
            let mut acc = rhs[k];
            for col in k + 1..(k + bw + 1).min(m) {
                acc -= band[at(k, col)] * x[col];
            }
            x[k] = acc / band[at(k, k)];
        }
        let mut pi = Vec::with_capacity(n);
        pi.push(1.0);
        pi.extend(x);
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        let mut tag_rates = [0.0; 4];
        for (i, s) in states.iter().enumerate() {
            for (_, rate, tag) in transitions(*s, r, cap) {
                if let Some(t) = tag {
                    tag_rates[t] += pi[i] * rate;
                }
            }
        }
        MasterEquation {
            states,
            pi,
            tag_rates,
        }
    }

    pub fn trion_rate(&self) -> f64 {
        self.tag_rates[1] + self.tag_rates[2]
    }

    pub fn probability(&self, g: u8, ne: u32, nh: u32) -> f64 {
        self.states
            .iter()
            .position(|s| *s == (g, ne, nh))
            .map_or(0.0, |i| self.pi[i])
    }
}

/// Bit encoding of a simulator state, matching [`MasterEquation`].
pub fn encode(s: &resofluo::kmc::QdState) -> (u8, u32, u32) {
    let mut g = 0u8;
    if s.e_ground[0] {
        g |= 1;
    }
    if s.e_ground[1] {
        g |= 2;
    }
    if s.h_ground[0] {
        g |= 4;
    }
    if s.h_ground[1] {
        g |= 8;
    }
    (g, s.e_excited, s.h_excited)
}

/// Two-state check of the oracle: a dot that only holds an exciton.
#[test]
fn oracle_two_state_chain() {
    let r = Rates {
        gamma: 1.5,
        gen: 0.0,
        pump: 0.5,
        relax: 0.0,
        loss: 0.0,
    };
    let me = MasterEquation::solve(&r, 20);
    // empty -> X (pump, two channels) -> XX (pump, one channel) ...
    assert!((me.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // balance of the empty state: pump * p0 = gamma * p(X)
    let px: f64 = [0b1001u8, 0b0110].iter().map(|g| me.probability(*g, 0, 0)).sum();
    assert!((0.5 * me.probability(0, 0, 0) - 1.5 * px).abs() < 1e-12);
}

pub mod ensembles {
    //! Noisy synthetic data sets with known ground truth for the fitters.
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Poisson};
    use resofluo::fit::DataSeries;
    use resofluo::spectral::voigt_density;
    use resofluo::tls::{apply_background, g2_at, power_broadened_fwhm, TlsParams};

    pub const PLE_RABI: f64 = 0.47;
    pub const GAMMA: f64 = 1.5;
    pub const PLE_G_FWHM: f64 = 2.5;
    pub const G2_RABI: f64 = 0.47;
    pub const G2_RHO2: f64 = 0.78;
    pub const PLATEAU: f64 = 1.4;

    /// Poisson counts of a Voigt PLE peak (1000 counts on 20 background).
    pub fn ple(seed: u64) -> DataSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = power_broadened_fwhm(GAMMA, PLE_RABI).unwrap();
        let peak = voigt_density(0.0, l, PLE_G_FWHM).unwrap();
        let x: Vec<f64> = (0..81).map(|i| -8.0 + 0.2 * i as f64).collect();
        let y = x
            .iter()
            .map(|&v| {
                let mean = 20.0 + 1000.0 * voigt_density(v - 0.3, l, PLE_G_FWHM).unwrap() / peak;
                Poisson::new(mean).unwrap().sample(&mut rng)
            })
            .collect();
        DataSeries::new(x, y).unwrap()
    }

    /// g2 with background, Gaussian noise of 0.02.
    pub fn g2(seed: u64) -> DataSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..81).map(|i| 0.1 * i as f64).collect();
        let clean = g2_at(&TlsParams::resonant(GAMMA, G2_RABI).unwrap(), &x).unwrap();
        let noisy = apply_background(&clean, G2_RHO2.sqrt()).unwrap();
        let n = Normal::new(0.0, 0.02).unwrap();
        let y = noisy.iter().map(|v| v + n.sample(&mut rng)).collect();
        DataSeries::new(x, y).unwrap()
    }

    /// Linewidth (GHz) vs HeNe power (nW): 1.4 + 1.2 exp(-P / 20), noise 0.03.
    pub fn narrowing(seed: u64) -> DataSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..16).map(|i| 8.0 * i as f64).collect();
        let n = Normal::new(0.0, 0.03).unwrap();
        let y = x
            .iter()
            .map(|p| PLATEAU + 1.2 * (-p / 20.0).exp() + n.sample(&mut rng))
            .collect();
        DataSeries::new(x, y).unwrap()
    }
}

/// Pump-only chain empty <-> X <-> XX: a horizon with ~20 expected exciton
/// emissions.
pub fn empty_dot_horizon(p: &resofluo::kmc::RateParams) -> f64 {
    let (g, k) = (p.gamma_rad, p.pump_res);
    let pi_x = (k / g) / (1.0 + k / g + k * k / (2.0 * g * g));
    20.0 / (g * pi_x)
}
