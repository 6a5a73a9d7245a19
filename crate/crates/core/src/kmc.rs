//! Kinetic Monte Carlo of the charge configuration of a single dot under
//! simultaneous resonant and above-band excitation.
//!
//! Ground level: one slot per spin for electrons (up, down) and holes
//! (up, down), Pauli-blocked. Excited level: unbounded electron and hole
//! counts. Recombination pairs an electron with the hole of opposite spin.
//! Emissions are tagged by the ground-state charge content just before the
//! photon leaves; trion-tagged emissions are the detected signal.

use crate::error::{require_non_negative, require_positive, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const UP: usize = 0;
pub const DOWN: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct QdState {
    /// Electron ground slots `[up, down]`.
    pub e_ground: [bool; 2],
    /// Hole ground slots `[up, down]`.
    pub h_ground: [bool; 2],
    pub e_excited: u32,
    pub h_excited: u32,
}

impl QdState {
    pub fn empty() -> Self {
        QdState::default()
    }

    pub fn ground_electrons(&self) -> u32 {
        self.e_ground.iter().filter(|b| **b).count() as u32
    }

    pub fn ground_holes(&self) -> u32 {
        self.h_ground.iter().filter(|b| **b).count() as u32
    }

    /// Classification of the ground-state content.
    pub fn tag(&self) -> Tag {
        match (self.ground_electrons(), self.ground_holes()) {
            (1, 1) => Tag::Exciton,
            (2, 1) => Tag::NegativeTrion,
            (1, 2) => Tag::PositiveTrion,
            _ => Tag::Other,
        }
    }

    /// Net charge in units of e (holes positive), ground and excited levels.
    pub fn charge(&self) -> i64 {
        (self.ground_holes() + self.h_excited) as i64 - (self.ground_electrons() + self.e_excited) as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Exciton,
    PositiveTrion,
    NegativeTrion,
    Other,
}

impl Tag {
    pub const ALL: [Tag; 4] = [Tag::Exciton, Tag::PositiveTrion, Tag::NegativeTrion, Tag::Other];

    pub fn index(self) -> usize {
        match self {
            Tag::Exciton => 0,
            Tag::PositiveTrion => 1,
            Tag::NegativeTrion => 2,
            Tag::Other => 3,
        }
    }

    pub fn is_trion(self) -> bool {
        matches!(self, Tag::PositiveTrion | Tag::NegativeTrion)
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::Exciton => "exciton",
            Tag::PositiveTrion => "positive_trion",
            Tag::NegativeTrion => "negative_trion",
            Tag::Other => "other",
        }
    }
}

/// Rate coefficients. Above-band generation scales with the HeNe power,
/// resonant pumping and carrier loss with the resonant power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateParams {
    /// Recombination rate of one opposite-spin ground pair (ns^-1).
    pub gamma_rad: f64,
    /// Pair generation per unit HeNe power (ns^-1).
    pub gen_ab: f64,
    /// Resonant pair creation per unit resonant power (ns^-1).
    pub pump_res: f64,
    /// Excited-to-ground relaxation per excited carrier (ns^-1).
    pub relax: f64,
    /// Ejection of one ground carrier per unit resonant power (ns^-1).
    pub loss_res: f64,
    pub rad_excited: f64,
    pub spin_flip: f64,
    /// Electron-to-hole capture ratio of the above-band flux.
    pub asym_gen: f64,
    pub loss_excited_only: bool,
}

/// Toolkit defaults: gamma_rad matches the measured emitter decay rate, the
/// other rates were chosen so the trion maximum and its shift show up on the
/// default power grids.
impl Default for RateParams {
    fn default() -> Self {
        RateParams {
            gamma_rad: 1.5,
            gen_ab: 1.0,
            pump_res: 10.0,
            relax: 0.03,
            loss_res: 0.01,
            rad_excited: 0.0,
            spin_flip: 0.0,
            asym_gen: 1.0,
            loss_excited_only: false,
        }
    }
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        require_non_negative("gamma_rad", self.gamma_rad)?;
        require_non_negative("gen_ab", self.gen_ab)?;
        require_non_negative("pump_res", self.pump_res)?;
        require_non_negative("relax", self.relax)?;
        require_non_negative("loss_res", self.loss_res)?;
        require_non_negative("rad_excited", self.rad_excited)?;
        require_non_negative("spin_flip", self.spin_flip)?;
        require_positive("asym_gen", self.asym_gen)
    }

    /// Event rates at the given HeNe and resonant powers.
    pub fn at(&self, p_hene: f64, p_res: f64) -> Result<EventRates> {
        self.validate()?;
        require_non_negative("p_hene", p_hene)?;
        require_non_negative("p_res", p_res)?;
        Ok(EventRates {
            gamma_rad: self.gamma_rad,
            generation: self.gen_ab * p_hene,
            pump: self.pump_res * p_res,
            relax: self.relax,
            loss: self.loss_res * p_res,
            rad_excited: self.rad_excited,
            spin_flip: self.spin_flip,
            asym_gen: self.asym_gen,
            loss_excited_only: self.loss_excited_only,
        })
    }
}

/// Rates with the powers folded in; all in ns^-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRates {
    pub gamma_rad: f64,
    pub generation: f64,
    pub pump: f64,
    pub relax: f64,
    pub loss: f64,
    pub rad_excited: f64,
    pub spin_flip: f64,
    pub asym_gen: f64,
    pub loss_excited_only: bool,
}

impl EventRates {
    /// Only the five principal processes; optional ones off.
    pub fn basic(gamma_rad: f64, generation: f64, pump: f64, relax: f64, loss: f64) -> Self {
        EventRates {
            gamma_rad,
            generation,
            pump,
            relax,
            loss,
            rad_excited: 0.0,
            spin_flip: 0.0,
            asym_gen: 1.0,
            loss_excited_only: false,
        }
    }
}

/// One transition of the jump process. Spin indices are [`UP`] / [`DOWN`];
/// a pair is named by its electron spin (the hole has the opposite one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Recombine { e_spin: usize },
    GeneratePair,
    GenerateElectron,
    GenerateHole,
    ResonantPair { e_spin: usize },
    RelaxElectron { spin: usize },
    RelaxHole { spin: usize },
    LoseElectron { spin: usize },
    LoseHole { spin: usize },
    LoseExcitedElectron,
    LoseExcitedHole,
    FlipElectron { from: usize },
    FlipHole { from: usize },
    RecombineExcited,
}

impl Event {
    pub fn is_emission(&self) -> bool {
        matches!(self, Event::Recombine { .. } | Event::RecombineExcited)
    }
}

/// Appends every enabled event with its propensity to `out` (cleared first).
pub fn enumerate_events_into(state: &QdState, r: &EventRates, out: &mut Vec<(Event, f64)>) {
    out.clear();
    let s = state;
    let mut push = |e: Event, a: f64| {
        if a > 0.0 {
            out.push((e, a));
        }
    };
    for e_spin in [UP, DOWN] {
        if s.e_ground[e_spin] && s.h_ground[1 - e_spin] {
            push(Event::Recombine { e_spin }, r.gamma_rad);
        }
    }
    if r.asym_gen == 1.0 {
        push(Event::GeneratePair, r.generation);
    } else {
        let ratio = r.asym_gen;
        push(Event::GenerateElectron, r.generation * 2.0 * ratio / (1.0 + ratio));
        push(Event::GenerateHole, r.generation * 2.0 / (1.0 + ratio));
    }
    let allowed = [UP, DOWN].map(|e| !s.e_ground[e] && !s.h_ground[1 - e]);
    let n_allowed = allowed.iter().filter(|a| **a).count();
    for e_spin in [UP, DOWN] {
        if allowed[e_spin] {
            push(Event::ResonantPair { e_spin }, r.pump / n_allowed as f64);
        }
    }
    let free_e = s.e_ground.iter().filter(|b| !**b).count();
    let free_h = s.h_ground.iter().filter(|b| !**b).count();
    for spin in [UP, DOWN] {
        if !s.e_ground[spin] && s.e_excited > 0 {
            push(Event::RelaxElectron { spin }, r.relax * s.e_excited as f64 / free_e as f64);
        }
        if !s.h_ground[spin] && s.h_excited > 0 {
            push(Event::RelaxHole { spin }, r.relax * s.h_excited as f64 / free_h as f64);
        }
    }
    if r.loss_excited_only {
        push(Event::LoseExcitedElectron, r.loss * s.e_excited as f64);
        push(Event::LoseExcitedHole, r.loss * s.h_excited as f64);
    } else {
        for spin in [UP, DOWN] {
            if s.e_ground[spin] {
                push(Event::LoseElectron { spin }, r.loss);
            }
            if s.h_ground[spin] {
                push(Event::LoseHole { spin }, r.loss);
            }
        }
    }
    for from in [UP, DOWN] {
        if s.e_ground[from] && !s.e_ground[1 - from] {
            push(Event::FlipElectron { from }, r.spin_flip);
        }
        if s.h_ground[from] && !s.h_ground[1 - from] {
            push(Event::FlipHole { from }, r.spin_flip);
        }
    }
    push(
        Event::RecombineExcited,
        r.rad_excited * s.e_excited.min(s.h_excited) as f64,
    );
}

pub fn enumerate_events(state: &QdState, rates: &EventRates) -> Vec<(Event, f64)> {
    let mut v = Vec::new();
    enumerate_events_into(state, rates, &mut v);
    v
}

fn fill(slot: &mut bool) {
    debug_assert!(!*slot, "Pauli exclusion violated");
    *slot = true;
}

fn empty(slot: &mut bool) {
    debug_assert!(*slot, "removing an absent carrier");
    *slot = false;
}

/// Applies `event` to `state`.
pub fn apply(state: &mut QdState, event: &Event) {
    #[cfg(debug_assertions)]
    let before = *state;
    match *event {
        Event::Recombine { e_spin } => {
            empty(&mut state.e_ground[e_spin]);
            empty(&mut state.h_ground[1 - e_spin]);
        }
        Event::GeneratePair => {
            state.e_excited += 1;
            state.h_excited += 1;
        }
        Event::GenerateElectron => state.e_excited += 1,
        Event::GenerateHole => state.h_excited += 1,
        Event::ResonantPair { e_spin } => {
            fill(&mut state.e_ground[e_spin]);
            fill(&mut state.h_ground[1 - e_spin]);
        }
        Event::RelaxElectron { spin } => {
            state.e_excited -= 1;
            fill(&mut state.e_ground[spin]);
        }
        Event::RelaxHole { spin } => {
            state.h_excited -= 1;
            fill(&mut state.h_ground[spin]);
        }
        Event::LoseElectron { spin } => empty(&mut state.e_ground[spin]),
        Event::LoseHole { spin } => empty(&mut state.h_ground[spin]),
        Event::LoseExcitedElectron => state.e_excited -= 1,
        Event::LoseExcitedHole => state.h_excited -= 1,
        Event::FlipElectron { from } => {
            empty(&mut state.e_ground[from]);
            fill(&mut state.e_ground[1 - from]);
        }
        Event::FlipHole { from } => {
            empty(&mut state.h_ground[from]);
            fill(&mut state.h_ground[1 - from]);
        }
        Event::RecombineExcited => {
            state.e_excited -= 1;
            state.h_excited -= 1;
        }
    }
    #[cfg(debug_assertions)]
    {
        let de = (state.ground_electrons() + state.e_excited) as i64
            - (before.ground_electrons() + before.e_excited) as i64;
        let dh = (state.ground_holes() + state.h_excited) as i64
            - (before.ground_holes() + before.h_excited) as i64;
        let expect = match event {
            Event::Recombine { .. } | Event::RecombineExcited => (-1, -1),
            Event::GeneratePair | Event::ResonantPair { .. } => (1, 1),
            Event::GenerateElectron => (1, 0),
            Event::GenerateHole => (0, 1),
            Event::LoseElectron { .. } | Event::LoseExcitedElectron => (-1, 0),
            Event::LoseHole { .. } | Event::LoseExcitedHole => (0, -1),
            _ => (0, 0),
        };
        debug_assert_eq!((de, dh), expect, "carrier bookkeeping for {event:?}");
        if matches!(event, Event::GeneratePair | Event::GenerateElectron | Event::GenerateHole) {
            debug_assert_eq!(state.e_ground, before.e_ground);
            debug_assert_eq!(state.h_ground, before.h_ground);
        }
    }
}

/// Outcome of one Gillespie step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub event: Event,
    pub dt: f64,
    /// Set for emissions: classification of the state before the event.
    pub emission: Option<Tag>,
}

/// Draws the waiting time and the next event, then applies it. Returns
/// `None` in an absorbing state (no enabled event).
pub fn step<R: Rng + ?Sized>(
    state: &mut QdState,
    rates: &EventRates,
    rng: &mut R,
    buf: &mut Vec<(Event, f64)>,
) -> Option<Step> {
    enumerate_events_into(state, rates, buf);
    let total: f64 = buf.iter().map(|e| e.1).sum();
    if !(total > 0.0) {
        return None;
    }
    let u: f64 = rng.random();
    let dt = -(1.0 - u).ln() / total;
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = buf[buf.len() - 1].0;
    for &(e, a) in buf.iter() {
        acc += a;
        if target < acc {
            chosen = e;
            break;
        }
    }
    let emission = match chosen {
        Event::Recombine { .. } => Some(state.tag()),
        Event::RecombineExcited => Some(Tag::Other),
        _ => None,
    };
    apply(state, &chosen);
    Some(Step {
        event: chosen,
        dt,
        emission,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    /// ns
    pub time: f64,
    pub tag: Tag,
}

/// Emission counts per tag, indexed by [`Tag::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TagCounts(pub [u64; 4]);

impl TagCounts {
    pub fn get(&self, tag: Tag) -> u64 {
        self.0[tag.index()]
    }

    pub fn trions(&self) -> u64 {
        self.get(Tag::PositiveTrion) + self.get(Tag::NegativeTrion)
    }

    fn add(&mut self, tag: Tag) {
        self.0[tag.index()] += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub emissions: Vec<EmissionRecord>,
    pub counts: TagCounts,
    pub events: u64,
    pub final_state: QdState,
}

// Runs the Gillespie loop from `state` over [0, t_max), calling `on_step`
// for every event that happens before the horizon.
fn run<R: Rng>(
    rates: &EventRates,
    t_max: f64,
    state: &mut QdState,
    rng: &mut R,
    mut on_step: impl FnMut(f64, &Step, &QdState),
) -> u64 {
    let mut buf = Vec::with_capacity(16);
    let mut t = 0.0;
    let mut n = 0;
    loop {
        let before = *state;
        let Some(s) = step(state, rates, rng, &mut buf) else {
            break;
        };
        t += s.dt;
        if t >= t_max {
            // the drawn event lies beyond the horizon
            *state = before;
            break;
        }
        n += 1;
        on_step(t, &s, &before);
    }
    n
}

/// One trajectory from the empty dot, keeping every emission.
pub fn simulate(params: &RateParams, p_hene: f64, p_res: f64, t_max: f64, seed: u64) -> Result<Trajectory> {
    require_positive("t_max", t_max)?;
    let rates = params.at(p_hene, p_res)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = QdState::empty();
    let mut emissions = Vec::new();
    let mut counts = TagCounts::default();
    let events = run(&rates, t_max, &mut state, &mut rng, |t, s, _| {
        if let Some(tag) = s.emission {
            emissions.push(EmissionRecord { time: t, tag });
            counts.add(tag);
        }
    });
    Ok(Trajectory {
        emissions,
        counts,
        events,
        final_state: state,
    })
}

/// Long-run statistics of a single trajectory after a burn-in period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryEstimate {
    /// Emission rates per tag (ns^-1), indexed by [`Tag::index`].
    pub tag_rates: [f64; 4],
    /// Time-weighted occupation probability of every visited state.
    pub occupation: Vec<(QdState, f64)>,
    pub events: u64,
}

/// Time averages over `[burn_in, burn_in + duration)` of one trajectory
/// started from the empty dot.
pub fn stationary_estimate(
    rates: &EventRates,
    burn_in: f64,
    duration: f64,
    seed: u64,
) -> Result<StationaryEstimate> {
    require_non_negative("burn_in", burn_in)?;
    require_positive("duration", duration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = QdState::empty();
    if burn_in > 0.0 {
        run(rates, burn_in, &mut state, &mut rng, |_, _, _| {});
    }
    let mut occ: std::collections::HashMap<QdState, f64> = std::collections::HashMap::new();
    let mut counts = TagCounts::default();
    let mut last = 0.0;
    let events = run(rates, duration, &mut state, &mut rng, |t, s, before| {
        *occ.entry(*before).or_default() += t - last;
        last = t;
        if let Some(tag) = s.emission {
            counts.add(tag);
        }
    });
    *occ.entry(state).or_default() += duration - last;
    let mut occupation: Vec<(QdState, f64)> = occ.into_iter().map(|(s, t)| (s, t / duration)).collect();
    occupation.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(StationaryEstimate {
        tag_rates: counts.0.map(|c| c as f64 / duration),
        occupation,
        events,
    })
}

/// Seed of the RNG stream for trajectory `traj` of sweep cell `cell`.
pub fn stream_seed(seed: u64, cell: u64, traj: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ cell) ^ traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub p_hene: f64,
    pub p_res: f64,
    /// Emissions per tag per simulated second, averaged over trajectories.
    pub rates: [f64; 4],
    /// Standard error of the trion rate across trajectories (s^-1).
    pub trion_stderr: f64,
}

impl SweepCell {
    pub fn trion_rate(&self) -> f64 {
        self.rates[Tag::PositiveTrion.index()] + self.rates[Tag::NegativeTrion.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Ordered with `p_hene` fastest: cell `k` has `p_res[k / n_hene]`.
    pub cells: Vec<SweepCell>,
    pub p_hene: Vec<f64>,
    pub p_res: Vec<f64>,
    pub trajectories: usize,
    pub t_max: f64,
    pub seed: u64,
}

impl SweepResult {
    /// Trion rate vs HeNe power at resonant power index `r`.
    pub fn trion_curve(&self, r: usize) -> Vec<f64> {
        let n = self.p_hene.len();
        self.cells[r * n..(r + 1) * n].iter().map(|c| c.trion_rate()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Counting window per trajectory (ns).
    pub t_max: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Uncounted lead-in before the window, letting trajectories forget the
    /// empty start (ns).
    #[serde(default)]
    pub warmup: f64,
}

/// Counting window of the default sweep (ns).
pub const DEFAULT_T_MAX: f64 = 1000.0;
/// Lead-in of the default sweep (ns).
pub const DEFAULT_WARMUP: f64 = 200.0;

/// HeNe powers of the default sweep: log-spaced, 1.26x apart, ending
/// below the saturation knee of the lossless curve.
pub fn default_p_hene() -> Vec<f64> {
    geomspace(1e-3, 0.06, 19)
}

/// Resonant powers of the default sweep.
pub fn default_p_res() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}

pub fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

/// Trion (and other) emission rates on the grid `p_hene x p_res`. Every
/// trajectory starts from the empty dot and owns an RNG stream derived from
/// `(seed, cell, trajectory)`, so results do not depend on thread count.
pub fn sweep_intensity(
    params: &RateParams,
    p_hene: &[f64],
    p_res: &[f64],
    spec: &SweepSpec,
) -> Result<SweepResult> {
    if p_hene.is_empty() || p_res.is_empty() {
        return Err(Error::invalid("p_hene", "power grids must be non-empty"));
    }
    require_positive("t_max", spec.t_max)?;
    require_non_negative("warmup", spec.warmup)?;
    if spec.trajectories == 0 {
        return Err(Error::invalid("trajectories", "must be >= 1"));
    }
    let mut jobs = Vec::with_capacity(p_hene.len() * p_res.len());
    for &pr in p_res {
        for &ph in p_hene {
            jobs.push(params.at(ph, pr)?);
        }
    }
    let n_traj = spec.trajectories;
    let counts: Vec<TagCounts> = (0..jobs.len() * n_traj)
        .into_par_iter()
        .map(|k| {
            let (cell, traj) = (k / n_traj, k % n_traj);
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, cell as u64, traj as u64));
            let mut state = QdState::empty();
            let mut c = TagCounts::default();
            if spec.warmup > 0.0 {
                run(&jobs[cell], spec.warmup, &mut state, &mut rng, |_, _, _| {});
            }
            run(&jobs[cell], spec.t_max, &mut state, &mut rng, |_, s, _| {
                if let Some(tag) = s.emission {
                    c.add(tag);
                }
            });
            c
        })
        .collect();
    let per_second = 1e9 / spec.t_max;
    let cells = counts
        .chunks(n_traj)
        .enumerate()
        .map(|(cell, chunk)| {
            let mut sums = [0.0; 4];
            let (mut s1, mut s2) = (0.0, 0.0);
            for c in chunk {
                for (acc, v) in sums.iter_mut().zip(c.0) {
                    *acc += v as f64;
                }
                let t = c.trions() as f64;
                s1 += t;
                s2 += t * t;
            }
            let n = n_traj as f64;
            let mean = s1 / n;
            let var = if n_traj > 1 { (s2 - n * mean * mean).max(0.0) / (n - 1.0) } else { 0.0 };
            SweepCell {
                p_hene: p_hene[cell % p_hene.len()],
                p_res: p_res[cell / p_hene.len()],
                rates: sums.map(|v| v / n * per_second),
                trion_stderr: (var / n).sqrt() * per_second,
            }
        })
        .collect();
    Ok(SweepResult {
        cells,
        p_hene: p_hene.to_vec(),
        p_res: p_res.to_vec(),
        trajectories: n_traj,
        t_max: spec.t_max,
        seed: spec.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityMaximum {
    pub index: usize,
    pub p_hene: f64,
    /// Smoothed value at the maximum.
    pub value: f64,
    /// Maximum on the first or last grid point.
    pub boundary: bool,
    /// Vertex of a quadratic fitted (in log power) to the raw curve around
    /// the smoothed maximum; equals `p_hene` on the boundary.
    pub p_hene_fit: f64,
}

/// 3-point moving average; the end points average their two neighbours
/// inside the curve.
pub fn smooth3(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Location of the maximum of a smoothed intensity curve.
pub fn find_intensity_maximum(p_hene: &[f64], counts: &[f64]) -> Result<IntensityMaximum> {
    if p_hene.len() != counts.len() {
        return Err(Error::invalid("counts", "length differs from the power grid"));
    }
    if counts.len() < 5 {
        return Err(Error::invalid("counts", "needs at least 5 points"));
    }
    let s = smooth3(counts);
    let (index, &value) = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    if s.iter().all(|v| *v == value) {
        return Err(Error::NoPeak("flat intensity curve has no maximum".into()));
    }
    let boundary = index == 0 || index + 1 == counts.len();
    let p_hene_fit = if boundary {
        p_hene[index]
    } else {
        refine_vertex(p_hene, counts, index, MAX_FIT_HALF_WIDTH)
    };
    Ok(IntensityMaximum {
        index,
        p_hene: p_hene[index],
        value,
        boundary,
        p_hene_fit,
    })
}

const MAX_FIT_HALF_WIDTH: usize = 4;

// Least-squares parabola through the points within `half` of `index`; the
// abscissa is ln(p) when all powers are positive. Falls back to the grid
// point unless the fit is concave.
fn refine_vertex(p: &[f64], y: &[f64], index: usize, half: usize) -> f64 {
    let lo = index.saturating_sub(half);
    let hi = (index + half).min(p.len() - 1);
    let log = p[lo..=hi].iter().all(|v| *v > 0.0);
    let u = |v: f64| if log { v.ln() } else { v };
    let u0 = u(p[index]);
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut r = nalgebra::Vector3::<f64>::zeros();
    for i in lo..=hi {
        let x = u(p[i]) - u0;
        let phi = nalgebra::Vector3::new(1.0, x, x * x);
        m += phi * phi.transpose();
        r += phi * y[i];
    }
    let Some(c) = m.lu().solve(&r) else {
        return p[index];
    };
    if !(c[2] < 0.0) {
        return p[index];
    }
    let x = (-c[1] / (2.0 * c[2])).clamp(u(p[lo]) - u0, u(p[hi]) - u0) + u0;
    if log {
        x.exp()
    } else {
        x
    }
}
