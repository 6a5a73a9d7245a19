//! The `resofluo` command line: JSON configuration, scenario runners and
//! the CSV / PGM file formats.
//!
//! Every scenario reads one [`Config`] (file plus `--set key=value`
//! overrides), checks that the output directory is writable, runs, writes
//! its files together with the effective `config.json`, and prints one
//! summary line per file.

use crate::error::Error;
use crate::fit::{self, DataSeries, FitOptions, FitResult, PeakModel, PeakShape, PlateauModel};
use crate::fit::{G2Model, Model, PleVoigtModel};
use crate::fluo_map::{self, MapConfig, Regime};
use crate::kmc::{self, RateParams, SweepResult, SweepSpec, Tag};
use crate::spectral::{self, Grid1D, Map2D, TWO_PI};
use crate::tls::{self, TlsParams};
use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Map,
    Ple,
    G2,
    KmcSweep,
    FitPle,
    FitG2,
    FitNarrowing,
    Synth,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Map => "map",
            Scenario::Ple => "ple",
            Scenario::G2 => "g2",
            Scenario::KmcSweep => "kmc-sweep",
            Scenario::FitPle => "fit-ple",
            Scenario::FitG2 => "fit-g2",
            Scenario::FitNarrowing => "fit-narrowing",
            Scenario::Synth => "synth",
        }
    }
}

/// Failure classes, one exit code each.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::GridMismatch(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------- config

/// Emitter parameters. Rates in ns^-1, Rabi frequency in rad/ns, laser
/// detuning in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub gamma: f64,
    pub rabi: f64,
    pub detuning_ghz: f64,
    pub dephasing: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            gamma: 1.5,
            rabi: 0.47,
            detuning_ghz: 0.0,
            dephasing: 0.0,
        }
    }
}

impl Physics {
    pub fn tls(&self) -> crate::Result<TlsParams> {
        TlsParams::new(self.gamma, self.rabi, TWO_PI * self.detuning_ghz, self.dephasing)
    }
}

/// Map geometry and broadening (GHz). Both axes share `pixels` and `span`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    pub center: f64,
    pub span: f64,
    pub pixels: usize,
    pub laser_linewidth: f64,
    pub detector_fwhm: f64,
    pub inhomogeneous_fwhm: f64,
    pub regime: Regime,
    /// Also write a 16-bit PGM heatmap.
    pub pgm: bool,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            center: 0.0,
            span: fluo_map::DEFAULT_SPAN_GHZ,
            pixels: fluo_map::DEFAULT_PIXELS,
            laser_linewidth: 2e-4,
            detector_fwhm: 0.2,
            inhomogeneous_fwhm: 2.5,
            regime: Regime::Inelastic {
                include_coherent: true,
            },
            pgm: true,
        }
    }
}

/// Laser sweep of a PLE scan, offsets from `map.center` in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PleSection {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Default for PleSection {
    fn default() -> Self {
        PleSection {
            start: -6.0,
            stop: 6.0,
            points: 241,
        }
    }
}

/// Delay grid `0..=tau_max` (ns) and background. `signal_fraction` is the
/// amplitude ratio rho; the background enters as rho^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct G2Section {
    pub tau_max: f64,
    pub points: usize,
    pub signal_fraction: f64,
}

impl Default for G2Section {
    fn default() -> Self {
        G2Section {
            tau_max: 10.0,
            points: 201,
            signal_fraction: 1.0,
        }
    }
}

/// Rate model, power grids (in units of the rate coefficients) and
/// sampling effort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmcSection {
    pub rates: RateParams,
    pub p_hene: Vec<f64>,
    pub p_res: Vec<f64>,
    pub t_max: f64,
    pub warmup: f64,
    pub trajectories: usize,
}

impl Default for KmcSection {
    fn default() -> Self {
        KmcSection {
            rates: RateParams::default(),
            p_hene: kmc::default_p_hene(),
            p_res: kmc::default_p_res(),
            t_max: kmc::DEFAULT_T_MAX,
            warmup: kmc::DEFAULT_WARMUP,
            trajectories: 1000,
        }
    }
}

/// Input data and model options of the fit scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// CSV with columns x, y and optionally sigma.
    pub input: Option<PathBuf>,
    /// Drive used to pin the Lorentzian width of the PLE Voigt (rad/ns).
    pub omega_r: f64,
    pub gamma: f64,
    pub poisson_weights: bool,
    pub max_iterations: usize,
    pub init: Option<Vec<f64>>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            input: None,
            omega_r: 0.47,
            gamma: 1.5,
            poisson_weights: false,
            max_iterations: 200,
            init: None,
        }
    }
}

/// Curve sampled by the `synth` scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthModel {
    /// PLE Voigt with the Lorentzian width pinned by `omega_r`, `gamma`.
    Ple {
        amplitude: f64,
        center: f64,
        gaussian_fwhm: f64,
        baseline: f64,
        omega_r: f64,
        gamma: f64,
    },
    G2 {
        omega: f64,
        gamma: f64,
        signal_fraction: f64,
    },
    Narrowing {
        amplitude: f64,
        decay_scale: f64,
        plateau: f64,
    },
    Peak {
        shape: PeakShape,
        amplitude: f64,
        center: f64,
        fwhm: f64,
        baseline: f64,
    },
}

impl SynthModel {
    pub fn eval(&self, x: &[f64]) -> crate::Result<Vec<f64>> {
        match *self {
            SynthModel::Ple {
                amplitude,
                center,
                gaussian_fwhm,
                baseline,
                omega_r,
                gamma,
            } => PleVoigtModel {
                l_fwhm: fit::pinned_lorentzian_fwhm(omega_r, gamma)?,
            }
            .eval(&[amplitude, center, gaussian_fwhm, baseline], x),
            SynthModel::G2 {
                omega,
                gamma,
                signal_fraction,
            } => G2Model.eval(&[omega, gamma, signal_fraction], x),
            SynthModel::Narrowing {
                amplitude,
                decay_scale,
                plateau,
            } => {
                crate::error::require_positive("decay_scale", decay_scale)?;
                PlateauModel.eval(&[amplitude, decay_scale, plateau], x)
            }
            SynthModel::Peak {
                shape,
                amplitude,
                center,
                fwhm,
                baseline,
            } => PeakModel(shape).eval(&[amplitude, center, fwhm, baseline], x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    None,
    Gaussian { sigma: f64 },
    /// Counts drawn with the model value as mean.
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub model: SynthModel,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub noise: Noise,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            model: SynthModel::G2 {
                omega: 0.47,
                gamma: 1.5,
                signal_fraction: 0.78f64.sqrt(),
            },
            start: 0.0,
            stop: 8.0,
            points: 81,
            noise: Noise::Gaussian { sigma: 0.02 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub map: MapSection,
    #[serde(default)]
    pub ple: PleSection,
    #[serde(default)]
    pub g2: G2Section,
    #[serde(default)]
    pub kmc: KmcSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub synth: SynthSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn prefixed(section: &str, e: Error) -> CliError {
    match e {
        Error::InvalidParameter { name, reason } => {
            CliError::Config(format!("`{section}.{name}`: {reason}"))
        }
        other => CliError::Config(format!("{section}: {other}")),
    }
}

impl Config {
    /// Default configuration of a scenario.
    pub fn new(scenario: Scenario) -> Self {
        Config {
            scenario,
            seed: 0,
            output: default_output(),
            physics: Physics::default(),
            map: MapSection::default(),
            ple: PleSection::default(),
            g2: G2Section::default(),
            kmc: KmcSection::default(),
            fit: FitSection::default(),
            synth: SynthSection::default(),
        }
    }

    /// Parses a JSON document and applies `key=value` overrides, where keys
    /// are dotted paths (`physics.rabi`, `kmc.rates.loss_res`) and values
    /// are JSON literals or bare strings.
    pub fn parse(json: &str, overrides: &[String]) -> CliResult<Config> {
        let mut doc: Value = serde_json::from_str(json).map_err(|e| CliError::Config(e.to_string()))?;
        if !doc.is_object() {
            return Err(CliError::Config("configuration must be a JSON object".into()));
        }
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: Config = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section the scenario uses, naming the offending key.
    pub fn validate(&self) -> CliResult<()> {
        let tls = self.physics.tls().map_err(|e| prefixed("physics", e))?;
        match self.scenario {
            Scenario::Map => {
                self.map_config(tls)?;
            }
            Scenario::Ple => {
                self.map_config(tls)?;
                self.ple_grid()?;
            }
            Scenario::G2 => {
                self.g2_grid()?;
                tls::apply_background(&[], self.g2.signal_fraction).map_err(|e| prefixed("g2", e))?;
                if self.physics.rabi <= 0.0 {
                    return Err(CliError::Config("`physics.rabi`: must be > 0 for g2".into()));
                }
            }
            Scenario::KmcSweep => {
                let k = &self.kmc;
                k.rates.validate().map_err(|e| prefixed("kmc.rates", e))?;
                for (key, grid) in [("p_hene", &k.p_hene), ("p_res", &k.p_res)] {
                    if grid.is_empty() || grid.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return Err(CliError::Config(format!(
                            "`kmc.{key}`: must be a non-empty list of powers >= 0"
                        )));
                    }
                }
                if k.p_hene.len() < 5 {
                    return Err(CliError::Config(
                        "`kmc.p_hene`: needs at least 5 powers to locate a maximum".into(),
                    ));
                }
                if !(k.t_max.is_finite() && k.t_max > 0.0) {
                    return Err(CliError::Config("`kmc.t_max`: must be > 0".into()));
                }
                if !(k.warmup.is_finite() && k.warmup >= 0.0) {
                    return Err(CliError::Config("`kmc.warmup`: must be >= 0".into()));
                }
                if k.trajectories == 0 {
                    return Err(CliError::Config("`kmc.trajectories`: must be >= 1".into()));
                }
            }
            Scenario::FitPle | Scenario::FitG2 | Scenario::FitNarrowing => {
                if self.fit.input.is_none() {
                    return Err(CliError::Config(format!(
                        "`fit.input` is required for scenario {}",
                        self.scenario.name()
                    )));
                }
                if self.scenario == Scenario::FitPle {
                    fit::pinned_lorentzian_fwhm(self.fit.omega_r, self.fit.gamma)
                        .map_err(|e| prefixed("fit", e))?;
                }
            }
            Scenario::Synth => {
                let s = &self.synth;
                self.synth_grid()?;
                if let Noise::Gaussian { sigma } = s.noise {
                    if !(sigma.is_finite() && sigma >= 0.0) {
                        return Err(CliError::Config("`synth.noise.sigma`: must be >= 0".into()));
                    }
                }
                let y = s.model.eval(&self.synth_grid()?.points()).map_err(|e| prefixed("synth.model", e))?;
                if s.noise == Noise::Poisson && y.iter().any(|v| !(*v >= 0.0)) {
                    return Err(CliError::Config(
                        "`synth.noise`: Poisson noise needs a non-negative model curve".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn map_config(&self, tls: TlsParams) -> CliResult<MapConfig> {
        let m = &self.map;
        if m.pixels < 2 {
            return Err(CliError::Config("`map.pixels`: must be >= 2".into()));
        }
        if !(m.span.is_finite() && m.span > 0.0) {
            return Err(CliError::Config("`map.span`: must be > 0".into()));
        }
        let axis = Grid1D::centered(m.center, m.span, m.pixels).map_err(|e| prefixed("map", e))?;
        let cfg = MapConfig {
            center: m.center,
            laser_axis: axis,
            photon_axis: axis,
            laser_linewidth: m.laser_linewidth,
            detector_fwhm: m.detector_fwhm,
            inhomogeneous_fwhm: m.inhomogeneous_fwhm,
            tls,
            regime: m.regime,
        };
        cfg.validate().map_err(|e| match e {
            Error::InvalidParameter { name: "tls.detuning", .. } => CliError::Config(
                "`physics.detuning_ghz`: must be 0 for maps and PLE (the laser is swept)".into(),
            ),
            other => prefixed("map", other),
        })?;
        Ok(cfg)
    }

    fn ple_grid(&self) -> CliResult<Grid1D> {
        let p = &self.ple;
        Grid1D::linspace(self.map.center + p.start, self.map.center + p.stop, p.points)
            .map_err(|_| CliError::Config("`ple`: needs points >= 2 and stop > start".into()))
    }

    fn g2_grid(&self) -> CliResult<Grid1D> {
        let g = &self.g2;
        Grid1D::linspace(0.0, g.tau_max, g.points)
            .map_err(|_| CliError::Config("`g2`: needs points >= 2 and tau_max > 0".into()))
    }

    fn synth_grid(&self) -> CliResult<Grid1D> {
        let s = &self.synth;
        Grid1D::linspace(s.start, s.stop, s.points)
            .map_err(|_| CliError::Config("`synth`: needs points >= 2 and stop > start".into()))
    }
}

fn apply_override(doc: &mut Value, ov: &str) -> CliResult<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{ov}` is not of the form key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

// ---------------------------------------------------------------- formats

/// Nine significant digits, fixed notation for moderate magnitudes.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let s = if (-4..9).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, v)
    } else {
        format!("{:.8e}", v)
    };
    trim_zeros(s)
}

fn trim_zeros(s: String) -> String {
    let (mantissa, exp) = match s.find('e') {
        Some(i) => (&s[..i], &s[i..]),
        None => (&s[..], ""),
    };
    if !mantissa.contains('.') {
        return s;
    }
    let m = mantissa.trim_end_matches('0').trim_end_matches('.');
    format!("{m}{exp}")
}

fn header(scenario: Scenario, seed: u64, extra: &str) -> String {
    let mut h = format!("# resofluo {VERSION} scenario={} seed={seed}", scenario.name());
    if !extra.is_empty() {
        h.push(' ');
        h.push_str(extra);
    }
    h.push('\n');
    h
}

/// Builds a CSV: metadata line, header row, rows.
pub fn csv_table(meta: &str, columns: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::from(meta);
    out.push_str(&columns.join(","));
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Numeric table of a CSV written by this tool (or any CSV with an optional
/// `#` comment block and a header row).
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_table(&text).map_err(|m| CliError::Config(format!("{}: {m}", path.display())))
}

fn parse_table(text: &str) -> std::result::Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if columns.is_empty() && rows.is_empty() => {
                columns = cells.iter().map(|c| c.to_string()).collect();
            }
            Err(_) => return Err(format!("line {}: non-numeric value", n + 1)),
        }
    }
    Ok((columns, rows))
}

/// `x, y[, sigma]` data of a fit input file.
pub fn read_series(path: &Path) -> CliResult<DataSeries> {
    let (_, rows) = read_table(path)?;
    let width = rows.first().map_or(0, |r| r.len());
    if !(2..=3).contains(&width) || rows.iter().any(|r| r.len() != width) {
        return Err(CliError::Config(format!(
            "{}: expected 2 or 3 numeric columns (x, y[, sigma])",
            path.display()
        )));
    }
    let x = rows.iter().map(|r| r[0]).collect();
    let y = rows.iter().map(|r| r[1]).collect();
    let series = if width == 3 {
        DataSeries::with_sigma(x, y, rows.iter().map(|r| r[2]).collect())
    } else {
        DataSeries::new(x, y)
    };
    series.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn series_csv(meta: &str, data: &DataSeries) -> String {
    let rows: Vec<Vec<f64>> = match &data.sigma {
        Some(s) => (0..data.len()).map(|i| vec![data.x[i], data.y[i], s[i]]).collect(),
        None => (0..data.len()).map(|i| vec![data.x[i], data.y[i]]).collect(),
    };
    let cols: &[&str] = if data.sigma.is_some() { &["x", "y", "sigma"] } else { &["x", "y"] };
    csv_table(meta, cols, &rows)
}

/// Grid CSV: first row holds the photon axis (GHz) after a corner label,
/// each further row a laser frequency followed by its column of values.
pub fn map_csv(meta: &str, map: &Map2D) -> String {
    let mut out = String::from(meta);
    out.push_str("laser_ghz\\photon_ghz");
    for v in map.photon_axis.points() {
        let _ = write!(out, ",{}", fmt_num(v));
    }
    out.push('\n');
    for (i, nu) in map.laser_axis.points().into_iter().enumerate() {
        out.push_str(&fmt_num(nu));
        for v in map.column(i) {
            let _ = write!(out, ",{}", fmt_num(*v));
        }
        out.push('\n');
    }
    out
}

pub fn read_map_csv(path: &Path) -> CliResult<Map2D> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |m: &str| CliError::Config(format!("{}: {m}", path.display()));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let head = lines.next().ok_or_else(|| bad("empty map file"))?;
    let photon: Vec<f64> = head
        .split(',')
        .skip(1)
        .map(|c| c.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad photon axis"))?;
    let mut laser = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric map cell"))?;
        if cells.len() != photon.len() + 1 {
            return Err(bad("ragged map row"));
        }
        laser.push(cells[0]);
        values.extend_from_slice(&cells[1..]);
    }
    let axis = |v: &[f64]| -> CliResult<Grid1D> {
        if v.len() < 2 {
            return Err(bad("axis needs >= 2 points"));
        }
        Grid1D::new(v[0], (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64, v.len())
            .map_err(|e| bad(&e.to_string()))
    };
    Ok(Map2D {
        laser_axis: axis(&laser)?,
        photon_axis: axis(&photon)?,
        values,
    })
}

/// Binary 16-bit PGM, rows = laser frequencies, max-normalized.
pub fn map_pgm(map: &Map2D) -> Vec<u8> {
    let (h, w) = (map.laser_axis.count, map.photon_axis.count);
    let max = map.max_value();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in &map.values {
        let level = if max > 0.0 { (v / max * 65535.0).round().clamp(0.0, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

// ---------------------------------------------------------------- synth

/// Deterministic samples of `model` on `x` with the given noise.
pub fn synth_data(model: &SynthModel, x: &[f64], noise: Noise, seed: u64) -> crate::Result<DataSeries> {
    let clean = model.eval(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match noise {
        Noise::None => DataSeries::new(x.to_vec(), clean),
        Noise::Gaussian { sigma } => {
            crate::error::require_non_negative("sigma", sigma)?;
            let y = if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
                clean.iter().map(|v| v + n.sample(&mut rng)).collect()
            } else {
                clean
            };
            DataSeries::with_sigma(x.to_vec(), y, vec![sigma.max(f64::MIN_POSITIVE); x.len()])
        }
        Noise::Poisson => {
            let y = clean
                .iter()
                .map(|&m| {
                    if m == 0.0 {
                        Ok(0.0)
                    } else {
                        Poisson::new(m)
                            .map(|p| p.sample(&mut rng))
                            .map_err(|_| Error::invalid("noise", format!("Poisson mean {m} is invalid")))
                    }
                })
                .collect::<crate::Result<Vec<f64>>>()?;
            DataSeries::new(x.to_vec(), y)
        }
    }
}

// ---------------------------------------------------------------- run

/// Files produced by a scenario, in write order.
#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub files: Vec<(PathBuf, String)>,
}

struct Writer<'a> {
    dir: &'a Path,
    out: Outputs,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: &[u8], summary: String) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.out.files.push((path, summary));
        Ok(())
    }
}

// Creates the directory and proves it accepts files before any work.
fn prepare_output(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let probe = dir.join(".resofluo-write-test");
    fs::File::create(&probe)
        .and_then(|mut f| f.write_all(b"ok"))
        .map_err(|e| io_err(dir, e))?;
    fs::remove_file(&probe).map_err(|e| io_err(&probe, e))
}

/// Runs a validated configuration and returns the written files.
pub fn run(cfg: &Config) -> CliResult<Outputs> {
    cfg.validate()?;
    prepare_output(&cfg.output)?;
    let mut w = Writer {
        dir: &cfg.output,
        out: Outputs::default(),
    };
    match cfg.scenario {
        Scenario::Map => run_map(cfg, &mut w)?,
        Scenario::Ple => run_ple(cfg, &mut w)?,
        Scenario::G2 => run_g2(cfg, &mut w)?,
        Scenario::KmcSweep => run_kmc(cfg, &mut w)?,
        Scenario::FitPle | Scenario::FitG2 | Scenario::FitNarrowing => run_fit(cfg, &mut w)?,
        Scenario::Synth => run_synth(cfg, &mut w)?,
    }
    let json = cfg.to_json() + "\n";
    w.put("config.json", json.as_bytes(), "effective configuration".into())?;
    Ok(w.out)
}

fn run_map(cfg: &Config, w: &mut Writer) -> CliResult<()> {
    let mc = cfg.map_config(cfg.physics.tls().map_err(|e| prefixed("physics", e))?)?;
    let map = fluo_map::fluorescence_map(&mc)?;
    let meta = header(cfg.scenario, cfg.seed, "units=photons/ns/GHz");
    w.put("map.csv", map_csv(&meta, &map).as_bytes(), format!("{}x{} map", mc.laser_axis.count, mc.photon_axis.count))?;
    if cfg.map.pgm {
        w.put("map.pgm", &map_pgm(&map), "16-bit heatmap".into())?;
    }
    let env = fluo_map::envelope(&map)?;
    let rows: Vec<Vec<f64>> = (0..env.laser.len())
        .map(|i| vec![env.laser[i], env.value[i], env.position[i], if env.valid[i] { 1.0 } else { 0.0 }])
        .collect();
    let label = fluo_map::classify_broadening(&env.curve())
        .map(|r| format!("{:?}", r.label).to_lowercase())
        .unwrap_or_else(|_| "unclassified".into());
    let diag = fluo_map::cut(&map, fluo_map::peak_pixel(&map), fluo_map::CutDirection::Diagonal)
        .fwhm()
        .map(fmt_num)
        .unwrap_or_else(|_| "n/a".into());
    w.put(
        "envelope.csv",
        csv_table(&meta, &["laser_ghz", "peak", "photon_ghz", "valid"], &rows).as_bytes(),
        format!("envelope, broadening {label}, diagonal FWHM {diag} GHz"),
    )
}

fn run_ple(cfg: &Config, w: &mut Writer) -> CliResult<()> {
    let mc = cfg.map_config(cfg.physics.tls().map_err(|e| prefixed("physics", e))?)?;
    let curve = fluo_map::ple_spectrum(&mc, &cfg.ple_grid()?)?;
    let rows: Vec<Vec<f64>> = curve.x.iter().zip(&curve.y).map(|(a, b)| vec![*a, *b]).collect();
    let fwhm = spectral::estimate_fwhm(&curve.x, &curve.y)
        .map(fmt_num)
        .unwrap_or_else(|_| "n/a".into());
    let meta = header(cfg.scenario, cfg.seed, "units=photons/ns");
    w.put(
        "ple.csv",
        csv_table(&meta, &["laser_ghz", "rate"], &rows).as_bytes(),
        format!("PLE spectrum, FWHM {fwhm} GHz"),
    )
}

fn run_g2(cfg: &Config, w: &mut Writer) -> CliResult<()> {
    let tls = cfg.physics.tls().map_err(|e| prefixed("physics", e))?;
    let grid = cfg.g2_grid()?;
    let g = tls::g2_with_background(&tls, cfg.g2.signal_fraction, &grid)?;
    let rows: Vec<Vec<f64>> = grid.points().into_iter().zip(&g).map(|(t, v)| vec![t, *v]).collect();
    let meta = header(cfg.scenario, cfg.seed, "");
    w.put(
        "g2.csv",
        csv_table(&meta, &["tau_ns", "g2"], &rows).as_bytes(),
        format!("g2, g2(0) = {}", fmt_num(g[0])),
    )
}

fn run_kmc(cfg: &Config, w: &mut Writer) -> CliResult<()> {
    let k = &cfg.kmc;
    let spec = SweepSpec {
        t_max: k.t_max,
        trajectories: k.trajectories,
        seed: cfg.seed,
        warmup: k.warmup,
    };
    let res = kmc::sweep_intensity(&k.rates, &k.p_hene, &k.p_res, &spec)?;
    let r = &k.rates;
    let meta = header(
        cfg.scenario,
        cfg.seed,
        &format!(
            "gen_ab={} pump_res={} loss_res={} trajectories={} t_max_ns={} warmup_ns={} units=counts/s",
            fmt_num(r.gen_ab),
            fmt_num(r.pump_res),
            fmt_num(r.loss_res),
            k.trajectories,
            fmt_num(k.t_max),
            fmt_num(k.warmup)
        ),
    );
    w.put("sweep.csv", sweep_csv(&meta, &res).as_bytes(), format!("{} sweep cells", res.cells.len()))?;
    let mut rows = Vec::new();
    let mut flagged = 0;
    for (ri, &pr) in res.p_res.iter().enumerate() {
        let m = kmc::find_intensity_maximum(&res.p_hene, &res.trion_curve(ri))?;
        flagged += m.boundary as usize;
        rows.push(vec![pr, m.p_hene, m.p_hene_fit, m.value, if m.boundary { 1.0 } else { 0.0 }]);
    }
    w.put(
        "maxima.csv",
        csv_table(&meta, &["p_res", "p_hene_max", "p_hene_fit", "trion_rate", "boundary"], &rows).as_bytes(),
        format!("{} trion maxima, {flagged} on the grid boundary", rows.len()),
    )
}

pub fn sweep_csv(meta: &str, res: &SweepResult) -> String {
    let rows: Vec<Vec<f64>> = res
        .cells
        .iter()
        .map(|c| {
            let mut r = vec![c.p_hene, c.p_res];
            r.extend(Tag::ALL.iter().map(|t| c.rates[t.index()]));
            r.push(c.trion_rate());
            r.push(c.trion_stderr);
            r
        })
        .collect();
    csv_table(
        meta,
        &["p_hene", "p_res", "exciton", "positive_trion", "negative_trion", "other", "trion", "trion_stderr"],
        &rows,
    )
}

fn run_fit(cfg: &Config, w: &mut Writer) -> CliResult<()> {
    let f = &cfg.fit;
    let input = f.input.as_ref().expect("validated");
    let data = read_series(input)?;
    let opts = FitOptions {
        max_iterations: f.max_iterations,
        poisson_weights: f.poisson_weights,
        init: f.init.clone(),
    };
    let (name, result) = match cfg.scenario {
        Scenario::FitPle => ("fit_ple.csv", fit::fit_ple_voigt(&data, f.omega_r, f.gamma, &opts)?),
        Scenario::FitG2 => ("fit_g2.csv", fit::fit_g2(&data, &opts)?),
        _ => ("fit_narrowing.csv", fit::fit_exponential_plateau(&data, &opts)?),
    };
    let text = fit_csv(cfg, &result, data.len());
    let summary = format!(
        "{} ({}; {})",
        result
            .names
            .iter()
            .zip(&result.params)
            .map(|(n, v)| format!("{n}={}", fmt_num(*v)))
            .collect::<Vec<_>>()
            .join(" "),
        if result.converged { "converged" } else { "NOT converged" },
        if result.warnings.is_empty() { "no warnings".to_string() } else { format!("{:?}", result.warnings) }
    );
    w.put(name, text.as_bytes(), summary)?;
    if !result.converged {
        return Err(CliError::Numeric(
            result.diagnostic.clone().unwrap_or_else(|| "fit did not converge".into()),
        ));
    }
    Ok(())
}

fn fit_csv(cfg: &Config, r: &FitResult, n: usize) -> String {
    let mut meta = header(
        cfg.scenario,
        cfg.seed,
        &format!(
            "converged={} iterations={} reduced_chi2={}",
            r.converged,
            r.iterations,
            fmt_num(r.reduced_chi2(n))
        ),
    );
    for wn in &r.warnings {
        let _ = writeln!(meta, "# warning: {wn:?}");
    }
    if let Some(d) = &r.diagnostic {
        let _ = writeln!(meta, "# diagnostic: {d}");
    }
    let mut out = meta;
    out.push_str("parameter,value,stderr\n");
    for ((name, v), s) in r.names.iter().zip(&r.params).zip(&r.stderr) {
        let _ = writeln!(out, "{name},{},{}", fmt_num(*v), fmt_num(*s));
    }
    out
}

fn run_synth(cfg: &Config, w: &mut Writer) -> CliResult<()> {
    let s = &cfg.synth;
    let x = cfg.synth_grid()?.points();
    let data = synth_data(&s.model, &x, s.noise, cfg.seed).map_err(|e| prefixed("synth", e))?;
    let meta = header(cfg.scenario, cfg.seed, "");
    w.put("data.csv", series_csv(&meta, &data).as_bytes(), format!("{} synthetic samples", data.len()))
}

// ---------------------------------------------------------------- entry

#[derive(Debug, Parser)]
#[command(name = "resofluo", version, about = "Resonance fluorescence maps, PLE, g2, charge Monte Carlo and fits")]
pub struct Args {
    /// Scenario to run.
    #[arg(value_enum)]
    pub scenario: Scenario,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 = all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Override a configuration key, e.g. `--set physics.rabi=0.66`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Resolves the configuration from parsed arguments.
pub fn load_config(args: &Args) -> CliResult<Config> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).map_err(|e| io_err(p, e))?,
        None => "{}".into(),
    };
    let mut ov = vec![format!("scenario=\"{}\"", args.scenario.name())];
    if let Some(s) = args.seed {
        ov.push(format!("seed={s}"));
    }
    if let Some(o) = &args.out {
        ov.push(format!("output={}", Value::String(o.to_string_lossy().into_owned())));
    }
    ov.extend(args.overrides.iter().cloned());
    Config::parse(&text, &ov)
}

/// Runs the tool on command-line arguments and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if args.threads > 0 {
        // a pool that is already set keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global();
    }
    let result = load_config(&args).and_then(|cfg| run(&cfg));
    match result {
        Ok(out) => {
            for (path, summary) in &out.files {
                println!("{}: {summary}", path.display());
            }
            0
        }
        Err(e) => {
            eprintln!("resofluo: {e}");
            e.exit_code()
        }
    }
}
