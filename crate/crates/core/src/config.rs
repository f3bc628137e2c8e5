//! Run configuration. JSON, units in key names; every field except `chips`
//! has a default and the expanded form is what gets persisted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisParams, BootstrapConfig};
use crate::error::{Error, Result};
use crate::fitstats::{CleaningLabel, FitWeighting};
use crate::physics::{QubitModel, T1Model, DEFAULT_MIN_EJ_OVER_EC};
use crate::specgen::{DriftModel, RateDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Swept interval below each qubit's sweet spot (GHz).
    pub span_ghz: f64,
    pub step_mhz: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            span_ghz: 1.6,
            step_mhz: 2.0,
        }
    }
}

/// Defect density per junction: `density_per_ghz + density_per_ghz_um2 · S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSpec {
    pub density_per_ghz: f64,
    pub density_per_ghz_um2: f64,
    pub g_distribution: RateDistribution,
    pub gamma_distribution: RateDistribution,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            density_per_ghz: 0.87,
            density_per_ghz_um2: 0.0,
            g_distribution: RateDistribution::default_coupling(),
            gamma_distribution: RateDistribution::default_relaxation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemporalPlan {
    pub cooldowns: u32,
    /// Time at base temperature before each cooldown's measurement.
    pub days_per_cooldown: f64,
    /// Warm up and re-cool between cooldowns; otherwise only drift applies.
    pub thermal_cycle_between_cooldowns: bool,
}

impl Default for TemporalPlan {
    fn default() -> Self {
        TemporalPlan {
            cooldowns: 1,
            days_per_cooldown: 1.0,
            thermal_cycle_between_cooldowns: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QubitTemplate {
    pub ej_sum_ghz: f64,
    pub ec_ghz: f64,
    /// Per-qubit relative spread (standard deviation) of `ej_sum_ghz`.
    pub ej_spread_rel: f64,
    pub c_total_ff: f64,
    pub d_barrier_nm: f64,
    pub squid_asymmetry: f64,
    pub min_ej_over_ec: f64,
    /// Background T1 drawn uniformly per qubit from this interval.
    pub t1_us_range: (f64, f64),
}

impl Default for QubitTemplate {
    fn default() -> Self {
        QubitTemplate {
            ej_sum_ghz: 22.0,
            ec_ghz: 0.22,
            ej_spread_rel: 0.03,
            c_total_ff: 65.0,
            d_barrier_nm: 2.0,
            squid_asymmetry: 0.0,
            min_ej_over_ec: DEFAULT_MIN_EJ_OVER_EC,
            t1_us_range: (10.0, 40.0),
        }
    }
}

impl QubitTemplate {
    /// Concrete model for one qubit.
    pub fn model(&self, ej_sum_ghz: f64, t1_us: f64, junction_areas_um2: (f64, f64)) -> QubitModel {
        QubitModel {
            ej_sum_ghz,
            ec_ghz: self.ec_ghz,
            c_total_f: self.c_total_ff * 1e-15,
            d_barrier_m: self.d_barrier_nm * 1e-9,
            t1_background: T1Model::constant(t1_us * 1e-6),
            junction_areas_um2,
            squid_asymmetry: self.squid_asymmetry,
            min_ej_over_ec: self.min_ej_over_ec,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.ej_spread_rel >= 0.0 && self.ej_spread_rel < 0.5) {
            return Err(format!(
                "ej_spread_rel {} outside [0, 0.5)",
                self.ej_spread_rel
            ));
        }
        let (lo, hi) = self.t1_us_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(format!(
                "t1_us_range ({lo}, {hi}) must be positive and ordered"
            ));
        }
        self.model(self.ej_sum_ghz, lo, (1.0, 1.0))
            .validate()
            .map_err(|e| format!("qubit template: {e}"))
    }
}

/// One chip: fabrication labels and its qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipSpec {
    pub label: String,
    #[serde(default = "default_cleaning")]
    pub cleaning: CleaningLabel,
    #[serde(default)]
    pub jc_ua_per_um2: f64,
    pub n_qubits: u32,
    pub junction_areas_um2: (f64, f64),
    #[serde(default)]
    pub qubit: QubitTemplate,
    /// Replaces the area-based density of the run's ensemble spec.
    #[serde(default)]
    pub density_per_ghz: Option<f64>,
}

fn default_cleaning() -> CleaningLabel {
    CleaningLabel::Other("unlabeled".into())
}

impl ChipSpec {
    pub fn total_area_um2(&self) -> f64 {
        self.junction_areas_um2.0 + self.junction_areas_um2.1
    }

    pub fn qubit_id(index: u32) -> String {
        format!("qb{index:02}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_tau_ns")]
    tau_ns: f64,
    #[serde(default = "default_shots")]
    shots: Option<u32>,
    #[serde(default)]
    grid: GridSpec,
    #[serde(default)]
    defects: EnsembleSpec,
    #[serde(default)]
    drift: DriftModel,
    #[serde(default)]
    temporal: TemporalPlan,
    #[serde(default)]
    analysis: AnalysisParams,
    #[serde(default)]
    bootstrap: BootstrapConfig,
    #[serde(default)]
    fit_weighting: FitWeighting,
    chips: Vec<ChipSpec>,
}

fn default_tau_ns() -> f64 {
    100.0
}

fn default_shots() -> Option<u32> {
    Some(1000)
}

/// Fully expanded, validated run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRunConfig")]
pub struct RunConfig {
    pub master_seed: u64,
    pub tau_ns: f64,
    /// Shots per grid point; `null` records exact expectation values.
    pub shots: Option<u32>,
    pub grid: GridSpec,
    pub defects: EnsembleSpec,
    pub drift: DriftModel,
    pub temporal: TemporalPlan,
    pub analysis: AnalysisParams,
    pub bootstrap: BootstrapConfig,
    pub fit_weighting: FitWeighting,
    pub chips: Vec<ChipSpec>,
}

impl TryFrom<RawRunConfig> for RunConfig {
    type Error = Error;

    fn try_from(r: RawRunConfig) -> Result<Self> {
        let c = RunConfig::from_raw(r);
        c.validate()?;
        Ok(c)
    }
}

/// Line and column (1-based) of the last of `keys`, each searched after the
/// previous one. Plain keys match as `"key"`; entries already quoted match
/// verbatim.
fn locate(text: &str, keys: &[&str]) -> Option<(usize, usize)> {
    let mut pos = 0;
    let mut found = None;
    for k in keys {
        let needle = if k.starts_with('"') {
            k.to_string()
        } else {
            format!("\"{k}\"")
        };
        match text[pos..].find(&needle) {
            Some(i) => {
                pos += i;
                found = Some(pos);
                pos += needle.len();
            }
            None => break,
        }
    }
    let at = found?;
    let line = text[..at].matches('\n').count() + 1;
    let col = at - text[..at].rfind('\n').map_or(0, |i| i + 1) + 1;
    Some((line, col))
}

impl RunConfig {
    fn from_raw(r: RawRunConfig) -> Self {
        RunConfig {
            master_seed: r.master_seed,
            tau_ns: r.tau_ns,
            shots: r.shots,
            grid: r.grid,
            defects: r.defects,
            drift: r.drift,
            temporal: r.temporal,
            analysis: r.analysis,
            bootstrap: r.bootstrap,
            fit_weighting: r.fit_weighting,
            chips: r.chips,
        }
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_ns * 1e-9
    }

    /// Planted density for a chip (defects per GHz per junction pair).
    pub fn density_for(&self, chip: &ChipSpec) -> f64 {
        chip.density_per_ghz.unwrap_or(
            self.defects.density_per_ghz + self.defects.density_per_ghz_um2 * chip.total_area_um2(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, m)| Error::Config(m))
    }

    /// Semantic checks; on failure returns the key path of the offending
    /// entry (used to anchor the message in the source text).
    fn check(&self) -> std::result::Result<(), (Vec<String>, String)> {
        let at =
            |keys: &[&str], m: String| (keys.iter().map(|k| k.to_string()).collect::<Vec<_>>(), m);
        if !(self.tau_ns > 0.0) {
            return Err(at(
                &["tau_ns"],
                format!("tau_ns must be positive, got {}", self.tau_ns),
            ));
        }
        if self.shots == Some(0) {
            return Err(at(&["shots"], "shots must be at least 1 (or null)".into()));
        }
        if !(self.grid.span_ghz > 0.0 && self.grid.step_mhz > 0.0) {
            return Err(at(
                &["grid"],
                "grid span_ghz and step_mhz must be positive".into(),
            ));
        }
        if self.grid.span_ghz * 1e3 / self.grid.step_mhz < 4.0 {
            return Err(at(&["grid"], "grid needs at least five points".into()));
        }
        if !(self.defects.density_per_ghz >= 0.0 && self.defects.density_per_ghz_um2 >= 0.0) {
            return Err(at(
                &["defects"],
                "defect densities must be non-negative".into(),
            ));
        }
        for (key, r) in [
            ("g_distribution", self.defects.g_distribution.validate()),
            (
                "gamma_distribution",
                self.defects.gamma_distribution.validate(),
            ),
            ("drift", self.drift.validate()),
            ("analysis", self.analysis.validate()),
        ] {
            r.map_err(|e| at(&[key], format!("{key}: {e}")))?;
        }
        if self.temporal.cooldowns == 0 || !(self.temporal.days_per_cooldown >= 0.0) {
            return Err(at(
                &["temporal"],
                "temporal plan needs at least one cooldown and non-negative days".into(),
            ));
        }
        let b = &self.bootstrap;
        if b.n_boot < 100 || !(b.ci_level > 0.0 && b.ci_level < 1.0) {
            return Err(at(
                &["bootstrap"],
                "bootstrap needs n_boot >= 100 and ci_level in (0, 1)".into(),
            ));
        }
        if self.chips.is_empty() {
            return Err(at(&["chips"], "at least one chip is required".into()));
        }
        let mut labels = std::collections::BTreeSet::new();
        for chip in &self.chips {
            let quoted = format!("\"{}\"", chip.label);
            let here = |field: &str, m: String| {
                at(
                    &["chips", &quoted, field],
                    format!("chip {:?}: {m}", chip.label),
                )
            };
            if chip.label.is_empty()
                || chip.label.contains(['/', '\\'])
                || chip.label.starts_with('.')
            {
                return Err(here("label", "label is not a valid directory name".into()));
            }
            if !labels.insert(chip.label.as_str()) {
                return Err(here("label", "duplicate chip label".into()));
            }
            if chip.n_qubits == 0 {
                return Err(here("n_qubits", "n_qubits must be at least 1".into()));
            }
            let (a, b) = chip.junction_areas_um2;
            if !(a > 0.0 && b > 0.0) {
                return Err(here(
                    "junction_areas_um2",
                    "junction areas must be positive".into(),
                ));
            }
            if chip.density_per_ghz.is_some_and(|d| !(d >= 0.0)) {
                return Err(here(
                    "density_per_ghz",
                    "density must be non-negative".into(),
                ));
            }
            chip.qubit.validate().map_err(|e| here("qubit", e))?;
        }
        Ok(())
    }

    /// Parses and validates; errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawRunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let c = RunConfig::from_raw(raw);
        c.check().map_err(|(path, m)| {
            let keys: Vec<&str> = path.iter().map(String::as_str).collect();
            match locate(text, &keys) {
                Some((line, col)) => Error::Config(format!("{m} at line {line} column {col}")),
                None => Error::Config(m),
            }
        })?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
