//! Synthetic swap spectra from defect ensembles, and the time evolution of
//! those ensembles (spectral diffusion, sudden reconfiguration, thermal
//! cycling).

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{loss_from_coupling, DefectMode, QubitModel};
use crate::rng::{derive_seed, stream, StreamRng};

/// Default interaction time of the swap pulse (s).
pub const DEFAULT_TAU_S: f64 = 100e-9;
/// Default grid step (MHz).
pub const DEFAULT_STEP_MHZ: f64 = 2.0;
/// Default explored bandwidth below the sweet spot (GHz).
pub const DEFAULT_BANDWIDTH_GHZ: f64 = 1.6;

/// Distribution of a non-negative rate in MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RateDistribution {
    Fixed { value_mhz: f64 },
    Uniform { min_mhz: f64, max_mhz: f64 },
    LogUniform { min_mhz: f64, max_mhz: f64 },
}

impl RateDistribution {
    /// Coupling default: log-uniform over [0.05, 5] MHz.
    pub fn default_coupling() -> Self {
        RateDistribution::LogUniform {
            min_mhz: 0.05,
            max_mhz: 5.0,
        }
    }

    pub fn default_relaxation() -> Self {
        RateDistribution::LogUniform {
            min_mhz: 0.01,
            max_mhz: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RateDistribution::Fixed { value_mhz } => value_mhz >= 0.0 && value_mhz.is_finite(),
            RateDistribution::Uniform { min_mhz, max_mhz } => {
                min_mhz >= 0.0 && max_mhz >= min_mhz && max_mhz.is_finite()
            }
            RateDistribution::LogUniform { min_mhz, max_mhz } => {
                min_mhz > 0.0 && max_mhz >= min_mhz && max_mhz.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid rate distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RateDistribution::Fixed { value_mhz } => value_mhz,
            RateDistribution::Uniform { min_mhz, max_mhz } => {
                min_mhz + (max_mhz - min_mhz) * rng.random::<f64>()
            }
            RateDistribution::LogUniform { min_mhz, max_mhz } => {
                (min_mhz.ln() + (max_mhz / min_mhz).ln() * rng.random::<f64>()).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectEnsemble {
    pub defects: Vec<DefectMode>,
    /// `(f_min, f_max)` in GHz.
    pub band_ghz: (f64, f64),
    pub density_per_ghz: f64,
    pub g_distribution: RateDistribution,
    pub gamma_distribution: RateDistribution,
    pub rng_seed: u64,
}

impl DefectEnsemble {
    pub fn len(&self) -> usize {
        self.defects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defects.is_empty()
    }

    pub fn bandwidth_ghz(&self) -> f64 {
        self.band_ghz.1 - self.band_ghz.0
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.defects.iter().map(|d| d.frequency_ghz).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_band(self.band_ghz)?;
        if !(self.density_per_ghz >= 0.0) {
            return Err(Error::domain("defect density must be non-negative"));
        }
        for d in &self.defects {
            d.validate()?;
            if d.frequency_ghz < self.band_ghz.0 || d.frequency_ghz > self.band_ghz.1 {
                return Err(Error::domain(format!(
                    "defect at {} GHz outside band [{}, {}]",
                    d.frequency_ghz, self.band_ghz.0, self.band_ghz.1
                )));
            }
        }
        Ok(())
    }
}

fn check_band(band: (f64, f64)) -> Result<()> {
    if !(band.1 > band.0) || !band.0.is_finite() || !band.1.is_finite() || band.0 <= 0.0 {
        return Err(Error::domain(format!(
            "empty or invalid band [{}, {}] GHz",
            band.0, band.1
        )));
    }
    Ok(())
}

fn draw_defect(
    rng: &mut StreamRng,
    band: (f64, f64),
    g: &RateDistribution,
    gamma: &RateDistribution,
) -> DefectMode {
    let f = rng.random_range(band.0..band.1);
    let g = g.sample(rng);
    let gamma = gamma.sample(rng);
    DefectMode::new(f, g, gamma)
}

/// Draws a Poisson number of defects (mean `density · bandwidth`) with
/// frequencies uniform on `band`.
pub fn sample_defect_ensemble(
    band_ghz: (f64, f64),
    density_per_ghz: f64,
    g_distribution: RateDistribution,
    gamma_distribution: RateDistribution,
    seed: u64,
) -> Result<DefectEnsemble> {
    check_band(band_ghz)?;
    if !(density_per_ghz >= 0.0) || !density_per_ghz.is_finite() {
        return Err(Error::domain(
            "defect density must be finite and non-negative",
        ));
    }
    g_distribution.validate()?;
    gamma_distribution.validate()?;
    let mut rng = stream(seed);
    let mean = density_per_ghz * (band_ghz.1 - band_ghz.0);
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .map_err(|e| Error::domain(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    let defects = (0..count)
        .map(|_| draw_defect(&mut rng, band_ghz, &g_distribution, &gamma_distribution))
        .collect();
    Ok(DefectEnsemble {
        defects,
        band_ghz,
        density_per_ghz,
        g_distribution,
        gamma_distribution,
        rng_seed: seed,
    })
}

/// Uniform grid from `start` upward in steps of `step_mhz`, not exceeding
/// `stop` (GHz). Points are computed from their index, not accumulated.
pub fn uniform_grid(start_ghz: f64, stop_ghz: f64, step_mhz: f64) -> Result<Vec<f64>> {
    if !(step_mhz > 0.0) || !(stop_ghz > start_ghz) {
        return Err(Error::domain("grid needs a positive step and stop > start"));
    }
    let step = step_mhz * 1e-3;
    let n = ((stop_ghz - start_ghz) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start_ghz + i as f64 * step).collect())
}

/// Swap-spectrum acquisition: measured loss versus interaction frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapSpectrum {
    pub freqs_ghz: Vec<f64>,
    pub p_loss: Vec<f64>,
    pub tau_s: f64,
    /// Shots per point, `None` for the exact expectation value.
    pub shots: Option<u32>,
    pub qubit_id: String,
    pub chip_id: String,
    pub cooldown_index: u32,
    pub rng_seed: u64,
    /// Flux-pulse amplitude per grid point, in units of Φ₀ (metadata only).
    pub pulse_amplitude: Option<Vec<f64>>,
}

impl SwapSpectrum {
    pub fn new(freqs_ghz: Vec<f64>, p_loss: Vec<f64>) -> Result<Self> {
        let s = SwapSpectrum {
            freqs_ghz,
            p_loss,
            tau_s: DEFAULT_TAU_S,
            shots: None,
            qubit_id: String::new(),
            chip_id: String::new(),
            cooldown_index: 0,
            rng_seed: 0,
            pulse_amplitude: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_labels(mut self, chip_id: &str, qubit_id: &str, cooldown_index: u32) -> Self {
        self.chip_id = chip_id.to_string();
        self.qubit_id = qubit_id.to_string();
        self.cooldown_index = cooldown_index;
        self
    }

    pub fn len(&self) -> usize {
        self.freqs_ghz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_ghz.is_empty()
    }

    /// Span of the grid (GHz).
    pub fn bandwidth_ghz(&self) -> f64 {
        match (self.freqs_ghz.first(), self.freqs_ghz.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs_ghz.len() != self.p_loss.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} frequencies but {} loss values",
                self.freqs_ghz.len(),
                self.p_loss.len()
            )));
        }
        if self.freqs_ghz.len() < 2 {
            return Err(Error::InvalidSpectrum("fewer than two grid points".into()));
        }
        if let Some(i) = self.freqs_ghz.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSpectrum(format!(
                "frequencies not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = self.p_loss.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidSpectrum(format!(
                "loss {} at index {i} outside [0, 1]",
                self.p_loss[i]
            )));
        }
        if !(self.tau_s > 0.0) {
            return Err(Error::InvalidSpectrum(
                "interaction time must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Expected loss at `freq_ghz` from the background channel and every defect,
/// composed as independent survival probabilities.
pub fn expected_loss(
    qubit: &QubitModel,
    defects: &[DefectMode],
    freq_ghz: f64,
    tau_s: f64,
) -> Result<f64> {
    let t1 = qubit.t1_background.t1_at(freq_ghz);
    let mut survive = (-tau_s / t1).exp();
    for d in defects {
        let detuning_mhz = (freq_ghz - d.frequency_ghz) * 1e3;
        let r = loss_from_coupling(d.g_mhz, detuning_mhz, tau_s, d.gamma_mhz, f64::INFINITY)?;
        survive *= 1.0 - r.p_loss;
    }
    Ok((1.0 - survive).clamp(0.0, 1.0))
}

/// Simulates a swap-spectroscopy acquisition of `ensemble` by `qubit` on
/// `grid_ghz`. Each point records `Binomial(shots, p) / shots`.
pub fn generate_spectrum(
    qubit: &QubitModel,
    ensemble: &DefectEnsemble,
    grid_ghz: &[f64],
    tau_s: f64,
    shots: Option<u32>,
    seed: u64,
) -> Result<SwapSpectrum> {
    qubit.validate()?;
    if !(tau_s > 0.0) {
        return Err(Error::domain("interaction time must be positive"));
    }
    if shots == Some(0) {
        return Err(Error::domain("shots must be at least 1"));
    }
    let (f_min, f_max) = qubit.reachable_band()?;
    let tol = 1e-9;
    let offending: Vec<String> = grid_ghz
        .iter()
        .filter(|f| **f < f_min - tol || **f > f_max + tol)
        .map(|f| format!("{f}"))
        .collect();
    if !offending.is_empty() {
        let shown = offending
            .iter()
            .take(10)
            .cloned()
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::OutOfRange(format!(
            "{} grid point(s) outside reachable band [{f_min:.6}, {f_max:.6}] GHz: {shown}{}",
            offending.len(),
            if offending.len() > 10 { ", ..." } else { "" }
        )));
    }

    let mut rng = stream(seed);
    let mut p_loss = Vec::with_capacity(grid_ghz.len());
    let mut flux = Vec::with_capacity(grid_ghz.len());
    for &f in grid_ghz {
        let p = expected_loss(qubit, &ensemble.defects, f, tau_s)?;
        let recorded = match shots {
            None => p,
            Some(n) => {
                let k = Binomial::new(n as u64, p)
                    .map_err(|e| Error::domain(e.to_string()))?
                    .sample(&mut rng);
                k as f64 / n as f64
            }
        };
        p_loss.push(recorded);
        flux.push(qubit.flux_for_freq(f.clamp(f_min, f_max))?);
    }
    let spectrum = SwapSpectrum {
        freqs_ghz: grid_ghz.to_vec(),
        p_loss,
        tau_s,
        shots,
        qubit_id: String::new(),
        chip_id: String::new(),
        cooldown_index: 0,
        rng_seed: seed,
        pulse_amplitude: Some(flux),
    };
    spectrum.validate()?;
    Ok(spectrum)
}

/// Folds `x` back into `[lo, hi]` by mirror reflection at the edges.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    let y = (x - lo).rem_euclid(2.0 * width);
    lo + if y > width { 2.0 * width - y } else { y }
}

/// Spectral diffusion and sudden reconfiguration of defect frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftModel {
    /// Random-walk standard deviation per day (MHz/√day).
    pub drift_sigma_mhz_per_sqrt_day: f64,
    /// Rate of reconfiguration events (per day).
    pub reconfig_rate_per_day: f64,
    /// Fraction of defects relocated by one reconfiguration event.
    pub reconfig_fraction: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        DriftModel {
            drift_sigma_mhz_per_sqrt_day: 2.0,
            reconfig_rate_per_day: 0.01,
            reconfig_fraction: 0.3,
        }
    }
}

impl DriftModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.drift_sigma_mhz_per_sqrt_day >= 0.0)
            || !(self.reconfig_rate_per_day >= 0.0)
            || !(0.0..=1.0).contains(&self.reconfig_fraction)
        {
            return Err(Error::domain(format!("invalid drift model {self:?}")));
        }
        Ok(())
    }
}

/// Evolves the ensemble at base temperature for `days`.
///
/// Frequencies take one Gaussian step per whole day (plus a shorter step for
/// the remainder), reflected at the band edges. With probability
/// `1 - exp(-rate · days)` one reconfiguration event relocates a fraction of
/// the defects uniformly on the band. The defect count never changes.
pub fn evolve_day(
    ensemble: &DefectEnsemble,
    drift: &DriftModel,
    days: f64,
    seed: u64,
) -> Result<DefectEnsemble> {
    drift.validate()?;
    if !(days >= 0.0) || !days.is_finite() {
        return Err(Error::domain("days must be finite and non-negative"));
    }
    let mut out = ensemble.clone();
    if days == 0.0 {
        return Ok(out);
    }
    let mut rng = stream(seed);
    let (lo, hi) = ensemble.band_ghz;
    let sigma_ghz = drift.drift_sigma_mhz_per_sqrt_day * 1e-3;
    let whole = days.floor() as usize;
    let rest = days - whole as f64;
    let mut steps = vec![sigma_ghz; whole];
    if rest > 0.0 {
        steps.push(sigma_ghz * rest.sqrt());
    }
    for d in &mut out.defects {
        for &s in &steps {
            if s > 0.0 {
                let step: f64 = Normal::new(0.0, s)
                    .expect("positive sigma")
                    .sample(&mut rng);
                d.frequency_ghz = reflect(d.frequency_ghz + step, lo, hi);
            }
        }
    }
    let p_event = 1.0 - (-drift.reconfig_rate_per_day * days).exp();
    if rng.random::<f64>() < p_event {
        let n = out.defects.len();
        let moved = (drift.reconfig_fraction * n as f64).round() as usize;
        for i in index::sample(&mut rng, n, moved.min(n)) {
            out.defects[i].frequency_ghz = rng.random_range(lo..hi);
        }
    }
    Ok(out)
}

/// Warm-up to room temperature and re-cooling: all frequencies and rates are
/// redrawn, the number of defects, band and density are kept.
pub fn thermal_cycle(ensemble: &DefectEnsemble, seed: u64) -> DefectEnsemble {
    let mut rng = stream(derive_seed(seed, &[ensemble.rng_seed]));
    let defects = (0..ensemble.defects.len())
        .map(|_| {
            draw_defect(
                &mut rng,
                ensemble.band_ghz,
                &ensemble.g_distribution,
                &ensemble.gamma_distribution,
            )
        })
        .collect();
    DefectEnsemble {
        defects,
        ..ensemble.clone()
    }
}
