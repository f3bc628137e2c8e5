//! Defect counting on swap spectra.
//!
//! The pipeline smooths the measured loss with a second-order
//! Savitzky–Golay filter, takes local maxima of the smoothed series whose
//! topographic prominence exceeds a floor, keeps those whose raw loss clears
//! the counting threshold, and finally de-duplicates candidates inside an
//! exclusion window, highest raw loss first. Densities are peaks per GHz of
//! analyzed bandwidth with percentile-bootstrap intervals over spectra.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::specgen::SwapSpectrum;

/// Relative tolerance on the grid step for the filter to apply.
const GRID_TOLERANCE: f64 = 0.01;
const MIN_WINDOW_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisParams {
    pub sg_window_mhz: f64,
    pub sg_order: usize,
    pub prominence_min: f64,
    pub counting_threshold: f64,
    pub exclusion_window_mhz: f64,
    /// Half-width (MHz) around a smoothed maximum searched for the raw loss
    /// compared against the counting threshold; the peak is placed at the raw
    /// maximum found. `None` uses half the filter window, zero reads the raw
    /// value at the smoothed maximum itself.
    pub raw_search_mhz: Option<f64>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            sg_window_mhz: 143.0,
            sg_order: 2,
            prominence_min: 0.03,
            counting_threshold: 0.10,
            exclusion_window_mhz: 100.0,
            raw_search_mhz: None,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sg_window_mhz > 0.0) {
            return Err(Error::domain("filter window must be positive"));
        }
        if !(self.counting_threshold > 0.0 && self.counting_threshold < 1.0) {
            return Err(Error::domain(format!(
                "counting threshold {} outside (0, 1)",
                self.counting_threshold
            )));
        }
        if !(self.exclusion_window_mhz >= 0.0)
            || !(self.prominence_min >= 0.0)
            || self.raw_search_mhz.is_some_and(|r| !(r >= 0.0))
        {
            return Err(Error::domain(
                "exclusion window, prominence floor and raw search must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn raw_search_halfwidth_mhz(&self) -> f64 {
        self.raw_search_mhz.unwrap_or(self.sg_window_mhz / 2.0)
    }
}

/// A counted defect peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub frequency_ghz: f64,
    /// Raw loss used for the threshold comparison.
    pub p_loss: f64,
    pub smoothed: f64,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub peaks: Vec<Peak>,
    pub bandwidth_analyzed_ghz: f64,
    pub params: AnalysisParams,
    pub qubit_id: String,
    pub chip_id: String,
    pub cooldown_index: u32,
}

impl DefectReport {
    pub fn n_peaks(&self) -> usize {
        self.peaks.len()
    }

    pub fn min_separation_mhz(&self) -> Option<f64> {
        let mut f: Vec<f64> = self.peaks.iter().map(|p| p.frequency_ghz).collect();
        f.sort_by(f64::total_cmp);
        f.windows(2).map(|w| (w[1] - w[0]) * 1e3).reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    /// Defects per GHz (bootstrap mean).
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub n_defects_mean: f64,
}

/// Unit drawn with replacement by the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResampleUnit {
    #[default]
    Spectrum,
    Chip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub ci_level: f64,
    pub seed: u64,
    pub unit: ResampleUnit,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_boot: 10_000,
            ci_level: 0.68,
            seed: 0,
            unit: ResampleUnit::Spectrum,
        }
    }
}

/// Converts a filter width in MHz to an odd point count at `step_mhz`:
/// nearest odd integer, at least five, at most the series length.
pub fn window_points(window_mhz: f64, step_mhz: f64, len: usize) -> usize {
    let x = window_mhz / step_mhz;
    let nearest_odd = 2 * (((x - 1.0) / 2.0).round().max(0.0) as usize) + 1;
    let cap = if len % 2 == 1 {
        len
    } else {
        len.saturating_sub(1)
    };
    nearest_odd.max(MIN_WINDOW_POINTS).min(cap)
}

/// Least-squares weights that evaluate a polynomial fit of `order` through
/// samples at integer `offsets` at offset zero.
fn sg_weights(offsets: &[f64], order: usize) -> Vec<f64> {
    let order = order.min(offsets.len() - 1);
    let scale = offsets.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let cols = order + 1;
    let v = DMatrix::from_fn(offsets.len(), cols, |i, k| {
        (offsets[i] / scale).powi(k as i32)
    });
    let gram = v.transpose() * &v;
    let mut e0 = DVector::zeros(cols);
    e0[0] = 1.0;
    let c = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&e0))
        .or_else(|| gram.clone().lu().solve(&e0))
        .expect("Vandermonde normal matrix with distinct nodes is invertible");
    (&v * c).iter().copied().collect()
}

/// Savitzky–Golay smoothing of `values` with an odd window of `points`.
/// Near the ends the window is truncated to the available samples and the fit
/// is evaluated off-center.
pub fn savgol(values: &[f64], points: usize, order: usize) -> Result<Vec<f64>> {
    if points.is_multiple_of(2) || points < order + 2 || points > values.len() {
        return Err(Error::domain(format!(
            "window of {points} points invalid for order {order} and {} samples",
            values.len()
        )));
    }
    let n = values.len();
    let half = points / 2;
    let interior: Vec<f64> = sg_weights(
        &(0..points)
            .map(|j| j as f64 - half as f64)
            .collect::<Vec<_>>(),
        order,
    );
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        if hi - lo + 1 == points {
            *slot = interior
                .iter()
                .zip(&values[lo..=hi])
                .map(|(w, y)| w * y)
                .sum();
        } else {
            let offsets: Vec<f64> = (lo..=hi).map(|j| j as f64 - i as f64).collect();
            let w = sg_weights(&offsets, order);
            *slot = w.iter().zip(&values[lo..=hi]).map(|(w, y)| w * y).sum();
        }
    }
    Ok(out)
}

/// Mean grid step in MHz after checking the grid is uniform.
pub fn grid_step_mhz(freqs_ghz: &[f64]) -> Result<f64> {
    if freqs_ghz.len() < 2 {
        return Err(Error::InvalidSpectrum("fewer than two grid points".into()));
    }
    let mean = (freqs_ghz[freqs_ghz.len() - 1] - freqs_ghz[0]) / (freqs_ghz.len() - 1) as f64;
    let worst = freqs_ghz
        .windows(2)
        .map(|w| ((w[1] - w[0]) - mean).abs() / mean)
        .fold(0.0, f64::max);
    if worst > GRID_TOLERANCE {
        return Err(Error::NonUniformGrid {
            deviation: worst * 100.0,
        });
    }
    Ok(mean * 1e3)
}

/// Smooths a spectrum with a Savitzky–Golay filter of width `window_mhz`.
pub fn sg_smooth(spectrum: &SwapSpectrum, window_mhz: f64, order: usize) -> Result<Vec<f64>> {
    spectrum.validate()?;
    let step = grid_step_mhz(&spectrum.freqs_ghz)?;
    let points = window_points(window_mhz, step, spectrum.len());
    savgol(&spectrum.p_loss, points, order)
}

/// Local maxima of `x` (plateaus resolved to their middle sample; endpoints
/// excluded) with their topographic prominence.
pub fn prominent_maxima(x: &[f64], min_prominence: f64) -> Vec<(usize, f64)> {
    let n = x.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                let peak = (i + ahead - 1) / 2;
                let prom = prominence(x, peak);
                if prom >= min_prominence {
                    out.push((peak, prom));
                }
                i = ahead;
            }
        }
        i += 1;
    }
    out
}

fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for j in (0..peak).rev() {
        if x[j] > h {
            break;
        }
        left_min = left_min.min(x[j]);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Threshold-independent part of the counting: smoothed maxima passing the
/// prominence floor, each with its raw loss.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub peaks: Vec<Peak>,
    pub bandwidth_ghz: f64,
}

pub fn find_candidates(spectrum: &SwapSpectrum, params: &AnalysisParams) -> Result<Candidates> {
    params.validate()?;
    spectrum.validate()?;
    let step = grid_step_mhz(&spectrum.freqs_ghz)?;
    let points = window_points(params.sg_window_mhz, step, spectrum.len());
    let smoothed = savgol(&spectrum.p_loss, points, params.sg_order)?;
    let reach = (params.raw_search_halfwidth_mhz() / step + 1e-9).floor() as usize;
    let peaks = prominent_maxima(&smoothed, params.prominence_min)
        .into_iter()
        .map(|(i, prominence)| {
            let lo = i.saturating_sub(reach);
            let hi = (i + reach).min(spectrum.len() - 1);
            // first index of the largest raw value, nearest the smoothed maximum on ties
            let j = (lo..=hi)
                .max_by(|&a, &b| {
                    spectrum.p_loss[a]
                        .total_cmp(&spectrum.p_loss[b])
                        .then(a.abs_diff(i).cmp(&b.abs_diff(i)).reverse())
                })
                .expect("non-empty search window");
            Peak {
                frequency_ghz: spectrum.freqs_ghz[j],
                p_loss: spectrum.p_loss[j],
                smoothed: smoothed[i],
                prominence,
            }
        })
        .collect();
    Ok(Candidates {
        peaks,
        bandwidth_ghz: spectrum.bandwidth_ghz(),
    })
}

/// Threshold and greedy exclusion: candidates are visited by descending raw
/// loss and accepted only when farther than the exclusion window from every
/// accepted peak.
pub fn select_peaks(
    candidates: &Candidates,
    threshold: f64,
    exclusion_window_mhz: f64,
) -> Vec<Peak> {
    let mut pool: Vec<&Peak> = candidates
        .peaks
        .iter()
        .filter(|p| p.p_loss >= threshold)
        .collect();
    pool.sort_by(|a, b| {
        b.p_loss
            .total_cmp(&a.p_loss)
            .then(a.frequency_ghz.total_cmp(&b.frequency_ghz))
    });
    let mut accepted: Vec<Peak> = Vec::new();
    for p in pool {
        let clear = accepted
            .iter()
            .all(|a| (a.frequency_ghz - p.frequency_ghz).abs() * 1e3 > exclusion_window_mhz + 1e-9);
        if clear {
            accepted.push(p.clone());
        }
    }
    accepted.sort_by(|a, b| a.frequency_ghz.total_cmp(&b.frequency_ghz));
    accepted
}

pub(crate) fn report_from(
    spectrum: &SwapSpectrum,
    candidates: &Candidates,
    params: &AnalysisParams,
) -> DefectReport {
    DefectReport {
        peaks: select_peaks(
            candidates,
            params.counting_threshold,
            params.exclusion_window_mhz,
        ),
        bandwidth_analyzed_ghz: candidates.bandwidth_ghz,
        params: params.clone(),
        qubit_id: spectrum.qubit_id.clone(),
        chip_id: spectrum.chip_id.clone(),
        cooldown_index: spectrum.cooldown_index,
    }
}

pub fn count_defects(spectrum: &SwapSpectrum, params: &AnalysisParams) -> Result<DefectReport> {
    let candidates = find_candidates(spectrum, params)?;
    Ok(report_from(spectrum, &candidates, params))
}

/// Total peaks over total analyzed bandwidth (defects per GHz).
pub fn defect_density(reports: &[DefectReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::domain("no reports"));
    }
    let peaks: usize = reports.iter().map(|r| r.n_peaks()).sum();
    let bw: f64 = reports.iter().map(|r| r.bandwidth_analyzed_ghz).sum();
    if !(bw > 0.0) {
        return Err(Error::domain("total analyzed bandwidth is zero"));
    }
    Ok(peaks as f64 / bw)
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Aggregates reports into resampling units of `(peaks, bandwidth)`.
pub(crate) fn resampling_units(reports: &[DefectReport], unit: ResampleUnit) -> Vec<(f64, f64)> {
    match unit {
        ResampleUnit::Spectrum => reports
            .iter()
            .map(|r| (r.n_peaks() as f64, r.bandwidth_analyzed_ghz))
            .collect(),
        ResampleUnit::Chip => {
            let mut by_chip: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
            for r in reports {
                let e = by_chip.entry(r.chip_id.as_str()).or_default();
                e.0 += r.n_peaks() as f64;
                e.1 += r.bandwidth_analyzed_ghz;
            }
            by_chip.into_values().collect()
        }
    }
}

/// Bootstrap replicates of the pooled density; replicate `r` draws from its
/// own stream `derive_seed(seed, [r])`.
pub(crate) fn replicate_densities(
    units: &[(f64, f64)],
    n_boot: usize,
    seed: u64,
) -> Vec<(f64, f64)> {
    (0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(derive_seed(seed, &[r as u64]));
            let (mut peaks, mut bw) = (0.0, 0.0);
            for _ in 0..units.len() {
                let u = units[rng.random_range(0..units.len())];
                peaks += u.0;
                bw += u.1;
            }
            (peaks / bw, peaks)
        })
        .collect()
}

pub(crate) fn check_bootstrap(config: &BootstrapConfig, units: usize) -> Result<()> {
    if units < 2 {
        return Err(Error::domain(format!(
            "bootstrap needs at least two resampling units, got {units}"
        )));
    }
    if config.n_boot < 100 {
        return Err(Error::domain("bootstrap needs at least 100 replicates"));
    }
    if !(config.ci_level > 0.0 && config.ci_level < 1.0) {
        return Err(Error::domain("confidence level must lie in (0, 1)"));
    }
    Ok(())
}

/// Percentile interval of `values` at `level`, widened if needed so that it
/// contains `center`.
pub(crate) fn percentile_interval(values: &mut [f64], level: f64, center: f64) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let lo = quantile(values, (1.0 - level) / 2.0);
    let hi = quantile(values, (1.0 + level) / 2.0);
    (lo.min(center), hi.max(center))
}

/// Percentile-bootstrap estimate of the defect density over `reports`.
pub fn bootstrap_density(
    reports: &[DefectReport],
    config: &BootstrapConfig,
) -> Result<DensityEstimate> {
    let units = resampling_units(reports, config.unit);
    check_bootstrap(config, units.len())?;
    if units.iter().any(|u| !(u.1 > 0.0)) {
        return Err(Error::domain(
            "every resampling unit needs positive bandwidth",
        ));
    }
    if units.windows(2).all(|w| w[0] == w[1]) {
        // degenerate resampling distribution
        let rho = defect_density(reports)?;
        return Ok(DensityEstimate {
            rho,
            ci_low: rho,
            ci_high: rho,
            n_boot: config.n_boot,
            n_defects_mean: units.iter().map(|u| u.0).sum(),
        });
    }
    let reps = replicate_densities(&units, config.n_boot, config.seed);
    let n = reps.len() as f64;
    let rho = reps.iter().map(|r| r.0).sum::<f64>() / n;
    let n_defects_mean = reps.iter().map(|r| r.1).sum::<f64>() / n;
    let mut values: Vec<f64> = reps.into_iter().map(|r| r.0).collect();
    let (ci_low, ci_high) = percentile_interval(&mut values, config.ci_level, rho);
    Ok(DensityEstimate {
        rho,
        ci_low,
        ci_high,
        n_boot: config.n_boot,
        n_defects_mean,
    })
}

/// Re-counts `spectra` at each threshold and bootstraps the density with the
/// same resampling streams, so estimates are comparable across thresholds.
pub fn threshold_sweep(
    spectra: &[SwapSpectrum],
    thresholds: &[f64],
    params: &AnalysisParams,
    config: &BootstrapConfig,
) -> Result<Vec<(f64, DensityEstimate)>> {
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::domain(format!("threshold {t} outside (0, 1)")));
    }
    let candidates = spectra
        .par_iter()
        .map(|s| find_candidates(s, params).map(|c| (s, c)))
        .collect::<Result<Vec<_>>>()?;
    thresholds
        .iter()
        .map(|&t| {
            let p = AnalysisParams {
                counting_threshold: t,
                ..params.clone()
            };
            let reports: Vec<DefectReport> = candidates
                .iter()
                .map(|(s, c)| report_from(s, c, &p))
                .collect();
            Ok((t, bootstrap_density(&reports, config)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n: usize, step_mhz: f64) -> Vec<f64> {
        (0..n).map(|i| 4.0 + i as f64 * step_mhz * 1e-3).collect()
    }

    fn spectrum(values: Vec<f64>) -> SwapSpectrum {
        SwapSpectrum::new(grid(values.len(), 2.0), values).unwrap()
    }

    /// Sharp planted peak of `height` centered on grid index `at`.
    fn plant(values: &mut [f64], at: usize, height: f64) {
        for (k, v) in values.iter_mut().enumerate() {
            let x = (k as f64 - at as f64) * 2.0; // MHz
            *v += height * (-(x / 4.0).powi(2)).exp();
        }
    }

    #[test]
    fn window_rounding() {
        assert_eq!(window_points(143.0, 2.0, 801), 71);
        assert_eq!(window_points(146.0, 2.0, 801), 73);
        assert_eq!(window_points(4.0, 2.0, 801), 5);
        assert_eq!(window_points(143.0, 2.0, 40), 39);
    }

    #[test]
    fn constant_is_preserved() {
        let s = spectrum(vec![0.37; 300]);
        for v in sg_smooth(&s, 143.0, 2).unwrap() {
            assert_abs_diff_eq!(v, 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn impulse_matches_closed_form_center_weight() {
        // quadratic/cubic smoothing kernel center: 3(3m² + 3m − 1) / ((2m−1)(2m+1)(2m+3))
        for m in [2usize, 5, 17, 35] {
            let n = 4 * m + 1;
            let mut x = vec![0.0; n];
            x[2 * m] = 1.0;
            let y = savgol(&x, 2 * m + 1, 2).unwrap();
            let mf = m as f64;
            let c0 = 3.0 * (3.0 * mf * mf + 3.0 * mf - 1.0)
                / ((2.0 * mf - 1.0) * (2.0 * mf + 1.0) * (2.0 * mf + 3.0));
            assert_abs_diff_eq!(y[2 * m], c0, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_uniform_grid_rejected() {
        let mut f = grid(50, 2.0);
        f[25] += 0.0005;
        let s = SwapSpectrum::new(f, vec![0.0; 50]).unwrap();
        assert!(matches!(
            sg_smooth(&s, 20.0, 2),
            Err(Error::NonUniformGrid { .. })
        ));
    }

    #[test]
    fn prominence_of_nested_peaks() {
        let x = [0.0, 2.0, 1.0, 3.0, 0.5, 5.0, 0.0];
        let m = prominent_maxima(&x, 0.0);
        assert_eq!(m, vec![(1, 1.0), (3, 2.5), (5, 5.0)]);
        // plateau resolves to middle sample
        let p = prominent_maxima(&[0.0, 1.0, 1.0, 1.0, 0.0], 0.0);
        assert_eq!(p, vec![(2, 1.0)]);
        assert!(prominent_maxima(&[3.0, 2.0, 1.0], 0.0).is_empty());
    }

    #[test]
    fn flat_background_has_no_peaks() {
        let r = count_defects(&spectrum(vec![0.02; 801]), &AnalysisParams::default()).unwrap();
        assert_eq!(r.n_peaks(), 0);
        assert_abs_diff_eq!(r.bandwidth_analyzed_ghz, 1.6, epsilon = 1e-12);
    }

    #[test]
    fn three_isolated_peaks() {
        // 4.2 / 5.0 / 5.8 GHz on a 4.0–6.0 GHz grid
        let mut v = vec![0.02; 1001];
        for at in [100, 500, 900] {
            plant(&mut v, at, 0.4);
        }
        let s = SwapSpectrum::new(grid(1001, 2.0), v).unwrap();
        let r = count_defects(&s, &AnalysisParams::default()).unwrap();
        let f: Vec<f64> = r.peaks.iter().map(|p| p.frequency_ghz).collect();
        assert_eq!(f.len(), 3);
        for (got, want) in f.iter().zip([4.2, 5.0, 5.8]) {
            assert!((got - want).abs() <= 0.002 + 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn close_pair_keeps_the_higher() {
        let mut v = vec![0.02; 801];
        // 60 MHz apart: the smoothed series may show one or two maxima; only
        // the 0.4 peak may survive either way
        plant(&mut v, 300, 0.4);
        plant(&mut v, 330, 0.3);
        let r = count_defects(&spectrum(v.clone()), &AnalysisParams::default()).unwrap();
        assert_eq!(r.n_peaks(), 1, "{:?}", r.peaks);
        assert!((r.peaks[0].frequency_ghz - 4.6).abs() < 0.02);
        assert!(r.peaks[0].p_loss >= 0.4);

        // pure exclusion logic on explicit candidates
        let cands = Candidates {
            peaks: vec![
                Peak {
                    frequency_ghz: 4.60,
                    p_loss: 0.4,
                    smoothed: 0.1,
                    prominence: 0.1,
                },
                Peak {
                    frequency_ghz: 4.66,
                    p_loss: 0.3,
                    smoothed: 0.1,
                    prominence: 0.1,
                },
                Peak {
                    frequency_ghz: 4.90,
                    p_loss: 0.2,
                    smoothed: 0.1,
                    prominence: 0.1,
                },
            ],
            bandwidth_ghz: 1.6,
        };
        let kept = select_peaks(&cands, 0.1, 100.0);
        assert_eq!(
            kept.iter().map(|p| p.frequency_ghz).collect::<Vec<_>>(),
            vec![4.60, 4.90]
        );
        assert_eq!(select_peaks(&cands, 0.35, 100.0).len(), 1);
    }

    fn report(peaks: usize, bw: f64, chip: &str) -> DefectReport {
        DefectReport {
            peaks: (0..peaks)
                .map(|i| Peak {
                    frequency_ghz: 4.0 + i as f64 * 0.2,
                    p_loss: 0.5,
                    smoothed: 0.1,
                    prominence: 0.1,
                })
                .collect(),
            bandwidth_analyzed_ghz: bw,
            params: AnalysisParams::default(),
            qubit_id: String::new(),
            chip_id: chip.to_string(),
            cooldown_index: 0,
        }
    }

    #[test]
    fn density_arithmetic() {
        assert_abs_diff_eq!(
            defect_density(&[report(26, 27.95, "a")]).unwrap(),
            0.930,
            epsilon = 5e-4
        );
        assert_abs_diff_eq!(
            defect_density(&[report(109, 149.18, "a")]).unwrap(),
            0.731,
            epsilon = 5e-4
        );
        assert_eq!(defect_density(&[report(0, 3.0, "a")]).unwrap(), 0.0);
        assert!(defect_density(&[report(0, 0.0, "a")]).is_err());
        assert!(defect_density(&[]).is_err());
    }

    #[test]
    fn bootstrap_of_identical_reports() {
        let reports = vec![report(3, 1.6, "a"); 17];
        let est = bootstrap_density(
            &reports,
            &BootstrapConfig {
                seed: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(est.ci_high - est.ci_low, 0.0);
        assert_eq!(est.rho, defect_density(&reports).unwrap());
    }

    #[test]
    fn bootstrap_is_seeded_and_brackets() {
        let reports: Vec<DefectReport> = (0..17).map(|i| report(i % 4, 1.6, "a")).collect();
        let cfg = BootstrapConfig {
            n_boot: 2000,
            seed: 42,
            ..Default::default()
        };
        let a = bootstrap_density(&reports, &cfg).unwrap();
        let b = bootstrap_density(&reports, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low <= a.rho && a.rho <= a.ci_high);
        assert!(a.ci_high > a.ci_low);
        assert_abs_diff_eq!(a.rho, defect_density(&reports).unwrap(), epsilon = 0.03);
    }

    #[test]
    fn bootstrap_requirements() {
        let cfg = BootstrapConfig::default();
        assert!(bootstrap_density(&[report(1, 1.6, "a")], &cfg).is_err());
        let two = vec![report(1, 1.6, "a"), report(2, 1.6, "a")];
        assert!(bootstrap_density(
            &two,
            &BootstrapConfig {
                n_boot: 50,
                ..cfg.clone()
            }
        )
        .is_err());
        // chip-level units: one chip means no resampling variance
        let chip = BootstrapConfig {
            unit: ResampleUnit::Chip,
            ..cfg
        };
        assert!(bootstrap_density(&two, &chip).is_err());
        let split = vec![report(1, 1.6, "a"), report(2, 1.6, "b")];
        assert!(bootstrap_density(&split, &chip).is_ok());
    }

    #[test]
    fn sweep_above_max_is_zero_and_monotone() {
        let mut spectra = Vec::new();
        for k in 0..4 {
            let mut v = vec![0.02; 801];
            plant(&mut v, 150 + 10 * k, 0.3);
            plant(&mut v, 500, 0.6);
            plant(&mut v, 700, 0.15 + 0.05 * k as f64);
            spectra.push(spectrum(v));
        }
        let ts = [0.05, 0.1, 0.2, 0.4, 0.57, 0.95];
        let cfg = BootstrapConfig {
            n_boot: 500,
            seed: 1,
            ..Default::default()
        };
        let sweep = threshold_sweep(&spectra, &ts, &AnalysisParams::default(), &cfg).unwrap();
        assert_eq!(sweep.len(), ts.len());
        for w in sweep.windows(2) {
            assert!(w[1].1.rho <= w[0].1.rho);
        }
        assert_eq!(sweep.last().unwrap().1.rho, 0.0);
        assert!(threshold_sweep(&spectra, &[1.0], &AnalysisParams::default(), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reproduces_quadratics(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, n in 40usize..300) {
            let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            let y: Vec<f64> = x.iter().map(|t| a + b * t + c * t * t).collect();
            let s = savgol(&y, window_points(143.0, 2.0, n), 2).unwrap();
            for (u, v) in s.iter().zip(&y) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }

        #[test]
        fn smoothing_is_linear(
            xs in prop::collection::vec(0.0f64..1.0, 120),
            ys in prop::collection::vec(0.0f64..1.0, 120),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let sx = savgol(&xs, 31, 2).unwrap();
            let sy = savgol(&ys, 31, 2).unwrap();
            let mix: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
            let sm = savgol(&mix, 31, 2).unwrap();
            for i in 0..120 {
                prop_assert!((sm[i] - (a * sx[i] + b * sy[i])).abs() <= 1e-12);
            }
        }

        #[test]
        fn threshold_monotone_and_exclusive(
            heights in prop::collection::vec(0.0f64..0.8, 12),
            positions in prop::collection::vec(20usize..780, 12),
            t1 in 0.01f64..0.9, t2 in 0.01f64..0.9,
        ) {
            let mut v = vec![0.02; 801];
            for (h, p) in heights.iter().zip(&positions) {
                plant(&mut v, *p, *h);
            }
            let v: Vec<f64> = v.into_iter().map(|x| x.min(1.0)).collect();
            let s = spectrum(v);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let params = AnalysisParams::default();
            let r_lo = count_defects(&s, &AnalysisParams { counting_threshold: lo, ..params.clone() }).unwrap();
            let r_hi = count_defects(&s, &AnalysisParams { counting_threshold: hi, ..params }).unwrap();
            prop_assert!(r_hi.n_peaks() <= r_lo.n_peaks());
            for r in [&r_lo, &r_hi] {
                if let Some(sep) = r.min_separation_mhz() {
                    prop_assert!(sep > 100.0);
                }
                prop_assert!(r.peaks.iter().all(|p| p.p_loss >= r.params.counting_threshold));
            }
        }
    }
}
