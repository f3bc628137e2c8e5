//! Cross-chip statistics: junction-area scaling of the defect density,
//! qubit quality factors and per-chip summary rows.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::analysis::{
    check_bootstrap, percentile_interval, replicate_densities, resampling_units, BootstrapConfig,
    DefectReport,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Quality factor `Q = 2π f T1`.
pub fn quality_factor(freq_ghz: f64, t1_s: f64) -> Result<f64> {
    if !(freq_ghz > 0.0) || !(t1_s > 0.0) {
        return Err(Error::domain("frequency and T1 must be positive"));
    }
    Ok(2.0 * PI * freq_ghz * 1e9 * t1_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPoint {
    /// Total junction area `S_j1 + S_j2` (µm²).
    pub s_total_um2: f64,
    /// Defect density (per GHz).
    pub rho: f64,
    /// One-sigma uncertainty of `rho` (per GHz).
    pub sigma: f64,
    pub cohort_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitWeighting {
    /// Weights `1/σ²`.
    #[default]
    Weighted,
    /// Equal weights; the quoted sigmas are only propagated into the errors.
    Unweighted,
}

/// Straight line `rho = alpha · S + beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    /// Slope (per GHz per µm²).
    pub alpha: f64,
    /// Intercept (per GHz).
    pub beta: f64,
    pub alpha_err: f64,
    pub beta_err: f64,
    pub cov_alpha_beta: f64,
    /// Reduced chi-square; absent for two points.
    pub chi2_red: Option<f64>,
    pub n_points: usize,
    pub weighting: FitWeighting,
    /// Set when every sigma was zero and unit weights were used instead.
    pub unit_weights_substituted: bool,
}

impl LineFit {
    /// Slope over its standard error.
    pub fn slope_significance(&self) -> f64 {
        self.alpha / self.alpha_err
    }
}

/// Weighted least-squares straight-line fit of density against junction
/// area, with parameter errors from the normal-equation covariance.
pub fn fit_area_scaling(points: &[AreaPoint], weighting: FitWeighting) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::domain("line fit needs at least two points"));
    }
    if points
        .iter()
        .any(|p| !(p.s_total_um2 > 0.0) || !(p.sigma >= 0.0) || !p.rho.is_finite())
    {
        return Err(Error::domain(
            "area points need positive area, finite density and non-negative sigma",
        ));
    }
    let distinct: BTreeSet<u64> = points.iter().map(|p| p.s_total_um2.to_bits()).collect();
    if distinct.len() < 2 {
        return Err(Error::domain(
            "degenerate abscissa: all junction areas are equal",
        ));
    }
    let all_zero = points.iter().all(|p| p.sigma == 0.0);
    if !all_zero && points.iter().any(|p| p.sigma == 0.0) && weighting == FitWeighting::Weighted {
        return Err(Error::domain(
            "weighted fit needs every sigma positive (or all zero)",
        ));
    }
    let unit_weights = all_zero || weighting == FitWeighting::Unweighted;
    let w: Vec<f64> = points
        .iter()
        .map(|p| if unit_weights { 1.0 } else { p.sigma.powi(-2) })
        .collect();

    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, wi) in points.iter().zip(&w) {
        sw += wi;
        sx += wi * p.s_total_um2;
        sy += wi * p.rho;
        sxx += wi * p.s_total_um2 * p.s_total_um2;
        sxy += wi * p.s_total_um2 * p.rho;
    }
    let det = sw * sxx - sx * sx;
    let alpha = (sw * sxy - sx * sy) / det;
    let beta = (sxx * sy - sx * sxy) / det;

    let n = points.len();
    let chi2: f64 = points
        .iter()
        .zip(&w)
        .map(|(p, wi)| wi * (p.rho - alpha * p.s_total_um2 - beta).powi(2))
        .sum();
    let chi2_red = (n > 2).then(|| chi2 / (n - 2) as f64);

    // (XᵀWX)⁻¹ = [[sw, -sx], [-sx, sxx]] / det in (alpha, beta) order
    let (var_a, var_b, cov) = if !unit_weights {
        (sw / det, sxx / det, -sx / det)
    } else if !all_zero {
        // propagate the quoted sigmas through the equal-weight estimator
        let (mut va, mut vb, mut c) = (0.0, 0.0, 0.0);
        for p in points {
            let da = (sw * p.s_total_um2 - sx) / det;
            let db = (sxx - sx * p.s_total_um2) / det;
            let s2 = p.sigma * p.sigma;
            va += da * da * s2;
            vb += db * db * s2;
            c += da * db * s2;
        }
        (va, vb, c)
    } else {
        let scale = chi2_red.unwrap_or(0.0);
        (scale * sw / det, scale * sxx / det, -scale * sx / det)
    };

    Ok(LineFit {
        alpha,
        beta,
        alpha_err: var_a.sqrt(),
        beta_err: var_b.sqrt(),
        cov_alpha_beta: cov,
        chi2_red,
        n_points: n,
        weighting,
        unit_weights_substituted: all_zero && weighting == FitWeighting::Weighted,
    })
}

/// Surface treatment before junction deposition.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CleaningLabel {
    A,
    B,
    C1,
    C2,
    Other(String),
}

impl fmt::Display for CleaningLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CleaningLabel::A => f.write_str("A"),
            CleaningLabel::B => f.write_str("B"),
            CleaningLabel::C1 => f.write_str("C1"),
            CleaningLabel::C2 => f.write_str("C2"),
            CleaningLabel::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for CleaningLabel {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "A" => CleaningLabel::A,
            "B" => CleaningLabel::B,
            "C1" => CleaningLabel::C1,
            "C2" => CleaningLabel::C2,
            other => CleaningLabel::Other(other.to_string()),
        })
    }
}

impl Serialize for CleaningLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CleaningLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().expect("infallible"))
    }
}

/// Per-qubit metadata carried by a chip dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitRecord {
    pub qubit_id: String,
    /// Operating (sweet-spot) frequency (GHz).
    pub freq_ghz: f64,
    pub t1_us: f64,
    pub s_total_um2: f64,
}

/// One chip: fabrication labels and its measured qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipDataset {
    pub chip_label: String,
    pub cleaning: CleaningLabel,
    pub jc_ua_per_um2: f64,
    pub qubits: Vec<QubitRecord>,
}

/// One summary row per chip. Standard deviations are sample deviations over
/// qubits and absent for fewer than two qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipSummary {
    pub chip_label: String,
    pub cleaning: CleaningLabel,
    pub jc_ua_per_um2: f64,
    pub n_qubits: usize,
    pub freq_mean_ghz: f64,
    pub freq_sd_ghz: Option<f64>,
    pub t1_mean_us: f64,
    pub t1_sd_us: Option<f64>,
    pub n_defects: usize,
    pub bandwidth_ghz: f64,
}

impl ChipSummary {
    pub const CSV_HEADER: [&'static str; 10] = [
        "label",
        "cleaning",
        "jc_ua_per_um2",
        "n_qubits",
        "freq_ghz_mean",
        "freq_ghz_sd",
        "t1_us_mean",
        "t1_us_sd",
        "n_defects",
        "bandwidth_ghz",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.chip_label.clone(),
            self.cleaning.to_string(),
            self.jc_ua_per_um2.to_string(),
            self.n_qubits.to_string(),
            self.freq_mean_ghz.to_string(),
            opt(self.freq_sd_ghz),
            self.t1_mean_us.to_string(),
            opt(self.t1_sd_us),
            self.n_defects.to_string(),
            self.bandwidth_ghz.to_string(),
        ]
    }
}

fn mean_sd(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sd)
}

/// Builds a chip summary row; every report must belong to one of the
/// dataset's qubits.
pub fn aggregate_chip(dataset: &ChipDataset, reports: &[DefectReport]) -> Result<ChipSummary> {
    if dataset.qubits.is_empty() {
        return Err(Error::domain(format!(
            "chip {} has no qubits",
            dataset.chip_label
        )));
    }
    let known: BTreeSet<&str> = dataset.qubits.iter().map(|q| q.qubit_id.as_str()).collect();
    let orphans: Vec<String> = reports
        .iter()
        .filter(|r| r.chip_id != dataset.chip_label || !known.contains(r.qubit_id.as_str()))
        .map(|r| format!("{}/{}/cooldown_{}", r.chip_id, r.qubit_id, r.cooldown_index))
        .collect();
    if !orphans.is_empty() {
        return Err(Error::OrphanReports(orphans));
    }
    let freqs: Vec<f64> = dataset.qubits.iter().map(|q| q.freq_ghz).collect();
    let t1s: Vec<f64> = dataset.qubits.iter().map(|q| q.t1_us).collect();
    let (freq_mean_ghz, freq_sd_ghz) = mean_sd(&freqs);
    let (t1_mean_us, t1_sd_us) = mean_sd(&t1s);
    Ok(ChipSummary {
        chip_label: dataset.chip_label.clone(),
        cleaning: dataset.cleaning.clone(),
        jc_ua_per_um2: dataset.jc_ua_per_um2,
        n_qubits: dataset.qubits.len(),
        freq_mean_ghz,
        freq_sd_ghz,
        t1_mean_us,
        t1_sd_us,
        n_defects: reports.iter().map(|r| r.n_peaks()).sum(),
        bandwidth_ghz: reports.iter().map(|r| r.bandwidth_analyzed_ghz).sum(),
    })
}

/// Bootstrap estimate of `rho(a) - rho(b)` for two independent groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceEstimate {
    pub diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
}

/// Two-sample bootstrap of the density difference between groups `a` and
/// `b`, each resampled within itself. Only the interval is reported.
pub fn compare_groups(
    a: &[DefectReport],
    b: &[DefectReport],
    config: &BootstrapConfig,
) -> Result<DifferenceEstimate> {
    let ua = resampling_units(a, config.unit);
    let ub = resampling_units(b, config.unit);
    check_bootstrap(config, ua.len().min(ub.len()))?;
    if ua.iter().chain(&ub).any(|u| !(u.1 > 0.0)) {
        return Err(Error::domain(
            "every resampling unit needs positive bandwidth",
        ));
    }
    let ra = replicate_densities(&ua, config.n_boot, derive_seed(config.seed, &[0]));
    let rb = replicate_densities(&ub, config.n_boot, derive_seed(config.seed, &[1]));
    let mut diffs: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| x.0 - y.0).collect();
    let diff = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let (ci_low, ci_high) = percentile_interval(&mut diffs, config.ci_level, diff);
    Ok(DifferenceEstimate {
        diff,
        ci_low,
        ci_high,
        n_boot: config.n_boot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{AnalysisParams, Peak};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn pt(s: f64, rho: f64, sigma: f64) -> AreaPoint {
        AreaPoint {
            s_total_um2: s,
            rho,
            sigma,
            cohort_label: format!("{s}"),
        }
    }

    #[test]
    fn quality_factors() {
        assert_abs_diff_eq!(
            quality_factor(6.0, 35.0e-6).unwrap() / 1e6,
            1.3195,
            epsilon = 1e-4
        );
        assert_abs_diff_eq!(
            quality_factor(6.0, 12.2e-6).unwrap() / 1e6,
            0.4599,
            epsilon = 1e-4
        );
        assert!(quality_factor(6.0, 1e-300).unwrap() < 1e-280);
        assert!(quality_factor(0.0, 1e-6).is_err());
        assert!(quality_factor(5.0, -1e-6).is_err());
    }

    #[test]
    fn exact_line() {
        let pts: Vec<AreaPoint> = [0.04, 0.1, 0.2, 0.3]
            .iter()
            .map(|s| pt(*s, 5.0 * s + 0.1, 0.05))
            .collect();
        let fit = fit_area_scaling(&pts, FitWeighting::Weighted).unwrap();
        assert_abs_diff_eq!(fit.alpha, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.chi2_red.unwrap(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn two_points_interpolate() {
        let fit = fit_area_scaling(
            &[pt(0.1, 1.0, 0.1), pt(0.2, 1.5, 0.2)],
            FitWeighting::Weighted,
        )
        .unwrap();
        assert_abs_diff_eq!(fit.alpha, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta, 0.5, epsilon = 1e-12);
        assert_eq!(fit.chi2_red, None);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        assert!(fit_area_scaling(
            &[pt(0.1, 1.0, 0.1), pt(0.1, 2.0, 0.1)],
            FitWeighting::Weighted
        )
        .is_err());
        assert!(fit_area_scaling(&[pt(0.1, 1.0, 0.1)], FitWeighting::Weighted).is_err());
        assert!(fit_area_scaling(
            &[pt(0.1, 1.0, 0.0), pt(0.2, 2.0, 0.1)],
            FitWeighting::Weighted
        )
        .is_err());
        let flagged = fit_area_scaling(
            &[pt(0.1, 1.0, 0.0), pt(0.2, 2.0, 0.0), pt(0.3, 2.9, 0.0)],
            FitWeighting::Weighted,
        )
        .unwrap();
        assert!(flagged.unit_weights_substituted);
    }

    /// Independent route: solve the weighted normal equations as a dense
    /// linear system.
    fn normal_equations(pts: &[AreaPoint]) -> (f64, f64, f64, f64) {
        let x = DMatrix::from_fn(
            pts.len(),
            2,
            |i, k| if k == 0 { pts[i].s_total_um2 } else { 1.0 },
        );
        let w = DMatrix::from_diagonal(&DVector::from_iterator(
            pts.len(),
            pts.iter().map(|p| p.sigma.powi(-2)),
        ));
        let y = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.rho));
        let xtwx = x.transpose() * &w * &x;
        let inv = xtwx.try_inverse().unwrap();
        let beta = &inv * x.transpose() * &w * y;
        (beta[0], beta[1], inv[(0, 0)].sqrt(), inv[(1, 1)].sqrt())
    }

    #[test]
    fn matches_dense_normal_equations() {
        let pts = vec![
            pt(0.04, 0.21, 0.05),
            pt(0.10, 0.44, 0.08),
            pt(0.15, 0.80, 0.12),
            pt(0.20, 1.02, 0.09),
            pt(0.31, 1.47, 0.20),
        ];
        let fit = fit_area_scaling(&pts, FitWeighting::Weighted).unwrap();
        let (a, b, ea, eb) = normal_equations(&pts);
        assert_abs_diff_eq!(fit.alpha, a, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.beta, b, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.alpha_err, ea, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.beta_err, eb, epsilon = 1e-10);
    }

    #[test]
    fn unweighted_errors_propagate_sigmas() {
        let pts = vec![pt(0.1, 1.0, 0.1), pt(0.2, 1.8, 0.1), pt(0.3, 3.1, 0.1)];
        let u = fit_area_scaling(&pts, FitWeighting::Unweighted).unwrap();
        let w = fit_area_scaling(&pts, FitWeighting::Weighted).unwrap();
        // equal sigmas: both modes coincide
        assert_abs_diff_eq!(u.alpha, w.alpha, epsilon = 1e-12);
        assert_abs_diff_eq!(u.alpha_err, w.alpha_err, epsilon = 1e-12);
        assert_abs_diff_eq!(u.beta_err, w.beta_err, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn area_scaling_equivariance(
            rhos in prop::collection::vec(0.0f64..3.0, 4),
            sigmas in prop::collection::vec(0.01f64..0.5, 4),
            c in 0.1f64..10.0,
        ) {
            let s = [0.04, 0.1, 0.2, 0.35];
            let pts: Vec<AreaPoint> = (0..4).map(|i| pt(s[i], rhos[i], sigmas[i])).collect();
            let scaled: Vec<AreaPoint> = pts.iter().map(|p| pt(p.s_total_um2 * c, p.rho, p.sigma)).collect();
            let a = fit_area_scaling(&pts, FitWeighting::Weighted).unwrap();
            let b = fit_area_scaling(&scaled, FitWeighting::Weighted).unwrap();
            prop_assert!((b.alpha * c - a.alpha).abs() <= 1e-9 * (1.0 + a.alpha.abs()));
            prop_assert!((b.beta - a.beta).abs() <= 1e-9 * (1.0 + a.beta.abs()));
        }

        #[test]
        fn uniform_weights_are_relative(rhos in prop::collection::vec(0.0f64..3.0, 5), sigma in 0.01f64..1.0) {
            let s = [0.04, 0.1, 0.2, 0.3, 0.5];
            let one: Vec<AreaPoint> = (0..5).map(|i| pt(s[i], rhos[i], sigma)).collect();
            let two: Vec<AreaPoint> = (0..5).map(|i| pt(s[i], rhos[i], sigma / 2f64.sqrt())).collect();
            let a = fit_area_scaling(&one, FitWeighting::Weighted).unwrap();
            let b = fit_area_scaling(&two, FitWeighting::Weighted).unwrap();
            prop_assert!((a.alpha - b.alpha).abs() <= 1e-9 * (1.0 + a.alpha.abs()));
            prop_assert!((a.beta - b.beta).abs() <= 1e-9 * (1.0 + a.beta.abs()));
        }
    }

    fn report(chip: &str, qubit: &str, peaks: usize, bw: f64) -> DefectReport {
        DefectReport {
            peaks: (0..peaks)
                .map(|i| Peak {
                    frequency_ghz: 4.0 + 0.2 * i as f64,
                    p_loss: 0.3,
                    smoothed: 0.05,
                    prominence: 0.05,
                })
                .collect(),
            bandwidth_analyzed_ghz: bw,
            params: AnalysisParams::default(),
            qubit_id: qubit.into(),
            chip_id: chip.into(),
            cooldown_index: 0,
        }
    }

    fn chip(n: usize) -> ChipDataset {
        ChipDataset {
            chip_label: "5-0".into(),
            cleaning: CleaningLabel::B,
            jc_ua_per_um2: 0.3,
            qubits: (0..n)
                .map(|i| QubitRecord {
                    qubit_id: format!("qb{i}"),
                    freq_ghz: 4.8 + 0.1 * i as f64,
                    t1_us: 10.0 + i as f64,
                    s_total_um2: 0.1,
                })
                .collect(),
        }
    }

    #[test]
    fn table_row_totals() {
        let reports = vec![
            report("5-0", "qb0", 3, 1.50),
            report("5-0", "qb1", 2, 1.60),
            report("5-0", "qb2", 4, 1.55),
            report("5-0", "qb3", 2, 1.53),
        ];
        let row = aggregate_chip(&chip(4), &reports).unwrap();
        assert_eq!((row.n_qubits, row.n_defects), (4, 11));
        assert_abs_diff_eq!(row.bandwidth_ghz, 6.18, epsilon = 1e-12);
        assert_eq!(row.cleaning.to_string(), "B");
    }

    #[test]
    fn aggregation_edge_cases() {
        assert!(aggregate_chip(&chip(0), &[]).is_err());
        let single = aggregate_chip(&chip(1), &[report("5-0", "qb0", 1, 1.6)]).unwrap();
        assert_eq!(single.freq_sd_ghz, None);
        assert_eq!(single.t1_sd_us, None);
        let err = aggregate_chip(
            &chip(2),
            &[report("5-0", "qb9", 1, 1.6), report("4-0", "qb0", 1, 1.6)],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("5-0/qb9") && msg.contains("4-0/qb0"), "{msg}");
    }

    #[test]
    fn group_difference_interval() {
        let a: Vec<DefectReport> = (0..12)
            .map(|i| report("x", &format!("q{i}"), 1 + i % 3, 1.6))
            .collect();
        let b: Vec<DefectReport> = (0..12)
            .map(|i| report("y", &format!("q{i}"), i % 2, 1.6))
            .collect();
        let cfg = BootstrapConfig {
            n_boot: 2000,
            seed: 3,
            ..Default::default()
        };
        let d = compare_groups(&a, &b, &cfg).unwrap();
        let expected = crate::analysis::defect_density(&a).unwrap()
            - crate::analysis::defect_density(&b).unwrap();
        assert_abs_diff_eq!(d.diff, expected, epsilon = 0.05);
        assert!(d.ci_low < d.diff && d.diff < d.ci_high);
        assert_eq!(compare_groups(&a, &b, &cfg).unwrap(), d);
    }

    #[test]
    fn cleaning_labels_round_trip() {
        for s in ["A", "B", "C1", "C2", "plasma"] {
            let l: CleaningLabel = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
            let j = serde_json::to_string(&l).unwrap();
            assert_eq!(serde_json::from_str::<CleaningLabel>(&j).unwrap(), l);
        }
    }
}
