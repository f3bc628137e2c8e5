//! End-to-end commands over a dataset directory: simulate, analyze, sweep,
//! fit and report. Per-spectrum work runs on a rayon pool; every random
//! stream is derived from the master seed and the item's labels, so outputs
//! do not depend on the number of threads.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    bootstrap_density, find_candidates, report_from, sg_smooth, AnalysisParams, BootstrapConfig,
    Candidates, DefectReport,
};
use crate::config::{ChipSpec, RunConfig};
use crate::dataset::{
    csv_bytes, parse_spectrum_csv, spectrum_csv, spectrum_dir, Dataset, SpectrumMeta,
    EXPANDED_CONFIG,
};
use crate::error::{Error, Result};
use crate::fitstats::{
    aggregate_chip, compare_groups, fit_area_scaling, quality_factor, AreaPoint, ChipDataset,
    ChipSummary, FitWeighting, LineFit, QubitRecord,
};
use crate::physics::QubitModel;
use crate::rng::{derive_seed, label_hash, stream};
use crate::specgen::{
    evolve_day, generate_spectrum, sample_defect_ensemble, thermal_cycle, uniform_grid,
    DefectEnsemble, SwapSpectrum,
};

/// Counting thresholds of the default sweep.
pub const SWEEP_THRESHOLDS: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.57];

const PARAMS_FILE: &str = "analysis/params.json";

// stream tags
const QUBIT: u64 = 1;
const ENSEMBLE: u64 = 2;
const CYCLE: u64 = 3;
const DRIFT: u64 = 4;
const SPECTRUM: u64 = 5;

/// Runs `f` on a pool of `jobs` threads (all cores when `None`).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == Some(0) {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn chip_json(chip: &str) -> String {
    format!("chips/{chip}/chip.json")
}

fn qubit_json(chip: &str, qubit: &str) -> String {
    format!("chips/{chip}/qubits/{qubit}/qubit.json")
}

/// Per-qubit hardware draw: Josephson energy spread and background T1.
fn draw_qubit(
    cfg: &RunConfig,
    chip: &ChipSpec,
    index: u32,
) -> Result<(QubitModel, QubitRecord, Vec<f64>)> {
    let t = &chip.qubit;
    let qubit_id = ChipSpec::qubit_id(index);
    let mut rng = stream(derive_seed(
        cfg.master_seed,
        &[label_hash(&chip.label), index as u64, QUBIT],
    ));
    let z: f64 = StandardNormal.sample(&mut rng);
    let ej = t.ej_sum_ghz * (1.0 + t.ej_spread_rel * z);
    let (lo, hi) = t.t1_us_range;
    let t1_us = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    let model = t.model(ej, t1_us, chip.junction_areas_um2);
    let fail = |e: Error| Error::Config(format!("chip {} qubit {qubit_id}: {e}", chip.label));
    model.validate().map_err(fail)?;
    let top = model.sweet_spot_freq().map_err(fail)?;
    let grid = uniform_grid(top - cfg.grid.span_ghz, top, cfg.grid.step_mhz).map_err(fail)?;
    let (f_min, _) = model.reachable_band().map_err(fail)?;
    if grid[0] < f_min {
        return Err(fail(Error::OutOfRange(format!(
            "grid starts at {:.4} GHz below the lowest reachable {:.4} GHz; reduce grid.span_ghz",
            grid[0], f_min
        ))));
    }
    let record = QubitRecord {
        qubit_id,
        freq_ghz: top,
        t1_us,
        s_total_um2: chip.total_area_um2(),
    };
    Ok((model, record, grid))
}

/// One simulated qubit: its hardware draw and, per cooldown, the defect
/// ensemble and the measured spectrum.
#[derive(Debug, Clone)]
pub struct SimulatedQubit {
    pub chip_index: usize,
    pub model: QubitModel,
    pub record: QubitRecord,
    pub ensembles: Vec<DefectEnsemble>,
    pub spectra: Vec<SwapSpectrum>,
}

fn simulate_qubit(cfg: &RunConfig, chip_index: usize, index: u32) -> Result<SimulatedQubit> {
    let chip = &cfg.chips[chip_index];
    let (model, record, grid) = draw_qubit(cfg, chip, index)?;
    let seed = |parts: &[u64]| {
        let mut all = vec![label_hash(&chip.label), index as u64];
        all.extend_from_slice(parts);
        derive_seed(cfg.master_seed, &all)
    };
    let band = (grid[0], grid[grid.len() - 1]);
    let mut ensemble = sample_defect_ensemble(
        band,
        cfg.density_for(chip),
        cfg.defects.g_distribution.clone(),
        cfg.defects.gamma_distribution.clone(),
        seed(&[ENSEMBLE]),
    )?;
    let mut ensembles = Vec::new();
    let mut spectra = Vec::new();
    for k in 0..cfg.temporal.cooldowns {
        if k > 0 && cfg.temporal.thermal_cycle_between_cooldowns {
            ensemble = thermal_cycle(&ensemble, seed(&[CYCLE, k as u64]));
        }
        if cfg.temporal.days_per_cooldown > 0.0 {
            ensemble = evolve_day(
                &ensemble,
                &cfg.drift,
                cfg.temporal.days_per_cooldown,
                seed(&[DRIFT, k as u64]),
            )?;
        }
        let spectrum = generate_spectrum(
            &model,
            &ensemble,
            &grid,
            cfg.tau_s(),
            cfg.shots,
            seed(&[SPECTRUM, k as u64]),
        )?
        .with_labels(&chip.label, &record.qubit_id, k);
        ensembles.push(ensemble.clone());
        spectra.push(spectrum);
    }
    Ok(SimulatedQubit {
        chip_index,
        model,
        record,
        ensembles,
        spectra,
    })
}

/// Simulates every configured qubit without touching the filesystem, in
/// config order.
pub fn simulate(config: &RunConfig) -> Result<Vec<SimulatedQubit>> {
    config.validate()?;
    let items: Vec<(usize, u32)> = config
        .chips
        .iter()
        .enumerate()
        .flat_map(|(c, chip)| (0..chip.n_qubits).map(move |q| (c, q)))
        .collect();
    items
        .par_iter()
        .map(|&(c, q)| simulate_qubit(config, c, q))
        .collect()
}

/// Simulates the whole configured dataset into `dataset_dir`.
pub fn cmd_simulate(config: &RunConfig, dataset_dir: &Path) -> Result<Dataset> {
    let qubits = simulate(config)?;
    let mut ds = Dataset::create(dataset_dir)?;
    ds.write(EXPANDED_CONFIG, config.to_json().as_bytes())?;
    let mut records: BTreeMap<usize, Vec<QubitRecord>> = BTreeMap::new();
    for q in qubits {
        let chip = &config.chips[q.chip_index].label;
        ds.write_json(&qubit_json(chip, &q.record.qubit_id), &q.model)?;
        for (s, e) in q.spectra.iter().zip(&q.ensembles) {
            let dir = spectrum_dir(chip, &q.record.qubit_id, s.cooldown_index);
            ds.write(&format!("{dir}/spectrum.csv"), &spectrum_csv(s))?;
            ds.write_json(&format!("{dir}/spectrum.json"), &SpectrumMeta::of(s))?;
            ds.write_json(&format!("{dir}/ensemble.json"), e)?;
        }
        records.entry(q.chip_index).or_default().push(q.record);
    }
    for (c, qubits) in records {
        let chip = &config.chips[c];
        let dataset = ChipDataset {
            chip_label: chip.label.clone(),
            cleaning: chip.cleaning.clone(),
            jc_ua_per_um2: chip.jc_ua_per_um2,
            qubits,
        };
        ds.write_json(&chip_json(&chip.label), &dataset)?;
    }
    ds.commit()?;
    Ok(ds)
}

/// Analysis settings persisted by `analyze` and reused by later commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    pub params: AnalysisParams,
    pub bootstrap: BootstrapConfig,
}

/// Applies `key=value` overrides (values parsed as JSON, bare strings
/// accepted) to the analysis parameters. Unknown keys are config errors.
pub fn apply_overrides(
    params: &AnalysisParams,
    overrides: &[(String, String)],
) -> Result<AnalysisParams> {
    let mut value = serde_json::to_value(params).expect("params serialize");
    let map = value.as_object_mut().expect("params are an object");
    for (key, raw) in overrides {
        if !map.contains_key(key) {
            let known: Vec<&str> = map.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown analysis parameter {key:?} (known: {})",
                known.join(", ")
            )));
        }
        let v =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        map.insert(key.clone(), v);
    }
    let out: AnalysisParams = serde_json::from_value(value)
        .map_err(|e| Error::Config(format!("analysis override: {e}")))?;
    out.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(out)
}

fn load_config(ds: &Dataset) -> Result<RunConfig> {
    let bytes = ds.read(EXPANDED_CONFIG)?;
    let text =
        String::from_utf8(bytes).map_err(|e| Error::format(ds.root().join(EXPANDED_CONFIG), e))?;
    RunConfig::from_json(&text)
}

/// Spectra ordered by chip (config order), qubit and cooldown.
fn load_spectra(ds: &Dataset, cfg: &RunConfig) -> Result<Vec<SwapSpectrum>> {
    let order: BTreeMap<&str, usize> = cfg
        .chips
        .iter()
        .enumerate()
        .map(|(i, c)| (c.label.as_str(), i))
        .collect();
    let files = ds.list("chips/", "/spectrum.csv");
    let mut spectra = files
        .par_iter()
        .map(|rel| {
            let bytes = ds.read(rel)?;
            let (freqs, p_loss) = parse_spectrum_csv(&ds.root().join(rel), &bytes)?;
            let meta_rel = rel.replace("/spectrum.csv", "/spectrum.json");
            let meta: SpectrumMeta = ds.read_json(&meta_rel)?;
            let s = SwapSpectrum {
                freqs_ghz: freqs,
                p_loss,
                tau_s: meta.tau_ns * 1e-9,
                shots: meta.shots,
                qubit_id: meta.qubit_id,
                chip_id: meta.chip_id,
                cooldown_index: meta.cooldown_index,
                rng_seed: meta.seed,
                pulse_amplitude: meta.pulse_amplitude_phi0,
            };
            s.validate()
                .map_err(|e| Error::format(ds.root().join(rel), e))?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    spectra.sort_by(|a, b| {
        let ka = (
            order.get(a.chip_id.as_str()),
            &a.chip_id,
            &a.qubit_id,
            a.cooldown_index,
        );
        let kb = (
            order.get(b.chip_id.as_str()),
            &b.chip_id,
            &b.qubit_id,
            b.cooldown_index,
        );
        ka.cmp(&kb)
    });
    Ok(spectra)
}

fn settings_for(ds: &Dataset, cfg: &RunConfig) -> Result<AnalysisSettings> {
    if ds.contains(PARAMS_FILE) {
        ds.read_json(PARAMS_FILE)
    } else {
        Ok(AnalysisSettings {
            params: cfg.analysis.clone(),
            bootstrap: cfg.bootstrap.clone(),
        })
    }
}

/// Density of one group of reports with its interval; `None` when the group
/// has fewer than two resampling units.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimate {
    pub n_spectra: usize,
    pub n_defects: usize,
    pub bandwidth_ghz: f64,
    pub rho: f64,
    pub ci: Option<(f64, f64)>,
}

impl GroupEstimate {
    /// Symmetrized half-width of the interval; a one-count Poisson scale
    /// (`1/bandwidth` or `√N/bandwidth`) when the interval is absent or
    /// degenerate.
    pub fn sigma(&self) -> f64 {
        match self.ci {
            Some((lo, hi)) if hi > lo => (hi - lo) / 2.0,
            _ => (self.n_defects.max(1) as f64).sqrt() / self.bandwidth_ghz,
        }
    }

    fn csv_tail(&self) -> [String; 6] {
        let (lo, hi) = self.ci.map_or((String::new(), String::new()), |(l, h)| {
            (l.to_string(), h.to_string())
        });
        [
            self.n_spectra.to_string(),
            self.n_defects.to_string(),
            self.bandwidth_ghz.to_string(),
            self.rho.to_string(),
            lo,
            hi,
        ]
    }
}

fn group_seed(boot: &BootstrapConfig, key: &str) -> BootstrapConfig {
    BootstrapConfig {
        seed: derive_seed(boot.seed, &[label_hash(key)]),
        ..boot.clone()
    }
}

/// Estimates a group; `key` selects the bootstrap stream (`"all"` uses the
/// configured seed unchanged).
pub fn estimate_group(
    reports: &[DefectReport],
    boot: &BootstrapConfig,
    key: &str,
) -> Result<GroupEstimate> {
    let n_defects = reports.iter().map(|r| r.n_peaks()).sum();
    let bandwidth_ghz = reports.iter().map(|r| r.bandwidth_analyzed_ghz).sum();
    let cfg = if key == "all" {
        boot.clone()
    } else {
        group_seed(boot, key)
    };
    let units = match cfg.unit {
        crate::analysis::ResampleUnit::Spectrum => reports.len(),
        crate::analysis::ResampleUnit::Chip => reports
            .iter()
            .map(|r| r.chip_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len(),
    };
    let (rho, ci) = if units >= 2 {
        let e = bootstrap_density(reports, &cfg)?;
        (e.rho, Some((e.ci_low, e.ci_high)))
    } else {
        (crate::analysis::defect_density(reports)?, None)
    };
    Ok(GroupEstimate {
        n_spectra: reports.len(),
        n_defects,
        bandwidth_ghz,
        rho,
        ci,
    })
}

fn count_all(spectra: &[SwapSpectrum], params: &AnalysisParams) -> Result<Vec<Candidates>> {
    spectra
        .par_iter()
        .map(|s| find_candidates(s, params))
        .collect()
}

fn reports_at(
    spectra: &[SwapSpectrum],
    candidates: &[Candidates],
    params: &AnalysisParams,
) -> Vec<DefectReport> {
    spectra
        .iter()
        .zip(candidates)
        .map(|(s, c)| report_from(s, c, params))
        .collect()
}

fn chip_datasets<'a>(ds: &Dataset, cfg: &'a RunConfig) -> Result<Vec<(ChipDataset, &'a ChipSpec)>> {
    cfg.chips
        .iter()
        .map(|c| Ok((ds.read_json::<ChipDataset>(&chip_json(&c.label))?, c)))
        .collect()
}

fn by_chip(reports: &[DefectReport], chip: &str) -> Vec<DefectReport> {
    reports
        .iter()
        .filter(|r| r.chip_id == chip)
        .cloned()
        .collect()
}

fn area_points(
    reports: &[DefectReport],
    chips: &[(ChipDataset, &ChipSpec)],
    boot: &BootstrapConfig,
) -> Result<Vec<(AreaPoint, GroupEstimate)>> {
    chips
        .iter()
        .map(|(d, spec)| {
            let e = estimate_group(
                &by_chip(reports, &d.chip_label),
                boot,
                &format!("chip/{}", d.chip_label),
            )?;
            Ok((
                AreaPoint {
                    s_total_um2: spec.total_area_um2(),
                    rho: e.rho,
                    sigma: e.sigma(),
                    cohort_label: d.chip_label.clone(),
                },
                e,
            ))
        })
        .collect()
}

const AREA_HEADER: [&str; 6] = [
    "cohort_label",
    "s_total_um2",
    "rho",
    "ci_low",
    "ci_high",
    "sigma",
];

fn area_rows(points: &[(AreaPoint, GroupEstimate)]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|(p, e)| {
            let (lo, hi) = e.ci.map_or((String::new(), String::new()), |(l, h)| {
                (l.to_string(), h.to_string())
            });
            vec![
                p.cohort_label.clone(),
                p.s_total_um2.to_string(),
                p.rho.to_string(),
                lo,
                hi,
                p.sigma.to_string(),
            ]
        })
        .collect()
}

fn table_rows(
    chips: &[(ChipDataset, &ChipSpec)],
    reports: &[DefectReport],
) -> Result<Vec<Vec<String>>> {
    chips
        .iter()
        .map(|(d, _)| Ok(aggregate_chip(d, &by_chip(reports, &d.chip_label))?.csv_record()))
        .collect()
}

/// Options shared by the analysis commands.
#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    /// `key=value` overrides of the analysis parameters.
    pub overrides: Vec<(String, String)>,
    pub threshold: Option<f64>,
    /// Replaces the bootstrap seed.
    pub seed: Option<u64>,
}

/// Counts defects in every spectrum and writes reports, grouped densities,
/// area points and the chip summary.
pub fn cmd_analyze(dataset_dir: &Path, opts: &AnalyzeOptions) -> Result<Dataset> {
    let mut ds = Dataset::open(dataset_dir)?;
    let cfg = load_config(&ds)?;
    let mut overrides = opts.overrides.clone();
    if let Some(t) = opts.threshold {
        overrides.push(("counting_threshold".into(), t.to_string()));
    }
    let params = apply_overrides(&cfg.analysis, &overrides)?;
    let mut boot = cfg.bootstrap.clone();
    if let Some(s) = opts.seed {
        boot.seed = s;
    }
    let spectra = load_spectra(&ds, &cfg)?;
    let candidates = count_all(&spectra, &params)?;
    let reports = reports_at(&spectra, &candidates, &params);
    let chips = chip_datasets(&ds, &cfg)?;

    ds.clear("analysis/")?;
    for r in &reports {
        ds.write_json(
            &format!(
                "{}/report.json",
                spectrum_dir(&r.chip_id, &r.qubit_id, r.cooldown_index)
            ),
            r,
        )?;
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |grouping: &str, chip: &str, qubit: &str, cooldown: String, e: GroupEstimate| {
        let mut row = vec![
            grouping.to_string(),
            chip.to_string(),
            qubit.to_string(),
            cooldown,
        ];
        row.extend(e.csv_tail());
        rows.push(row);
    };
    push(
        "all",
        "",
        "",
        String::new(),
        estimate_group(&reports, &boot, "all")?,
    );
    for (d, _) in &chips {
        let chip_reports = by_chip(&reports, &d.chip_label);
        push(
            "chip",
            &d.chip_label,
            "",
            String::new(),
            estimate_group(&chip_reports, &boot, &format!("chip/{}", d.chip_label))?,
        );
        for q in &d.qubits {
            let group: Vec<DefectReport> = chip_reports
                .iter()
                .filter(|r| r.qubit_id == q.qubit_id)
                .cloned()
                .collect();
            if group.is_empty() {
                continue;
            }
            let key = format!("qubit/{}/{}", d.chip_label, q.qubit_id);
            push(
                "qubit",
                &d.chip_label,
                &q.qubit_id,
                String::new(),
                estimate_group(&group, &boot, &key)?,
            );
        }
        let cooldowns: std::collections::BTreeSet<u32> =
            chip_reports.iter().map(|r| r.cooldown_index).collect();
        for k in cooldowns {
            let group: Vec<DefectReport> = chip_reports
                .iter()
                .filter(|r| r.cooldown_index == k)
                .cloned()
                .collect();
            let key = format!("cooldown/{}/{k}", d.chip_label);
            push(
                "cooldown",
                &d.chip_label,
                "",
                k.to_string(),
                estimate_group(&group, &boot, &key)?,
            );
        }
    }
    ds.write(
        "analysis/densities.csv",
        &csv_bytes(
            &[
                "grouping",
                "chip",
                "qubit",
                "cooldown",
                "n_spectra",
                "n_defects",
                "bandwidth_ghz",
                "rho",
                "ci_low",
                "ci_high",
            ],
            rows,
        ),
    )?;

    let points = area_points(&reports, &chips, &boot)?;
    ds.write(
        "analysis/area_points.csv",
        &csv_bytes(&AREA_HEADER, area_rows(&points)),
    )?;
    ds.write(
        "analysis/summary.csv",
        &csv_bytes(&ChipSummary::CSV_HEADER, table_rows(&chips, &reports)?),
    )?;
    ds.write_json(
        PARAMS_FILE,
        &AnalysisSettings {
            params,
            bootstrap: boot,
        },
    )?;
    ds.commit()?;
    Ok(ds)
}

struct SweepTables {
    overall: Vec<Vec<String>>,
    by_chip: Vec<Vec<String>>,
    fits: Vec<Vec<String>>,
}

const SWEEP_HEADER: [&str; 4] = ["threshold", "rho", "ci_low", "ci_high"];
const SWEEP_CHIP_HEADER: [&str; 7] = [
    "threshold",
    "chip",
    "s_total_um2",
    "rho",
    "ci_low",
    "ci_high",
    "sigma",
];
const FIT_HEADER: [&str; 8] = [
    "threshold",
    "alpha",
    "beta",
    "alpha_err",
    "beta_err",
    "chi2_red",
    "n_points",
    "weighting",
];

fn sweep_tables(
    spectra: &[SwapSpectrum],
    chips: &[(ChipDataset, &ChipSpec)],
    settings: &AnalysisSettings,
    thresholds: &[f64],
    weighting: FitWeighting,
) -> Result<SweepTables> {
    if thresholds.is_empty() {
        return Err(Error::Config("at least one threshold is required".into()));
    }
    let candidates = count_all(spectra, &settings.params)?;
    let mut t = SweepTables {
        overall: Vec::new(),
        by_chip: Vec::new(),
        fits: Vec::new(),
    };
    for &th in thresholds {
        let params = apply_overrides(
            &settings.params,
            &[("counting_threshold".into(), th.to_string())],
        )?;
        let reports = reports_at(spectra, &candidates, &params);
        let e = estimate_group(&reports, &settings.bootstrap, "all")?;
        let (lo, hi) = e.ci.map_or((String::new(), String::new()), |(l, h)| {
            (l.to_string(), h.to_string())
        });
        t.overall
            .push(vec![th.to_string(), e.rho.to_string(), lo, hi]);
        let points = area_points(&reports, chips, &settings.bootstrap)?;
        t.by_chip.extend(
            area_rows(&points)
                .into_iter()
                .map(|row| std::iter::once(th.to_string()).chain(row).collect()),
        );
        let pts: Vec<AreaPoint> = points.into_iter().map(|(p, _)| p).collect();
        if let Ok(fit) = fit_area_scaling(&pts, weighting) {
            t.fits.push(vec![
                th.to_string(),
                fit.alpha.to_string(),
                fit.beta.to_string(),
                fit.alpha_err.to_string(),
                fit.beta_err.to_string(),
                fit.chi2_red.map(|c| c.to_string()).unwrap_or_default(),
                fit.n_points.to_string(),
                serde_json::to_value(fit.weighting)
                    .expect("enum")
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
            ]);
        }
    }
    Ok(t)
}

/// Re-counts at each threshold with the bootstrap streams of `analyze`.
pub fn cmd_sweep(
    dataset_dir: &Path,
    thresholds: &[f64],
    weighting: Option<FitWeighting>,
) -> Result<Dataset> {
    let mut ds = Dataset::open(dataset_dir)?;
    let cfg = load_config(&ds)?;
    let settings = settings_for(&ds, &cfg)?;
    let spectra = load_spectra(&ds, &cfg)?;
    let chips = chip_datasets(&ds, &cfg)?;
    let t = sweep_tables(
        &spectra,
        &chips,
        &settings,
        thresholds,
        weighting.unwrap_or(cfg.fit_weighting),
    )?;
    ds.write("analysis/sweep.csv", &csv_bytes(&SWEEP_HEADER, t.overall))?;
    ds.write(
        "analysis/sweep_by_chip.csv",
        &csv_bytes(&SWEEP_CHIP_HEADER, t.by_chip),
    )?;
    ds.write("analysis/sweep_fits.csv", &csv_bytes(&FIT_HEADER, t.fits))?;
    ds.commit()?;
    Ok(ds)
}

/// Reads area points written by `analyze`.
pub fn read_area_points(path: &Path, bytes: &[u8]) -> Result<Vec<AreaPoint>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing column {name}")))
    };
    let (ci, cs, cr, cg) = (
        col("cohort_label")?,
        col("s_total_um2")?,
        col("rho")?,
        col("sigma")?,
    );
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::format(path, e))?;
            let num = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format(path, format!("row {}: bad number", i + 2)))
            };
            Ok(AreaPoint {
                cohort_label: rec.get(ci).unwrap_or_default().to_string(),
                s_total_um2: num(cs)?,
                rho: num(cr)?,
                sigma: num(cg)?,
            })
        })
        .collect()
}

/// Fits density against junction area from `analysis/area_points.csv`.
pub fn cmd_fit(dataset_dir: &Path, weighting: Option<FitWeighting>) -> Result<LineFit> {
    let mut ds = Dataset::open(dataset_dir)?;
    let cfg = load_config(&ds)?;
    let rel = "analysis/area_points.csv";
    if !ds.contains(rel) {
        return Err(Error::Config(format!("{rel} not found; run analyze first")));
    }
    let points = read_area_points(&ds.root().join(rel), &ds.read(rel)?)?;
    let fit = fit_area_scaling(&points, weighting.unwrap_or(cfg.fit_weighting))?;
    ds.write_json("analysis/fit.json", &fit)?;
    ds.commit()?;
    Ok(fit)
}

/// Writes the chip table and plot-ready tables under `report/`.
pub fn cmd_report(dataset_dir: &Path, weighting: Option<FitWeighting>) -> Result<Dataset> {
    let mut ds = Dataset::open(dataset_dir)?;
    let cfg = load_config(&ds)?;
    let settings = settings_for(&ds, &cfg)?;
    let weighting = weighting.unwrap_or(cfg.fit_weighting);
    let spectra = load_spectra(&ds, &cfg)?;
    let chips = chip_datasets(&ds, &cfg)?;
    let candidates = count_all(&spectra, &settings.params)?;
    let reports = reports_at(&spectra, &candidates, &settings.params);
    let boot = &settings.bootstrap;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    files.push((
        "report/chip_summary.csv".into(),
        csv_bytes(&ChipSummary::CSV_HEADER, table_rows(&chips, &reports)?),
    ));

    // one representative spectrum and its counted peaks
    if let Some((s, r)) = spectra.first().zip(reports.first()) {
        let smooth = sg_smooth(s, settings.params.sg_window_mhz, settings.params.sg_order)?;
        let rows = s
            .freqs_ghz
            .iter()
            .zip(&s.p_loss)
            .zip(&smooth)
            .map(|((f, p), m)| {
                let counted = r.peaks.iter().any(|pk| pk.frequency_ghz == *f);
                vec![
                    f.to_string(),
                    p.to_string(),
                    m.to_string(),
                    u8::from(counted).to_string(),
                ]
            });
        files.push((
            "report/example_spectrum.csv".into(),
            csv_bytes(&["freq_ghz", "p_loss", "p_loss_smoothed", "counted"], rows),
        ));
        let rows = spectra
            .iter()
            .filter(|x| x.chip_id == s.chip_id && x.qubit_id == s.qubit_id)
            .flat_map(|x| {
                x.freqs_ghz.iter().zip(&x.p_loss).map(move |(f, p)| {
                    vec![
                        x.chip_id.clone(),
                        x.qubit_id.clone(),
                        x.cooldown_index.to_string(),
                        f.to_string(),
                        p.to_string(),
                    ]
                })
            });
        files.push((
            "report/cooldown_spectra.csv".into(),
            csv_bytes(&["chip", "qubit", "cooldown", "freq_ghz", "p_loss"], rows),
        ));
    }

    let mut rows = Vec::new();
    for (d, _) in &chips {
        for q in &d.qubits {
            let group: Vec<DefectReport> = reports
                .iter()
                .filter(|r| r.chip_id == d.chip_label && r.qubit_id == q.qubit_id)
                .cloned()
                .collect();
            if group.is_empty() {
                continue;
            }
            let e = estimate_group(
                &group,
                boot,
                &format!("qubit/{}/{}", d.chip_label, q.qubit_id),
            )?;
            let mut row = vec![d.chip_label.clone(), q.qubit_id.clone()];
            row.extend(e.csv_tail());
            rows.push(row);
        }
    }
    files.push((
        "report/qubit_density.csv".into(),
        csv_bytes(
            &[
                "chip",
                "qubit",
                "n_spectra",
                "n_defects",
                "bandwidth_ghz",
                "rho",
                "ci_low",
                "ci_high",
            ],
            rows,
        ),
    ));

    let points = area_points(&reports, &chips, boot)?;
    files.push((
        "report/area_points.csv".into(),
        csv_bytes(&AREA_HEADER, area_rows(&points)),
    ));
    let pts: Vec<AreaPoint> = points.iter().map(|(p, _)| p.clone()).collect();
    if let Ok(fit) = fit_area_scaling(&pts, weighting) {
        files.push((
            "report/area_fit.json".into(),
            crate::dataset::to_json_bytes(&fit),
        ));
    }

    // treatments: grouped densities and pairwise differences
    let mut groups: BTreeMap<String, Vec<DefectReport>> = BTreeMap::new();
    for (d, _) in &chips {
        groups
            .entry(d.cleaning.to_string())
            .or_default()
            .extend(by_chip(&reports, &d.chip_label));
    }
    let mut rows = Vec::new();
    for (label, group) in &groups {
        let mut row = vec![label.clone()];
        row.extend(estimate_group(group, boot, &format!("cleaning/{label}"))?.csv_tail());
        rows.push(row);
    }
    files.push((
        "report/treatment_density.csv".into(),
        csv_bytes(
            &[
                "cleaning",
                "n_spectra",
                "n_defects",
                "bandwidth_ghz",
                "rho",
                "ci_low",
                "ci_high",
            ],
            rows,
        ),
    ));
    let labels: Vec<&String> = groups.keys().collect();
    let mut rows = Vec::new();
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            let cfg = group_seed(boot, &format!("diff/{a}/{b}"));
            if let Ok(d) = compare_groups(&groups[*a], &groups[*b], &cfg) {
                rows.push(vec![
                    a.to_string(),
                    b.to_string(),
                    d.diff.to_string(),
                    d.ci_low.to_string(),
                    d.ci_high.to_string(),
                ]);
            }
        }
    }
    files.push((
        "report/treatment_differences.csv".into(),
        csv_bytes(&["group_a", "group_b", "diff", "ci_low", "ci_high"], rows),
    ));

    let mut rows = Vec::new();
    for (d, _) in &chips {
        for q in &d.qubits {
            let qf = quality_factor(q.freq_ghz, q.t1_us * 1e-6)?;
            rows.push(vec![
                d.chip_label.clone(),
                d.cleaning.to_string(),
                q.qubit_id.clone(),
                q.freq_ghz.to_string(),
                q.t1_us.to_string(),
                qf.to_string(),
            ]);
        }
    }
    files.push((
        "report/quality_factors.csv".into(),
        csv_bytes(
            &[
                "chip",
                "cleaning",
                "qubit",
                "freq_ghz",
                "t1_us",
                "quality_factor",
            ],
            rows,
        ),
    ));

    let t = sweep_tables(&spectra, &chips, &settings, &SWEEP_THRESHOLDS, weighting)?;
    files.push((
        "report/threshold_sweep.csv".into(),
        csv_bytes(&SWEEP_HEADER, t.overall),
    ));
    files.push((
        "report/threshold_sweep_by_chip.csv".into(),
        csv_bytes(&SWEEP_CHIP_HEADER, t.by_chip),
    ));
    files.push((
        "report/threshold_fits.csv".into(),
        csv_bytes(&FIT_HEADER, t.fits),
    ));

    ds.clear("report/")?;
    for (rel, bytes) in files {
        ds.write(&rel, &bytes)?;
    }
    ds.commit()?;
    Ok(ds)
}
