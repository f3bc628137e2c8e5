//! Python bindings: the physics formulas, spectrum simulation, defect
//! counting and statistics, plus the dataset commands.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tls_census::analysis::{self, AnalysisParams, BootstrapConfig};
use tls_census::config::RunConfig;
use tls_census::fitstats::{self, AreaPoint, FitWeighting};
use tls_census::oracle::{self, CoupledSystem};
use tls_census::physics::{self, DefectMode, T1Model};
use tls_census::pipeline::{self, AnalyzeOptions, SWEEP_THRESHOLDS};
use tls_census::specgen::{self, DriftModel, RateDistribution};
use tls_census::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } => PyOSError::new_err(e.to_string()),
        Error::Integrity(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for tls_census::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

#[pyclass(name = "QubitModel", module = "tls_census")]
struct PyQubitModel {
    inner: physics::QubitModel,
}

#[pymethods]
impl PyQubitModel {
    #[new]
    #[pyo3(signature = (ej_sum_ghz, ec_ghz, c_total_ff=65.0, d_barrier_nm=2.0, t1_us=20.0, junction_areas_um2=(0.05, 0.05), squid_asymmetry=0.0))]
    fn new(
        ej_sum_ghz: f64,
        ec_ghz: f64,
        c_total_ff: f64,
        d_barrier_nm: f64,
        t1_us: f64,
        junction_areas_um2: (f64, f64),
        squid_asymmetry: f64,
    ) -> PyResult<Self> {
        let inner = physics::QubitModel {
            ej_sum_ghz,
            ec_ghz,
            c_total_f: c_total_ff * 1e-15,
            d_barrier_m: d_barrier_nm * 1e-9,
            t1_background: T1Model::constant(t1_us * 1e-6),
            junction_areas_um2,
            squid_asymmetry,
            min_ej_over_ec: physics::DEFAULT_MIN_EJ_OVER_EC,
        };
        inner.validate().py()?;
        Ok(PyQubitModel { inner })
    }

    fn sweet_spot_freq(&self) -> PyResult<f64> {
        self.inner.sweet_spot_freq().py()
    }

    fn reachable_band(&self) -> PyResult<(f64, f64)> {
        self.inner.reachable_band().py()
    }

    fn flux_to_freq(&self, phi: f64) -> PyResult<f64> {
        physics::flux_to_freq(phi, &self.inner).py()
    }

    fn flux_for_freq(&self, freq_ghz: f64) -> PyResult<f64> {
        self.inner.flux_for_freq(freq_ghz).py()
    }

    #[getter]
    fn total_junction_area_um2(&self) -> f64 {
        self.inner.total_junction_area()
    }

    fn __repr__(&self) -> String {
        format!(
            "QubitModel(ej_sum_ghz={}, ec_ghz={}, junction_areas_um2={:?})",
            self.inner.ej_sum_ghz, self.inner.ec_ghz, self.inner.junction_areas_um2
        )
    }
}

#[pyclass(name = "DefectEnsemble", module = "tls_census")]
struct PyDefectEnsemble {
    inner: specgen::DefectEnsemble,
}

#[pymethods]
impl PyDefectEnsemble {
    /// Poisson ensemble with log-uniform couplings and relaxation rates.
    #[staticmethod]
    #[pyo3(signature = (band_ghz, density_per_ghz, seed, g_range_mhz=(0.05, 5.0), gamma_range_mhz=(0.01, 0.1)))]
    fn sample(
        band_ghz: (f64, f64),
        density_per_ghz: f64,
        seed: u64,
        g_range_mhz: (f64, f64),
        gamma_range_mhz: (f64, f64),
    ) -> PyResult<Self> {
        let dist = |(min_mhz, max_mhz): (f64, f64)| {
            if min_mhz == max_mhz {
                RateDistribution::Fixed { value_mhz: min_mhz }
            } else {
                RateDistribution::LogUniform { min_mhz, max_mhz }
            }
        };
        let inner = specgen::sample_defect_ensemble(
            band_ghz,
            density_per_ghz,
            dist(g_range_mhz),
            dist(gamma_range_mhz),
            seed,
        )
        .py()?;
        Ok(PyDefectEnsemble { inner })
    }

    /// Explicit ensemble from `(frequency_ghz, g_mhz, gamma_mhz)` triples.
    #[new]
    fn new(defects: Vec<(f64, f64, f64)>, band_ghz: (f64, f64)) -> PyResult<Self> {
        let inner = specgen::DefectEnsemble {
            defects: defects
                .into_iter()
                .map(|(f, g, gm)| DefectMode::new(f, g, gm))
                .collect(),
            band_ghz,
            density_per_ghz: 0.0,
            g_distribution: RateDistribution::default_coupling(),
            gamma_distribution: RateDistribution::default_relaxation(),
            rng_seed: 0,
        };
        inner.validate().py()?;
        Ok(PyDefectEnsemble { inner })
    }

    #[pyo3(signature = (days, seed, drift_sigma_mhz_per_sqrt_day=2.0, reconfig_rate_per_day=0.01, reconfig_fraction=0.3))]
    fn evolve(
        &self,
        days: f64,
        seed: u64,
        drift_sigma_mhz_per_sqrt_day: f64,
        reconfig_rate_per_day: f64,
        reconfig_fraction: f64,
    ) -> PyResult<Self> {
        let drift = DriftModel {
            drift_sigma_mhz_per_sqrt_day,
            reconfig_rate_per_day,
            reconfig_fraction,
        };
        let inner = specgen::evolve_day(&self.inner, &drift, days, seed).py()?;
        Ok(PyDefectEnsemble { inner })
    }

    fn thermal_cycle(&self, seed: u64) -> Self {
        PyDefectEnsemble {
            inner: specgen::thermal_cycle(&self.inner, seed),
        }
    }

    #[getter]
    fn frequencies_ghz(&self) -> Vec<f64> {
        self.inner.frequencies()
    }

    #[getter]
    fn g_mhz(&self) -> Vec<f64> {
        self.inner.defects.iter().map(|d| d.g_mhz).collect()
    }

    #[getter]
    fn gamma_mhz(&self) -> Vec<f64> {
        self.inner.defects.iter().map(|d| d.gamma_mhz).collect()
    }

    #[getter]
    fn band_ghz(&self) -> (f64, f64) {
        self.inner.band_ghz
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "SwapSpectrum", module = "tls_census")]
struct PySwapSpectrum {
    inner: specgen::SwapSpectrum,
}

#[pymethods]
impl PySwapSpectrum {
    #[new]
    #[pyo3(signature = (freqs_ghz, p_loss, chip_id="", qubit_id="", cooldown_index=0))]
    fn new(
        freqs_ghz: Vec<f64>,
        p_loss: Vec<f64>,
        chip_id: &str,
        qubit_id: &str,
        cooldown_index: u32,
    ) -> PyResult<Self> {
        let inner = specgen::SwapSpectrum::new(freqs_ghz, p_loss)
            .py()?
            .with_labels(chip_id, qubit_id, cooldown_index);
        Ok(PySwapSpectrum { inner })
    }

    #[getter]
    fn freqs_ghz(&self) -> Vec<f64> {
        self.inner.freqs_ghz.clone()
    }

    #[getter]
    fn p_loss(&self) -> Vec<f64> {
        self.inner.p_loss.clone()
    }

    #[getter]
    fn bandwidth_ghz(&self) -> f64 {
        self.inner.bandwidth_ghz()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "DefectReport", module = "tls_census")]
struct PyDefectReport {
    inner: analysis::DefectReport,
}

#[pymethods]
impl PyDefectReport {
    #[getter]
    fn n_peaks(&self) -> usize {
        self.inner.n_peaks()
    }

    #[getter]
    fn peak_frequencies_ghz(&self) -> Vec<f64> {
        self.inner.peaks.iter().map(|p| p.frequency_ghz).collect()
    }

    #[getter]
    fn peak_p_loss(&self) -> Vec<f64> {
        self.inner.peaks.iter().map(|p| p.p_loss).collect()
    }

    #[getter]
    fn bandwidth_analyzed_ghz(&self) -> f64 {
        self.inner.bandwidth_analyzed_ghz
    }

    fn min_separation_mhz(&self) -> Option<f64> {
        self.inner.min_separation_mhz()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("report serializes")
    }

    fn __repr__(&self) -> String {
        format!(
            "DefectReport(n_peaks={}, bandwidth_analyzed_ghz={})",
            self.inner.n_peaks(),
            self.inner.bandwidth_analyzed_ghz
        )
    }
}

/// Minimum coupling (MHz) giving loss `p_loss` after `tau_s` on resonance.
#[pyfunction]
#[pyo3(signature = (p_loss, tau_s=100e-9))]
fn coupling_from_loss(p_loss: f64, tau_s: f64) -> PyResult<f64> {
    physics::coupling_from_loss(p_loss, tau_s).py()
}

#[pyfunction]
#[pyo3(signature = (g_mhz, detuning_mhz, tau_s=100e-9, gamma_tls_mhz=0.0, t1_qubit_s=f64::INFINITY))]
fn loss_from_coupling(
    g_mhz: f64,
    detuning_mhz: f64,
    tau_s: f64,
    gamma_tls_mhz: f64,
    t1_qubit_s: f64,
) -> PyResult<f64> {
    Ok(
        physics::loss_from_coupling(g_mhz, detuning_mhz, tau_s, gamma_tls_mhz, t1_qubit_s)
            .py()?
            .p_loss,
    )
}

/// Zero-point electric field (V/m) across the tunnel barrier.
#[pyfunction]
fn zpf_field(c_total_f: f64, d_barrier_m: f64, n_zpf: f64) -> PyResult<f64> {
    physics::zpf_field(c_total_f, d_barrier_m, n_zpf).py()
}

#[pyfunction]
fn quality_factor(freq_ghz: f64, t1_s: f64) -> PyResult<f64> {
    fitstats::quality_factor(freq_ghz, t1_s).py()
}

#[pyfunction]
#[pyo3(signature = (start_ghz, stop_ghz, step_mhz=2.0))]
fn uniform_grid(start_ghz: f64, stop_ghz: f64, step_mhz: f64) -> PyResult<Vec<f64>> {
    specgen::uniform_grid(start_ghz, stop_ghz, step_mhz).py()
}

#[pyfunction]
#[pyo3(signature = (qubit, ensemble, grid_ghz, tau_s=100e-9, shots=None, seed=0))]
fn generate_spectrum(
    qubit: PyRef<'_, PyQubitModel>,
    ensemble: PyRef<'_, PyDefectEnsemble>,
    grid_ghz: Vec<f64>,
    tau_s: f64,
    shots: Option<u32>,
    seed: u64,
) -> PyResult<PySwapSpectrum> {
    let inner =
        specgen::generate_spectrum(&qubit.inner, &ensemble.inner, &grid_ghz, tau_s, shots, seed)
            .py()?;
    Ok(PySwapSpectrum { inner })
}

/// Qubit loss after `tau_s` at `target_ghz` from direct integration of the
/// coupled system; defects are `(frequency_ghz, g_mhz, gamma_mhz)`.
#[pyfunction]
#[pyo3(signature = (defects, target_ghz, tau_s=100e-9, t1_qubit_s=f64::INFINITY))]
fn oracle_swap(
    defects: Vec<(f64, f64, f64)>,
    target_ghz: f64,
    tau_s: f64,
    t1_qubit_s: f64,
) -> PyResult<f64> {
    let modes = defects
        .into_iter()
        .map(|(f, g, gm)| DefectMode::new(f, g, gm))
        .collect();
    let system = CoupledSystem::new(target_ghz, modes, t1_qubit_s);
    oracle::oracle_swap(&system, target_ghz, tau_s).py()
}

#[pyfunction]
#[pyo3(signature = (spectrum, counting_threshold=0.1, sg_window_mhz=143.0, prominence_min=0.03, exclusion_window_mhz=100.0))]
fn count_defects(
    spectrum: PyRef<'_, PySwapSpectrum>,
    counting_threshold: f64,
    sg_window_mhz: f64,
    prominence_min: f64,
    exclusion_window_mhz: f64,
) -> PyResult<PyDefectReport> {
    let params = AnalysisParams {
        counting_threshold,
        sg_window_mhz,
        prominence_min,
        exclusion_window_mhz,
        ..AnalysisParams::default()
    };
    let inner = analysis::count_defects(&spectrum.inner, &params).py()?;
    Ok(PyDefectReport { inner })
}

/// `(rho, ci_low, ci_high)` in defects per GHz.
#[pyfunction]
#[pyo3(signature = (reports, n_boot=10000, ci_level=0.68, seed=0))]
fn bootstrap_density(
    reports: Vec<PyRef<'_, PyDefectReport>>,
    n_boot: usize,
    ci_level: f64,
    seed: u64,
) -> PyResult<(f64, f64, f64)> {
    let reports: Vec<analysis::DefectReport> = reports.iter().map(|r| r.inner.clone()).collect();
    let cfg = BootstrapConfig {
        n_boot,
        ci_level,
        seed,
        ..BootstrapConfig::default()
    };
    let e = analysis::bootstrap_density(&reports, &cfg).py()?;
    Ok((e.rho, e.ci_low, e.ci_high))
}

#[pyfunction]
#[pyo3(signature = (s_total_um2, rho, sigma, weighted=true))]
fn fit_area_scaling<'py>(
    py: Python<'py>,
    s_total_um2: Vec<f64>,
    rho: Vec<f64>,
    sigma: Vec<f64>,
    weighted: bool,
) -> PyResult<Bound<'py, PyDict>> {
    if s_total_um2.len() != rho.len() || rho.len() != sigma.len() {
        return Err(PyValueError::new_err(
            "s_total_um2, rho and sigma must have equal length",
        ));
    }
    let points: Vec<AreaPoint> = (0..rho.len())
        .map(|i| AreaPoint {
            s_total_um2: s_total_um2[i],
            rho: rho[i],
            sigma: sigma[i],
            cohort_label: i.to_string(),
        })
        .collect();
    let weighting = if weighted {
        FitWeighting::Weighted
    } else {
        FitWeighting::Unweighted
    };
    fit_dict(py, &fitstats::fit_area_scaling(&points, weighting).py()?)
}

fn fit_dict<'py>(py: Python<'py>, fit: &fitstats::LineFit) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("alpha", fit.alpha)?;
    d.set_item("beta", fit.beta)?;
    d.set_item("alpha_err", fit.alpha_err)?;
    d.set_item("beta_err", fit.beta_err)?;
    d.set_item("chi2_red", fit.chi2_red)?;
    d.set_item("n_points", fit.n_points)?;
    d.set_item("unit_weights_substituted", fit.unit_weights_substituted)?;
    Ok(d)
}

/// Simulates the dataset described by the JSON config at `config_path`.
#[pyfunction]
#[pyo3(signature = (config_path, dataset, seed=None))]
fn simulate(
    py: Python<'_>,
    config_path: PathBuf,
    dataset: PathBuf,
    seed: Option<u64>,
) -> PyResult<usize> {
    let mut cfg = RunConfig::load(&config_path).py()?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let ds = py.detach(|| pipeline::cmd_simulate(&cfg, &dataset)).py()?;
    Ok(ds.manifest().files.len())
}

#[pyfunction]
#[pyo3(signature = (dataset, threshold=None, seed=None))]
fn analyze(
    py: Python<'_>,
    dataset: PathBuf,
    threshold: Option<f64>,
    seed: Option<u64>,
) -> PyResult<()> {
    let opts = AnalyzeOptions {
        threshold,
        seed,
        ..AnalyzeOptions::default()
    };
    py.detach(|| pipeline::cmd_analyze(&dataset, &opts)).py()?;
    Ok(())
}

#[pyfunction]
#[pyo3(signature = (dataset, thresholds=None))]
fn sweep(py: Python<'_>, dataset: PathBuf, thresholds: Option<Vec<f64>>) -> PyResult<()> {
    let t = thresholds.unwrap_or_else(|| SWEEP_THRESHOLDS.to_vec());
    py.detach(|| pipeline::cmd_sweep(&dataset, &t, None)).py()?;
    Ok(())
}

#[pyfunction]
#[pyo3(signature = (dataset, weighted=true))]
fn fit<'py>(py: Python<'py>, dataset: PathBuf, weighted: bool) -> PyResult<Bound<'py, PyDict>> {
    let w = if weighted {
        FitWeighting::Weighted
    } else {
        FitWeighting::Unweighted
    };
    let f = py.detach(|| pipeline::cmd_fit(&dataset, Some(w))).py()?;
    fit_dict(py, &f)
}

#[pyfunction]
fn report(py: Python<'_>, dataset: PathBuf) -> PyResult<()> {
    py.detach(|| pipeline::cmd_report(&dataset, None)).py()?;
    Ok(())
}

#[pymodule]
#[pyo3(name = "tls_census")]
pub fn tls_census_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQubitModel>()?;
    m.add_class::<PyDefectEnsemble>()?;
    m.add_class::<PySwapSpectrum>()?;
    m.add_class::<PyDefectReport>()?;
    m.add_function(wrap_pyfunction!(coupling_from_loss, m)?)?;
    m.add_function(wrap_pyfunction!(loss_from_coupling, m)?)?;
    m.add_function(wrap_pyfunction!(zpf_field, m)?)?;
    m.add_function(wrap_pyfunction!(quality_factor, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_grid, m)?)?;
    m.add_function(wrap_pyfunction!(generate_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_swap, m)?)?;
    m.add_function(wrap_pyfunction!(count_defects, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_density, m)?)?;
    m.add_function(wrap_pyfunction!(fit_area_scaling, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
