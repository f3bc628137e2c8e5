//! Closed-form physical relations for a flux-tunable transmon and its
//! excitation exchange with a single two-level-system defect.
//!
//! Rates are stored as cyclic frequencies (GHz for qubit energies, MHz for
//! couplings and defect relaxation rates, i.e. `g/2π` and `Γ/2π`). Conversion
//! to angular units happens inside the functions.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Default lower bound on `E_J/E_C` for the transmon regime.
pub const DEFAULT_MIN_EJ_OVER_EC: f64 = 20.0;

/// Background energy relaxation time of the qubit, possibly frequency dependent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum T1Model {
    /// Frequency-independent `T1` in seconds.
    Constant { t1_s: f64 },
    /// Piecewise-linear `T1(f)` through `(freq_ghz, t1_s)` knots, held
    /// constant outside the outermost knots.
    Table { knots: Vec<(f64, f64)> },
}

impl T1Model {
    pub fn constant(t1_s: f64) -> Self {
        T1Model::Constant { t1_s }
    }

    pub fn t1_at(&self, freq_ghz: f64) -> f64 {
        match self {
            T1Model::Constant { t1_s } => *t1_s,
            T1Model::Table { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if freq_ghz <= first.0 {
                    return first.1;
                }
                if freq_ghz >= last.0 {
                    return last.1;
                }
                let i = knots.partition_point(|k| k.0 <= freq_ghz);
                let (f0, t0) = knots[i - 1];
                let (f1, t1) = knots[i];
                t0 + (t1 - t0) * (freq_ghz - f0) / (f1 - f0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            T1Model::Constant { t1_s } => {
                if !(*t1_s > 0.0) {
                    return Err(Error::domain(format!("T1 must be positive, got {t1_s}")));
                }
            }
            T1Model::Table { knots } => {
                if knots.is_empty() {
                    return Err(Error::domain("T1 table needs at least one knot"));
                }
                if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::domain(
                        "T1 table frequencies must be strictly increasing",
                    ));
                }
                if knots.iter().any(|k| !(k.1 > 0.0)) {
                    return Err(Error::domain("T1 table values must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// One frequency-tunable transmon with a SQUID of two junctions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitModel {
    /// Total Josephson energy `E_J/h` at zero flux (GHz).
    pub ej_sum_ghz: f64,
    /// Charging energy `E_C/h` (GHz).
    pub ec_ghz: f64,
    /// Total qubit capacitance (F).
    pub c_total_f: f64,
    /// Tunnel barrier thickness (m).
    pub d_barrier_m: f64,
    pub t1_background: T1Model,
    /// Junction areas `(S_j1, S_j2)` in µm².
    pub junction_areas_um2: (f64, f64),
    /// SQUID junction asymmetry `d` in `[0, 1)`.
    #[serde(default)]
    pub squid_asymmetry: f64,
    #[serde(default = "default_min_ratio")]
    pub min_ej_over_ec: f64,
}

fn default_min_ratio() -> f64 {
    DEFAULT_MIN_EJ_OVER_EC
}

impl QubitModel {
    pub fn validate(&self) -> Result<()> {
        let m = self;
        if !(m.ej_sum_ghz > 0.0) || !(m.ec_ghz > 0.0) {
            return Err(Error::domain("E_J and E_C must be positive"));
        }
        if m.ej_sum_ghz / m.ec_ghz < m.min_ej_over_ec {
            return Err(Error::domain(format!(
                "E_J/E_C = {:.3} is below the transmon floor {}",
                m.ej_sum_ghz / m.ec_ghz,
                m.min_ej_over_ec
            )));
        }
        if !(m.c_total_f > 0.0) || !(m.d_barrier_m > 0.0) {
            return Err(Error::domain(
                "capacitance and barrier thickness must be positive",
            ));
        }
        if !(m.junction_areas_um2.0 > 0.0) || !(m.junction_areas_um2.1 > 0.0) {
            return Err(Error::domain("junction areas must be positive"));
        }
        if !(0.0..1.0).contains(&m.squid_asymmetry) {
            return Err(Error::domain("SQUID asymmetry must lie in [0, 1)"));
        }
        m.t1_background.validate()
    }

    /// Total junction area `S = S_j1 + S_j2` (µm²).
    pub fn total_junction_area(&self) -> f64 {
        self.junction_areas_um2.0 + self.junction_areas_um2.1
    }

    /// Effective Josephson energy at reduced flux `phi` (units of Φ₀).
    pub fn ej_at_flux(&self, phi: f64) -> f64 {
        let (s, c) = (PI * phi).sin_cos();
        let d = self.squid_asymmetry;
        self.ej_sum_ghz * (c * c + d * d * s * s).sqrt()
    }

    pub fn sweet_spot_freq(&self) -> Result<f64> {
        flux_to_freq(0.0, self)
    }

    /// Frequency interval `(f_min, f_max)` in GHz reachable by flux tuning
    /// while staying in the transmon regime.
    pub fn reachable_band(&self) -> Result<(f64, f64)> {
        let f_max = transmon_freq(self.ej_sum_ghz, self.ec_ghz)?;
        let ej_min =
            (self.ej_sum_ghz * self.squid_asymmetry).max(self.min_ej_over_ec * self.ec_ghz);
        let f_min = transmon_freq(ej_min, self.ec_ghz)?;
        Ok((f_min, f_max))
    }

    /// Smallest non-negative flux (Φ₀) tuning the qubit to `freq_ghz`.
    pub fn flux_for_freq(&self, freq_ghz: f64) -> Result<f64> {
        let (f_min, f_max) = self.reachable_band()?;
        let tol = 1e-12 * f_max;
        if freq_ghz > f_max + tol || freq_ghz < f_min - tol {
            return Err(Error::OutOfRange(format!(
                "{freq_ghz} GHz outside reachable band [{f_min}, {f_max}] GHz"
            )));
        }
        let ej = (freq_ghz + self.ec_ghz).powi(2) / (8.0 * self.ec_ghz);
        let r = (ej / self.ej_sum_ghz).min(1.0);
        let d2 = self.squid_asymmetry * self.squid_asymmetry;
        let cos2 = ((r * r - d2) / (1.0 - d2)).clamp(0.0, 1.0);
        Ok(cos2.sqrt().acos() / PI)
    }
}

/// A single two-level-system defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectMode {
    pub frequency_ghz: f64,
    /// Coupling rate `g/2π` (MHz).
    pub g_mhz: f64,
    /// Energy relaxation rate `Γ/2π` (MHz).
    pub gamma_mhz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dipole_scale: Option<f64>,
}

impl DefectMode {
    pub fn new(frequency_ghz: f64, g_mhz: f64, gamma_mhz: f64) -> Self {
        DefectMode {
            frequency_ghz,
            g_mhz,
            gamma_mhz,
            dipole_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_ghz > 0.0) {
            return Err(Error::domain("defect frequency must be positive"));
        }
        if !(self.g_mhz >= 0.0) || !(self.gamma_mhz >= 0.0) {
            return Err(Error::domain(
                "defect coupling and relaxation rate must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Result of a single qubit–defect exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeResult {
    /// Excited-state population loss `1 - P_e` after the interaction time.
    pub p_loss: f64,
    /// Generalized vacuum Rabi frequency `sqrt((2g)^2 + δ^2)` (MHz).
    pub rabi_freq_mhz: f64,
    /// Coherent transfer amplitude `(2g)^2 / ((2g)^2 + δ^2)`.
    pub max_transfer: f64,
}

/// Zero-point electric field `2 e n_zpf / (C d)` across a tunnel barrier (V/m).
pub fn zpf_field(c_total_f: f64, d_barrier_m: f64, n_zpf: f64) -> Result<f64> {
    if !(c_total_f > 0.0) || !(d_barrier_m > 0.0) {
        return Err(Error::domain(
            "capacitance and barrier thickness must be positive",
        ));
    }
    if !(n_zpf >= 0.0) {
        return Err(Error::domain("n_zpf must be non-negative"));
    }
    Ok(2.0 * ELEMENTARY_CHARGE * n_zpf / (c_total_f * d_barrier_m))
}

/// Zero-point charge fluctuation `(E_J / 32 E_C)^{1/4}` of a transmon.
pub fn n_zpf(ej_ghz: f64, ec_ghz: f64) -> Result<f64> {
    if !(ej_ghz > 0.0) || !(ec_ghz > 0.0) {
        return Err(Error::domain("E_J and E_C must be positive"));
    }
    Ok((ej_ghz / (32.0 * ec_ghz)).powf(0.25))
}

/// Minimum coupling `g/2π` (MHz) that produces loss `p_loss` in time `tau_s`
/// through a purely coherent resonant exchange.
pub fn coupling_from_loss(p_loss: f64, tau_s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_loss) {
        return Err(Error::domain(format!(
            "population loss {p_loss} outside [0, 1]"
        )));
    }
    if !(tau_s > 0.0) {
        return Err(Error::domain("interaction time must be positive"));
    }
    Ok((1.0 - 2.0 * p_loss).acos() / (4.0 * PI * tau_s) * 1e-6)
}

/// Excited-state loss of a qubit exchanging energy with one defect for `tau_s`.
///
/// Solves the single-excitation dynamics with non-Hermitian damping in closed
/// form. For `H = [[Δ - iΓq/2, G], [G, -iΓt/2]]` write `H = c·1 + M` with
/// `M² = λ²·1`; then the qubit amplitude is
/// `e^{-ict} (cos λt - i D sin(λt)/λ)`, `D = Δ/2 - i(Γq - Γt)/4`.
/// The envelope decays at `(Γq + Γt)/2`; the coherent limit reduces to
/// `A sin²(Ωτ/2)`.
pub fn loss_from_coupling(
    g_mhz: f64,
    detuning_mhz: f64,
    tau_s: f64,
    gamma_tls_mhz: f64,
    t1_qubit_s: f64,
) -> Result<ExchangeResult> {
    if !(g_mhz >= 0.0) {
        return Err(Error::domain("coupling must be non-negative"));
    }
    if !(tau_s > 0.0) {
        return Err(Error::domain("interaction time must be positive"));
    }
    if !(gamma_tls_mhz >= 0.0) || !(t1_qubit_s > 0.0) || !detuning_mhz.is_finite() {
        return Err(Error::domain(
            "decay rates must be non-negative and detuning finite",
        ));
    }
    let two_g = 2.0 * g_mhz;
    let rabi_sq = two_g * two_g + detuning_mhz * detuning_mhz;
    let max_transfer = if rabi_sq > 0.0 {
        two_g * two_g / rabi_sq
    } else {
        0.0
    };

    let coupling = 2.0 * PI * g_mhz * 1e6;
    let delta = 2.0 * PI * detuning_mhz * 1e6;
    let gamma_q = 1.0 / t1_qubit_s;
    let gamma_t = 2.0 * PI * gamma_tls_mhz * 1e6;

    let d = Complex64::new(delta / 2.0, -(gamma_q - gamma_t) / 4.0);
    let lambda = (d * d + coupling * coupling).sqrt();
    let lt = lambda * tau_s;
    let sin_over = if lt.norm() < 1e-6 {
        // sin(λt)/λ to fourth order
        tau_s * (Complex64::new(1.0, 0.0) - lt * lt / 6.0)
    } else {
        lt.sin() / lambda
    };
    let amp = lt.cos() - Complex64::i() * d * sin_over;
    let envelope = (-(gamma_q + gamma_t) * tau_s / 2.0).exp();
    let p_excited = envelope * amp.norm_sqr();

    Ok(ExchangeResult {
        p_loss: (1.0 - p_excited).clamp(0.0, 1.0),
        rabi_freq_mhz: rabi_sq.sqrt(),
        max_transfer,
    })
}

/// Approximate full width (MHz) of one defect's swap-spectroscopy peak:
/// `2g + Γ/2π + 1/τ`.
pub fn effective_linewidth_mhz(g_mhz: f64, gamma_tls_mhz: f64, tau_s: f64) -> f64 {
    2.0 * g_mhz + gamma_tls_mhz + 1e-6 / tau_s
}

/// Transmon `g-e` transition frequency `sqrt(8 E_J E_C) - E_C` (GHz).
pub fn transmon_freq(ej_ghz: f64, ec_ghz: f64) -> Result<f64> {
    if !(ej_ghz > 0.0) || !(ec_ghz > 0.0) {
        return Err(Error::domain("E_J and E_C must be positive"));
    }
    let f = (8.0 * ej_ghz * ec_ghz).sqrt() - ec_ghz;
    if f <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "E_J = {ej_ghz} GHz gives a non-positive transition frequency"
        )));
    }
    Ok(f)
}

/// Qubit frequency (GHz) at reduced flux `phi` (units of Φ₀).
pub fn flux_to_freq(phi: f64, qubit: &QubitModel) -> Result<f64> {
    let ej = qubit.ej_at_flux(phi);
    if ej / qubit.ec_ghz < qubit.min_ej_over_ec {
        return Err(Error::OutOfRange(format!(
            "flux {phi} Φ₀ gives E_J/E_C = {:.3}, below the transmon floor {}",
            ej / qubit.ec_ghz,
            qubit.min_ej_over_ec
        )));
    }
    transmon_freq(ej, qubit.ec_ghz)
}
