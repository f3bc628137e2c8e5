//! Reference integrator for one qubit coupled to a handful of defects.
//!
//! Works in the single-excitation manifold with amplitude damping written as
//! anti-Hermitian diagonal terms. The population that leaks out of the
//! manifold is integrated alongside the amplitudes, so amplitudes plus leaked
//! population account for the full probability.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::physics::DefectMode;

/// Largest number of defects the dense solver accepts.
pub const MAX_DEFECTS: usize = 8;

/// Steps per shortest dynamical period used by [`oracle_swap`].
const AUTO_STEPS_PER_PERIOD: f64 = 400.0;
const MIN_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSystem {
    pub qubit_freq_ghz: f64,
    pub defects: Vec<DefectMode>,
    pub t1_qubit_s: f64,
    /// Rotating-frame reference frequency (GHz).
    pub frame_ghz: f64,
}

impl CoupledSystem {
    pub fn new(qubit_freq_ghz: f64, defects: Vec<DefectMode>, t1_qubit_s: f64) -> Self {
        CoupledSystem {
            qubit_freq_ghz,
            defects,
            t1_qubit_s,
            frame_ghz: qubit_freq_ghz,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.defects.len() > MAX_DEFECTS {
            return Err(Error::domain(format!(
                "{} defects exceed the dense solver bound of {MAX_DEFECTS}",
                self.defects.len()
            )));
        }
        if !self.qubit_freq_ghz.is_finite() || !self.frame_ghz.is_finite() {
            return Err(Error::domain("qubit and frame frequencies must be finite"));
        }
        if !(self.t1_qubit_s > 0.0) {
            return Err(Error::domain("qubit T1 must be positive"));
        }
        for d in &self.defects {
            d.validate()?;
            if !d.g_mhz.is_finite() || !d.gamma_mhz.is_finite() {
                return Err(Error::domain("defect rates must be finite"));
            }
        }
        Ok(())
    }

    /// Gershgorin bound on the largest eigenfrequency of the effective
    /// Hamiltonian, as a cyclic frequency (Hz).
    pub fn max_frequency_scale(&self) -> f64 {
        let gamma_q = 1.0 / self.t1_qubit_s / (2.0 * PI);
        let qubit_row = ((self.qubit_freq_ghz - self.frame_ghz) * 1e9).abs()
            + self.defects.iter().map(|d| d.g_mhz * 1e6).sum::<f64>()
            + gamma_q / 2.0;
        self.defects
            .iter()
            .map(|d| {
                ((d.frequency_ghz - self.frame_ghz) * 1e9).abs()
                    + d.g_mhz * 1e6
                    + d.gamma_mhz * 1e6 / 2.0
            })
            .fold(qubit_row, f64::max)
    }

    /// Largest step accepted by [`oracle_trajectory`].
    pub fn max_step(&self) -> f64 {
        let scale = self.max_frequency_scale();
        if scale > 0.0 {
            1.0 / (20.0 * scale)
        } else {
            f64::INFINITY
        }
    }
}

/// Sampled solution of the coupled dynamics, one entry per integration step
/// plus the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times_s: Vec<f64>,
    pub p_excited: Vec<f64>,
    /// Populations of each defect, indexed `[step][defect]`.
    pub defect_populations: Vec<Vec<f64>>,
    /// Population leaked out of the single-excitation manifold.
    pub leaked: Vec<f64>,
}

impl Trajectory {
    /// Total accounted probability at each sample.
    pub fn norm(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.times_s.len()).map(move |i| {
            self.p_excited[i] + self.defect_populations[i].iter().sum::<f64>() + self.leaked[i]
        })
    }

    pub fn final_p_excited(&self) -> f64 {
        *self
            .p_excited
            .last()
            .expect("trajectory holds the initial sample")
    }
}

#[derive(Clone)]
struct State {
    amps: Vec<Complex64>,
    leaked: f64,
}

impl State {
    fn axpy(&self, h: f64, k: &State) -> State {
        State {
            amps: self
                .amps
                .iter()
                .zip(&k.amps)
                .map(|(a, b)| a + b * h)
                .collect(),
            leaked: self.leaked + h * k.leaked,
        }
    }
}

struct Generator {
    diag: Vec<Complex64>,
    coupling: Vec<f64>,
    decay: Vec<f64>,
}

impl Generator {
    fn new(system: &CoupledSystem) -> Self {
        let two_pi = 2.0 * PI;
        let gamma_q = 1.0 / system.t1_qubit_s;
        let mut diag = vec![Complex64::new(
            two_pi * (system.qubit_freq_ghz - system.frame_ghz) * 1e9,
            -gamma_q / 2.0,
        )];
        let mut decay = vec![gamma_q];
        let mut coupling = Vec::with_capacity(system.defects.len());
        for d in &system.defects {
            let gamma = two_pi * d.gamma_mhz * 1e6;
            diag.push(Complex64::new(
                two_pi * (d.frequency_ghz - system.frame_ghz) * 1e9,
                -gamma / 2.0,
            ));
            decay.push(gamma);
            coupling.push(two_pi * d.g_mhz * 1e6);
        }
        Generator {
            diag,
            coupling,
            decay,
        }
    }

    /// d/dt of the state: `-i H ψ` and the leak rate `Σ Γ_j |ψ_j|²`.
    fn derivative(&self, s: &State) -> State {
        let minus_i = Complex64::new(0.0, -1.0);
        let a = s.amps[0];
        let mut dq = self.diag[0] * a;
        let mut amps = Vec::with_capacity(s.amps.len());
        amps.push(Complex64::default());
        for (k, g) in self.coupling.iter().enumerate() {
            let b = s.amps[k + 1];
            dq += b * *g;
            amps.push(minus_i * (self.diag[k + 1] * b + a * *g));
        }
        amps[0] = minus_i * dq;
        let leaked = s
            .amps
            .iter()
            .zip(&self.decay)
            .map(|(c, gamma)| gamma * c.norm_sqr())
            .sum();
        State { amps, leaked }
    }

    fn rk4_step(&self, s: &State, h: f64) -> State {
        let k1 = self.derivative(s);
        let k2 = self.derivative(&s.axpy(h / 2.0, &k1));
        let k3 = self.derivative(&s.axpy(h / 2.0, &k2));
        let k4 = self.derivative(&s.axpy(h, &k3));
        State {
            amps: (0..s.amps.len())
                .map(|i| {
                    s.amps[i]
                        + (k1.amps[i] + (k2.amps[i] + k3.amps[i]) * 2.0 + k4.amps[i]) * (h / 6.0)
                })
                .collect(),
            leaked: s.leaked + h / 6.0 * (k1.leaked + 2.0 * (k2.leaked + k3.leaked) + k4.leaked),
        }
    }
}

/// Integrates the qubit starting in its excited state for `tau_s` with a
/// fixed-step fourth-order Runge–Kutta scheme. The step is shrunk so that
/// an integer number of steps spans `tau_s`.
pub fn oracle_trajectory(system: &CoupledSystem, tau_s: f64, dt_s: f64) -> Result<Trajectory> {
    system.validate()?;
    if !(tau_s > 0.0) || !(dt_s > 0.0) {
        return Err(Error::domain("interaction time and step must be positive"));
    }
    let limit = system.max_step();
    if dt_s > limit {
        return Err(Error::StepTooLarge { dt: dt_s, limit });
    }
    let steps = ((tau_s / dt_s) - 1e-9).ceil().max(1.0) as usize;
    let h = tau_s / steps as f64;

    let generator = Generator::new(system);
    let k = system.defects.len();
    let mut state = State {
        amps: {
            let mut v = vec![Complex64::default(); k + 1];
            v[0] = Complex64::new(1.0, 0.0);
            v
        },
        leaked: 0.0,
    };

    let mut traj = Trajectory {
        times_s: Vec::with_capacity(steps + 1),
        p_excited: Vec::with_capacity(steps + 1),
        defect_populations: Vec::with_capacity(steps + 1),
        leaked: Vec::with_capacity(steps + 1),
    };
    let mut record = |t: f64, s: &State| {
        traj.times_s.push(t);
        traj.p_excited.push(s.amps[0].norm_sqr());
        traj.defect_populations
            .push(s.amps[1..].iter().map(|c| c.norm_sqr()).collect());
        traj.leaked.push(s.leaked);
    };
    record(0.0, &state);
    for n in 1..=steps {
        state = generator.rk4_step(&state, h);
        record(n as f64 * h, &state);
    }
    Ok(traj)
}

/// Population loss after an idealized square flux pulse that places the
/// qubit at `target_ghz` for `tau_s`. The step is chosen automatically.
pub fn oracle_swap(system: &CoupledSystem, target_ghz: f64, tau_s: f64) -> Result<f64> {
    let shifted = CoupledSystem {
        qubit_freq_ghz: target_ghz,
        frame_ghz: target_ghz,
        ..system.clone()
    };
    let scale = shifted.max_frequency_scale();
    let dt = if scale > 0.0 {
        (1.0 / (AUTO_STEPS_PER_PERIOD * scale)).min(tau_s / MIN_STEPS as f64)
    } else {
        tau_s / MIN_STEPS as f64
    };
    oracle_swap_with_step(system, target_ghz, tau_s, dt)
}

pub fn oracle_swap_with_step(
    system: &CoupledSystem,
    target_ghz: f64,
    tau_s: f64,
    dt_s: f64,
) -> Result<f64> {
    let shifted = CoupledSystem {
        qubit_freq_ghz: target_ghz,
        frame_ghz: target_ghz,
        ..system.clone()
    };
    let traj = oracle_trajectory(&shifted, tau_s, dt_s)?;
    Ok((1.0 - traj.final_p_excited()).clamp(0.0, 1.0))
}
