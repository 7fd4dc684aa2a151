//! Time-dependent evolution under field ramps.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::hamiltonian::{Hamiltonian, IsingDiagonal};
use crate::couplings::CouplingMatrix;
use crate::error::{Error, Result};
use crate::spin::SpinConfiguration;

/// Default upper bound on the integrator step, s.
pub const DEFAULT_DT_MAX: f64 = 1.0e-6;
pub const DEFAULT_TAU: f64 = 600.0e-6;
pub const DEFAULT_DURATION: f64 = 3.0e-3;
/// Initial transverse field and classical-ramp starting field, in units of j_max.
pub const DEFAULT_START_FIELD_JMAX: f64 = 5.0;

const KRYLOV_MAX_DIM: usize = 40;
const KRYLOV_TOL: f64 = 1e-12;
const MIN_STEP_FRACTION: f64 = 1e-9;
const NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumState {
    pub amplitudes: Vec<Complex64>,
    pub n: usize,
}

impl QuantumState {
    pub fn basis(config: SpinConfiguration) -> Self {
        let n = config.n;
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n];
        amplitudes[config.bits as usize] = Complex64::new(1.0, 0.0);
        Self { amplitudes, n }
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn probability(&self, config: SpinConfiguration) -> f64 {
        self.amplitudes[config.bits as usize].norm_sqr()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &QuantumState) -> Complex64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn fidelity(&self, other: &QuantumState) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// Total probability on a set of basis configurations.
    pub fn manifold_probability(&self, states: &[SpinConfiguration]) -> f64 {
        states.iter().map(|&s| self.probability(s)).sum()
    }

    /// Squared norm of the projection onto span(vectors); the vectors must be
    /// orthonormal and real.
    pub fn subspace_fidelity(&self, vectors: &[Vec<f64>]) -> f64 {
        vectors
            .iter()
            .map(|v| {
                let c: Complex64 = v.iter().zip(&self.amplitudes).map(|(x, a)| a * x).sum();
                c.norm_sqr()
            })
            .sum()
    }
}

/// Lower eigenvector of b_x σx + b_y σy on one spin, as (down, up) amplitudes.
fn single_spin_ground(b_x: f64, b_y: f64) -> [f64; 2] {
    let b = b_x.hypot(b_y);
    let u = [b + b_x, -b_y];
    let w = [-b_y, b - b_x];
    let pick = if u[0].hypot(u[1]) >= w[0].hypot(w[1]) { u } else { w };
    let nrm = pick[0].hypot(pick[1]);
    [pick[0] / nrm, pick[1] / nrm]
}

/// Product state with every spin aligned along the total field (b_x, b_y0).
pub fn initial_state(b_x: f64, b_y0: f64, n: usize) -> Result<QuantumState> {
    if b_x == 0.0 && b_y0 == 0.0 {
        return Err(Error::ZeroField);
    }
    if !(b_x.is_finite() && b_y0.is_finite()) {
        return Err(Error::InvalidArgument("initial field must be finite".into()));
    }
    if n > super::DYNAMICS_CAP {
        return Err(Error::Capacity { what: "state-vector dynamics", n, cap: super::DYNAMICS_CAP });
    }
    let v = single_spin_ground(b_x, b_y0);
    let amplitudes = (0..1usize << n)
        .map(|bits| {
            let a: f64 = (0..n).map(|i| v[(bits >> i) & 1]).product();
            Complex64::new(a, 0.0)
        })
        .collect();
    Ok(QuantumState { amplitudes, n })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum FieldProfile {
    Constant { value: f64 },
    /// Linear from `from` at t = 0 to `to` at the end of the schedule.
    Linear { from: f64, to: f64 },
    Exponential { initial: f64, tau: f64 },
}

impl FieldProfile {
    pub fn at(&self, t: f64, duration: f64) -> f64 {
        match *self {
            FieldProfile::Constant { value } => value,
            FieldProfile::Linear { from, to } => from + (to - from) * (t / duration),
            FieldProfile::Exponential { initial, tau } => initial * (-t / tau).exp(),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            FieldProfile::Constant { value } => value.is_finite(),
            FieldProfile::Linear { from, to } => from.is_finite() && to.is_finite(),
            FieldProfile::Exponential { initial, tau } => initial.is_finite() && tau.is_finite() && tau > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid {what} profile {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampKind {
    QuantumCatalyst,
    ClassicalFieldRamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub b_x: FieldProfile,
    pub b_y: FieldProfile,
    /// s
    pub duration: f64,
    pub kind: RampKind,
}

impl RampSchedule {
    /// Constant b_x, b_y decaying from `b_y0` with time constant `tau`.
    pub fn quantum_catalyst(b_x: f64, b_y0: f64, tau: f64, duration: f64) -> Self {
        Self {
            b_x: FieldProfile::Constant { value: b_x },
            b_y: FieldProfile::Exponential { initial: b_y0, tau },
            duration,
            kind: RampKind::QuantumCatalyst,
        }
    }

    /// Default catalyst ramp: b_y0 = 5·j_max, 600 μs decay, 3 ms total.
    pub fn default_catalyst(b_x: f64, j_max: f64) -> Self {
        Self::quantum_catalyst(b_x, DEFAULT_START_FIELD_JMAX * j_max, DEFAULT_TAU, DEFAULT_DURATION)
    }

    /// b_y ≡ 0, b_x linear from `from` to `to`.
    pub fn classical_field_ramp(from: f64, to: f64, duration: f64) -> Self {
        Self {
            b_x: FieldProfile::Linear { from, to },
            b_y: FieldProfile::Constant { value: 0.0 },
            duration,
            kind: RampKind::ClassicalFieldRamp,
        }
    }

    /// Default classical ramp: b_x from 5·j_max to `b_x_final` over 3 ms.
    pub fn default_classical(b_x_final: f64, j_max: f64) -> Self {
        Self::classical_field_ramp(DEFAULT_START_FIELD_JMAX * j_max, b_x_final, DEFAULT_DURATION)
    }

    pub fn fields(&self, t: f64) -> (f64, f64) {
        (self.b_x.at(t, self.duration), self.b_y.at(t, self.duration))
    }

    /// Checks the profiles are well formed; any shape is accepted.
    pub fn validate_profiles(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidArgument(format!("ramp duration must be positive, got {}", self.duration)));
        }
        self.b_x.validate("b_x")?;
        self.b_y.validate("b_y")
    }

    /// Checks the profiles match the declared kind.
    pub fn validate(&self) -> Result<()> {
        self.validate_profiles()?;
        let shaped = match self.kind {
            RampKind::QuantumCatalyst => {
                matches!(self.b_x, FieldProfile::Constant { .. }) && matches!(self.b_y, FieldProfile::Exponential { .. })
            }
            RampKind::ClassicalFieldRamp => {
                matches!(self.b_x, FieldProfile::Linear { .. } | FieldProfile::Constant { .. })
                    && matches!(self.b_y, FieldProfile::Constant { value } if value == 0.0)
            }
        };
        if shaped {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("profiles do not match ramp kind {:?}", self.kind)))
        }
    }
}

fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// ψ ← exp(−i·h·dt)ψ by Lanczos projection. Returns `None` when the Krylov
/// error estimate exceeds tolerance at the maximum subspace dimension.
fn krylov_expm(h: &Hamiltonian<'_>, psi: &[Complex64], dt: f64) -> Option<Vec<Complex64>> {
    let dim = psi.len();
    let beta0 = cnorm(psi);
    if beta0 == 0.0 {
        return Some(psi.to_vec());
    }
    let scale = h.norm_bound().max(f64::MIN_POSITIVE);
    let max_m = KRYLOV_MAX_DIM.min(dim);
    let mut basis: Vec<Vec<Complex64>> = vec![psi.iter().map(|x| x / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![Complex64::new(0.0, 0.0); dim];

    loop {
        let m = basis.len();
        h.apply(&basis[m - 1], &mut w);
        alpha.push(cdot(&basis[m - 1], &w).re);
        for _ in 0..2 {
            for v in &basis {
                let c = cdot(v, &w);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = cnorm(&w);
        let breakdown = b <= 1e-14 * scale;

        let t = DMatrix::from_fn(m, m, |r, c| {
            if r == c {
                alpha[r]
            } else if r.abs_diff(c) == 1 {
                beta[r.min(c)]
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(t);
        // y = exp(−i T dt) e1
        let y: Vec<Complex64> = (0..m)
            .map(|r| {
                (0..m)
                    .map(|k| {
                        let v = &eig.eigenvectors;
                        Complex64::from_polar(v[(r, k)] * v[(0, k)], -eig.eigenvalues[k] * dt)
                    })
                    .sum()
            })
            .collect();
        let err = if breakdown { 0.0 } else { b * y[m - 1].norm() };
        if err <= KRYLOV_TOL {
            let mut out = vec![Complex64::new(0.0, 0.0); dim];
            for (v, c) in basis.iter().zip(&y) {
                let c = c * beta0;
                out.iter_mut().zip(v).for_each(|(o, x)| *o += c * x);
            }
            return Some(out);
        }
        if m >= max_m {
            return None;
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
}

// Fourth-order commutator-free Magnus scheme with two Gauss nodes.
const SQRT3: f64 = 1.732_050_807_568_877_2;
const C1: f64 = 0.5 - SQRT3 / 6.0;
const C2: f64 = 0.5 + SQRT3 / 6.0;
const A1: f64 = 0.25 + SQRT3 / 6.0;
const A2: f64 = 0.25 - SQRT3 / 6.0;

fn cf4_step(diag: &IsingDiagonal, schedule: &RampSchedule, psi: &[Complex64], t: f64, h: f64) -> Option<Vec<Complex64>> {
    let (bx1, by1) = schedule.fields(t + C1 * h);
    let (bx2, by2) = schedule.fields(t + C2 * h);
    // a·H1 + b·H2 = (a + b)·H(fields averaged with weights a, b), and a + b = ½.
    let first = diag.with_fields(2.0 * (A1 * bx1 + A2 * bx2), 2.0 * (A1 * by1 + A2 * by2));
    let second = diag.with_fields(2.0 * (A2 * bx1 + A1 * bx2), 2.0 * (A2 * by1 + A1 * by2));
    let mid = krylov_expm(&first, psi, 0.5 * h)?;
    krylov_expm(&second, &mid, 0.5 * h)
}

/// Integrates i dψ/dt = H(t)ψ over the whole schedule.
pub fn evolve(psi0: &QuantumState, j: &CouplingMatrix, schedule: &RampSchedule, dt_max: f64) -> Result<QuantumState> {
    let diag = IsingDiagonal::new(j)?;
    evolve_with(psi0, &diag, schedule, dt_max)
}

pub fn evolve_with(psi0: &QuantumState, diag: &IsingDiagonal, schedule: &RampSchedule, dt_max: f64) -> Result<QuantumState> {
    evolve_observed(psi0, diag, schedule, dt_max, |_, _| {})
}

/// As [`evolve_with`], calling `observe(t, ψ)` after every completed step
/// and once at t = 0.
pub fn evolve_observed(
    psi0: &QuantumState,
    diag: &IsingDiagonal,
    schedule: &RampSchedule,
    dt_max: f64,
    mut observe: impl FnMut(f64, &QuantumState),
) -> Result<QuantumState> {
    schedule.validate_profiles()?;
    if psi0.n != diag.n() || psi0.amplitudes.len() != diag.dim() {
        return Err(Error::InvalidArgument(format!("state has {} spins, Hamiltonian has {}", psi0.n, diag.n())));
    }
    if !(dt_max.is_finite() && dt_max > 0.0) {
        return Err(Error::InvalidArgument(format!("dt_max must be positive, got {dt_max}")));
    }
    if (psi0.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("initial state is not normalized (norm {})", psi0.norm())));
    }

    let total = schedule.duration;
    let steps = (total / dt_max).ceil().max(1.0) as usize;
    let nominal = total / steps as f64;
    let min_step = MIN_STEP_FRACTION * nominal;

    let mut state = psi0.clone();
    observe(0.0, &state);
    for k in 0..steps {
        let t0 = k as f64 * nominal;
        let t_end = if k + 1 == steps { total } else { (k + 1) as f64 * nominal };
        let mut t = t0;
        let mut h = t_end - t0;
        while t < t_end {
            h = h.min(t_end - t);
            match cf4_step(diag, schedule, &state.amplitudes, t, h) {
                Some(next) => {
                    state.amplitudes = next;
                    t += h;
                }
                None => {
                    h *= 0.5;
                    if h < min_step {
                        return Err(Error::Stiffness { time: t, step: h });
                    }
                }
            }
        }
        let nrm = state.norm();
        if !nrm.is_finite() {
            return Err(Error::Numeric { residual: nrm });
        }
        if (nrm - 1.0).abs() > NORM_GUARD {
            log::debug!("renormalizing at t = {t_end:e} s (norm {nrm})");
            state.amplitudes.iter_mut().for_each(|a| *a /= nrm);
        }
        observe(t_end, &state);
    }
    Ok(state)
}

/// Prepares the protocol's initial state and evolves it through `schedule`.
pub fn run_trajectory(j: &CouplingMatrix, schedule: &RampSchedule, dt_max: f64) -> Result<QuantumState> {
    let diag = IsingDiagonal::new(j)?;
    run_trajectory_with(&diag, schedule, dt_max)
}

pub fn run_trajectory_with(diag: &IsingDiagonal, schedule: &RampSchedule, dt_max: f64) -> Result<QuantumState> {
    schedule.validate()?;
    let psi0 = match schedule.kind {
        RampKind::QuantumCatalyst => {
            let (bx, by) = schedule.fields(0.0);
            initial_state(bx, by, diag.n())?
        }
        RampKind::ClassicalFieldRamp => QuantumState::basis(SpinConfiguration::all_down(diag.n())),
    };
    evolve_with(&psi0, diag, schedule, dt_max)
}
