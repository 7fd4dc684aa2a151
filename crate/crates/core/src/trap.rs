//! Linear ion-chain equilibrium and transverse normal modes.
//!
//! Axial positions are dimensionless, in units of the characteristic length
//! ℓ = (e²/(4πε₀ M ω_z²))^{1/3}. In these units the axial potential is
//! V(u) = Σ_i u_i²/2 + Σ_{i<j} 1/|u_i − u_j|.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass of a ¹⁷¹Yb⁺ ion in kg.
pub const YB171_MASS: f64 = 2.83846e-25;

const MAX_NEWTON_ITERATIONS: usize = 200;
const GRADIENT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapConfig {
    pub n_ions: usize,
    /// Axial center-of-mass frequency, Hz.
    pub f_z: f64,
    /// Transverse frequency along the force direction, Hz.
    pub f_x: f64,
    /// Second transverse frequency, Hz. Informational.
    pub f_y: f64,
    /// kg.
    pub ion_mass: f64,
    pub charge: f64,
}

impl TrapConfig {
    pub fn new(n_ions: usize) -> Self {
        Self { n_ions, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ions == 0 {
            return Err(Error::InvalidArgument("n_ions must be at least 1".into()));
        }
        if !(self.f_z > 0.0 && self.f_x > self.f_z) {
            return Err(Error::InvalidArgument(format!(
                "trap frequencies must satisfy f_x > f_z > 0 (f_x = {}, f_z = {})",
                self.f_x, self.f_z
            )));
        }
        if !(self.ion_mass > 0.0 && self.charge > 0.0) {
            return Err(Error::InvalidArgument("ion mass and charge must be positive".into()));
        }
        Ok(())
    }

    pub fn omega_z(&self) -> f64 {
        2.0 * PI * self.f_z
    }

    pub fn omega_x(&self) -> f64 {
        2.0 * PI * self.f_x
    }
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self { n_ions: 6, f_z: 0.7e6, f_x: 4.8e6, f_y: 4.6e6, ion_mass: YB171_MASS, charge: 1.0 }
    }
}

/// Transverse (x) normal modes of the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeData {
    /// Dimensionless axial equilibrium positions, ascending.
    pub positions: Vec<f64>,
    /// Angular frequencies ω_m in rad/s, descending. Mode 0 is center of mass.
    pub mode_freqs: Vec<f64>,
    /// b[(i, m)]: participation of ion i in mode m. Columns are orthonormal.
    pub mode_matrix: DMatrix<f64>,
}

impl ModeData {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Largest |Σ_i b_im b_im' − δ_mm'|.
    pub fn orthonormality_residual(&self) -> f64 {
        let gram = self.mode_matrix.transpose() * &self.mode_matrix;
        let n = self.n();
        (gram - DMatrix::<f64>::identity(n, n)).amax()
    }
}

/// On-disk form: frequencies in Hz, matrix row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeDataFile {
    pub positions: Vec<f64>,
    pub frequencies_hz: Vec<f64>,
    pub mode_matrix: Vec<Vec<f64>>,
}

impl From<&ModeData> for ModeDataFile {
    fn from(m: &ModeData) -> Self {
        Self {
            positions: m.positions.clone(),
            frequencies_hz: m.mode_freqs.iter().map(|w| w / (2.0 * PI)).collect(),
            mode_matrix: m.mode_matrix.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<ModeDataFile> for ModeData {
    type Error = Error;

    fn try_from(f: ModeDataFile) -> Result<Self> {
        let n = f.positions.len();
        if f.frequencies_hz.len() != n
            || f.mode_matrix.len() != n
            || f.mode_matrix.iter().any(|r| r.len() != n)
        {
            return Err(Error::InvalidArgument("mode data dimensions disagree".into()));
        }
        Ok(Self {
            positions: f.positions,
            mode_freqs: f.frequencies_hz.iter().map(|f| 2.0 * PI * f).collect(),
            mode_matrix: DMatrix::from_fn(n, n, |i, m| f.mode_matrix[i][m]),
        })
    }
}

fn potential(u: &[f64]) -> f64 {
    let mut v = 0.0;
    for i in 0..u.len() {
        v += 0.5 * u[i] * u[i];
        for j in i + 1..u.len() {
            v += 1.0 / (u[j] - u[i]).abs();
        }
    }
    v
}

fn gradient(u: &[f64]) -> DVector<f64> {
    let n = u.len();
    DVector::from_fn(n, |i, _| {
        let mut g = u[i];
        for k in 0..n {
            if k != i {
                let d = u[i] - u[k];
                g -= d.signum() / (d * d);
            }
        }
        g
    })
}

fn axial_hessian(u: &[f64]) -> DMatrix<f64> {
    let n = u.len();
    let mut h = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for k in 0..n {
            if k != i {
                let c = 2.0 / (u[i] - u[k]).abs().powi(3);
                h[(i, i)] += c;
                h[(i, k)] = -c;
            }
        }
    }
    h
}

fn is_ordered(u: &[f64]) -> bool {
    u.windows(2).all(|w| w[1] > w[0])
}

/// Stationary point of the dimensionless axial potential by damped Newton
/// iteration.
pub fn solve_equilibrium(cfg: &TrapConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = cfg.n_ions;
    if n == 1 {
        return Ok(vec![0.0]);
    }

    let half = (n - 1) as f64 / 2.0;
    let scale = (n as f64).powf(0.56) / half;
    let mut u: Vec<f64> = (0..n).map(|i| (i as f64 - half) * scale).collect();

    let mut grad = gradient(&u);
    let mut residual = grad.norm();
    for _ in 0..MAX_NEWTON_ITERATIONS {
        if residual < GRADIENT_TOLERANCE {
            return Ok(symmetrize(u));
        }
        // The axial Hessian is positive definite for any ordered chain.
        let step = axial_hessian(&u)
            .cholesky()
            .map(|c| c.solve(&grad))
            .unwrap_or_else(|| grad.clone());

        let v0 = potential(&u);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(x, s)| x - t * s).collect();
            if is_ordered(&trial) {
                let trial_grad = gradient(&trial);
                let trial_res = trial_grad.norm();
                // Near the minimum the potential is flat to rounding, so accept
                // on either a decrease in V or in the gradient norm.
                if potential(&trial) <= v0 || trial_res < residual {
                    u = trial;
                    grad = trial_grad;
                    residual = trial_res;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::SolverFailure { iterations: MAX_NEWTON_ITERATIONS, residual });
            }
        }
    }
    if residual < GRADIENT_TOLERANCE {
        Ok(symmetrize(u))
    } else {
        Err(Error::SolverFailure { iterations: MAX_NEWTON_ITERATIONS, residual })
    }
}

/// Averages mirror pairs. The potential is reflection symmetric and the
/// solution is unique, so this only removes rounding asymmetry.
fn symmetrize(mut u: Vec<f64>) -> Vec<f64> {
    let n = u.len();
    for i in 0..n / 2 {
        let a = 0.5 * (u[n - 1 - i] - u[i]);
        u[i] = -a;
        u[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        u[n / 2] = 0.0;
    }
    u
}

/// Transverse Hessian in units of ω_x²:
/// A_ii = 1 − r Σ_{k≠i} 1/|u_i−u_k|³, A_ij = r/|u_i−u_j|³, r = (ω_z/ω_x)².
pub fn transverse_hessian(cfg: &TrapConfig, positions: &[f64]) -> DMatrix<f64> {
    let n = positions.len();
    let r = (cfg.f_z / cfg.f_x).powi(2);
    let mut a = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for k in 0..n {
            if k != i {
                let c = r / (positions[i] - positions[k]).abs().powi(3);
                a[(i, k)] = c;
                a[(i, i)] -= c;
            }
        }
    }
    a
}

pub fn transverse_modes(cfg: &TrapConfig, positions: &[f64]) -> Result<ModeData> {
    cfg.validate()?;
    let n = positions.len();
    if n != cfg.n_ions {
        return Err(Error::InvalidArgument(format!(
            "{} positions supplied for {} ions",
            n, cfg.n_ions
        )));
    }
    let residual = gradient(positions).norm();
    if residual > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "positions are not an equilibrium (gradient norm {residual:e})"
        )));
    }

    let eig = SymmetricEigen::new(transverse_hessian(cfg, positions));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut mode_freqs = Vec::with_capacity(n);
    let mut mode_matrix = DMatrix::zeros(n, n);
    for (m, &k) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if lambda <= 0.0 {
            return Err(Error::ChainUnstable { mode: m, eigenvalue: lambda });
        }
        mode_freqs.push(cfg.omega_x() * lambda.sqrt());
        let mut col = eig.eigenvectors.column(k).into_owned();
        // Sign convention: first non-negligible component positive.
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-9) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        mode_matrix.set_column(m, &col);
    }

    Ok(ModeData { positions: positions.to_vec(), mode_freqs, mode_matrix })
}

/// Equilibrium followed by mode decomposition.
pub fn chain_modes(cfg: &TrapConfig) -> Result<ModeData> {
    let positions = solve_equilibrium(cfg)?;
    transverse_modes(cfg, &positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_ion_at_center() {
        assert_eq!(solve_equilibrium(&TrapConfig::new(1)).unwrap(), vec![0.0]);
        let modes = chain_modes(&TrapConfig::new(1)).unwrap();
        assert_relative_eq!(modes.mode_freqs[0], 2.0 * PI * 4.8e6, max_relative = 1e-15);
        assert_eq!(modes.mode_matrix[(0, 0)], 1.0);
    }

    #[test]
    fn two_ions_match_closed_form() {
        // V = x² + 1/(2x) at ±x, minimum at x³ = 1/4.
        let u = solve_equilibrium(&TrapConfig::new(2)).unwrap();
        assert_relative_eq!(u[1], 0.25f64.cbrt(), max_relative = 1e-12);
        assert_eq!(u[0], -u[1]);
    }

    #[test]
    fn three_ions_match_closed_form() {
        // V = x² + 5/(2x) at (−x, 0, x), minimum at x³ = 5/4.
        let u = solve_equilibrium(&TrapConfig::new(3)).unwrap();
        assert_eq!(u[1], 0.0);
        assert_relative_eq!(u[2], 1.25f64.cbrt(), max_relative = 1e-12);
    }

    #[test]
    fn equilibrium_symmetric_and_converged() {
        for n in 1..=12 {
            let u = solve_equilibrium(&TrapConfig::new(n)).unwrap();
            assert!(is_ordered(&u));
            for i in 0..n {
                assert!((u[i] + u[n - 1 - i]).abs() < 1e-9);
            }
            assert!(gradient(&u).norm() < 1e-11, "n = {n}");
        }
    }

    #[test]
    fn six_ion_center_of_mass_mode() {
        let modes = chain_modes(&TrapConfig::new(6)).unwrap();
        assert_relative_eq!(modes.mode_freqs[0], 2.0 * PI * 4.8e6, max_relative = 1e-9);
        for i in 0..6 {
            assert_relative_eq!(modes.mode_matrix[(i, 0)].abs(), 1.0 / 6f64.sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn modes_orthonormal_ordered_and_reconstruct_hessian() {
        for n in 1..=12 {
            let cfg = TrapConfig::new(n);
            let modes = chain_modes(&cfg).unwrap();
            assert!(modes.orthonormality_residual() < 1e-10);
            for w in modes.mode_freqs.windows(2) {
                assert!(w[0] > w[1] * (1.0 + 1e-9), "n = {n}: {w:?}");
            }
            let ox2 = cfg.omega_x().powi(2);
            let lambda = DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                modes.mode_freqs.iter().map(|w| w * w / ox2),
            ));
            let rebuilt = &modes.mode_matrix * lambda * modes.mode_matrix.transpose();
            let a = transverse_hessian(&cfg, &modes.positions);
            assert!((rebuilt - a).amax() < 1e-10);
        }
    }

    #[test]
    fn center_of_mass_eigenvalue_is_one() {
        for n in 2..=12 {
            let cfg = TrapConfig::new(n);
            let u = solve_equilibrium(&cfg).unwrap();
            let a = transverse_hessian(&cfg, &u);
            let ones = DVector::from_element(n, 1.0);
            assert!((&a * &ones - &ones).amax() < 1e-12);
        }
    }

    #[test]
    fn weak_transverse_confinement_is_unstable() {
        let cfg = TrapConfig { n_ions: 10, f_x: 1.0e6, ..TrapConfig::default() };
        let u = solve_equilibrium(&cfg).unwrap();
        assert!(matches!(transverse_modes(&cfg, &u), Err(Error::ChainUnstable { .. })));
    }

    #[test]
    fn invalid_frequencies_rejected() {
        let cfg = TrapConfig { f_x: 0.5e6, ..TrapConfig::default() };
        assert!(solve_equilibrium(&cfg).is_err());
    }

    #[test]
    fn mode_file_round_trip() {
        let modes = chain_modes(&TrapConfig::new(4)).unwrap();
        let file = ModeDataFile::from(&modes);
        let json = serde_json::to_string(&file).unwrap();
        let back = ModeData::try_from(serde_json::from_str::<ModeDataFile>(&json).unwrap()).unwrap();
        assert_eq!(back.positions, modes.positions);
        assert!((back.mode_matrix - &modes.mode_matrix).amax() == 0.0);
        for (a, b) in back.mode_freqs.iter().zip(&modes.mode_freqs) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }
}
