//! Spin-spin coupling matrices: from normal modes, from a power law, and the
//! power-law fit that summarises either.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trap::{chain_modes, ModeData, TrapConfig};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.05457e-34;

/// Default maximum coupling, 2π × 650 Hz.
pub const DEFAULT_J_MAX: f64 = 2.0 * PI * 650.0;

/// Default beatnote detuning above the center-of-mass mode, Hz.
pub const DEFAULT_MU_OFFSET_HZ: f64 = 72.0e3;

/// Default resonance guard band, Hz.
pub const DEFAULT_GUARD_HZ: f64 = 1.0e3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ModeDerived,
    PowerLaw,
}

/// Symmetric, zero-diagonal Ising coupling matrix in rad/s.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingMatrix {
    j: DMatrix<f64>,
    j_max: f64,
    pub provenance: Provenance,
    pub alpha_nominal: Option<f64>,
}

impl CouplingMatrix {
    /// Builds from a full matrix. The upper triangle is authoritative and
    /// mirrored into the lower one.
    pub fn from_matrix(
        j: DMatrix<f64>,
        provenance: Provenance,
        alpha_nominal: Option<f64>,
    ) -> Result<Self> {
        if !j.is_square() {
            return Err(Error::InvalidArgument("coupling matrix must be square".into()));
        }
        if j.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("coupling matrix has non-finite entries".into()));
        }
        let n = j.nrows();
        let mut j = j;
        for a in 0..n {
            j[(a, a)] = 0.0;
            for b in a + 1..n {
                j[(b, a)] = j[(a, b)];
            }
        }
        let j_max = upper_max(&j);
        Ok(Self { j, j_max, provenance, alpha_nominal })
    }

    pub fn n(&self) -> usize {
        self.j.nrows()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.j[(a, b)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    /// Maximum over i<j of J_ij. Zero for N < 2.
    pub fn j_max(&self) -> f64 {
        self.j_max
    }

    /// Largest |J_ij|, the natural energy scale even for non-AFM input.
    pub fn scale(&self) -> f64 {
        self.j.amax()
    }

    pub fn is_antiferromagnetic(&self) -> bool {
        (1..self.n()).all(|i| self.j[(i - 1, i)] > 0.0)
    }

    /// Whether J_ij = J_{N−1−j, N−1−i} within `rel_tol` of the scale.
    pub fn is_palindromic(&self, rel_tol: f64) -> bool {
        let n = self.n();
        let tol = rel_tol * self.scale();
        (0..n).all(|a| (0..n).all(|b| (self.j[(a, b)] - self.j[(n - 1 - b, n - 1 - a)]).abs() <= tol))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CouplingFile = serde_json::from_str(&text)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&CouplingFile::from(self))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn upper_max(j: &DMatrix<f64>) -> f64 {
    let n = j.nrows();
    let mut m = f64::NEG_INFINITY;
    for a in 0..n {
        for b in a + 1..n {
            m = m.max(j[(a, b)]);
        }
    }
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// JSON form of a coupling matrix, rows in rad/s.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingFile {
    pub n: usize,
    pub units: String,
    pub provenance: Provenance,
    pub j_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_nominal: Option<f64>,
    pub j: Vec<Vec<f64>>,
}

impl From<&CouplingMatrix> for CouplingFile {
    fn from(c: &CouplingMatrix) -> Self {
        Self {
            n: c.n(),
            units: "rad/s".into(),
            provenance: c.provenance,
            j_max: c.j_max,
            alpha_nominal: c.alpha_nominal,
            j: c.j.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<CouplingFile> for CouplingMatrix {
    type Error = Error;

    fn try_from(f: CouplingFile) -> Result<Self> {
        let n = f.j.len();
        if n != f.n || f.j.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!("coupling file declares n = {} but rows disagree", f.n)));
        }
        for a in 0..n {
            if f.j[a][a] != 0.0 {
                return Err(Error::InvalidArgument(format!("coupling diagonal J[{a}][{a}] is nonzero")));
            }
            for b in a + 1..n {
                if f.j[a][b] != f.j[b][a] {
                    return Err(Error::InvalidArgument(format!("coupling matrix not symmetric at ({a}, {b})")));
                }
            }
        }
        CouplingMatrix::from_matrix(DMatrix::from_fn(n, n, |a, b| f.j[a][b]), f.provenance, f.alpha_nominal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    /// Carrier Rabi frequency per ion, rad/s.
    pub rabi_freqs: Vec<f64>,
    /// Beatnote detuning μ, rad/s.
    pub detuning_mu: f64,
    /// Raman wavelength, m.
    pub wavelength: f64,
    /// |Δk| relative to a single beam's wavenumber.
    pub geometry_factor: f64,
}

impl BeamConfig {
    pub fn uniform(n: usize, rabi: f64, detuning_mu: f64) -> Self {
        Self { rabi_freqs: vec![rabi; n], detuning_mu, wavelength: 355e-9, geometry_factor: 2f64.sqrt() }
    }

    /// |Δk| in 1/m.
    pub fn delta_k(&self) -> f64 {
        self.geometry_factor * 2.0 * PI / self.wavelength
    }
}

/// Dipole-force couplings in the Lamb-Dicke limit:
/// J_ij = Ω_i Ω_j ħ(Δk)²/(2M) Σ_m b_im b_jm / (μ² − ω_m²).
pub fn couplings_from_modes(modes: &ModeData, beams: &BeamConfig, mass: f64) -> Result<CouplingMatrix> {
    couplings_from_modes_with_guard(modes, beams, mass, 2.0 * PI * DEFAULT_GUARD_HZ)
}

pub fn couplings_from_modes_with_guard(
    modes: &ModeData,
    beams: &BeamConfig,
    mass: f64,
    guard: f64,
) -> Result<CouplingMatrix> {
    let n = modes.n();
    if beams.rabi_freqs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} Rabi frequencies for {} ions",
            beams.rabi_freqs.len(),
            n
        )));
    }
    let mu = beams.detuning_mu;
    for (m, &w) in modes.mode_freqs.iter().enumerate() {
        if (mu - w).abs() < guard {
            return Err(Error::Resonance {
                mode: m,
                offset_hz: (mu - w) / (2.0 * PI),
                guard_hz: guard / (2.0 * PI),
            });
        }
    }
    if let Some(&top) = modes.mode_freqs.first() {
        if mu <= top {
            warn!("detuning μ = 2π×{:.1} kHz lies below the center-of-mass mode", mu / (2.0 * PI * 1e3));
        }
    }

    let recoil = HBAR * beams.delta_k().powi(2) / (2.0 * mass);
    let inv_det: Vec<f64> = modes.mode_freqs.iter().map(|w| 1.0 / (mu * mu - w * w)).collect();
    let b = &modes.mode_matrix;
    let mut j = DMatrix::zeros(n, n);
    for a in 0..n {
        for c in a + 1..n {
            let sum: f64 = (0..n).map(|m| b[(a, m)] * b[(c, m)] * inv_det[m]).sum();
            let v = beams.rabi_freqs[a] * beams.rabi_freqs[c] * recoil * sum;
            j[(a, c)] = v;
            j[(c, a)] = v;
        }
    }
    CouplingMatrix::from_matrix(j, Provenance::ModeDerived, None)
}

/// J_ij = j_max / |i − j|^alpha.
pub fn couplings_power_law(n: usize, j_max: f64, alpha: f64) -> Result<CouplingMatrix> {
    if n < 2 {
        return Err(Error::InvalidArgument("power-law couplings need at least 2 spins".into()));
    }
    if !(j_max > 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("need j_max > 0 and alpha >= 0 (got {j_max}, {alpha})")));
    }
    let j = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            j_max / (a.abs_diff(b) as f64).powf(alpha)
        }
    });
    CouplingMatrix::from_matrix(j, Provenance::PowerLaw, Some(alpha))
}

/// Least-squares fit of ln J_ij against ln|i − j| over all pairs.
/// Returns `(j_max_fit, alpha_fit)`.
pub fn fit_alpha(c: &CouplingMatrix) -> Result<(f64, f64)> {
    let n = c.n();
    if n < 3 {
        return Err(Error::InvalidArgument("power-law fit needs at least 3 spins".into()));
    }
    let mut xs = Vec::with_capacity(n * (n - 1) / 2);
    let mut ys = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let v = c.get(a, b);
            if !(v > 0.0) {
                return Err(Error::FitDomain { i: a, j: b, value: v });
            }
            xs.push(((b - a) as f64).ln());
            ys.push(v.ln());
        }
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok((intercept.exp(), -slope))
}

/// Uniform rescale so that j_max equals `target`.
pub fn rescale_to_jmax(c: &CouplingMatrix, target: f64) -> Result<CouplingMatrix> {
    if c.j.iter().all(|&x| x == 0.0) || c.j_max == 0.0 {
        return Err(Error::ZeroScale);
    }
    if c.j_max == target {
        return Ok(c.clone());
    }
    let factor = target / c.j_max;
    let mut out = CouplingMatrix::from_matrix(&c.j * factor, c.provenance, c.alpha_nominal)?;
    // Pin j_max exactly; the scaled maximum can differ from target in the last ulp.
    out.j_max = target;
    Ok(out)
}

/// The laboratory operating point: uniform illumination with the beatnote a
/// fixed offset above the center-of-mass mode, then normalised to `j_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// μ/2π − f_x, Hz.
    pub mu_offset_hz: f64,
    /// Target maximum coupling, rad/s.
    pub j_max: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self { mu_offset_hz: DEFAULT_MU_OFFSET_HZ, j_max: DEFAULT_J_MAX }
    }
}

pub fn experimental_couplings(trap: &TrapConfig, op: &OperatingPoint) -> Result<CouplingMatrix> {
    let modes = chain_modes(trap)?;
    if trap.n_ions < 2 {
        return CouplingMatrix::from_matrix(DMatrix::zeros(1, 1), Provenance::ModeDerived, None);
    }
    let mu = modes.mode_freqs[0] + 2.0 * PI * op.mu_offset_hz;
    // Ω only sets the overall scale, which rescale_to_jmax removes.
    let beams = BeamConfig::uniform(trap.n_ions, 2.0 * PI * 1.0e6, mu);
    let raw = couplings_from_modes(&modes, &beams, trap.ion_mass)?;
    rescale_to_jmax(&raw, op.j_max)
}

/// The N-spin matrix used for reproducing the laboratory experiments: default
/// trap, default operating point.
pub fn pinned_couplings(n: usize) -> Result<CouplingMatrix> {
    experimental_couplings(&TrapConfig::new(n), &OperatingPoint::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trap::YB171_MASS;
    use approx::assert_relative_eq;

    fn six_ion_modes() -> ModeData {
        chain_modes(&TrapConfig::new(6)).unwrap()
    }

    #[test]
    fn single_ion_has_no_pairs() {
        let modes = chain_modes(&TrapConfig::new(1)).unwrap();
        let beams = BeamConfig::uniform(1, 1.0, modes.mode_freqs[0] + 1e6);
        let c = couplings_from_modes(&modes, &beams, YB171_MASS).unwrap();
        assert_eq!(c.n(), 1);
        assert_eq!(c.j_max(), 0.0);
    }

    #[test]
    fn two_ion_sign_flip_matches_closed_form() {
        let modes = chain_modes(&TrapConfig::new(2)).unwrap();
        let (w_com, w_tilt) = (modes.mode_freqs[0], modes.mode_freqs[1]);
        let rabi = 2.0 * PI * 1e6;
        let mid = 0.5 * (w_com + w_tilt);
        for mu in [w_com + 2.0 * PI * 50e3, mid, w_tilt - 2.0 * PI * 50e3] {
            let beams = BeamConfig::uniform(2, rabi, mu);
            let c = couplings_from_modes(&modes, &beams, YB171_MASS).unwrap();
            // b = [[1, 1], [1, -1]]/√2 up to column signs.
            let dk = 2f64.sqrt() * 2.0 * PI / 355e-9;
            let pref = rabi * rabi * HBAR * dk * dk / (2.0 * YB171_MASS);
            let expect = pref * 0.5 * (1.0 / (mu * mu - w_com * w_com) - 1.0 / (mu * mu - w_tilt * w_tilt));
            assert_relative_eq!(c.get(0, 1), expect, max_relative = 1e-9);
        }
        let above = couplings_from_modes(
            &modes,
            &BeamConfig::uniform(2, rabi, w_com + 2.0 * PI * 50e3),
            YB171_MASS,
        )
        .unwrap();
        let between = couplings_from_modes(&modes, &BeamConfig::uniform(2, rabi, mid), YB171_MASS).unwrap();
        assert!(above.get(0, 1) > 0.0);
        assert!(between.get(0, 1) < 0.0);
    }

    #[test]
    fn resonance_guard() {
        let modes = six_ion_modes();
        let beams = BeamConfig::uniform(6, 1.0, modes.mode_freqs[2] + 2.0 * PI * 300.0);
        match couplings_from_modes(&modes, &beams, YB171_MASS) {
            Err(Error::Resonance { mode, .. }) => assert_eq!(mode, 2),
            other => panic!("expected resonance error, got {other:?}"),
        }
    }

    #[test]
    fn six_ion_operating_point_alpha_band() {
        let c = pinned_couplings(6).unwrap();
        assert_relative_eq!(c.j_max(), DEFAULT_J_MAX, max_relative = 1e-15);
        assert!(c.is_antiferromagnetic());
        let (_, alpha) = fit_alpha(&c).unwrap();
        assert!((0.7..=1.2).contains(&alpha), "alpha = {alpha}");
    }

    #[test]
    fn mode_derived_symmetries() {
        let c = pinned_couplings(8).unwrap();
        for a in 0..8 {
            assert_eq!(c.get(a, a), 0.0);
            for b in 0..8 {
                assert_eq!(c.get(a, b), c.get(b, a));
                let mirrored = c.get(7 - b, 7 - a);
                assert!((c.get(a, b) - mirrored).abs() <= 1e-9 * c.get(a, b).abs().max(1e-300));
            }
        }
        assert!(c.is_palindromic(1e-9));
    }

    #[test]
    fn far_detuning_falls_off_faster_than_inverse_square() {
        let modes = six_ion_modes();
        let mu = 10.0 * modes.mode_freqs[0];
        let near = couplings_from_modes(&modes, &BeamConfig::uniform(6, 1.0, mu), 1.0).unwrap();
        let far = couplings_from_modes(&modes, &BeamConfig::uniform(6, 1.0, 2.0 * mu), 1.0).unwrap();
        for a in 0..6 {
            for b in a + 1..6 {
                assert!(far.get(a, b).abs() <= 1.1 * near.get(a, b).abs() / 4.0);
            }
        }
    }

    #[test]
    fn power_law_examples() {
        let c = couplings_power_law(3, 2.0, 0.0).unwrap();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(c.get(a, b), 2.0);
        }

        let c = couplings_power_law(6, 1.0, 50.0).unwrap();
        for a in 0..6usize {
            for b in 0..6 {
                let expect = if a.abs_diff(b) == 1 { 1.0 } else { 0.0 };
                assert!((c.get(a, b) - expect).abs() <= 1e-12);
            }
        }

        let j_max = 2.0 * PI * 600.0;
        let c = couplings_power_law(10, j_max, 0.83).unwrap();
        assert_eq!(c.get(0, 9), j_max / 9f64.powf(0.83));
        assert_eq!(c.j_max(), j_max);
        assert_eq!(c.provenance, Provenance::PowerLaw);

        assert!(couplings_power_law(1, 1.0, 1.0).is_err());
        assert!(couplings_power_law(4, 0.0, 1.0).is_err());
        assert!(couplings_power_law(4, 1.0, -0.5).is_err());
    }

    #[test]
    fn fit_recovers_generating_parameters() {
        for (n, alpha) in [(8, 1.0), (8, 0.83), (5, 0.94)] {
            let c = couplings_power_law(n, 3.5, alpha).unwrap();
            let (j, a) = fit_alpha(&c).unwrap();
            assert!((a - alpha).abs() < 1e-10);
            assert!((j - 3.5).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_rejects_non_positive() {
        let mut m = DMatrix::from_element(4, 4, 1.0);
        m[(0, 3)] = -0.1;
        let c = CouplingMatrix::from_matrix(m, Provenance::ModeDerived, None).unwrap();
        assert!(matches!(fit_alpha(&c), Err(Error::FitDomain { i: 0, j: 3, .. })));
    }

    #[test]
    fn rescale_examples() {
        let c = couplings_power_law(6, 1.7, 0.94).unwrap();
        assert_eq!(rescale_to_jmax(&c, 1.7).unwrap(), c);
        let target = 2.0 * PI * 650.0;
        let s = rescale_to_jmax(&c, target).unwrap();
        assert_eq!(s.j_max(), target);
        let d = rescale_to_jmax(&c, 3.4).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                assert_relative_eq!(d.get(a, b), 2.0 * c.get(a, b), max_relative = 1e-15);
            }
        }
        let zero = CouplingMatrix::from_matrix(DMatrix::zeros(3, 3), Provenance::PowerLaw, None).unwrap();
        assert!(matches!(rescale_to_jmax(&zero, 1.0), Err(Error::ZeroScale)));
    }

    #[test]
    fn file_round_trip() {
        let c = pinned_couplings(5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.json");
        c.save(&path).unwrap();
        let back = CouplingMatrix::load(&path).unwrap();
        assert_eq!(back, c);
    }
}
