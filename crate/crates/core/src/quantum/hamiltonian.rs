use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::classical::interaction_energy;
use crate::couplings::CouplingMatrix;
use crate::error::{Error, Result};
use crate::spin::{magnetization, reverse_bits};

/// Largest chain for full state-vector treatment.
pub const DYNAMICS_CAP: usize = 14;

/// Diagonal part of the Hamiltonian with the fields factored out, so a
/// time-dependent run can rebuild H(t) without touching J again.
#[derive(Clone, Debug)]
pub struct IsingDiagonal {
    n: usize,
    interaction: Vec<f64>,
    magnetization: Vec<f64>,
}

impl IsingDiagonal {
    pub fn new(j: &CouplingMatrix) -> Result<Self> {
        let n = j.n();
        if n > DYNAMICS_CAP {
            return Err(Error::Capacity { what: "state-vector dynamics", n, cap: DYNAMICS_CAP });
        }
        let dim = 1u32 << n;
        Ok(Self {
            n,
            interaction: (0..dim).map(|b| interaction_energy(j, b)).collect(),
            magnetization: (0..dim).map(|b| magnetization(b, n) as f64).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.interaction.len()
    }

    pub fn interaction(&self) -> &[f64] {
        &self.interaction
    }

    pub fn with_fields(&self, b_x: f64, b_y: f64) -> Hamiltonian<'_> {
        Hamiltonian { diag: self, b_x, b_y }
    }
}

/// H = Σ_{i<j} J_ij σx_i σx_j + B_x Σ σx_i + B_y Σ σy_i in the σ_x eigenbasis.
///
/// Basis phases are chosen so that ⟨s'|σ_y^(i)|s⟩ = +1 whenever s' is s with
/// spin i flipped. σ_y is then the real matrix [[0, 1], [1, 0]] on each site,
/// H is real symmetric, and σ_z = −iσ_xσ_y keeps the Pauli algebra intact.
/// Probabilities and spectra do not depend on this choice.
#[derive(Clone, Copy, Debug)]
pub struct Hamiltonian<'a> {
    diag: &'a IsingDiagonal,
    pub b_x: f64,
    pub b_y: f64,
}

impl Hamiltonian<'_> {
    pub fn n(&self) -> usize {
        self.diag.n
    }

    pub fn dim(&self) -> usize {
        self.diag.dim()
    }

    pub fn diagonal_entry(&self, bits: usize) -> f64 {
        self.diag.interaction[bits] + self.b_x * self.diag.magnetization[bits]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|b| self.diagonal_entry(b)).collect()
    }

    /// Upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let d = self.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        d + self.n() as f64 * self.b_y.abs()
    }

    pub fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        let n = self.n();
        for (m, o) in out.iter_mut().enumerate() {
            let mut acc = psi[m] * self.diagonal_entry(m);
            if self.b_y != 0.0 {
                let mut flip = Complex64::new(0.0, 0.0);
                for i in 0..n {
                    flip += psi[m ^ (1 << i)];
                }
                acc += flip * self.b_y;
            }
            *o = acc;
        }
    }

    pub fn apply_real(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n();
        for (m, o) in out.iter_mut().enumerate() {
            let mut acc = v[m] * self.diagonal_entry(m);
            if self.b_y != 0.0 {
                let mut flip = 0.0;
                for i in 0..n {
                    flip += v[m ^ (1 << i)];
                }
                acc += flip * self.b_y;
            }
            *o = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        for m in 0..dim {
            h[(m, m)] = self.diagonal_entry(m);
            for i in 0..self.n() {
                h[(m ^ (1 << i), m)] = self.b_y;
            }
        }
        h
    }

    /// ⟨ψ|H|ψ⟩.
    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        let mut out = vec![Complex64::new(0.0, 0.0); psi.len()];
        self.apply(psi, &mut out);
        psi.iter().zip(&out).map(|(a, b)| (a.conj() * b).re).sum()
    }
}

pub fn build_hamiltonian(j: &CouplingMatrix, b_x: f64, b_y: f64) -> Result<DMatrix<f64>> {
    let diag = IsingDiagonal::new(j)?;
    Ok(diag.with_fields(b_x, b_y).to_dense())
}

/// Subspace on which spectra are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Full,
    /// States even under site reversal i → N−1−i. Invariant when J is
    /// palindromic, and the sector reached from any mirror-symmetric start.
    ReflectionEven,
}

/// Orthonormal basis of the reflection-even subspace: one entry per orbit
/// {s, R(s)}.
pub(crate) fn reflection_orbits(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 0..1u32 << n {
        let r = reverse_bits(s, n);
        if s <= r {
            out.push((s as usize, r as usize));
        }
    }
    out
}

pub(crate) fn symmetrize(v: &mut [f64], n: usize) {
    for s in 0..v.len() {
        let r = reverse_bits(s as u32, n) as usize;
        if s < r {
            let avg = 0.5 * (v[s] + v[r]);
            v[s] = avg;
            v[r] = avg;
        }
    }
}

/// Dense projection of H onto the reflection-even subspace.
pub(crate) fn reflection_even_dense(h: &Hamiltonian<'_>) -> DMatrix<f64> {
    let orbits = reflection_orbits(h.n());
    let dim = orbits.len();
    let index: std::collections::HashMap<usize, usize> =
        orbits.iter().enumerate().flat_map(|(k, &(s, r))| [(s, k), (r, k)]).collect();
    let weight = |&(s, r): &(usize, usize)| if s == r { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };

    let mut out = DMatrix::zeros(dim, dim);
    let full = h.dim();
    let mut v = vec![0.0; full];
    let mut w = vec![0.0; full];
    for (a, orbit) in orbits.iter().enumerate() {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[orbit.0] = weight(orbit);
        v[orbit.1] = weight(orbit);
        h.apply_real(&v, &mut w);
        for (s, &ws) in w.iter().enumerate() {
            if ws != 0.0 {
                let b = index[&s];
                let ob = &orbits[b];
                // each member of orbit b contributes w[s] * weight_b
                out[(b, a)] += ws * weight(ob);
            }
        }
    }
    out
}
