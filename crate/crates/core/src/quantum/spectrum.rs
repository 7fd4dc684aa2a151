//! Low-lying spectra, ground states and the critical gap.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hamiltonian::{reflection_even_dense, reflection_orbits, symmetrize, Hamiltonian, IsingDiagonal, Sector};
use crate::couplings::CouplingMatrix;
use crate::error::{Error, Result};

/// Chains up to this size are diagonalised densely; larger ones use Lanczos.
pub const DENSE_SPECTRUM_MAX_SPINS: usize = 10;

const LANCZOS_MAX_BASIS: usize = 250;
const LANCZOS_MAX_RESTARTS: usize = 40;
const LANCZOS_RESIDUAL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub b_x: f64,
    pub b_y: f64,
    /// Lowest eigenvalues, ascending, rad/s.
    pub levels: Vec<f64>,
    /// E_1 − E_0, rad/s.
    pub gap: f64,
}

/// Lowest `k` eigenpairs; eigenvectors are full-space real vectors.
pub struct Eigenpairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

fn sorted_dense(m: DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>, Vec<usize>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order.truncate(k);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (values, eig.eigenvectors, order)
}

/// Lowest `k` eigenpairs of `h` restricted to `sector`.
pub fn lowest_eigenpairs(h: &Hamiltonian<'_>, k: usize, sector: Sector) -> Result<Eigenpairs> {
    let dim = match sector {
        Sector::Full => h.dim(),
        Sector::ReflectionEven => reflection_orbits(h.n()).len(),
    };
    if k == 0 || k > dim {
        return Err(Error::InvalidArgument(format!("requested {k} levels from a {dim}-dimensional space")));
    }
    if h.b_y == 0.0 && sector == Sector::Full {
        return Ok(diagonal_pairs(h, k));
    }
    if h.n() <= DENSE_SPECTRUM_MAX_SPINS {
        Ok(dense_pairs(h, k, sector))
    } else {
        lanczos_lowest(h, k, sector)
    }
}

fn diagonal_pairs(h: &Hamiltonian<'_>, k: usize) -> Eigenpairs {
    let d = h.diagonal();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order.truncate(k);
    Eigenpairs {
        values: order.iter().map(|&i| d[i]).collect(),
        vectors: order
            .iter()
            .map(|&i| {
                let mut v = vec![0.0; d.len()];
                v[i] = 1.0;
                v
            })
            .collect(),
    }
}

fn dense_pairs(h: &Hamiltonian<'_>, k: usize, sector: Sector) -> Eigenpairs {
    match sector {
        Sector::Full => {
            let (values, vecs, order) = sorted_dense(h.to_dense(), k);
            let vectors = order.iter().map(|&i| vecs.column(i).iter().copied().collect()).collect();
            Eigenpairs { values, vectors }
        }
        Sector::ReflectionEven => {
            let orbits = reflection_orbits(h.n());
            let (values, vecs, order) = sorted_dense(reflection_even_dense(h), k);
            let vectors = order
                .iter()
                .map(|&i| {
                    let mut v = vec![0.0; h.dim()];
                    for (a, &(s, r)) in orbits.iter().enumerate() {
                        let c = vecs[(a, i)];
                        if s == r {
                            v[s] = c;
                        } else {
                            v[s] = c * std::f64::consts::FRAC_1_SQRT_2;
                            v[r] = c * std::f64::consts::FRAC_1_SQRT_2;
                        }
                    }
                    v
                })
                .collect();
            Eigenpairs { values, vectors }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = dot(v, v).sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    // twice is enough
    for _ in 0..2 {
        for u in against {
            let c = dot(u, v);
            axpy(-c, u, v);
        }
    }
}

/// Lanczos with full reorthogonalisation, extracting one eigenpair per run
/// and locking it, so degenerate levels are resolved with multiplicity.
fn lanczos_lowest(h: &Hamiltonian<'_>, k: usize, sector: Sector) -> Result<Eigenpairs> {
    let dim = h.dim();
    let n = h.n();
    let scale = h.norm_bound().max(f64::MIN_POSITIVE);
    let project = |v: &mut [f64]| {
        if sector == Sector::ReflectionEven {
            symmetrize(v, n);
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_5e11);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::new();

    while locked.len() < k {
        let mut start: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut converged = None;
        let mut last_residual = f64::INFINITY;
        for _ in 0..LANCZOS_MAX_RESTARTS {
            project(&mut start);
            orthogonalize(&mut start, &locked);
            if normalize(&mut start) == 0.0 {
                return Err(Error::Numeric { residual: f64::NAN });
            }
            let (theta, ritz, residual) = lanczos_run(h, &start, &locked, &project, scale)?;
            last_residual = residual;
            if residual < LANCZOS_RESIDUAL * scale {
                converged = Some((theta, ritz));
                break;
            }
            start = ritz;
        }
        let (theta, mut ritz) = converged.ok_or(Error::Numeric { residual: last_residual })?;
        orthogonalize(&mut ritz, &locked);
        normalize(&mut ritz);
        values.push(theta);
        locked.push(ritz);
    }

    // Locking returns pairs in discovery order, which is ascending up to
    // convergence noise.
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    Ok(Eigenpairs {
        values: idx.iter().map(|&i| values[i]).collect(),
        vectors: idx.iter().map(|&i| locked[i].clone()).collect(),
    })
}

/// One Lanczos run from `start`; returns the lowest Ritz pair and its residual.
fn lanczos_run(
    h: &Hamiltonian<'_>,
    start: &[f64],
    locked: &[Vec<f64>],
    project: &dyn Fn(&mut [f64]),
    scale: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let dim = h.dim();
    let max_m = LANCZOS_MAX_BASIS.min(dim - locked.len());
    let mut basis: Vec<Vec<f64>> = vec![start.to_vec()];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];

    loop {
        let m = basis.len();
        h.apply_real(&basis[m - 1], &mut w);
        project(&mut w);
        let a = dot(&basis[m - 1], &w);
        alpha.push(a);
        orthogonalize(&mut w, locked);
        orthogonalize(&mut w, &basis);
        let b = dot(&w, &w).sqrt();

        let done = m >= max_m || b < 1e-13 * scale;
        if done || m % 10 == 0 {
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
            let low = (0..m).min_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y])).unwrap();
            let residual = (b * eig.eigenvectors[(m - 1, low)]).abs();
            if done || residual < 0.1 * LANCZOS_RESIDUAL * scale {
                let mut ritz = vec![0.0; dim];
                for (i, v) in basis.iter().enumerate() {
                    axpy(eig.eigenvectors[(i, low)], v, &mut ritz);
                }
                normalize(&mut ritz);
                // True residual, independent of the recurrence.
                let mut hr = vec![0.0; dim];
                h.apply_real(&ritz, &mut hr);
                project(&mut hr);
                let theta = dot(&ritz, &hr);
                axpy(-theta, &ritz, &mut hr);
                let true_res = dot(&hr, &hr).sqrt();
                return Ok((theta, ritz, true_res));
            }
        }
        beta.push(b);
        let next: Vec<f64> = w.iter().map(|x| x / b).collect();
        basis.push(next);
    }
}

fn spectrum_hamiltonian(j: &CouplingMatrix) -> Result<IsingDiagonal> {
    IsingDiagonal::new(j)
}

/// The `k` lowest levels of H(B_x, B_y).
pub fn low_spectrum(j: &CouplingMatrix, b_x: f64, b_y: f64, k: usize) -> Result<SpectrumResult> {
    let diag = spectrum_hamiltonian(j)?;
    low_spectrum_with(&diag, b_x, b_y, k, Sector::Full)
}

pub fn low_spectrum_with(diag: &IsingDiagonal, b_x: f64, b_y: f64, k: usize, sector: Sector) -> Result<SpectrumResult> {
    let pairs = lowest_eigenpairs(&diag.with_fields(b_x, b_y), k, sector)?;
    let gap = if pairs.values.len() > 1 { (pairs.values[1] - pairs.values[0]).max(0.0) } else { 0.0 };
    Ok(SpectrumResult { b_x, b_y, levels: pairs.values, gap })
}

fn gap_at(diag: &IsingDiagonal, b_x: f64, b_y: f64, sector: Sector) -> Result<f64> {
    let pairs = lowest_eigenpairs(&diag.with_fields(b_x, b_y), 2, sector)?;
    Ok((pairs.values[1] - pairs.values[0]).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalGap {
    pub b_x: f64,
    pub delta_c: f64,
    pub b_y_at_min: f64,
}

/// Minimum of E_1 − E_0 along a B_y sweep at fixed B_x, refined by
/// golden-section search around the grid minimum.
pub fn critical_gap(j: &CouplingMatrix, b_x: f64, b_y_grid: &[f64], sector: Sector) -> Result<CriticalGap> {
    if sector == Sector::ReflectionEven && !j.is_palindromic(1e-9) {
        return Err(Error::InvalidArgument("reflection sector requires a mirror-symmetric coupling matrix".into()));
    }
    let diag = spectrum_hamiltonian(j)?;
    let span = b_y_grid.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let resolution = if j.j_max() > 0.0 { 1e-3 * j.j_max() } else { 1e-6 * span };
    critical_gap_with(&diag, b_x, b_y_grid, sector, resolution)
}

pub fn critical_gap_with(
    diag: &IsingDiagonal,
    b_x: f64,
    b_y_grid: &[f64],
    sector: Sector,
    resolution: f64,
) -> Result<CriticalGap> {
    if b_y_grid.is_empty() {
        return Err(Error::InvalidArgument("empty B_y grid".into()));
    }
    let gaps = b_y_grid.iter().map(|&by| gap_at(diag, b_x, by, sector)).collect::<Result<Vec<f64>>>()?;
    let i = (0..gaps.len()).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap();
    let mut best = (gaps[i], b_y_grid[i]);

    let mut lo = if i > 0 { b_y_grid[i - 1] } else { 0.0 };
    let mut hi = if i + 1 < b_y_grid.len() { b_y_grid[i + 1] } else { b_y_grid[i] };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = gap_at(diag, b_x, x1, sector)?;
    let mut f2 = gap_at(diag, b_x, x2, sector)?;
    // Bounded in case the resolution is below floating-point spacing.
    for _ in 0..200 {
        if hi - lo <= resolution {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = gap_at(diag, b_x, x1, sector)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = gap_at(diag, b_x, x2, sector)?;
        }
    }
    for (f, x) in [(f1, x1), (f2, x2)] {
        if f < best.0 {
            best = (f, x);
        }
    }
    Ok(CriticalGap { b_x, delta_c: best.0, b_y_at_min: best.1 })
}

/// `points` evenly spaced values spanning (0, b_y0].
pub fn b_y_grid(b_y0: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|i| b_y0 * i as f64 / points as f64).collect()
}

/// Eigenvectors of every level within `window` of the ground energy.
pub fn ground_manifold(h: &Hamiltonian<'_>, window: f64, sector: Sector) -> Result<Eigenpairs> {
    let dim = match sector {
        Sector::Full => h.dim(),
        Sector::ReflectionEven => reflection_orbits(h.n()).len(),
    };
    let mut k = 4.min(dim);
    loop {
        let mut pairs = lowest_eigenpairs(h, k, sector)?;
        let e0 = pairs.values[0];
        let count = pairs.values.iter().take_while(|&&e| e - e0 <= window).count();
        if count < k || k == dim {
            pairs.values.truncate(count);
            pairs.vectors.truncate(count);
            return Ok(pairs);
        }
        k = (2 * k).min(dim);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::interaction_energy;
    use crate::couplings::{couplings_power_law, CouplingMatrix, Provenance};

    fn free_spins(n: usize) -> CouplingMatrix {
        CouplingMatrix::from_matrix(DMatrix::zeros(n, n), Provenance::PowerLaw, None).unwrap()
    }

    #[test]
    fn zero_transverse_field_is_sorted_diagonal() {
        let j = couplings_power_law(6, 1.0, 0.94).unwrap();
        let s = low_spectrum(&j, 0.3, 0.0, 64).unwrap();
        let mut diag: Vec<f64> = (0..64u32).map(|b| interaction_energy(&j, b) + 0.3 * crate::spin::magnetization(b, 6) as f64).collect();
        diag.sort_by(f64::total_cmp);
        assert_eq!(s.levels, diag);
    }

    #[test]
    fn two_free_spins_in_transverse_field() {
        let s = low_spectrum(&free_spins(2), 0.0, 0.7, 4).unwrap();
        let expect = [-1.4, 0.0, 0.0, 1.4];
        for (a, b) in s.levels.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_spin_gap_is_minimised_at_smallest_field() {
        let j = free_spins(1);
        let grid = b_y_grid(5.0, 50);
        let bx = 0.4;
        let cg = critical_gap(&j, bx, &grid, Sector::Full).unwrap();
        let closed = |by: f64| 2.0 * (bx * bx + by * by).sqrt();
        assert!(cg.b_y_at_min <= grid[0]);
        assert!((cg.delta_c - closed(cg.b_y_at_min)).abs() < 1e-12);
        assert!(cg.delta_c <= closed(grid[0]));
    }

    #[test]
    fn lanczos_matches_dense() {
        let j = couplings_power_law(8, 1.0, 0.9).unwrap();
        let diag = IsingDiagonal::new(&j).unwrap();
        for sector in [Sector::Full, Sector::ReflectionEven] {
            let h = diag.with_fields(0.8, 1.3);
            let dense = dense_pairs(&h, 5, sector);
            let lz = lanczos_lowest(&h, 5, sector).unwrap();
            for (a, b) in dense.values.iter().zip(&lz.values) {
                assert!((a - b).abs() < 1e-9, "{sector:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn lanczos_resolves_degenerate_levels() {
        let s = lanczos_lowest(&IsingDiagonal::new(&free_spins(4)).unwrap().with_fields(0.0, 1.0), 5, Sector::Full).unwrap();
        // −4 once, −2 four times.
        assert!((s.values[0] + 4.0).abs() < 1e-9);
        for v in &s.values[1..] {
            assert!((v + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reflection_sector_needs_palindromic_couplings() {
        let mut m = DMatrix::from_element(3, 3, 1.0);
        m[(0, 1)] = 2.0;
        let j = CouplingMatrix::from_matrix(m, Provenance::ModeDerived, None).unwrap();
        assert!(critical_gap(&j, 0.0, &[1.0], Sector::ReflectionEven).is_err());
    }
}
