//! The B_y = 0 model: diagonal energies, per-magnetization-sector minima, and
//! the ground-state magnetization staircase.
//!
//! With no transverse field the Hamiltonian is diagonal in the σ_x basis and
//! a configuration with k up spins has energy E_int(s) + B_x (2k − N). The
//! minimum over each sector k is independent of B_x, so the ground-state
//! energy is the lower envelope of N + 1 straight lines in B_x and every
//! first-order transition is a crossing of two of those lines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::CouplingMatrix;
use crate::error::{Error, Result};
use crate::spin::{magnetization, SpinConfiguration};

/// Largest chain handled by exhaustive enumeration.
pub const ENUMERATION_CAP: usize = 24;

/// Relative width of the degeneracy window, in units of N·scale.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Energy drift allowed between incremental updates and a from-scratch sum.
const CANDIDATE_SLACK: f64 = 1e-9;
const RESYNC_INTERVAL: u64 = 1024;

/// Interaction energy Σ_{i<j} J_ij s_i s_j.
///
/// The summands are sorted before adding, so configurations related by a
/// symmetry of J (mirror images, for instance) get bit-identical energies.
pub fn interaction_energy(j: &CouplingMatrix, bits: u32) -> f64 {
    let n = j.n();
    let mut terms = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        let sa = if bits >> a & 1 == 1 { 1.0 } else { -1.0 };
        for b in a + 1..n {
            let sb = if bits >> b & 1 == 1 { 1.0 } else { -1.0 };
            terms.push(j.get(a, b) * sa * sb);
        }
    }
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Σ_{i<j} J_ij s_i s_j + B_x Σ_i s_i.
pub fn classical_energy(j: &CouplingMatrix, b_x: f64, s: SpinConfiguration) -> f64 {
    assert_eq!(j.n(), s.n, "coupling matrix and configuration sizes differ");
    interaction_energy(j, s.bits) + b_x * s.magnetization() as f64
}

fn check_capacity(n: usize) -> Result<()> {
    if n > ENUMERATION_CAP {
        return Err(Error::Capacity { what: "exhaustive enumeration", n, cap: ENUMERATION_CAP });
    }
    Ok(())
}

fn tie_window(j: &CouplingMatrix) -> f64 {
    TIE_TOLERANCE * j.n().max(1) as f64 * j.scale().max(f64::MIN_POSITIVE)
}

/// Lowest interaction energy within one up-count sector, with every exactly
/// degenerate minimiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorMinimum {
    pub n_up: usize,
    pub magnetization: i32,
    pub energy: f64,
    pub states: Vec<SpinConfiguration>,
}

#[derive(Clone, Debug, Default)]
struct Candidates {
    min: f64,
    states: Vec<u32>,
}

impl Candidates {
    fn new() -> Self {
        Self { min: f64::INFINITY, states: Vec::new() }
    }

    fn offer(&mut self, e: f64, bits: u32, slack: f64) {
        if e < self.min - slack {
            self.min = e;
            self.states.clear();
            self.states.push(bits);
        } else if e <= self.min + slack {
            if e < self.min {
                self.min = e;
            }
            self.states.push(bits);
        }
    }

    fn merge(mut self, other: Candidates, slack: f64) -> Self {
        if other.min < self.min {
            return other.merge(self, slack);
        }
        if other.min <= self.min + slack {
            self.states.extend(other.states);
        }
        self
    }
}

fn spin_of(bits: u32, i: usize) -> f64 {
    if bits >> i & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Walks the low `width` bits through a reflected Gray code with the high
/// bits fixed to `prefix`, updating energy and local fields one flip at a time.
fn walk_chunk(j: &CouplingMatrix, prefix: u32, width: usize, slack: f64) -> Vec<Candidates> {
    let n = j.n();
    let mut best = vec![Candidates::new(); n + 1];
    let mut bits = prefix << width;

    let recompute = |bits: u32, fields: &mut [f64]| -> f64 {
        let mut e = 0.0;
        for a in 0..n {
            let mut h = 0.0;
            for b in 0..n {
                if b != a {
                    h += j.get(a, b) * spin_of(bits, b);
                }
            }
            fields[a] = h;
            e += 0.5 * h * spin_of(bits, a);
        }
        e
    };

    let mut fields = vec![0.0; n];
    let mut energy = recompute(bits, &mut fields);
    let total: u64 = 1 << width;
    for step in 0..total {
        let k = bits.count_ones() as usize;
        best[k].offer(energy, bits, slack);
        if step + 1 == total {
            break;
        }
        let flip = (step + 1).trailing_zeros() as usize;
        let s_old = spin_of(bits, flip);
        bits ^= 1 << flip;
        if (step + 1) % RESYNC_INTERVAL == 0 {
            energy = recompute(bits, &mut fields);
        } else {
            energy -= 2.0 * s_old * fields[flip];
            for (b, h) in fields.iter_mut().enumerate() {
                if b != flip {
                    *h -= 2.0 * s_old * j.get(b, flip);
                }
            }
        }
    }
    best
}

/// Minimum interaction energy in every sector k = 0..=N.
pub fn sector_minima(j: &CouplingMatrix) -> Result<Vec<SectorMinimum>> {
    let n = j.n();
    check_capacity(n)?;
    let slack = CANDIDATE_SLACK * n.max(1) as f64 * j.scale().max(f64::MIN_POSITIVE);
    let tie = tie_window(j);

    let prefix_bits = n.min(6);
    let width = n - prefix_bits;
    let merged = (0..1u32 << prefix_bits)
        .into_par_iter()
        .map(|prefix| walk_chunk(j, prefix, width, slack))
        .reduce(
            || vec![Candidates::new(); n + 1],
            |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y, slack)).collect(),
        );

    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(k, cand)| {
            let exact: Vec<(u32, f64)> = cand.states.iter().map(|&s| (s, interaction_energy(j, s))).collect();
            let min = exact.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
            let mut states: Vec<u32> = exact.iter().filter(|x| x.1 <= min + tie).map(|x| x.0).collect();
            states.sort_unstable();
            states.dedup();
            SectorMinimum {
                n_up: k,
                magnetization: 2 * k as i32 - n as i32,
                energy: min,
                states: states.into_iter().map(|b| SpinConfiguration::new(b, n)).collect(),
            }
        })
        .collect())
}

/// Lowest-energy arrangement of `n_up` up spins: the generalised Wigner
/// crystal for repulsive convex couplings.
pub fn sector_minimum(j: &CouplingMatrix, n_up: usize) -> Result<SectorMinimum> {
    if n_up > j.n() {
        return Err(Error::InvalidArgument(format!("n_up = {n_up} exceeds N = {}", j.n())));
    }
    Ok(sector_minima(j)?.swap_remove(n_up))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// [start, end] in rad/s.
    pub b_x_interval: [f64; 2],
    pub magnetization: i32,
    pub ground_states: Vec<SpinConfiguration>,
    /// Interaction energy of the plateau's sector minimum, rad/s.
    pub sector_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaircaseResult {
    pub n: usize,
    pub j_max: f64,
    pub b_x_max: f64,
    pub plateaus: Vec<Plateau>,
    /// Transition fields in rad/s, ascending.
    pub transitions: Vec<f64>,
}

impl StaircaseResult {
    pub fn plateau_index_at(&self, b_x: f64) -> usize {
        self.transitions.iter().take_while(|&&t| t < b_x).count()
    }

    pub fn magnetization_at(&self, b_x: f64) -> i32 {
        self.plateaus[self.plateau_index_at(b_x)].magnetization
    }

    /// Plateau midpoints. The last plateau is open-ended, so its midpoint is
    /// taken over [last transition, `b_x_end`].
    pub fn plateau_midpoints(&self, b_x_end: f64) -> Vec<f64> {
        self.plateaus
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let hi = if i + 1 == self.plateaus.len() { b_x_end.max(p.b_x_interval[0]) } else { p.b_x_interval[1] };
                0.5 * (p.b_x_interval[0] + hi)
            })
            .collect()
    }

    /// (b_x/j_max, b_x, m_x) rows on a uniform grid over [0, b_x_max].
    pub fn sampled(&self, points: usize) -> Vec<(f64, f64, i32)> {
        let points = points.max(2);
        (0..points)
            .map(|i| {
                let b = self.b_x_max * i as f64 / (points - 1) as f64;
                (b / self.j_max, b, self.magnetization_at(b))
            })
            .collect()
    }
}

/// Lower convex envelope of the sector lines over B_x ∈ [0, `b_x_max`].
pub fn staircase(j: &CouplingMatrix, b_x_max: f64) -> Result<StaircaseResult> {
    let minima = sector_minima(j)?;
    staircase_from_minima(j, &minima, b_x_max)
}

pub fn default_b_x_max(j: &CouplingMatrix) -> f64 {
    3.0 * j.j_max() * j.n() as f64
}

pub fn staircase_from_minima(j: &CouplingMatrix, minima: &[SectorMinimum], b_x_max: f64) -> Result<StaircaseResult> {
    if !(b_x_max >= 0.0) {
        return Err(Error::InvalidArgument("b_x_max must be non-negative".into()));
    }
    let n = j.n();
    let line = |k: usize| (minima[k].energy, minima[k].magnetization as f64);

    // Ground sector at B_x = 0; on a tie the smaller slope wins for B_x > 0.
    let mut current = (0..=n)
        .min_by(|&a, &b| line(a).0.total_cmp(&line(b).0).then(line(a).1.total_cmp(&line(b).1)))
        .expect("at least one sector");

    let mut plateaus = Vec::new();
    let mut transitions = Vec::new();
    let mut start = 0.0;
    let tol = tie_window(j);
    loop {
        let (e_cur, m_cur) = line(current);
        let mut next: Option<(f64, usize)> = None;
        for k in 0..current {
            let (e_k, m_k) = line(k);
            let x = (e_k - e_cur) / (m_cur - m_k);
            let better = match next {
                None => true,
                // Among simultaneous crossings, jump to the steepest line.
                Some((bx, bk)) => x < bx - tol || (x <= bx + tol && k < bk),
            };
            if better {
                next = Some((x, k));
            }
        }
        match next {
            // A crossing at or before `start` is rounding at a multi-line
            // intersection: switch lines without emitting a plateau.
            Some((x, k)) if x <= start + tol => current = k,
            Some((x, k)) if x <= b_x_max => {
                plateaus.push(Plateau {
                    b_x_interval: [start, x],
                    magnetization: minima[current].magnetization,
                    ground_states: minima[current].states.clone(),
                    sector_energy: e_cur,
                });
                transitions.push(x);
                start = x;
                current = k;
            }
            _ => {
                plateaus.push(Plateau {
                    b_x_interval: [start, b_x_max],
                    magnetization: minima[current].magnetization,
                    ground_states: minima[current].states.clone(),
                    sector_energy: e_cur,
                });
                break;
            }
        }
    }

    Ok(StaircaseResult { n, j_max: j.j_max(), b_x_max, plateaus, transitions })
}

/// Ground state at a given longitudinal field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundState {
    /// One entry normally; two or more when `b_x` sits on a transition.
    pub magnetizations: Vec<i32>,
    pub states: Vec<SpinConfiguration>,
    pub energy: f64,
    pub degenerate: bool,
}

impl GroundState {
    /// Magnetization of the ground state; at a transition, the largest of
    /// the degenerate values.
    pub fn magnetization(&self) -> i32 {
        self.magnetizations[0]
    }
}

pub fn ground_state_magnetization(j: &CouplingMatrix, b_x: f64) -> Result<GroundState> {
    let minima = sector_minima(j)?;
    Ok(ground_state_from_minima(j, &minima, b_x))
}

/// Any field sign: B_x < 0 mirrors the staircase by the global spin flip.
pub fn ground_state_from_minima(j: &CouplingMatrix, minima: &[SectorMinimum], b_x: f64) -> GroundState {
    let energies: Vec<f64> = minima.iter().map(|s| s.energy + b_x * s.magnetization as f64).collect();
    let best = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let tie = tie_window(j) * (1.0 + b_x.abs() / j.scale().max(f64::MIN_POSITIVE));
    let mut magnetizations = Vec::new();
    let mut states = Vec::new();
    for (s, e) in minima.iter().zip(&energies).rev() {
        if *e <= best + tie {
            magnetizations.push(s.magnetization);
            states.extend(s.states.iter().copied());
        }
    }
    GroundState { degenerate: magnetizations.len() > 1, magnetizations, states, energy: best }
}

/// All classical ground states at `b_x` by direct enumeration of 2^N
/// configurations.
pub fn brute_force_ground_states(j: &CouplingMatrix, b_x: f64) -> Result<(f64, Vec<SpinConfiguration>)> {
    let n = j.n();
    check_capacity(n)?;
    let energies: Vec<f64> = (0..1u32 << n).map(|b| interaction_energy(j, b) + b_x * magnetization(b, n) as f64).collect();
    let best = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let tie = tie_window(j) * (1.0 + b_x.abs() / j.scale().max(f64::MIN_POSITIVE));
    let states = (0..1u32 << n)
        .filter(|&b| energies[b as usize] <= best + tie)
        .map(|b| SpinConfiguration::new(b, n))
        .collect();
    Ok((best, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::{couplings_power_law, pinned_couplings, Provenance};
    use nalgebra::DMatrix;

    fn nearest_neighbour(n: usize, jj: f64) -> CouplingMatrix {
        let m = DMatrix::from_fn(n, n, |a, b| if a.abs_diff(b) == 1 { jj } else { 0.0 });
        CouplingMatrix::from_matrix(m, Provenance::PowerLaw, None).unwrap()
    }

    fn cfg(s: &str) -> SpinConfiguration {
        SpinConfiguration::parse(s).unwrap()
    }

    #[test]
    fn energy_examples() {
        let jj = 1.3;
        let j = nearest_neighbour(2, jj);
        assert_eq!(classical_energy(&j, 0.0, cfg("ud")), -jj);
        assert_eq!(classical_energy(&j, 0.7, cfg("dd")), jj - 2.0 * 0.7);
        let j = nearest_neighbour(4, jj);
        assert_eq!(classical_energy(&j, 0.0, cfg("dudu")), -3.0 * jj);
    }

    #[test]
    fn empty_sector_is_all_down() {
        let j = couplings_power_law(5, 1.0, 0.94).unwrap();
        let s = sector_minimum(&j, 0).unwrap();
        assert_eq!(s.states, vec![SpinConfiguration::all_down(5)]);
        let sum: f64 = (0..5).flat_map(|a| (a + 1..5).map(move |b| (a, b))).map(|(a, b)| j.get(a, b)).sum();
        assert!((s.energy - sum).abs() < 1e-12);
    }

    #[test]
    fn six_spin_wigner_crystals() {
        for j in [couplings_power_law(6, 1.0, 0.94).unwrap(), pinned_couplings(6).unwrap()] {
            let one = sector_minimum(&j, 1).unwrap();
            assert_eq!(one.states, vec![cfg("dduddd"), cfg("dddudd")]);
            let three = sector_minimum(&j, 3).unwrap();
            let mut neel = vec![cfg("dududu"), cfg("ududud")];
            neel.sort();
            assert_eq!(three.states, neel);
        }
    }

    #[test]
    fn sector_minima_match_direct_enumeration() {
        let j = couplings_power_law(9, 1.0, 1.3).unwrap();
        let minima = sector_minima(&j).unwrap();
        for k in 0..=9 {
            let best = (0..1u32 << 9)
                .filter(|b| b.count_ones() as usize == k)
                .map(|b| interaction_energy(&j, b))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(minima[k].energy, best);
        }
    }

    #[test]
    fn capacity_enforced() {
        let j = couplings_power_law(25, 1.0, 1.0).unwrap();
        assert!(matches!(sector_minima(&j), Err(Error::Capacity { cap: 24, .. })));
    }

    #[test]
    fn nearest_neighbour_transitions() {
        for n in [4, 6, 8] {
            let j = nearest_neighbour(n, 1.0);
            let s = staircase(&j, default_b_x_max(&j)).unwrap();
            assert_eq!(s.transitions, vec![1.0, 2.0], "n = {n}");
        }
    }

    #[test]
    fn kink_energy_balance() {
        // Néel → one extra down spin as a kink costs 2J of interaction energy.
        let j = nearest_neighbour(8, 1.0);
        let minima = sector_minima(&j).unwrap();
        assert_eq!(minima[3].energy - minima[4].energy, 2.0);
        let s = staircase(&j, 24.0).unwrap();
        assert_eq!(s.plateaus.len(), 3);
    }

    #[test]
    fn two_spin_transition() {
        let jj = 0.8;
        let j = nearest_neighbour(2, jj);
        let below = ground_state_magnetization(&j, 0.5 * jj).unwrap();
        assert_eq!(below.magnetizations, vec![0]);
        let above = ground_state_magnetization(&j, 1.5 * jj).unwrap();
        assert_eq!(above.magnetizations, vec![-2]);
        let at = ground_state_magnetization(&j, jj).unwrap();
        assert!(at.degenerate);
        assert_eq!(at.magnetizations, vec![0, -2]);
        assert_eq!(at.states.len(), 3);
    }

    #[test]
    fn strong_field_all_down() {
        let j = couplings_power_law(7, 1.0, 0.9).unwrap();
        let g = ground_state_magnetization(&j, 100.0).unwrap();
        assert_eq!(g.magnetizations, vec![-7]);
        assert_eq!(g.states, vec![SpinConfiguration::all_down(7)]);
        let g = ground_state_magnetization(&j, -100.0).unwrap();
        assert_eq!(g.magnetizations, vec![7]);
    }

    #[test]
    fn plateau_count_power_law() {
        for alpha in [0.5, 0.83, 0.94, 1.5] {
            for n in [4, 6, 8, 10] {
                let j = couplings_power_law(n, 1.0, alpha).unwrap();
                let s = staircase(&j, default_b_x_max(&j)).unwrap();
                assert_eq!(s.plateaus.len(), n / 2 + 1, "alpha {alpha}, n {n}");
                for w in s.plateaus.windows(2) {
                    assert!(w[1].magnetization < w[0].magnetization);
                    assert_eq!(w[0].b_x_interval[1], w[1].b_x_interval[0]);
                }
                assert_eq!(s.plateaus[0].b_x_interval[0], 0.0);
                assert_eq!(s.plateaus.last().unwrap().b_x_interval[1], s.b_x_max);
            }
        }
    }

    #[test]
    fn odd_chain_starts_at_minus_one() {
        let j = couplings_power_law(7, 1.0, 1.0).unwrap();
        let s = staircase(&j, default_b_x_max(&j)).unwrap();
        assert_eq!(s.plateaus[0].magnetization, -1);
        assert_eq!(s.plateaus.len(), 4);
    }

    #[test]
    fn mirror_ties_are_exact() {
        let j = couplings_power_law(8, 1.0, 0.94).unwrap();
        for bits in 0..1u32 << 8 {
            let s = SpinConfiguration::new(bits, 8);
            assert_eq!(interaction_energy(&j, s.bits), interaction_energy(&j, s.reversed().bits));
        }
    }

    #[test]
    fn window_truncates_staircase() {
        let j = couplings_power_law(6, 1.0, 0.94).unwrap();
        let s = staircase(&j, 1.0).unwrap();
        assert_eq!(s.plateaus.len(), 2);
        assert_eq!(s.plateaus[1].b_x_interval[1], 1.0);
    }
}
