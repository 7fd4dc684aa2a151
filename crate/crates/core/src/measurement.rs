//! Readout emulation: shot sampling, detection errors and their correction,
//! and summary statistics of measured distributions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classical::StaircaseResult;
use crate::error::{Error, Result};
use crate::quantum::QuantumState;
use crate::spin::{magnetization, SpinConfiguration};

pub const DEFAULT_EPSILON: f64 = 0.07;
pub const DEFAULT_SHOTS: u64 = 4000;
/// Largest register for dense probability vectors.
pub const CORRECTION_CAP: usize = 14;
/// Clamped mass above which a correction is reported as ill-conditioned.
pub const CLAMP_WARNING: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub epsilon: f64,
    pub n: usize,
}

impl DetectionModel {
    pub fn new(epsilon: f64, n: usize) -> Result<Self> {
        if !(0.0..0.5).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("detection error must lie in [0, 0.5), got {epsilon}")));
        }
        if n > CORRECTION_CAP {
            return Err(Error::Capacity { what: "probability vector", n, cap: CORRECTION_CAP });
        }
        Ok(Self { epsilon, n })
    }

    /// Single-spin confusion matrix; entry [detected][true].
    pub fn confusion(&self) -> [[f64; 2]; 2] {
        let e = self.epsilon;
        [[1.0 - e, e], [e, 1.0 - e]]
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let e = self.epsilon;
        let d = 1.0 - 2.0 * e;
        [[(1.0 - e) / d, -e / d], [-e / d, (1.0 - e) / d]]
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != 1 << self.n {
            return Err(Error::InvalidArgument(format!(
                "probability vector of length {} does not match {} spins",
                p.len(),
                self.n
            )));
        }
        Ok(())
    }
}

/// Applies a 2×2 matrix to every bit of a 2^N vector in turn.
fn apply_per_bit(p: &[f64], n: usize, m: [[f64; 2]; 2]) -> Vec<f64> {
    let mut v = p.to_vec();
    for i in 0..n {
        let bit = 1usize << i;
        for s in 0..v.len() {
            if s & bit == 0 {
                let (lo, hi) = (v[s], v[s | bit]);
                v[s] = m[0][0] * lo + m[0][1] * hi;
                v[s | bit] = m[1][0] * lo + m[1][1] * hi;
            }
        }
    }
    v
}

/// Forward detection model on an exact probability vector.
pub fn apply_detection_error(p: &[f64], model: &DetectionModel) -> Result<Vec<f64>> {
    model.check(p)?;
    Ok(apply_per_bit(p, model.n, model.confusion()))
}

/// Inverse detection model without clamping; entries may be negative.
pub fn invert_detection_error(p: &[f64], model: &DetectionModel) -> Result<Vec<f64>> {
    model.check(p)?;
    Ok(apply_per_bit(p, model.n, model.inverse()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correction {
    pub probabilities: Vec<f64>,
    /// Total negative mass removed before renormalization.
    pub clamped_mass: f64,
}

impl Correction {
    pub fn ill_conditioned(&self) -> bool {
        self.clamped_mass > CLAMP_WARNING
    }
}

/// Inverse detection model, then negatives clamped to zero and renormalized.
pub fn correct_detection_error(p: &[f64], model: &DetectionModel) -> Result<Correction> {
    let raw = invert_detection_error(p, model)?;
    let clamped_mass: f64 = raw.iter().filter(|&&x| x < 0.0).map(|x| -x).sum();
    let mut probabilities: Vec<f64> = raw.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = probabilities.iter().sum();
    if total > 0.0 {
        probabilities.iter_mut().for_each(|x| *x /= total);
    }
    if clamped_mass > CLAMP_WARNING {
        log::warn!("ill-conditioned detection correction: clamped mass {clamped_mass:.3}");
    }
    Ok(Correction { probabilities, clamped_mass })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotHistogram {
    n: usize,
    counts: BTreeMap<u32, u64>,
    n_shots: u64,
    seed: u64,
}

impl ShotHistogram {
    pub fn from_counts(n: usize, counts: BTreeMap<u32, u64>, seed: u64) -> Result<Self> {
        let limit = if n >= 32 { u32::MAX } else { (1u32 << n) - 1 };
        if let Some((&bits, _)) = counts.iter().find(|(&b, _)| b > limit) {
            return Err(Error::InvalidArgument(format!("bitmask {bits} out of range for {n} spins")));
        }
        let counts: BTreeMap<u32, u64> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        let n_shots = counts.values().sum();
        Ok(Self { n, counts, n_shots, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_shots(&self) -> u64 {
        self.n_shots
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counts(&self) -> &BTreeMap<u32, u64> {
        &self.counts
    }

    pub fn count(&self, config: SpinConfiguration) -> u64 {
        self.counts.get(&config.bits).copied().unwrap_or(0)
    }

    /// Dense empirical distribution counts / n_shots.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = vec![0.0; 1 << self.n];
        if self.n_shots > 0 {
            for (&b, &c) in &self.counts {
                p[b as usize] = c as f64 / self.n_shots as f64;
            }
        }
        p
    }

    pub fn to_record(&self) -> DistributionRecord {
        DistributionRecord {
            n: self.n,
            n_shots: self.n_shots,
            seed: Some(self.seed),
            corrected: false,
            clamped_mass: 0.0,
            counts: self.counts.clone(),
            probabilities: self
                .counts
                .iter()
                .map(|(&b, &c)| (b, c as f64 / self.n_shots as f64))
                .collect(),
        }
    }

    pub fn from_record(r: &DistributionRecord) -> Result<Self> {
        if r.corrected {
            return Err(Error::InvalidArgument("record holds a corrected distribution, not shot counts".into()));
        }
        let seed = r.seed.ok_or_else(|| Error::InvalidArgument("histogram record without seed".into()))?;
        let h = Self::from_counts(r.n, r.counts.clone(), seed)?;
        if h.n_shots != r.n_shots {
            return Err(Error::InvalidArgument(format!("counts sum to {}, record says {}", h.n_shots, r.n_shots)));
        }
        Ok(h)
    }
}

/// Shared on-disk schema for shot histograms and corrected distributions.
/// Map keys are bitmasks (bit i set = spin i up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionRecord {
    pub n: usize,
    pub n_shots: u64,
    pub seed: Option<u64>,
    pub corrected: bool,
    pub clamped_mass: f64,
    pub counts: BTreeMap<u32, u64>,
    pub probabilities: BTreeMap<u32, f64>,
}

impl DistributionRecord {
    pub fn corrected(n: usize, n_shots: u64, seed: Option<u64>, c: &Correction) -> Self {
        Self {
            n,
            n_shots,
            seed,
            corrected: true,
            clamped_mass: c.clamped_mass,
            counts: BTreeMap::new(),
            probabilities: c
                .probabilities
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(b, &p)| (b as u32, p))
                .collect(),
        }
    }

    pub fn dense_probabilities(&self) -> Vec<f64> {
        let mut p = vec![0.0; 1 << self.n];
        for (&b, &x) in &self.probabilities {
            p[b as usize] = x;
        }
        p
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per non-zero entry: bitmask, configuration, m_x, count, probability.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "bitmask,configuration,m_x,count,probability")?;
        for (&b, &p) in &self.probabilities {
            let cfg = SpinConfiguration::new(b, self.n);
            let count = self.counts.get(&b).copied().unwrap_or(0);
            writeln!(w, "{b},{},{},{count},{p:.12e}", cfg.to_ud_string(), cfg.magnetization())?;
        }
        Ok(())
    }
}

fn sampler(probabilities: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(probabilities.iter().map(|&p| p.max(0.0)))
        .map_err(|e| Error::InvalidArgument(format!("cannot sample from distribution: {e}")))
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// i.i.d. draws from a probability vector on sub-stream `stream` of `seed`.
pub fn sample_distribution(probabilities: &[f64], n: usize, n_shots: u64, seed: u64, stream: u64) -> Result<ShotHistogram> {
    if probabilities.len() != 1 << n {
        return Err(Error::InvalidArgument("probability vector length does not match spin count".into()));
    }
    let dist = sampler(probabilities)?;
    let mut r = rng(seed, stream);
    let mut counts = BTreeMap::new();
    for _ in 0..n_shots {
        *counts.entry(dist.sample(&mut r) as u32).or_insert(0) += 1;
    }
    ShotHistogram::from_counts(n, counts, seed)
}

/// Projective measurement of `psi` in the spin basis, repeated `n_shots` times.
pub fn sample_shots(psi: &QuantumState, n_shots: u64, seed: u64) -> Result<ShotHistogram> {
    sample_shots_stream(psi, n_shots, seed, 0)
}

pub fn sample_shots_stream(psi: &QuantumState, n_shots: u64, seed: u64, stream: u64) -> Result<ShotHistogram> {
    sample_distribution(&psi.probabilities(), psi.n, n_shots, seed, stream)
}

/// Flips every recorded bit independently with probability ε.
pub fn apply_detection_error_shots(h: &ShotHistogram, model: &DetectionModel, seed: u64, stream: u64) -> Result<ShotHistogram> {
    if h.n != model.n {
        return Err(Error::InvalidArgument(format!("histogram has {} spins, model {}", h.n, model.n)));
    }
    let mut r = rng(seed, stream);
    let mut counts = BTreeMap::new();
    for (&bits, &c) in &h.counts {
        for _ in 0..c {
            let mut out = bits;
            for i in 0..h.n {
                if r.random::<f64>() < model.epsilon {
                    out ^= 1 << i;
                }
            }
            *counts.entry(out).or_insert(0) += 1;
        }
    }
    ShotHistogram::from_counts(h.n, counts, seed)
}

/// All tied maximizers of the histogram and their shared count.
pub fn most_probable_state(h: &ShotHistogram) -> (Vec<SpinConfiguration>, u64) {
    let max = h.counts.values().copied().max().unwrap_or(0);
    let states = h
        .counts
        .iter()
        .filter(|&(_, &c)| c == max && c > 0)
        .map(|(&b, _)| SpinConfiguration::new(b, h.n))
        .collect();
    (states, max)
}

/// Maximizers of a probability vector, with ties within `tol` pooled.
pub fn most_probable_of(probabilities: &[f64], n: usize, tol: f64) -> (Vec<SpinConfiguration>, f64) {
    let max = probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let states = probabilities
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= max - tol)
        .map(|(b, _)| SpinConfiguration::new(b as u32, n))
        .collect();
    (states, max)
}

pub fn average_magnetization(h: &ShotHistogram) -> f64 {
    if h.n_shots == 0 {
        return 0.0;
    }
    let total: i64 = h.counts.iter().map(|(&b, &c)| magnetization(b, h.n) as i64 * c as i64).sum();
    total as f64 / h.n_shots as f64
}

pub fn average_magnetization_of(probabilities: &[f64], n: usize) -> f64 {
    probabilities
        .iter()
        .enumerate()
        .map(|(b, p)| p * magnetization(b as u32, n) as f64)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseProbability {
    pub plateau: usize,
    pub magnetization: i32,
    pub probability: f64,
}

/// Probability pooled over each plateau's classical ground-state set.
pub fn phase_probabilities_of(probabilities: &[f64], staircase: &StaircaseResult) -> Vec<PhaseProbability> {
    staircase
        .plateaus
        .iter()
        .enumerate()
        .map(|(k, p)| PhaseProbability {
            plateau: k,
            magnetization: p.magnetization,
            probability: p.ground_states.iter().map(|s| probabilities[s.bits as usize]).sum(),
        })
        .collect()
}

pub fn phase_probabilities(h: &ShotHistogram, staircase: &StaircaseResult) -> Result<Vec<PhaseProbability>> {
    if h.n != staircase.n {
        return Err(Error::InvalidArgument(format!("histogram has {} spins, staircase {}", h.n, staircase.n)));
    }
    Ok(phase_probabilities_of(&h.probabilities(), staircase))
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::staircase;
    use crate::couplings::couplings_power_law;

    fn delta(n: usize, bits: u32) -> Vec<f64> {
        let mut p = vec![0.0; 1 << n];
        p[bits as usize] = 1.0;
        p
    }

    #[test]
    fn single_spin_error() {
        let m = DetectionModel::new(0.07, 1).unwrap();
        let p = apply_detection_error(&delta(1, 1), &m).unwrap();
        assert!((p[1] - 0.93).abs() < 1e-15 && (p[0] - 0.07).abs() < 1e-15);
    }

    #[test]
    fn two_spin_error() {
        let m = DetectionModel::new(0.07, 2).unwrap();
        let p = apply_detection_error(&delta(2, 0b11), &m).unwrap();
        assert!((p[3] - 0.8649).abs() < 1e-12);
        assert!((p[1] - 0.0651).abs() < 1e-12 && (p[2] - 0.0651).abs() < 1e-12);
        assert!((p[0] - 0.0049).abs() < 1e-12);
    }

    #[test]
    fn zero_error_is_identity() {
        let m = DetectionModel::new(0.0, 3).unwrap();
        let p: Vec<f64> = (1..=8).map(|x| x as f64 / 36.0).collect();
        assert_eq!(apply_detection_error(&p, &m).unwrap(), p);
        assert_eq!(correct_detection_error(&p, &m).unwrap().probabilities, p);
    }

    #[test]
    fn model_bounds() {
        assert!(DetectionModel::new(0.5, 2).is_err());
        assert!(DetectionModel::new(-0.1, 2).is_err());
        assert!(matches!(DetectionModel::new(0.1, 15), Err(Error::Capacity { cap: 14, .. })));
        let m = DetectionModel::new(0.3, 1).unwrap();
        let (c, i) = (m.confusion(), m.inverse());
        for r in 0..2 {
            for k in 0..2 {
                let v: f64 = (0..2).map(|x| c[r][x] * i[x][k]).sum();
                assert!((v - if r == k { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn basis_state_sampling() {
        let psi = QuantumState::basis(SpinConfiguration::new(0b101, 3));
        let h = sample_shots(&psi, 500, 9).unwrap();
        assert_eq!(h.counts().len(), 1);
        assert_eq!(h.count(SpinConfiguration::new(0b101, 3)), 500);
        assert_eq!(most_probable_state(&h), (vec![SpinConfiguration::new(0b101, 3)], 500));
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let a = sample_distribution(&p, 2, 4000, 42, 3).unwrap();
        let b = sample_distribution(&p, 2, 4000, 42, 3).unwrap();
        let c = sample_distribution(&p, 2, 4000, 42, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ties_are_all_returned() {
        let counts = BTreeMap::from([(0b01, 2000), (0b10, 2000)]);
        let h = ShotHistogram::from_counts(2, counts, 0).unwrap();
        let (states, c) = most_probable_state(&h);
        assert_eq!(c, 2000);
        assert_eq!(states.len(), 2);
    }

    #[test]
    fn magnetization_examples() {
        let down = ShotHistogram::from_counts(4, BTreeMap::from([(0, 10)]), 0).unwrap();
        assert_eq!(average_magnetization(&down), -4.0);
        let uniform = vec![1.0 / 16.0; 16];
        assert!(average_magnetization_of(&uniform, 4).abs() < 1e-15);
        let neel = ShotHistogram::from_counts(6, BTreeMap::from([(0b010101, 7), (0b101010, 7)]), 0).unwrap();
        assert_eq!(average_magnetization(&neel), 0.0);
    }

    #[test]
    fn phase_probability_of_ground_state() {
        let j = couplings_power_law(6, 1.0, 0.94).unwrap();
        let st = staircase(&j, 10.0).unwrap();
        let gs = st.plateaus[1].ground_states[0];
        let phases = phase_probabilities_of(&delta(6, gs.bits), &st);
        for ph in phases {
            assert_eq!(ph.probability, if ph.plateau == 1 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn record_round_trip() {
        let h = sample_distribution(&[0.5, 0.25, 0.25, 0.0], 2, 100, 5, 0).unwrap();
        let rec = h.to_record();
        let text = serde_json::to_string(&rec).unwrap();
        let back: DistributionRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(ShotHistogram::from_record(&back).unwrap(), h);

        let m = DetectionModel::new(0.07, 2).unwrap();
        let c = correct_detection_error(&h.probabilities(), &m).unwrap();
        let rec = DistributionRecord::corrected(2, 100, Some(5), &c);
        let back: DistributionRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert!(back.corrected);
        assert_eq!(back.dense_probabilities(), c.probabilities);
        assert!(ShotHistogram::from_record(&back).is_err());
    }
}
