use nalgebra::DMatrix;
use proptest::prelude::*;

use staircase::classical::{
    brute_force_ground_states, classical_energy, ground_state_magnetization, interaction_energy, sector_minima,
    staircase,
};
use staircase::couplings::{couplings_power_law, CouplingMatrix, Provenance};
use staircase::measurement::{apply_detection_error, correct_detection_error, invert_detection_error, DetectionModel};
use staircase::quantum::{evolve, low_spectrum, QuantumState, RampSchedule};
use staircase::SpinConfiguration;

fn symmetric(n: usize, upper: &[f64]) -> CouplingMatrix {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for a in 0..n {
        for b in a + 1..n {
            m[(a, b)] = upper[k];
            m[(b, a)] = upper[k];
            k += 1;
        }
    }
    CouplingMatrix::from_matrix(m, Provenance::PowerLaw, None).unwrap()
}

fn couplings(max_n: usize) -> impl Strategy<Value = CouplingMatrix> {
    (2..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.01f64..1.0, n * (n - 1) / 2).prop_map(move |u| symmetric(n, &u))
    })
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1 << n).prop_filter_map("non-zero", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ground_state_agrees_with_enumeration(j in couplings(9), frac in 0.0f64..1.5) {
        let bx = frac * j.scale() * j.n() as f64;
        let gs = ground_state_magnetization(&j, bx).unwrap();
        let (e, states) = brute_force_ground_states(&j, bx).unwrap();
        prop_assert!((gs.energy - e).abs() <= 1e-9 * (1.0 + e.abs()));
        let mut a = gs.states.clone();
        let mut b = states.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn interaction_energy_is_flip_invariant(j in couplings(10), bits in any::<u32>()) {
        let n = j.n();
        let s = SpinConfiguration::new(bits & ((1u32 << n) - 1), n);
        let e = interaction_energy(&j, s.bits);
        prop_assert!((interaction_energy(&j, s.flipped().bits) - e).abs() <= 1e-12 * (1.0 + e.abs()));
    }

    #[test]
    fn power_law_energy_is_mirror_invariant(n in 2usize..12, alpha in 0.1f64..3.0, bits in any::<u32>(), bx in 0.0f64..5.0) {
        let j = couplings_power_law(n, 1.0, alpha).unwrap();
        let s = SpinConfiguration::new(bits & ((1u32 << n) - 1), n);
        let e = classical_energy(&j, bx, s);
        prop_assert!((classical_energy(&j, bx, s.reversed()) - e).abs() <= 1e-12 * (1.0 + e.abs()));
    }

    #[test]
    fn staircase_magnetization_is_monotone(j in couplings(10)) {
        let st = staircase(&j, 3.0 * j.scale() * j.n() as f64).unwrap();
        prop_assert!(st.plateaus.windows(2).all(|w| w[1].magnetization < w[0].magnetization));
        prop_assert!(st.transitions.windows(2).all(|w| w[1] > w[0]));
        let minima = sector_minima(&j).unwrap();
        prop_assert_eq!(minima.len(), j.n() + 1);
    }

    #[test]
    fn detection_round_trip(n in 1usize..7, eps in 0.0f64..0.45, seed in any::<u64>()) {
        let model = DetectionModel::new(eps, n).unwrap();
        let p = {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..1 << n).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let forward = apply_detection_error(&p, &model).unwrap();
        prop_assert!((forward.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(forward.iter().all(|&x| x >= 0.0));
        let back = invert_detection_error(&forward, &model).unwrap();
        for (a, b) in p.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn corrected_distribution_is_normalised(p in distribution(4), eps in 0.0f64..0.45) {
        let model = DetectionModel::new(eps, 4).unwrap();
        let c = correct_detection_error(&p, &model).unwrap();
        prop_assert!((c.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(c.probabilities.iter().all(|&x| x >= 0.0));
        prop_assert!(c.clamped_mass >= 0.0);
    }

    #[test]
    fn spectrum_is_sorted_and_bounded(j in couplings(7), bx in 0.0f64..3.0, by in 0.0f64..3.0) {
        let s = low_spectrum(&j, bx, by, 4).unwrap();
        prop_assert!(s.levels.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        prop_assert!((s.gap - (s.levels[1] - s.levels[0])).abs() < 1e-12);
        // The ground energy cannot exceed the lowest diagonal entry.
        let (e_cl, _) = brute_force_ground_states(&j, bx).unwrap();
        prop_assert!(s.levels[0] <= e_cl + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evolution_is_unitary(j in couplings(5), bx in 0.0f64..2.0, bits in any::<u32>()) {
        let n = j.n();
        let psi0 = QuantumState::basis(SpinConfiguration::new(bits & ((1u32 << n) - 1), n));
        let sched = RampSchedule::quantum_catalyst(bx, 3.0, 0.5, 1.0);
        let psi = evolve(&psi0, &j, &sched, 0.01).unwrap();
        prop_assert!((psi.norm() - 1.0).abs() < 1e-9);
    }
}
