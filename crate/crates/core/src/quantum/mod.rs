//! Full state-vector treatment of the transverse-field model.

mod dynamics;
mod hamiltonian;
mod spectrum;

pub use dynamics::{
    evolve, evolve_observed, evolve_with, initial_state, run_trajectory, run_trajectory_with, FieldProfile,
    QuantumState, RampKind, RampSchedule, DEFAULT_DT_MAX, DEFAULT_DURATION, DEFAULT_START_FIELD_JMAX, DEFAULT_TAU,
};
pub use hamiltonian::{build_hamiltonian, Hamiltonian, IsingDiagonal, Sector, DYNAMICS_CAP};
pub use spectrum::{
    b_y_grid, critical_gap, critical_gap_with, ground_manifold, low_spectrum, low_spectrum_with, lowest_eigenpairs,
    CriticalGap, Eigenpairs, SpectrumResult, DENSE_SPECTRUM_MAX_SPINS,
};
