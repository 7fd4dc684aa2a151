//! Command-line front end: builds the coupling matrix from the config, runs
//! the requested sweep across a worker pool and writes the output bundle.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::classical::{ground_state_from_minima, sector_minima, staircase_from_minima, SectorMinimum, StaircaseResult};
use crate::config::{CouplingSource, Experiment, ExperimentConfig};
use crate::couplings::{
    couplings_power_law, experimental_couplings, fit_alpha, CouplingMatrix, OperatingPoint,
};
use crate::error::{Error, Result};
use crate::measurement::{
    apply_detection_error_shots, average_magnetization_of, correct_detection_error, most_probable_of,
    phase_probabilities_of, sample_distribution, DetectionModel, DistributionRecord, PhaseProbability,
};
use crate::quantum::{
    b_y_grid, critical_gap_with, low_spectrum_with, run_trajectory_with, CriticalGap, IsingDiagonal, RampSchedule,
    Sector, SpectrumResult,
};
use crate::spin::SpinConfiguration;
use crate::trap::TrapConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "STAIRCASE_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "staircase-output";

#[derive(Debug, Parser)]
#[command(name = "staircase", version, about = "Long-range Ising staircase simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classical ground-state staircase and transition fields.
    StaircaseClassical(CommonArgs),
    /// Critical gap and low-lying levels versus B_x.
    SpectrumScan(CommonArgs),
    /// Transverse-field catalyst ramp at each B_x, with simulated readout.
    CatalystSweep(CommonArgs),
    /// Longitudinal ramp from the all-down state at each final B_x.
    ClassicalTrajectorySweep(CommonArgs),
    /// Minimum-energy arrangement in every fixed-magnetization sector.
    WignerTable(CommonArgs),
    /// Writes the resolved coupling matrix and its power-law fit.
    Couplings(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config entry, e.g. --set ramp.tau="2.4 ms". Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory; defaults to <output root>/<experiment>.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

impl Command {
    fn parts(&self) -> (Option<Experiment>, &CommonArgs) {
        match self {
            Command::StaircaseClassical(a) => (Some(Experiment::StaircaseClassical), a),
            Command::SpectrumScan(a) => (Some(Experiment::SpectrumScan), a),
            Command::CatalystSweep(a) => (Some(Experiment::CatalystSweep), a),
            Command::ClassicalTrajectorySweep(a) => (Some(Experiment::ClassicalTrajectorySweep), a),
            Command::WignerTable(a) => (Some(Experiment::WignerTable), a),
            Command::Couplings(a) => (None, a),
        }
    }
}

/// Builds the resolved, validated configuration for a command line.
pub fn resolve_config(experiment: Option<Experiment>, args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p, &args.set)?,
        None => ExperimentConfig::parse("", &args.set)?,
    };
    if let Some(e) = experiment {
        cfg.experiment = e;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig, args: &CommonArgs, name: &str) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    root.join(name)
}

/// Runs a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Capacity { .. } | Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let (experiment, args) = cli.command.parts();
    let cfg = resolve_config(experiment, args)?;
    if args.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let name = experiment.map(Experiment::name).unwrap_or("couplings");
    let out = output_dir(&cfg, args, name);
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let files = match experiment {
        Some(_) => run_experiment(&cfg, &out, workers)?,
        None => {
            let j = build_couplings(&cfg)?;
            let bundle = couplings_bundle(&cfg, &j)?;
            write_bundle(&out, &bundle)?
        }
    };
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

/// The coupling matrix described by the config.
pub fn build_couplings(cfg: &ExperimentConfig) -> Result<CouplingMatrix> {
    let c = &cfg.couplings;
    match c.source {
        CouplingSource::ModeDerived => {
            let trap = TrapConfig {
                n_ions: cfg.spins,
                f_z: c.axial_frequency.hz(),
                f_x: c.transverse_frequency.hz(),
                ..TrapConfig::default()
            };
            experimental_couplings(&trap, &OperatingPoint { mu_offset_hz: c.mu_offset.hz(), j_max: c.j_max.rad_s() })
        }
        CouplingSource::PowerLaw => couplings_power_law(cfg.spins, c.j_max.rad_s(), c.alpha),
        CouplingSource::File => {
            let path = c.path.as_ref().ok_or_else(|| Error::Config("couplings.path: required".into()))?;
            let j = CouplingMatrix::load(path)?;
            if j.n() != cfg.spins {
                return Err(Error::Config(format!(
                    "couplings.path: matrix has {} spins but spins = {}",
                    j.n(),
                    cfg.spins
                )));
            }
            Ok(j)
        }
    }
}

/// Floats print in shortest round-trip form, switching to exponent
/// notation outside a readable range.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn states_field(states: &[SpinConfiguration]) -> String {
    states.iter().map(|s| s.to_ud_string()).collect::<Vec<_>>().join(" ")
}

struct Bundle {
    files: Vec<(String, String)>,
}

impl Bundle {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self { files: vec![("config.toml".into(), cfg.to_toml())] }
    }

    fn add(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    fn json(&mut self, name: impl Into<String>, value: &impl Serialize) -> Result<()> {
        self.add(name, serde_json::to_string_pretty(value)? + "\n");
        Ok(())
    }
}

/// Writes every file through a temporary name so no partial file is left
/// under its final name.
fn write_bundle(dir: &Path, bundle: &Bundle) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (name, contents) in &bundle.files {
        let path = dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct CouplingSummary {
    alpha_fit: Option<f64>,
    j_max_fit_rad_s: Option<f64>,
}

fn couplings_bundle(cfg: &ExperimentConfig, j: &CouplingMatrix) -> Result<Bundle> {
    let mut b = Bundle::new(cfg);
    b.json("couplings.json", &crate::couplings::CouplingFile::from(j))?;
    let fit = if j.n() >= 3 { fit_alpha(j).ok() } else { None };
    b.json(
        "couplings_fit.json",
        &CouplingSummary { alpha_fit: fit.map(|f| f.1), j_max_fit_rad_s: fit.map(|f| f.0) },
    )?;
    Ok(b)
}

/// Runs one experiment and writes its bundle into `out`; returns the paths
/// written.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    cfg.resolve();
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let bundle = pool.install(|| -> Result<Bundle> {
        let j = build_couplings(&cfg)?;
        let mut bundle = couplings_bundle(&cfg, &j)?;
        match cfg.experiment {
            Experiment::StaircaseClassical => staircase_classical(&cfg, &j, &mut bundle)?,
            Experiment::WignerTable => wigner_table(&j, &mut bundle)?,
            Experiment::SpectrumScan => spectrum_scan(&cfg, &j, &mut bundle)?,
            Experiment::CatalystSweep | Experiment::ClassicalTrajectorySweep => trajectory_sweep(&cfg, &j, &mut bundle)?,
        }
        Ok(bundle)
    })?;
    write_bundle(out, &bundle)
}

fn classical_staircase(cfg: &ExperimentConfig, j: &CouplingMatrix) -> Result<(Vec<SectorMinimum>, StaircaseResult)> {
    let minima = sector_minima(j)?;
    let b_x_max = cfg.sweep.b_x_max.map(|f| f.rad_s(j.j_max())).unwrap_or(3.0 * j.j_max() * cfg.spins as f64);
    let st = staircase_from_minima(j, &minima, b_x_max)?;
    Ok((minima, st))
}

fn staircase_classical(cfg: &ExperimentConfig, j: &CouplingMatrix, b: &mut Bundle) -> Result<()> {
    let (minima, st) = classical_staircase(cfg, j)?;
    let jm = j.j_max();
    b.json("staircase.json", &st)?;

    let mut csv = String::from("b_x_jmax,b_x_rad_s,m_x\n");
    for bx in cfg.b_x_values(jm) {
        let gs = ground_state_from_minima(j, &minima, bx);
        writeln!(csv, "{},{},{}", fmt_f64(bx / jm), fmt_f64(bx), gs.magnetization()).unwrap();
    }
    b.add("staircase.csv", csv);

    let mut csv = String::from(
        "plateau,b_x_from_jmax,b_x_to_jmax,b_x_from_rad_s,b_x_to_rad_s,m_x,sector_energy_jmax,sector_energy_rad_s,ground_states\n",
    );
    for (k, p) in st.plateaus.iter().enumerate() {
        let [lo, hi] = p.b_x_interval;
        writeln!(
            csv,
            "{k},{},{},{},{},{},{},{},{}",
            fmt_f64(lo / jm),
            fmt_f64(hi / jm),
            fmt_f64(lo),
            fmt_f64(hi),
            p.magnetization,
            fmt_f64(p.sector_energy / jm),
            fmt_f64(p.sector_energy),
            states_field(&p.ground_states)
        )
        .unwrap();
    }
    b.add("plateaus.csv", csv);
    Ok(())
}

fn wigner_table(j: &CouplingMatrix, b: &mut Bundle) -> Result<()> {
    let minima = sector_minima(j)?;
    let jm = j.j_max();
    b.json("wigner.json", &minima)?;
    let mut csv = String::from("n_up,m_x,energy_jmax,energy_rad_s,degeneracy,states\n");
    for m in &minima {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            m.n_up,
            m.magnetization,
            fmt_f64(m.energy / jm),
            fmt_f64(m.energy),
            m.states.len(),
            states_field(&m.states)
        )
        .unwrap();
    }
    b.add("wigner.csv", csv);
    Ok(())
}

#[derive(Serialize)]
struct SpectrumPoint {
    index: usize,
    b_x_jmax: f64,
    critical_gap: CriticalGap,
    sector: Sector,
    /// Levels at B_y = 0 over the full space.
    classical_levels: SpectrumResult,
    classical_m_x: i32,
}

fn spectrum_scan(cfg: &ExperimentConfig, j: &CouplingMatrix, b: &mut Bundle) -> Result<()> {
    let jm = j.j_max();
    let mut sector = cfg.spectrum.sector;
    if sector == Sector::ReflectionEven && !j.is_palindromic(1e-9) {
        log::warn!("coupling matrix is not mirror symmetric; scanning the full space");
        sector = Sector::Full;
    }
    let diag = IsingDiagonal::new(j)?;
    let minima = sector_minima(j)?;
    let grid = b_y_grid(cfg.spectrum.b_y_max.rad_s(jm), cfg.spectrum.b_y_points);
    let levels = cfg.spectrum.levels.min(1 << cfg.spins);
    let points: Vec<(usize, f64)> = cfg.b_x_values(jm).into_iter().enumerate().collect();
    let results = points
        .par_iter()
        .map(|&(index, bx)| -> Result<SpectrumPoint> {
            Ok(SpectrumPoint {
                index,
                b_x_jmax: bx / jm,
                critical_gap: critical_gap_with(&diag, bx, &grid, sector, 1e-3 * jm)?,
                sector,
                classical_levels: low_spectrum_with(&diag, bx, 0.0, levels, Sector::Full)?,
                classical_m_x: ground_state_from_minima(j, &minima, bx).magnetization(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gap = String::from("b_x_jmax,b_x_rad_s,delta_c_jmax,delta_c_rad_s,b_y_at_min_jmax,b_y_at_min_rad_s,classical_m_x\n");
    let mut levels = String::from("b_x_jmax,b_x_rad_s,level,energy_jmax,energy_rad_s\n");
    for p in &results {
        let c = &p.critical_gap;
        writeln!(
            gap,
            "{},{},{},{},{},{},{}",
            fmt_f64(c.b_x / jm),
            fmt_f64(c.b_x),
            fmt_f64(c.delta_c / jm),
            fmt_f64(c.delta_c),
            fmt_f64(c.b_y_at_min / jm),
            fmt_f64(c.b_y_at_min),
            p.classical_m_x
        )
        .unwrap();
        for (k, e) in p.classical_levels.levels.iter().enumerate() {
            writeln!(levels, "{},{},{k},{},{}", fmt_f64(c.b_x / jm), fmt_f64(c.b_x), fmt_f64(e / jm), fmt_f64(*e)).unwrap();
        }
        b.json(format!("points/spectrum_{:03}.json", p.index), p)?;
    }
    b.add("gap.csv", gap);
    b.add("spectrum.csv", levels);
    Ok(())
}

/// Everything recorded for one ramp endpoint.
#[derive(Serialize)]
pub struct TrajectoryPoint {
    pub index: usize,
    pub b_x_rad_s: f64,
    pub b_x_jmax: f64,
    pub schedule: RampSchedule,
    pub seed: u64,
    pub theory_m_x: i32,
    pub ground_states: Vec<SpinConfiguration>,
    pub ideal_mean_m_x: f64,
    pub ideal_most_probable: Vec<SpinConfiguration>,
    pub ground_state_probability_ideal: f64,
    pub ground_state_probability_measured: f64,
    pub measured_mean_m_x: f64,
    pub measured_most_probable: Vec<SpinConfiguration>,
    pub phases_ideal: Vec<PhaseProbability>,
    pub phases_measured: Vec<PhaseProbability>,
    pub shots: DistributionRecord,
    pub detected_shots: Option<DistributionRecord>,
    pub corrected: Option<DistributionRecord>,
}

/// Ramp schedule the config prescribes for a sweep endpoint.
pub fn schedule_for(cfg: &ExperimentConfig, b_x: f64, j_max: f64) -> RampSchedule {
    let r = &cfg.ramp;
    match cfg.experiment {
        Experiment::ClassicalTrajectorySweep => {
            RampSchedule::classical_field_ramp(r.b_x_start.rad_s(j_max), b_x, r.duration.0)
        }
        _ => RampSchedule::quantum_catalyst(b_x, r.b_y0.rad_s(j_max), r.tau.0, r.duration.0),
    }
}

/// Runs the ramp, readout and statistics for every sweep point, in order.
pub fn trajectory_points(cfg: &ExperimentConfig, j: &CouplingMatrix) -> Result<(StaircaseResult, Vec<TrajectoryPoint>)> {
    let jm = j.j_max();
    let (minima, st) = classical_staircase(cfg, j)?;
    let diag = IsingDiagonal::new(j)?;
    let model = DetectionModel::new(cfg.measurement.epsilon, cfg.spins)?;
    let n = cfg.spins;
    let points: Vec<(usize, f64)> = cfg.b_x_values(jm).into_iter().enumerate().collect();
    let results = points
        .par_iter()
        .map(|&(index, bx)| -> Result<TrajectoryPoint> {
            let schedule = schedule_for(cfg, bx, jm);
            let psi = run_trajectory_with(&diag, &schedule, cfg.ramp.dt_max.0)?;
            let ideal = psi.probabilities();
            let gs = ground_state_from_minima(j, &minima, bx);

            let stream = 2 * index as u64;
            let shots = sample_distribution(&ideal, n, cfg.measurement.n_shots, cfg.seed, stream)?;
            let (measured, detected, corrected) = if cfg.measurement.detection_error {
                let noisy = apply_detection_error_shots(&shots, &model, cfg.seed, stream + 1)?;
                let c = correct_detection_error(&noisy.probabilities(), &model)?;
                let rec = DistributionRecord::corrected(n, noisy.n_shots(), Some(cfg.seed), &c);
                (c.probabilities, Some(noisy.to_record()), Some(rec))
            } else {
                (shots.probabilities(), None, None)
            };
            let pool = |p: &[f64]| gs.states.iter().map(|s| p[s.bits as usize]).sum::<f64>();
            Ok(TrajectoryPoint {
                index,
                b_x_rad_s: bx,
                b_x_jmax: bx / jm,
                schedule,
                seed: cfg.seed,
                theory_m_x: gs.magnetization(),
                ideal_mean_m_x: average_magnetization_of(&ideal, n),
                ideal_most_probable: most_probable_of(&ideal, n, 1e-12).0,
                ground_state_probability_ideal: pool(&ideal),
                ground_state_probability_measured: pool(&measured),
                measured_mean_m_x: average_magnetization_of(&measured, n),
                measured_most_probable: most_probable_of(&measured, n, 0.0).0,
                phases_ideal: phase_probabilities_of(&ideal, &st),
                phases_measured: phase_probabilities_of(&measured, &st),
                ground_states: gs.states,
                shots: shots.to_record(),
                detected_shots: detected,
                corrected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((st, results))
}

fn trajectory_sweep(cfg: &ExperimentConfig, j: &CouplingMatrix, b: &mut Bundle) -> Result<()> {
    let (st, points) = trajectory_points(cfg, j)?;
    b.json("staircase.json", &st)?;
    let mut mag = String::from(
        "b_x_jmax,b_x_rad_s,theory_m_x,ideal_mean_m_x,measured_mean_m_x,most_probable_m_x,most_probable_states,\
ideal_most_probable_m_x,ground_state_probability_ideal,ground_state_probability_measured\n",
    );
    let mut phases = String::from("b_x_jmax,b_x_rad_s,plateau,m_x,probability_ideal,probability_measured\n");
    for p in &points {
        let m_of = |s: &[SpinConfiguration]| s.first().map(|c| c.magnetization()).unwrap_or(0);
        writeln!(
            mag,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(p.b_x_jmax),
            fmt_f64(p.b_x_rad_s),
            p.theory_m_x,
            fmt_f64(p.ideal_mean_m_x),
            fmt_f64(p.measured_mean_m_x),
            m_of(&p.measured_most_probable),
            states_field(&p.measured_most_probable),
            m_of(&p.ideal_most_probable),
            fmt_f64(p.ground_state_probability_ideal),
            fmt_f64(p.ground_state_probability_measured)
        )
        .unwrap();
        for (a, m) in p.phases_ideal.iter().zip(&p.phases_measured) {
            writeln!(
                phases,
                "{},{},{},{},{},{}",
                fmt_f64(p.b_x_jmax),
                fmt_f64(p.b_x_rad_s),
                a.plateau,
                a.magnetization,
                fmt_f64(a.probability),
                fmt_f64(m.probability)
            )
            .unwrap();
        }
        b.json(format!("points/point_{:03}.json", p.index), p)?;
    }
    b.add("magnetization.csv", mag);
    b.add("phases.csv", phases);
    Ok(())
}
