//! Experiment protocols: steady-state loading, schedule builders, and the full
//! load → propagate → detect pipeline.

use serde::{Deserialize, Serialize};

use crate::analysis::{kinetic_temperature, mean_velocity_from_tof, temperature_from_mean_velocity};
use crate::detection::{transport_and_bin, DetectionGeometry, TofSignal};
use crate::dynamics::{
    IntegratorConfig, LossModelConfig, MoleculeState, PropagationStats, Simulation, Status, StatusCounts,
};
use crate::error::{invalid, Result, TrapError};
use crate::fields::{Aabb, ElectrodeConfig, TrapGeometry};
use crate::num::{consts, Real};
use crate::rng::{Domain, Stream};
use crate::schedule::RampSchedule;
use crate::stark::{effective_dipole, trap_depth_velocity, RotState, Species};
use crate::vec3::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig<T> {
    /// Reservoir temperature, K.
    pub flux_temperature: T,
    /// Guiding field, sets the velocity cutoff. V/m
    pub e_load: T,
    pub n_molecules: usize,
    pub state_mixture: Vec<(RotState, T)>,
}

impl<T: Real> Default for SourceConfig<T> {
    fn default() -> Self {
        Self {
            flux_temperature: T::lit(77.0),
            e_load: T::lit(2e6),
            n_molecules: 10_000,
            state_mixture: vec![(RotState { j: 1, k: 1, m: -1 }, T::one())],
        }
    }
}

impl<T: Real> SourceConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_molecules == 0 {
            return Err(invalid("n_molecules must be positive"));
        }
        if !(self.flux_temperature > T::zero() && self.flux_temperature.is_finite()) {
            return Err(TrapError::Config("flux_temperature must be positive".into()));
        }
        if !(self.e_load >= T::zero() && self.e_load.is_finite()) {
            return Err(TrapError::Config("e_load must be non-negative".into()));
        }
        if self.state_mixture.is_empty() {
            return Err(TrapError::Config("state_mixture is empty".into()));
        }
        let mut sum = T::zero();
        for (s, w) in &self.state_mixture {
            RotState::new(s.j, s.k, s.m).map_err(|e| TrapError::Config(e.to_string()))?;
            if !(*w >= T::zero() && w.is_finite()) {
                return Err(TrapError::Config("state weights must be non-negative".into()));
            }
            sum = sum + *w;
        }
        if (sum - T::one()).abs() > T::lit(1e-6) {
            return Err(TrapError::Config(format!("state weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig<T> {
    /// V/m
    pub e_load: T,
    pub e_unload: T,
    pub t_hold: T,
    pub t_ramp: T,
    pub t_total_constraint: T,
    /// Pre-ramp offset field in region 1; `None` uses ten times the region-2 offset. V/m
    pub step_offset_region1: Option<T>,
    /// Duration of every field switch.
    pub t_switch: T,
    /// How long the exit stays open after the hold.
    pub t_unload: T,
}

impl<T: Real> Default for ProtocolConfig<T> {
    fn default() -> Self {
        Self {
            e_load: T::lit(2e6),
            e_unload: T::lit(2e6),
            t_hold: T::zero(),
            t_ramp: T::zero(),
            t_total_constraint: T::lit(1.1),
            step_offset_region1: None,
            t_switch: T::lit(1e-3),
            t_unload: T::lit(0.3),
        }
    }
}

impl<T: Real> ProtocolConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.e_load, self.e_unload, self.t_hold, self.t_ramp, self.t_total_constraint];
        if nonneg.iter().any(|v| !(*v >= T::zero() && v.is_finite())) {
            return Err(TrapError::Config("protocol fields must be finite and non-negative".into()));
        }
        if !(self.t_switch > T::zero() && self.t_switch.is_finite()) {
            return Err(TrapError::Config("t_switch must be positive".into()));
        }
        if !(self.t_unload > T::zero() && self.t_unload.is_finite()) {
            return Err(TrapError::Config("t_unload must be positive".into()));
        }
        if let Some(s) = self.step_offset_region1 {
            if !s.is_finite() {
                return Err(TrapError::Config("step_offset_region1 must be finite".into()));
            }
        }
        Ok(())
    }

    /// `t_hold` that completes `t_ramp` to the constant total.
    pub fn hold_for_ramp(&self, t_ramp: T) -> Result<T> {
        let h = self.t_total_constraint - t_ramp;
        if h < T::zero() {
            return Err(TrapError::Config(format!(
                "t_ramp {t_ramp} exceeds t_total_constraint {}",
                self.t_total_constraint
            )));
        }
        Ok(h)
    }
}

/// Where molecules are placed at load time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadRegion {
    Whole,
    /// `x` beyond the region split only.
    Region2,
}

/// Sub-volume sampled at load time. Molecules start one stripe pitch away from the
/// plates, three decay lengths away from the perimeter, and clear of the region
/// blend, so that no molecule starts on top of a barrier.
pub fn load_volume<T: Real>(g: &TrapGeometry<T>, region: LoadRegion) -> Aabb<T> {
    let mp = g.perimeter_decay * T::lit(3.0);
    let mz = g.stripe_period.min(g.gap_z * T::lit(0.25));
    let x_lo = match region {
        LoadRegion::Whole => mp,
        LoadRegion::Region2 => (g.region_split_x + g.region_smoothing * T::half()).max(mp),
    };
    Aabb::new(
        Vec3::new(x_lo, mp, mz),
        Vec3::new(g.length_x - mp, g.width_y - mp, g.gap_z - mz),
    )
}

/// Draws a speed from `v² exp(−v²/2σ²)` on `[0, v_max]` by rejection.
fn sample_speed(rng: &mut Stream, sigma: f64, v_max: f64) -> f64 {
    if v_max <= 0.0 {
        return 0.0;
    }
    loop {
        let v = v_max * rng.uniform().cbrt();
        let accept = (-(v * v) / (2.0 * sigma * sigma)).exp();
        if rng.uniform() < accept {
            return v;
        }
    }
}

fn isotropic(rng: &mut Stream) -> [f64; 3] {
    let cos_t = 2.0 * rng.uniform() - 1.0;
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = std::f64::consts::TAU * rng.uniform();
    [sin_t * phi.cos(), sin_t * phi.sin(), cos_t]
}

/// Samples a steady-state ensemble in the whole trap.
pub fn load_ensemble<T: Real>(
    source: &SourceConfig<T>,
    species: &Species<T>,
    geometry: &TrapGeometry<T>,
    seed: u64,
) -> Result<Vec<MoleculeState<T>>> {
    load_ensemble_in(source, species, geometry, LoadRegion::Whole, seed)
}

pub fn load_ensemble_in<T: Real>(
    source: &SourceConfig<T>,
    species: &Species<T>,
    geometry: &TrapGeometry<T>,
    region: LoadRegion,
    seed: u64,
) -> Result<Vec<MoleculeState<T>>> {
    source.validate()?;
    species.validate()?;
    geometry.validate()?;
    let states: Vec<(T, f64)> = source
        .state_mixture
        .iter()
        .filter(|(s, w)| s.is_low_field_seeking() && *w > T::zero())
        .map(|(s, w)| (effective_dipole(species, *s), w.to_f64_lossy()))
        .collect();
    if states.is_empty() {
        return Err(TrapError::Config("state mixture holds no low-field-seeking state".into()));
    }
    let total: f64 = states.iter().map(|s| s.1).sum();
    let mass = species.mass;
    let sigma = (consts::K_B * source.flux_temperature.to_f64_lossy() / mass.to_f64_lossy()).sqrt();
    let v_max: Vec<f64> = states
        .iter()
        .map(|(mu, _)| trap_depth_velocity(*mu, source.e_load, mass).map(|v| v.to_f64_lossy()))
        .collect::<Result<_>>()?;
    let vol = load_volume(geometry, region);
    if vol.is_empty() {
        return Err(TrapError::Config("trap too small for the loading margins".into()));
    }

    let out = (0..source.n_molecules as u64)
        .map(|id| {
            let mut rng = Stream::new(seed, Domain::Load, id);
            let mut pick = rng.uniform() * total;
            let mut k = states.len() - 1;
            for (i, s) in states.iter().enumerate() {
                if pick < s.1 {
                    k = i;
                    break;
                }
                pick -= s.1;
            }
            let span = vol.max - vol.min;
            let pos = Vec3::new(
                vol.min.x + span.x * T::lit(rng.uniform()),
                vol.min.y + span.y * T::lit(rng.uniform()),
                vol.min.z + span.z * T::lit(rng.uniform()),
            );
            let v = sample_speed(&mut rng, sigma, v_max[k]);
            let d = isotropic(&mut rng);
            let vel = Vec3::new(T::lit(v * d[0]), T::lit(v * d[1]), T::lit(v * d[2]));
            MoleculeState::new(id, pos, vel, states[k].0)
        })
        .collect();
    Ok(out)
}

/// Breakpoint list with coincident times collapsed to the later entry.
fn collapse<T: Real>(points: Vec<(T, ElectrodeConfig<T>)>) -> Result<RampSchedule<T>> {
    let mut out: Vec<(T, ElectrodeConfig<T>)> = Vec::with_capacity(points.len());
    for (t, c) in points {
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 = c,
            _ => out.push((t, c)),
        }
    }
    RampSchedule::new(out)
}

fn loading<T: Real>(base: &ElectrodeConfig<T>, e_load: T) -> ElectrodeConfig<T> {
    ElectrodeConfig { e_perimeter: e_load, exit_gate: T::one(), ..*base }
}

fn unloading<T: Real>(base: &ElectrodeConfig<T>, e_unload: T) -> ElectrodeConfig<T> {
    ElectrodeConfig { e_perimeter: e_unload, exit_gate: T::zero(), ..*base }
}

/// Load → close and boost → hold → unload. Loading and unloading lower only the
/// perimeter field (and, for unloading, open the exit); the plates stay as in
/// `base`, whose perimeter field is the boosted one.
pub fn build_storage_schedule<T: Real>(config: &ProtocolConfig<T>, base: &ElectrodeConfig<T>) -> Result<RampSchedule<T>> {
    config.validate()?;
    base.validate()?;
    let sw = config.t_switch;
    let full = ElectrodeConfig { exit_gate: T::one(), ..*base };
    let t1 = sw;
    let t2 = t1 + config.t_hold;
    let t3 = t2 + sw;
    collapse(vec![
        (T::zero(), loading(base, config.e_load)),
        (t1, full),
        (t2, full),
        (t3, unloading(base, config.e_unload)),
        (t3 + config.t_unload, unloading(base, config.e_unload)),
    ])
}

/// Region-1 offset voltage before the ramp.
pub fn step_offset_voltage<T: Real>(config: &ProtocolConfig<T>, base: &ElectrodeConfig<T>, g: &TrapGeometry<T>) -> T {
    match config.step_offset_region1 {
        Some(e) => g.offset_voltage(e),
        None => base.v_offset_region2 * T::lit(10.0),
    }
}

/// Load into region 2 behind a raised region-1 offset → close and boost → linear
/// ramp of the region-1 offset down to the region-2 value → hold → unload.
/// `t_ramp + t_hold` must equal `t_total_constraint`.
pub fn build_adiabatic_schedule<T: Real>(
    config: &ProtocolConfig<T>,
    base: &ElectrodeConfig<T>,
    geometry: &TrapGeometry<T>,
) -> Result<RampSchedule<T>> {
    config.validate()?;
    base.validate()?;
    let total = config.t_ramp + config.t_hold;
    let tol = T::lit(1e-9) * config.t_total_constraint.max(T::one());
    if (total - config.t_total_constraint).abs() > tol {
        return Err(TrapError::Config(format!(
            "t_ramp + t_hold = {total} but t_total_constraint = {}",
            config.t_total_constraint
        )));
    }
    let step = step_offset_voltage(config, base, geometry);
    let level = ElectrodeConfig { v_offset_region1: base.v_offset_region2, exit_gate: T::one(), ..*base };
    let stepped = ElectrodeConfig { v_offset_region1: step, ..level };
    let sw = config.t_switch;
    let t1 = sw;
    let t2 = t1 + config.t_ramp;
    let t3 = t2 + config.t_hold;
    let t4 = t3 + sw;
    collapse(vec![
        (T::zero(), loading(&stepped, config.e_load)),
        (t1, stepped),
        (t2, level),
        (t3, level),
        (t4, unloading(&level, config.e_unload)),
        (t4 + config.t_unload, unloading(&level, config.e_unload)),
    ])
}

/// Time the unload switch starts: the last breakpoint with a closed exit.
pub fn unload_trigger<T: Real>(schedule: &RampSchedule<T>) -> T {
    let bp = schedule.breakpoints();
    bp.iter()
        .rev()
        .find(|(_, c)| !c.exit_open())
        .map(|(t, _)| *t)
        .unwrap_or_else(|| schedule.start())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Storage,
    Adiabatic,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Storage => "storage",
            ExperimentKind::Adiabatic => "adiabatic",
        }
    }
}

/// Everything one experiment run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSetup<T> {
    pub kind: ExperimentKind,
    pub geometry: TrapGeometry<T>,
    pub electrode_base: ElectrodeConfig<T>,
    pub species: Species<T>,
    pub source: SourceConfig<T>,
    pub protocol: ProtocolConfig<T>,
    pub loss: LossModelConfig<T>,
    pub integrator: IntegratorConfig<T>,
    pub detection: DetectionGeometry<T>,
}

impl<T: Real> ExperimentSetup<T> {
    pub fn schedule(&self) -> Result<RampSchedule<T>> {
        match self.kind {
            ExperimentKind::Storage => build_storage_schedule(&self.protocol, &self.electrode_base),
            ExperimentKind::Adiabatic => build_adiabatic_schedule(&self.protocol, &self.electrode_base, &self.geometry),
        }
    }

    pub fn load(&self, seed: u64) -> Result<Vec<MoleculeState<T>>> {
        let region = match self.kind {
            ExperimentKind::Storage => LoadRegion::Whole,
            ExperimentKind::Adiabatic => LoadRegion::Region2,
        };
        let source = SourceConfig { e_load: self.protocol.e_load, ..self.source.clone() };
        load_ensemble_in(&source, &self.species, &self.geometry, region, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.electrode_base.validate()?;
        self.species.validate()?;
        self.source.validate()?;
        self.protocol.validate()?;
        self.loss.validate()?;
        self.integrator.validate()?;
        self.detection.validate()?;
        if self.protocol.e_load > self.electrode_base.e_perimeter {
            return Err(TrapError::Config(format!(
                "e_load {} exceeds the peak trap field {}",
                self.protocol.e_load, self.electrode_base.e_perimeter
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport<T> {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub n_initial: usize,
    pub counts: StatusCounts,
    pub t_hold: T,
    pub t_ramp: T,
    /// Start of the unload switch, the TOF time origin.
    pub t_trigger: T,
    /// Kinetic temperature right after loading, K.
    pub temperature_initial: T,
    /// Kinetic temperature of the molecules still trapped at the trigger, K.
    pub temperature_pre_unload: T,
    pub alive_at_trigger: usize,
    /// Fraction of the molecules trapped at the trigger that sit in region 1.
    pub region1_fraction: Option<T>,
    pub tof_mean_velocity: Option<T>,
    pub tof_temperature: Option<T>,
    pub integrated_signal: T,
    pub skipped_backward: usize,
    pub stats: PropagationStats,
}

/// Checks `N_initial = alive + lost + detected`.
pub fn check_conservation<T: Real>(n_initial: usize, states: &[MoleculeState<T>]) -> Result<StatusCounts> {
    let c = StatusCounts::tally(states);
    if states.len() != n_initial || c.total() != n_initial {
        return Err(TrapError::Data(format!(
            "molecule accounting broken: {n_initial} loaded, {} tallied",
            c.total()
        )));
    }
    Ok(c)
}

/// Runs load → schedule → detection and aggregates the report.
pub fn run_experiment<T: Real>(setup: &ExperimentSetup<T>, seed: u64) -> Result<(TofSignal<T>, ExperimentReport<T>)> {
    let ctx = |e: TrapError| -> TrapError {
        let msg = format!("{} run (seed {seed}, t_hold {}, t_ramp {}): {e}", setup.kind.label(), setup.protocol.t_hold, setup.protocol.t_ramp);
        match e {
            TrapError::Config(_) => TrapError::Config(msg),
            TrapError::Range(_) => TrapError::Range(msg),
            TrapError::Domain(_) => TrapError::Domain(msg),
            TrapError::InvalidArgument(_) => TrapError::InvalidArgument(msg),
            _ => TrapError::Data(msg),
        }
    };
    setup.validate().map_err(ctx)?;
    let schedule = setup.schedule().map_err(ctx)?;
    let states = setup.load(seed).map_err(ctx)?;
    let n_initial = states.len();
    let mass = setup.species.mass;
    let temperature_initial = kinetic_temperature(&states, mass);

    let sim = Simulation::new(&setup.geometry, &schedule, mass, &setup.loss, &setup.integrator, seed).map_err(ctx)?;
    let t_trigger = unload_trigger(&schedule);
    let (states, mut stats) = sim.propagate_ensemble(states, schedule.start(), t_trigger).map_err(ctx)?;
    check_conservation(n_initial, &states).map_err(ctx)?;

    let trapped: Vec<&MoleculeState<T>> = states.iter().filter(|m| m.is_alive()).collect();
    let alive_at_trigger = trapped.len();
    let temperature_pre_unload = kinetic_temperature(trapped.iter().copied(), mass);
    let region1_fraction = (setup.kind == ExperimentKind::Adiabatic && alive_at_trigger > 0).then(|| {
        let n1 = trapped.iter().filter(|m| m.pos.x < setup.geometry.region_split_x).count();
        T::lit(n1 as f64 / alive_at_trigger as f64)
    });

    let (states, s2) = sim.propagate_ensemble(states, t_trigger, schedule.end()).map_err(ctx)?;
    stats.steps += s2.steps;
    stats.closed_form_jumps += s2.closed_form_jumps;
    stats.guard_trips += s2.guard_trips;
    let counts = check_conservation(n_initial, &states).map_err(ctx)?;

    let exiting: Vec<(MoleculeState<T>, T)> = states
        .iter()
        .filter(|m| m.status == Status::Detected)
        .map(|m| (*m, m.t_loss.unwrap_or(t_trigger).max(t_trigger)))
        .collect();
    let det = transport_and_bin(&exiting, t_trigger, &setup.detection, seed).map_err(ctx)?;
    let signal = det.signal;
    let tof_mean_velocity = if det.detected > 0 {
        Some(mean_velocity_from_tof(&signal).map_err(ctx)?)
    } else {
        None
    };
    let tof_temperature = tof_mean_velocity.map(|v| temperature_from_mean_velocity(v, mass));

    let report = ExperimentReport {
        kind: setup.kind,
        seed,
        n_initial,
        counts,
        t_hold: setup.protocol.t_hold,
        t_ramp: setup.protocol.t_ramp,
        t_trigger,
        temperature_initial,
        temperature_pre_unload,
        alive_at_trigger,
        region1_fraction,
        tof_mean_velocity,
        tof_temperature,
        integrated_signal: signal.total(),
        skipped_backward: det.skipped_backward,
        stats,
    };
    Ok((signal, report))
}

/// Fraction of the ensemble not lost by each of `times`, from the recorded loss times.
/// Detection counts as survival.
pub fn survival_curve<T: Real>(states: &[MoleculeState<T>], times: &[T]) -> Vec<(T, T)> {
    let n = T::lit(states.len().max(1) as f64);
    times
        .iter()
        .map(|&t| {
            let alive = states
                .iter()
                .filter(|m| !m.status.is_loss() || m.t_loss.is_none_or(|tl| tl > t))
                .count();
            (t, T::lit(alive as f64) / n)
        })
        .collect()
}
