use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::hardwall::{self, Advance};
use crate::dynamics::loss::{check_losses, Encounter, LossModelConfig, LossStream};
use crate::dynamics::state::{MoleculeState, Status};
use crate::error::{invalid, Result, TrapError};
use crate::fields::{FieldModel, FieldOptions, FieldSample, TrapGeometry};
use crate::num::Real;
use crate::rng::{Domain, Stream};
use crate::schedule::RampSchedule;
use crate::vec3::Vec3;

/// How the trap boundary is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryModel {
    /// Full soft potential; reaching a face of the box means the barrier was crossed.
    Soft,
    /// Plate and perimeter fields removed from the force and replaced by specular walls
    /// that hold while the normal kinetic energy is below `μ_eff` times the peak field.
    HardWall,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig<T> {
    pub dt: T,
    pub boundary: BoundaryModel,
    pub field: FieldOptions<T>,
    /// Jump over force-free hard-wall segments analytically.
    pub closed_form: bool,
    /// A perimeter encounter is a turning point within this many decay lengths of a wall.
    pub encounter_range: T,
    /// Relative change of `e_mag` in one step above which the step counts as under-resolved.
    pub guard: T,
}

impl<T: Real> Default for IntegratorConfig<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(1e-6),
            boundary: BoundaryModel::Soft,
            field: FieldOptions::default(),
            closed_form: true,
            encounter_range: T::lit(6.0),
            guard: T::lit(0.1),
        }
    }
}

impl<T: Real> IntegratorConfig<T> {
    pub fn hard_wall() -> Self {
        Self { boundary: BoundaryModel::HardWall, field: FieldOptions::hard_wall(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if !(self.guard > T::zero()) || !(self.encounter_range >= T::zero()) {
            return Err(invalid("guard must be positive and encounter_range non-negative"));
        }
        if self.field.n_harmonics == 0 {
            return Err(invalid("n_harmonics must be at least 1"));
        }
        Ok(())
    }

    /// Field options actually used for the force. The hard-wall tier drops the
    /// boundary fields regardless of what `field` asks for.
    pub fn force_options(&self) -> FieldOptions<T> {
        match self.boundary {
            BoundaryModel::Soft => self.field,
            BoundaryModel::HardWall => FieldOptions {
                include_microstructure: false,
                include_perimeter: false,
                ..self.field
            },
        }
    }
}

/// Result of one integration step.
#[derive(Clone, Copy, Debug)]
pub struct StepReport<T> {
    /// Field at the new position and time.
    pub field: FieldSample<T>,
    pub encounter: Encounter<T>,
    pub guard_tripped: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationStats {
    pub steps: u64,
    pub closed_form_jumps: u64,
    pub guard_trips: u64,
}

impl PropagationStats {
    fn merge(self, o: Self) -> Self {
        Self {
            steps: self.steps + o.steps,
            closed_form_jumps: self.closed_form_jumps + o.closed_form_jumps,
            guard_trips: self.guard_trips + o.guard_trips,
        }
    }
}

/// One row of the optional trajectory dump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow<T> {
    pub id: u64,
    pub t: T,
    pub pos: Vec3<T>,
    pub vel: Vec3<T>,
    pub status: Status,
}

/// Everything a trajectory needs besides its own state.
#[derive(Clone, Debug)]
pub struct Simulation<'a, T> {
    pub geometry: &'a TrapGeometry<T>,
    pub schedule: &'a RampSchedule<T>,
    pub mass: T,
    pub loss: &'a LossModelConfig<T>,
    pub integrator: &'a IntegratorConfig<T>,
    pub seed: u64,
    model: FieldModel<'a, T>,
    closed_form_segments: Vec<bool>,
}

impl<'a, T: Real> Simulation<'a, T> {
    pub fn new(
        geometry: &'a TrapGeometry<T>,
        schedule: &'a RampSchedule<T>,
        mass: T,
        loss: &'a LossModelConfig<T>,
        integrator: &'a IntegratorConfig<T>,
        seed: u64,
    ) -> Result<Self> {
        geometry.validate()?;
        loss.validate()?;
        integrator.validate()?;
        if !(mass > T::zero() && mass.is_finite()) {
            return Err(invalid("mass must be positive"));
        }
        let closed_form_segments = (0..schedule.segment_count())
            .map(|seg| hardwall::segment_is_force_free(geometry, schedule, loss, integrator, seg))
            .collect();
        Ok(Self {
            geometry,
            schedule,
            mass,
            loss,
            integrator,
            seed,
            model: FieldModel::new(geometry, &integrator.force_options()),
            closed_form_segments,
        })
    }

    pub(crate) fn closed_form_allowed(&self, seg: usize) -> bool {
        self.closed_form_segments[seg]
    }

    pub fn model(&self) -> &FieldModel<'a, T> {
        &self.model
    }

    /// Force field at `(pos, t)`, holding the schedule end values outside its domain.
    #[inline]
    pub fn field(&self, pos: Vec3<T>, t: T) -> FieldSample<T> {
        self.model.sample(pos, &self.schedule.at_clamped(t))
    }

    #[inline]
    pub fn acceleration(&self, mu_eff: T, field: &FieldSample<T>) -> Vec3<T> {
        field.grad_mag * (-mu_eff / self.mass)
    }

    /// Kinetic plus Stark energy.
    pub fn total_energy(&self, state: &MoleculeState<T>, t: T) -> T {
        state.kinetic_energy(self.mass) + state.mu_eff * self.field(state.pos, t).e_mag
    }

    /// One velocity-Verlet step from `t` to `t + dt`. `prev` must be the field at
    /// `(state.pos, t)`. Boundary events are reported, not applied.
    pub fn step(&self, state: &mut MoleculeState<T>, t: T, dt: T, prev: &FieldSample<T>) -> StepReport<T> {
        let half = dt * T::half();
        let v_old = state.vel;
        state.vel += self.acceleration(state.mu_eff, prev) * half;

        let encounter = match self.integrator.boundary {
            BoundaryModel::Soft => self.drift_soft(state, t, dt),
            BoundaryModel::HardWall => hardwall::drift(self, state, t, dt),
        };
        let field = self.field(state.pos, t + dt);
        if matches!(encounter, Encounter::None | Encounter::Reflected(_)) {
            state.vel += self.acceleration(state.mu_eff, &field) * half;
        }
        let encounter = match (self.integrator.boundary, encounter) {
            (BoundaryModel::Soft, Encounter::None) => self.soft_encounter(state, v_old, t + dt),
            (_, e) => e,
        };
        let guard_tripped = prev.e_mag > T::zero()
            && (field.e_mag - prev.e_mag).abs() > self.integrator.guard * prev.e_mag;
        StepReport { field, encounter, guard_tripped }
    }

    fn drift_soft(&self, state: &mut MoleculeState<T>, t: T, dt: T) -> Encounter<T> {
        let next = state.pos + state.vel * dt;
        if self.geometry.contains(next) {
            state.pos = next;
            return Encounter::None;
        }
        // leave through the first face the straight drift reaches
        let b = self.geometry.bounds();
        let mut s_min = dt;
        let mut face = (0, false);
        for i in 0..3 {
            let (x, v) = (state.pos[i], state.vel[i]);
            let s = if v > T::zero() && next[i] > b.max[i] {
                (b.max[i] - x) / v
            } else if v < T::zero() && next[i] < b.min[i] {
                (b.min[i] - x) / v
            } else {
                continue;
            };
            let s = s.max(T::zero());
            if s <= s_min {
                s_min = s;
                face = (i, v > T::zero());
            }
        }
        let mut p = state.pos + state.vel * s_min;
        p.set_axis(face.0, if face.1 { b.max[face.0] } else { b.min[face.0] });
        state.pos = b.clamp(p);
        let t_cross = t + s_min;
        if face == (0, true) && self.exit_open_at(state.pos, t_cross) {
            Encounter::Exited { t: t_cross }
        } else {
            Encounter::Crossed { t: t_cross }
        }
    }

    pub(crate) fn exit_open_at(&self, pos: Vec3<T>, t: T) -> bool {
        self.geometry.exit_aperture.contains(pos.y, pos.z) && self.schedule.at_clamped(t).exit_open()
    }

    /// Turning points near the side walls during a soft step.
    fn soft_encounter(&self, state: &MoleculeState<T>, v_old: Vec3<T>, t: T) -> Encounter<T> {
        let g = self.geometry;
        let range = self.integrator.encounter_range * g.perimeter_decay;
        let (p, v) = (state.pos, state.vel);
        let mut count = 0u32;
        if p.x < range && v_old.x < T::zero() && v.x >= T::zero() {
            count += 1;
        }
        if g.length_x - p.x < range && v_old.x > T::zero() && v.x <= T::zero() && !self.exit_open_at(p, t) {
            count += 1;
        }
        if p.y < range && v_old.y < T::zero() && v.y >= T::zero() {
            count += 1;
        }
        if g.width_y - p.y < range && v_old.y > T::zero() && v.y <= T::zero() {
            count += 1;
        }
        if count == 0 {
            Encounter::None
        } else {
            Encounter::Reflected(count)
        }
    }

    /// Grid time `t_start + n·dt`.
    #[inline]
    pub(crate) fn grid_time(&self, t_start: T, n: u64) -> T {
        t_start + T::lit(n as f64) * self.integrator.dt
    }

    /// Integrates one molecule from `t_start` to `t_end` or its terminal event.
    pub fn propagate_molecule(
        &self,
        state: &mut MoleculeState<T>,
        t_start: T,
        t_end: T,
        mut dump: Option<(&mut Vec<TrajectoryRow<T>>, u64)>,
    ) -> PropagationStats {
        let mut stats = PropagationStats::default();
        if !state.is_alive() || !(t_end > t_start) {
            return stats;
        }
        let stream = Stream::resume(self.seed, Domain::Dynamics, state.id, state.draws);
        let mut stream = LossStream::start(stream, t_start, self.loss);
        let mut record = |s: &MoleculeState<T>, t: T, n: u64, force: bool| {
            if let Some((rows, stride)) = dump.as_mut() {
                if force || (*stride > 0 && n % *stride == 0) {
                    rows.push(TrajectoryRow { id: s.id, t, pos: s.pos, vel: s.vel, status: s.status });
                }
            }
        };
        record(state, t_start, 0, true);

        let mut n = 0u64;
        let mut t = t_start;
        let mut field = self.field(state.pos, t);
        let mut skip_closed_until = t_start;
        while t < t_end && state.is_alive() {
            if self.integrator.closed_form && t >= skip_closed_until {
                match hardwall::advance(self, state, t_start, n, t_end, &mut stream) {
                    Advance::Jumped { n: n_new, t: t_new } => {
                        stats.closed_form_jumps += 1;
                        n = n_new;
                        t = t_new;
                        field = self.field(state.pos, t);
                        record(state, t, n, true);
                        continue;
                    }
                    Advance::Skip { until } => skip_closed_until = until,
                }
            }
            let t_next = self.grid_time(t_start, n + 1).min(t_end);
            let h = t_next - t;
            let report = self.step(state, t, h, &field);
            check_losses(state, &report.field, &field, t_next, h, report.encounter, self.loss, &mut stream);
            stats.steps += 1;
            stats.guard_trips += u64::from(report.guard_tripped);
            field = report.field;
            t = t_next;
            n += 1;
            record(state, t, n, !state.is_alive() || t >= t_end);
        }
        state.draws = stream.stream.draws();
        stats
    }

    /// Integrates every molecule independently. The output is in input order and is
    /// bit-identical for any number of worker threads.
    pub fn propagate_ensemble(
        &self,
        states: Vec<MoleculeState<T>>,
        t_start: T,
        t_end: T,
    ) -> Result<(Vec<MoleculeState<T>>, PropagationStats)> {
        self.check_interval(t_start, t_end)?;
        let out: Vec<(MoleculeState<T>, PropagationStats)> = states
            .into_par_iter()
            .map(|mut s| {
                let st = self.propagate_molecule(&mut s, t_start, t_end, None);
                (s, st)
            })
            .collect();
        let stats = out.iter().fold(PropagationStats::default(), |a, (_, s)| a.merge(*s));
        if stats.guard_trips > 0 {
            log::warn!(
                "{} of {} steps changed |E| by more than {} in one step; consider a smaller dt",
                stats.guard_trips,
                stats.steps,
                self.integrator.guard
            );
        }
        Ok((out.into_iter().map(|(s, _)| s).collect(), stats))
    }

    /// Like [`Self::propagate_ensemble`] but also returns trajectory rows every
    /// `stride` steps (plus start, closed-form jumps, and terminal events).
    pub fn propagate_ensemble_dump(
        &self,
        states: Vec<MoleculeState<T>>,
        t_start: T,
        t_end: T,
        stride: u64,
    ) -> Result<(Vec<MoleculeState<T>>, Vec<TrajectoryRow<T>>)> {
        self.check_interval(t_start, t_end)?;
        let out: Vec<(MoleculeState<T>, Vec<TrajectoryRow<T>>)> = states
            .into_par_iter()
            .map(|mut s| {
                let mut rows = Vec::new();
                self.propagate_molecule(&mut s, t_start, t_end, Some((&mut rows, stride)));
                (s, rows)
            })
            .collect();
        let mut states = Vec::with_capacity(out.len());
        let mut rows = Vec::new();
        for (s, r) in out {
            states.push(s);
            rows.extend(r);
        }
        Ok((states, rows))
    }

    fn check_interval(&self, t_start: T, t_end: T) -> Result<()> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(invalid("propagation times must be finite"));
        }
        if t_end < t_start {
            return Err(invalid("t_end must not precede t_start"));
        }
        if !(self.schedule.contains(t_start) && self.schedule.contains(t_end)) {
            return Err(TrapError::Range(format!(
                "propagation interval [{t_start}, {t_end}] outside schedule domain [{}, {}]",
                self.schedule.start(),
                self.schedule.end()
            )));
        }
        Ok(())
    }
}
