use serde::{Deserialize, Serialize};

use crate::dynamics::state::{MoleculeState, Status};
use crate::error::{invalid, Result};
use crate::fields::FieldSample;
use crate::num::{consts, Real};
use crate::rng::Stream;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MajoranaMode {
    /// Lost whenever the field magnitude along the step dips below `e_critical`.
    Threshold,
    /// Lost when `ħ |dÊ/dt| / (μ_eff |E|)` exceeds `xi_critical`.
    Adiabaticity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModelConfig<T> {
    pub majorana_mode: MajoranaMode,
    /// V/m
    pub e_critical: T,
    pub xi_critical: T,
    /// 1/s
    pub background_rate: T,
    /// Per reflection off the perimeter.
    pub leak_probability: T,
}

impl<T: Real> Default for LossModelConfig<T> {
    fn default() -> Self {
        Self {
            majorana_mode: MajoranaMode::Threshold,
            e_critical: T::lit(2e3),
            xi_critical: T::one(),
            background_rate: T::zero(),
            leak_probability: T::zero(),
        }
    }
}

impl<T: Real> LossModelConfig<T> {
    /// Every loss channel off (threshold Majorana with a zero floor never fires).
    pub fn lossless() -> Self {
        Self { e_critical: T::zero(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.e_critical, self.xi_critical, self.background_rate, self.leak_probability];
        if vals.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(invalid("loss model parameters must be finite and non-negative"));
        }
        if self.leak_probability > T::one() {
            return Err(invalid("leak_probability must not exceed 1"));
        }
        Ok(())
    }

    pub fn majorana_enabled(&self) -> bool {
        match self.majorana_mode {
            MajoranaMode::Threshold => self.e_critical > T::zero(),
            MajoranaMode::Adiabaticity => true,
        }
    }
}

/// Smallest `|E0 + s (E1 − E0)|` for `s ∈ [0, 1]`.
#[inline]
pub fn segment_min_norm<T: Real>(e0: Vec3<T>, e1: Vec3<T>) -> T {
    let d = e1 - e0;
    let dd = d.norm_sq();
    if !(dd > T::zero()) {
        return e0.norm();
    }
    let s = (-e0.dot(d) / dd).max(T::zero()).min(T::one());
    (e0 + d * s).norm()
}

/// Lower bound on `e_mag` along a step: the plate part is interpolated linearly and
/// the perimeter part, which is orthogonal to it, enters in quadrature.
#[inline]
pub fn step_min_field<T: Real>(prev: &FieldSample<T>, next: &FieldSample<T>) -> T {
    let plate = segment_min_norm(prev.plate_vec(), next.plate_vec());
    let perim = prev.perimeter.norm().min(next.perimeter.norm());
    let along = (plate * plate + perim * perim).sqrt();
    along.min(prev.e_mag).min(next.e_mag)
}

/// Majorana adiabaticity parameter for a step of length `dt`.
pub fn adiabaticity<T: Real>(mu_eff: T, prev: &FieldSample<T>, next: &FieldSample<T>, dt: T) -> T {
    let e = prev.e_mag.min(next.e_mag);
    if !(e > T::zero()) || !(mu_eff > T::zero()) {
        return T::infinity();
    }
    let (Some(a), Some(b)) = (prev.e_vec.normalized(), next.e_vec.normalized()) else {
        return T::infinity();
    };
    let cos = a.dot(b).max(-T::one()).min(T::one());
    let angle = cos.acos();
    T::lit(consts::HBAR) * (angle / dt) / (mu_eff * e)
}

/// What the boundary handling saw during a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Encounter<T> {
    None,
    /// Turned around at the perimeter barrier this many times.
    Reflected(u32),
    /// Went over a barrier at time `t`.
    Crossed { t: T },
    /// Went out through the open exit aperture at time `t`.
    Exited { t: T },
}

/// Per-molecule random state used by the loss checks.
pub struct LossStream<T> {
    pub stream: Stream,
    /// Absolute time of the background-gas collision.
    pub background_at: T,
}

impl<T: Real> LossStream<T> {
    /// Draws the exponential background clock starting at `t_start`.
    pub fn start(mut stream: Stream, t_start: T, loss: &LossModelConfig<T>) -> Self {
        let wait = stream.exponential(loss.background_rate.to_f64_lossy());
        let background_at = if wait.is_finite() { t_start + T::lit(wait) } else { T::infinity() };
        Self { stream, background_at }
    }
}

/// Applies the loss channels for the step ending at `t_end`, in the fixed order
/// Majorana, background, barrier/leak.
///
/// Background collisions run on an exponential clock drawn once per propagation leg;
/// asking "has the clock expired by `t_end`" each step is the memoryless equivalent of
/// a per-step Bernoulli trial with probability `1 − exp(−rate·dt)`.
pub fn check_losses<T: Real>(
    state: &mut MoleculeState<T>,
    field: &FieldSample<T>,
    field_prev: &FieldSample<T>,
    t_end: T,
    dt: T,
    encounter: Encounter<T>,
    loss: &LossModelConfig<T>,
    stream: &mut LossStream<T>,
) {
    if !state.is_alive() {
        return;
    }
    let majorana = match loss.majorana_mode {
        MajoranaMode::Threshold => {
            loss.e_critical > T::zero() && step_min_field(field_prev, field) < loss.e_critical
        }
        MajoranaMode::Adiabaticity => adiabaticity(state.mu_eff, field_prev, field, dt) > loss.xi_critical,
    };
    if majorana {
        state.terminate(Status::LostMajorana, t_end);
        return;
    }
    if t_end >= stream.background_at {
        state.terminate(Status::LostBackground, t_end);
        return;
    }
    match encounter {
        Encounter::None => {}
        Encounter::Crossed { t } => state.terminate(Status::LostBarrier, t),
        Encounter::Exited { t } => state.terminate(Status::Detected, t),
        Encounter::Reflected(count) => {
            let p = loss.leak_probability.to_f64_lossy();
            for _ in 0..count {
                if stream.stream.bernoulli(p) {
                    state.terminate(Status::LostLeak, t_end);
                    break;
                }
            }
        }
    }
}
