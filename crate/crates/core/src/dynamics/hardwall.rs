//! Hard-wall boundary tier: specular walls, and an event-driven closed form for
//! schedule segments in which the remaining field is spatially uniform.

use crate::dynamics::integrate::{BoundaryModel, IntegratorConfig, Simulation};
use crate::dynamics::loss::{Encounter, LossModelConfig, LossStream, MajoranaMode};
use crate::dynamics::state::{MoleculeState, Status};
use crate::fields::{ElectrodeConfig, TrapGeometry};
use crate::num::Real;
use crate::schedule::RampSchedule;
use crate::vec3::Vec3;

/// Peak barrier field of a wall, or `None` where the wall is the open exit.
fn wall_peak<T: Real>(g: &TrapGeometry<T>, c: &ElectrodeConfig<T>, axis: usize, hi: bool, p: Vec3<T>) -> Option<T> {
    match axis {
        2 => Some(c.micro_surface_field(g)),
        0 if hi && g.exit_aperture.contains(p.y, p.z) => {
            if c.exit_open() {
                None
            } else {
                Some(c.e_perimeter * c.exit_gate)
            }
        }
        _ => Some(c.e_perimeter),
    }
}

/// Straight drift over `dt` with specular reflections.
pub(crate) fn drift<T: Real>(sim: &Simulation<'_, T>, state: &mut MoleculeState<T>, t: T, dt: T) -> Encounter<T> {
    let b = sim.geometry.bounds();
    let mut elapsed = T::zero();
    let mut reflections = 0u32;
    loop {
        let remaining = dt - elapsed;
        let mut s_hit = remaining;
        let mut hit = None;
        for i in 0..3 {
            let v = state.vel[i];
            let s = if v > T::zero() {
                (b.max[i] - state.pos[i]) / v
            } else if v < T::zero() {
                (b.min[i] - state.pos[i]) / v
            } else {
                continue;
            };
            let s = s.max(T::zero());
            if s < s_hit {
                s_hit = s;
                hit = Some((i, v > T::zero()));
            }
        }
        let Some((i, hi)) = hit else {
            state.pos = b.clamp(state.pos + state.vel * remaining);
            break;
        };
        let mut p = state.pos + state.vel * s_hit;
        p.set_axis(i, if hi { b.max[i] } else { b.min[i] });
        state.pos = b.clamp(p);
        elapsed = elapsed + s_hit;
        let t_hit = t + elapsed;
        let cfg = sim.schedule.at_clamped(t_hit);
        match wall_peak(sim.geometry, &cfg, i, hi, state.pos) {
            None => return Encounter::Exited { t: t_hit },
            Some(peak) => {
                let v = state.vel[i];
                let ke = T::half() * sim.mass * v * v;
                if state.mu_eff > T::zero() && ke < state.mu_eff * peak {
                    state.vel.set_axis(i, -v);
                    if i < 2 {
                        reflections += 1;
                    }
                } else {
                    return Encounter::Crossed { t: t_hit };
                }
            }
        }
    }
    if reflections > 0 {
        Encounter::Reflected(reflections)
    } else {
        Encounter::None
    }
}

/// Whether segment `seg` leaves a force-free, loss-free-at-walls problem: hard walls,
/// no leaks, equal offsets in both regions at both ends, no Majorana event possible
/// in the uniform field, and an exit that does not change state mid-segment.
pub(crate) fn segment_is_force_free<T: Real>(
    g: &TrapGeometry<T>,
    schedule: &RampSchedule<T>,
    loss: &LossModelConfig<T>,
    integrator: &IntegratorConfig<T>,
    seg: usize,
) -> bool {
    if integrator.boundary != BoundaryModel::HardWall || loss.leak_probability > T::zero() {
        return false;
    }
    let (c0, c1) = schedule.segment_ends(seg);
    if c0.v_offset_region1 != c0.v_offset_region2 || c1.v_offset_region1 != c1.v_offset_region2 {
        return false;
    }
    if c0.exit_open() != c1.exit_open() {
        return false;
    }
    let e0 = g.offset_field(c0.v_offset_region2);
    let e1 = g.offset_field(c1.v_offset_region2);
    let same_sign = e0 * e1 > T::zero();
    match loss.majorana_mode {
        MajoranaMode::Threshold if loss.e_critical > T::zero() => {
            same_sign && e0.abs().min(e1.abs()) >= loss.e_critical
        }
        MajoranaMode::Threshold => true,
        MajoranaMode::Adiabaticity => same_sign,
    }
}

/// Free flight in `[lo, hi]` with reflections, via the unfolded coordinate.
pub(crate) fn fold<T: Real>(x: T, v: T, dt: T, lo: T, hi: T) -> (T, T) {
    if v == T::zero() {
        return (x, v);
    }
    let w = hi - lo;
    let period = w + w;
    let u = x - lo + v * dt;
    let m = u - period * (u / period).floor();
    if m <= w {
        (lo + m, v)
    } else {
        (lo + period - m, -v)
    }
}

fn fly<T: Real>(g: &TrapGeometry<T>, state: &mut MoleculeState<T>, dt: T) {
    let b = g.bounds();
    for i in 0..3 {
        let (x, v) = fold(state.pos[i], state.vel[i], dt, b.min[i], b.max[i]);
        state.pos.set_axis(i, x);
        state.vel.set_axis(i, v);
    }
}

pub(crate) enum Advance<T> {
    /// State moved to grid index `n` at time `t` (or to its terminal event).
    Jumped { n: u64, t: T },
    /// Closed form not applicable before `until`.
    Skip { until: T },
}

/// First grid index whose time is at or after `t`.
fn grid_index_at_or_after<T: Real>(sim: &Simulation<'_, T>, t_start: T, t: T) -> u64 {
    let dt = sim.integrator.dt;
    let mut k = ((t - t_start) / dt).ceil().max(T::zero()).to_f64_lossy() as u64;
    while sim.grid_time(t_start, k) < t {
        k += 1;
    }
    while k > 0 && sim.grid_time(t_start, k - 1) >= t {
        k -= 1;
    }
    k
}

/// Tries to move the molecule from grid index `n` to the end of the current schedule
/// segment (or `t_end`) in one jump, reproducing what the stepped hard-wall path
/// would do. Falls back whenever a wall outcome is not certain.
pub(crate) fn advance<T: Real>(
    sim: &Simulation<'_, T>,
    state: &mut MoleculeState<T>,
    t_start: T,
    n: u64,
    t_end: T,
    stream: &mut LossStream<T>,
) -> Advance<T> {
    let t = sim.grid_time(t_start, n).min(t_end);
    let seg = sim.schedule.segment(t);
    let (_, seg_end) = sim.schedule.segment_span(seg);
    if seg_end <= t {
        return Advance::Skip { until: t_end };
    }
    if !sim.closed_form_allowed(seg) {
        return Advance::Skip { until: seg_end };
    }
    let (n_target, t_target) = if t_end <= seg_end {
        (grid_index_at_or_after(sim, t_start, t_end), t_end)
    } else {
        let mut k = grid_index_at_or_after(sim, t_start, seg_end);
        if sim.grid_time(t_start, k) > seg_end {
            k -= 1;
        }
        (k, sim.grid_time(t_start, k))
    };
    if !(t_target > t) {
        return Advance::Skip { until: seg_end };
    }

    let g = sim.geometry;
    let mu = state.mu_eff;
    let (c0, c1) = sim.schedule.segment_ends(seg);
    let lo = |f: fn(&ElectrodeConfig<T>) -> T| f(&c0).min(f(&c1));
    let plate = c0.micro_surface_field(g).min(c1.micro_surface_field(g));
    let perim = lo(|c| c.e_perimeter);
    let aperture = lo(|c| c.e_perimeter * c.exit_gate);
    let open = c0.exit_open();
    let ke = |v: T| T::half() * sim.mass * v * v;
    let holds = mu > T::zero()
        && ke(state.vel.z) < mu * plate
        && ke(state.vel.y) < mu * perim
        && ke(state.vel.x) < mu * perim
        && (open || ke(state.vel.x) < mu * aperture);
    if !holds {
        return Advance::Skip { until: seg_end };
    }

    // exit search along successive hits of the x = L wall
    let mut exit = None;
    if open && state.vel.x != T::zero() {
        let len = g.length_x;
        let mut probe = *state;
        let mut tau = t;
        loop {
            let vx = probe.vel.x;
            let s = if vx > T::zero() {
                (len - probe.pos.x) / vx
            } else {
                (probe.pos.x + len) / -vx
            };
            let t_hit = tau + s;
            if t_hit > t_target {
                break;
            }
            fly(g, &mut probe, s);
            probe.pos.x = len;
            probe.vel.x = vx.abs();
            if g.exit_aperture.contains(probe.pos.y, probe.pos.z) {
                exit = Some((t_hit, probe));
                break;
            }
            probe.vel.x = -vx.abs();
            tau = t_hit;
        }
    }

    let bg = stream.background_at;
    let background = (bg <= t_target).then(|| {
        let k = grid_index_at_or_after(sim, t_start, bg);
        (k, sim.grid_time(t_start, k).min(t_end))
    });
    let exit_step = exit.map(|(te, _)| grid_index_at_or_after(sim, t_start, te));

    match (background, exit, exit_step) {
        (Some((kb, tb)), _, None) => {
            fly(g, state, tb - t);
            state.terminate(Status::LostBackground, tb);
            Advance::Jumped { n: kb, t: tb }
        }
        (Some((kb, tb)), _, Some(ke)) if kb <= ke => {
            fly(g, state, tb - t);
            state.terminate(Status::LostBackground, tb);
            Advance::Jumped { n: kb, t: tb }
        }
        (_, Some((te, probe)), Some(ke)) => {
            state.pos = probe.pos;
            state.vel = probe.vel;
            state.terminate(Status::Detected, te);
            Advance::Jumped { n: ke, t: te }
        }
        _ => {
            fly(g, state, t_target - t);
            Advance::Jumped { n: n_target, t: t_target }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_reflects() {
        let (x, v) = fold(0.5f64, 1.0, 0.7, 0.0, 1.0);
        assert!((x - 0.8).abs() < 1e-12 && v == -1.0);
        let (x, v) = fold(0.5f64, 1.0, 2.0, 0.0, 1.0);
        assert!((x - 0.5).abs() < 1e-12 && v == 1.0);
        let (x, v) = fold(0.5f64, -1.0, 0.7, 0.0, 1.0);
        assert!((x - 0.2).abs() < 1e-12 && v == 1.0);
        assert_eq!(fold(0.3, 0.0, 5.0, 0.0, 1.0), (0.3, 0.0));
    }
}
