//! Linear Stark interaction of a symmetric-top molecule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::FieldSample;
use crate::num::{consts, Real};
use crate::vec3::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Species<T> {
    pub name: String,
    /// kg
    pub mass: T,
    /// Body-frame dipole moment, C·m.
    pub dipole: T,
}

impl<T: Real> Species<T> {
    pub fn new(name: impl Into<String>, mass: T, dipole: T) -> Result<Self> {
        let s = Self { name: name.into(), mass, dipole };
        s.validate()?;
        Ok(s)
    }

    /// Fluoromethane: 34.033 u, 6.2e-30 C·m (1.85 D).
    pub fn ch3f() -> Self {
        Self {
            name: "CH3F".into(),
            mass: T::lit(34.033 * consts::AMU),
            dipole: T::lit(6.2e-30),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > T::zero() && self.mass.is_finite()) {
            return Err(invalid("species mass must be positive"));
        }
        if !(self.dipole >= T::zero() && self.dipole.is_finite()) {
            return Err(invalid("species dipole must be non-negative"));
        }
        Ok(())
    }
}

/// Rotational state `|J K M⟩` of a symmetric top.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RotState {
    pub j: u32,
    pub k: i32,
    pub m: i32,
}

impl RotState {
    pub fn new(j: u32, k: i32, m: i32) -> Result<Self> {
        if k.unsigned_abs() > j || m.unsigned_abs() > j {
            return Err(invalid(format!("|K| and |M| must not exceed J (J={j}, K={k}, M={m})")));
        }
        Ok(Self { j, k, m })
    }

    /// Low-field seekers have `K·M < 0`.
    pub fn is_low_field_seeking(&self) -> bool {
        self.k * self.m < 0
    }
}

/// `μ_eff = −μ K M / (J (J+1))`; zero for `J = 0`.
pub fn effective_dipole<T: Real>(species: &Species<T>, state: RotState) -> T {
    if state.j == 0 {
        return T::zero();
    }
    let j = T::lit(state.j as f64);
    let km = T::lit((state.k * state.m) as f64);
    -species.dipole * km / (j * (j + T::one()))
}

/// Potential energy `μ_eff |E|`.
#[inline]
pub fn stark_energy<T: Real>(mu_eff: T, field: &FieldSample<T>) -> T {
    mu_eff * field.e_mag
}

/// Force `−μ_eff ∇|E|`.
#[inline]
pub fn stark_force<T: Real>(mu_eff: T, field: &FieldSample<T>) -> Vec3<T> {
    field.grad_mag * (-mu_eff)
}

/// Largest speed a barrier of field `e_barrier` reflects: `sqrt(2 μ_eff E / m)`.
pub fn trap_depth_velocity<T: Real>(mu_eff: T, e_barrier: T, mass: T) -> Result<T> {
    if !(mass > T::zero()) {
        return Err(invalid("mass must be positive"));
    }
    if mu_eff < T::zero() || e_barrier < T::zero() {
        return Err(invalid("mu_eff and e_barrier must be non-negative"));
    }
    Ok((T::two() * mu_eff * e_barrier / mass).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(mu: f64) -> Species<f64> {
        Species::new("test", 5.65e-26, mu).unwrap()
    }

    #[test]
    fn effective_dipole_examples() {
        let s = sp(6.2e-30);
        let lfs = effective_dipole(&s, RotState::new(1, 1, -1).unwrap());
        assert!((lfs - 3.1e-30).abs() < 1e-45);
        let hfs = effective_dipole(&s, RotState::new(1, 1, 1).unwrap());
        assert!((hfs + 3.1e-30).abs() < 1e-45);
        assert_eq!(effective_dipole(&s, RotState::new(3, 2, 0).unwrap()), 0.0);
        assert_eq!(effective_dipole(&s, RotState::new(0, 0, 0).unwrap()), 0.0);
    }

    #[test]
    fn effective_dipole_antisymmetry() {
        let s = sp(6.2e-30);
        for j in 1..5u32 {
            for k in -(j as i32)..=j as i32 {
                for m in -(j as i32)..=j as i32 {
                    let base = effective_dipole(&s, RotState::new(j, k, m).unwrap());
                    assert_eq!(effective_dipole(&s, RotState::new(j, k, -m).unwrap()), -base);
                    assert_eq!(effective_dipole(&s, RotState::new(j, -k, m).unwrap()), -base);
                }
            }
        }
    }

    #[test]
    fn rot_state_bounds() {
        assert!(RotState::new(1, 2, 0).is_err());
        assert!(RotState::new(2, 1, -1).unwrap().is_low_field_seeking());
        assert!(!RotState::new(2, 1, 1).unwrap().is_low_field_seeking());
    }

    #[test]
    fn force_examples() {
        let f = FieldSample { grad_mag: Vec3::new(1e9, 0.0, 0.0), ..Default::default() };
        let force = stark_force(3.1e-30f64, &f);
        assert!((force.x + 3.1e-21).abs() < 1e-33);
        assert_eq!(force.y, 0.0);
        assert_eq!(stark_force(-3.1e-30, &f), -force);
        assert_eq!(stark_force(3.1e-30, &FieldSample::default()), Vec3::zero());
    }

    #[test]
    fn capture_velocity() {
        let v = trap_depth_velocity(3.1e-30f64, 2.0e6, 5.65e-26).unwrap();
        // sqrt(2 * 3.1e-30 * 2e6 / 5.65e-26) = 14.8137...
        assert!((v - 14.8137).abs() < 1e-3);
        assert_eq!(trap_depth_velocity(3.1e-30, 0.0, 5.65e-26).unwrap(), 0.0);
        let v4 = trap_depth_velocity(3.1e-30f64, 8.0e6, 5.65e-26).unwrap();
        assert!((v4 / v - 2.0).abs() < 1e-12);
        assert!(trap_depth_velocity(3.1e-30, 1.0, 0.0).is_err());
    }

    #[test]
    fn ch3f_constants() {
        let s = Species::<f64>::ch3f();
        assert!((s.mass - 5.651e-26).abs() < 1e-29);
    }
}
