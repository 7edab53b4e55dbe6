//! Trap geometry and the electrostatic field model.
//!
//! The plates sit at `z = 0` (bottom) and `z = gap_z` (top). Each plate carries an
//! ideal zero-gap square wave of `±v_micro` with stripe pitch `a` (period `2a`) along
//! `x`, so its potential is the Fourier series
//!
//! ```text
//! Φ(x, z') = Σ_{n odd} (4 V / nπ) sin(nπ x / a) exp(−nπ z' / a)
//! ```
//!
//! with `z'` the distance from the plate. On top of the two microstructure fields
//! come a plate-normal homogeneous offset field (different per trap region, blended
//! by a smoothstep around `region_split_x`), a stripe-parallel wedge component along
//! `y`, and the perimeter barrier. The perimeter magnitude is
//! `e_perimeter · exp(−d/λ)` per wall, combined over walls in quadrature and added to
//! the plate field in quadrature; its vector part is placed orthogonal to the plate
//! field so that `|e_vec| == e_mag` holds exactly.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TrapError};
use crate::num::{smoothstep, smoothstep_deriv, window, Real};
use crate::schedule::RampSchedule;
use crate::vec3::Vec3;

/// Highest confining field the perimeter can provide, V/m.
pub const MAX_PERIMETER_FIELD: f64 = 6.0e6;

/// Rectangle on the `x = length_x` wall through which the exit guide is attached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitAperture<T> {
    pub y_min: T,
    pub y_max: T,
    pub z_min: T,
    pub z_max: T,
}

impl<T: Real> ExitAperture<T> {
    #[inline]
    pub fn contains(&self, y: T, z: T) -> bool {
        y >= self.y_min && y <= self.y_max && z >= self.z_min && z <= self.z_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapGeometry<T> {
    pub length_x: T,
    pub width_y: T,
    pub gap_z: T,
    pub region_split_x: T,
    /// Electrode pitch `a`.
    pub stripe_period: T,
    pub exit_aperture: ExitAperture<T>,
    /// Width of the smoothstep blending the two region offsets.
    pub region_smoothing: T,
    /// Decay length λ of the perimeter barrier.
    pub perimeter_decay: T,
}

impl<T: Real> Default for TrapGeometry<T> {
    fn default() -> Self {
        let gap = T::lit(0.003);
        let width = T::lit(0.020);
        let half_ap = T::lit(0.0015);
        Self {
            length_x: T::lit(0.040),
            width_y: width,
            gap_z: gap,
            region_split_x: T::lit(0.020),
            stripe_period: T::lit(400e-6),
            exit_aperture: ExitAperture {
                y_min: width * T::half() - half_ap,
                y_max: width * T::half() + half_ap,
                z_min: T::zero(),
                z_max: gap,
            },
            region_smoothing: T::two() * gap,
            perimeter_decay: gap / T::PI(),
        }
    }
}

impl<T: Real> TrapGeometry<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: T, name: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.length_x, "length_x")?;
        pos(self.width_y, "width_y")?;
        pos(self.gap_z, "gap_z")?;
        pos(self.stripe_period, "stripe_period")?;
        pos(self.region_smoothing, "region_smoothing")?;
        pos(self.perimeter_decay, "perimeter_decay")?;
        if !(self.region_split_x > T::zero() && self.region_split_x < self.length_x) {
            return Err(invalid(format!(
                "region_split_x must lie strictly inside (0, length_x), got {}",
                self.region_split_x
            )));
        }
        let ap = &self.exit_aperture;
        if !(ap.y_min >= T::zero()
            && ap.y_max <= self.width_y
            && ap.y_min < ap.y_max
            && ap.z_min >= T::zero()
            && ap.z_max <= self.gap_z
            && ap.z_min < ap.z_max)
        {
            return Err(invalid("exit aperture must be a non-empty rectangle on the x = length_x wall"));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= T::zero()
            && p.x <= self.length_x
            && p.y >= T::zero()
            && p.y <= self.width_y
            && p.z >= T::zero()
            && p.z <= self.gap_z
    }

    pub fn bounds(&self) -> Aabb<T> {
        Aabb::new(Vec3::zero(), Vec3::new(self.length_x, self.width_y, self.gap_z))
    }

    pub fn volume(&self) -> T {
        self.length_x * self.width_y * self.gap_z
    }

    /// Decay length of the leading microstructure harmonic, `a/π`.
    #[inline]
    pub fn micro_decay(&self) -> T {
        self.stripe_period / T::PI()
    }

    /// Converts a plate offset voltage into the homogeneous field it produces.
    #[inline]
    pub fn offset_field(&self, v_offset: T) -> T {
        T::two() * v_offset / self.gap_z
    }

    /// Inverse of [`offset_field`](Self::offset_field).
    #[inline]
    pub fn offset_voltage(&self, field: T) -> T {
        field * self.gap_z / T::two()
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Self {
        Self { min, max }
    }

    /// A box with any inverted or non-finite axis is empty; zero extent is allowed.
    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| {
            let (lo, hi) = (self.min.axis(i), self.max.axis(i));
            !(lo.is_finite() && hi.is_finite()) || hi < lo
        })
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        (0..3).all(|i| p.axis(i) >= self.min.axis(i) && p.axis(i) <= self.max.axis(i))
    }

    pub fn clamp(&self, mut p: Vec3<T>) -> Vec3<T> {
        for i in 0..3 {
            let v = p.axis(i).max(self.min.axis(i)).min(self.max.axis(i));
            p.set_axis(i, v);
        }
        p
    }
}

/// Electrical state of the trap at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeConfig<T> {
    /// Stripe amplitude `V_μ`, same on both plates.
    pub v_micro: T,
    /// Plate offset `±V_offset` in region 1 (`x < region_split_x`).
    pub v_offset_region1: T,
    pub v_offset_region2: T,
    /// Peak field of the perimeter barrier, V/m.
    pub e_perimeter: T,
    /// Stripe-parallel field as a fraction of the local microstructure magnitude.
    pub wedge_bias: T,
    /// Perimeter barrier multiplier over the exit aperture: 1 closed, 0 open.
    pub exit_gate: T,
}

impl<T: Real> Default for ElectrodeConfig<T> {
    fn default() -> Self {
        Self {
            v_micro: T::zero(),
            v_offset_region1: T::zero(),
            v_offset_region2: T::zero(),
            e_perimeter: T::zero(),
            wedge_bias: T::zero(),
            exit_gate: T::one(),
        }
    }
}

impl<T: Real> ElectrodeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.v_micro,
            self.v_offset_region1,
            self.v_offset_region2,
            self.e_perimeter,
            self.wedge_bias,
            self.exit_gate,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("electrode configuration contains non-finite values"));
        }
        if self.e_perimeter < T::zero() || self.e_perimeter > T::lit(MAX_PERIMETER_FIELD) {
            return Err(invalid(format!(
                "e_perimeter must lie in [0, {MAX_PERIMETER_FIELD:e}] V/m, got {}",
                self.e_perimeter
            )));
        }
        if self.v_micro < T::zero() {
            return Err(invalid("v_micro must be non-negative"));
        }
        if !(T::zero()..=T::one()).contains(&self.wedge_bias) {
            return Err(invalid("wedge_bias must lie in [0, 1]"));
        }
        if !(T::zero()..=T::one()).contains(&self.exit_gate) {
            return Err(invalid("exit_gate must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Componentwise linear interpolation, `s = 0` gives `a`.
    #[inline]
    pub fn lerp(a: &Self, b: &Self, s: T) -> Self {
        let l = |u: T, v: T| u + (v - u) * s;
        Self {
            v_micro: l(a.v_micro, b.v_micro),
            v_offset_region1: l(a.v_offset_region1, b.v_offset_region1),
            v_offset_region2: l(a.v_offset_region2, b.v_offset_region2),
            e_perimeter: l(a.e_perimeter, b.e_perimeter),
            wedge_bias: l(a.wedge_bias, b.wedge_bias),
            exit_gate: l(a.exit_gate, b.exit_gate),
        }
    }

    #[inline]
    pub fn exit_open(&self) -> bool {
        self.exit_gate < T::half()
    }

    /// Surface amplitude of the leading microstructure harmonic, `4 V_μ / a`.
    #[inline]
    pub fn micro_surface_field(&self, geom: &TrapGeometry<T>) -> T {
        T::lit(4.0) * self.v_micro / geom.stripe_period
    }
}

/// Field vector, magnitude, and gradient of the magnitude at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldSample<T> {
    pub e_vec: Vec3<T>,
    pub e_mag: T,
    pub grad_mag: Vec3<T>,
    /// Perimeter part of `e_vec`, orthogonal to the rest.
    pub perimeter: Vec3<T>,
}

impl<T: Real> FieldSample<T> {
    /// `e_vec` without the perimeter part.
    #[inline]
    pub fn plate_vec(&self) -> Vec3<T> {
        self.e_vec - self.perimeter
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GradientMode<T> {
    Analytic,
    /// Central differences of `e_mag` with the given step.
    FiniteDifference { step: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldOptions<T> {
    pub n_harmonics: usize,
    pub include_microstructure: bool,
    pub include_perimeter: bool,
    pub gradient: GradientMode<T>,
}

impl<T: Real> Default for FieldOptions<T> {
    fn default() -> Self {
        Self {
            n_harmonics: 1,
            include_microstructure: true,
            include_perimeter: true,
            gradient: GradientMode::Analytic,
        }
    }
}

impl<T: Real> FieldOptions<T> {
    /// Offsets only. The microstructure and perimeter are represented by hard walls.
    pub fn hard_wall() -> Self {
        Self { include_microstructure: false, include_perimeter: false, ..Self::default() }
    }

    pub fn finite_difference() -> Self {
        Self { gradient: GradientMode::FiniteDifference { step: T::lit(1e-6) }, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Plate {
    Bottom,
    Top,
}

/// Field `−∇Φ` of one microstructured plate, harmonics `n = 1, 3, …, 2·n_harmonics − 1`.
pub fn microstructure_field<T: Real>(
    pos: Vec3<T>,
    plate: Plate,
    v_micro: T,
    geom: &TrapGeometry<T>,
    n_harmonics: usize,
) -> Result<Vec3<T>> {
    if n_harmonics == 0 {
        return Err(invalid("n_harmonics must be at least 1"));
    }
    let dist = match plate {
        Plate::Bottom => pos.z,
        Plate::Top => geom.gap_z - pos.z,
    };
    if !(dist >= T::zero()) || !pos.x.is_finite() {
        return Err(invalid(format!("position {pos:?} is not in the half-space of the {plate:?} plate")));
    }
    let t = plate_terms(pos.x, dist, v_micro, geom.stripe_period, n_harmonics);
    // The top plate's field points the other way along z.
    let ez = match plate {
        Plate::Bottom => t.ez,
        Plate::Top => -t.ez,
    };
    Ok(Vec3::new(t.ex, T::zero(), ez))
}

/// One plate's field and Jacobian in the local frame (z' pointing away from the plate).
#[derive(Clone, Copy, Default)]
struct PlateTerms<T> {
    ex: T,
    ez: T,
    dex_dx: T,
    /// Derivatives with respect to the plate distance `z'`.
    dex_dd: T,
    dez_dx: T,
    dez_dd: T,
}

#[inline]
fn plate_terms<T: Real>(x: T, dist: T, v: T, a: T, n_harmonics: usize) -> PlateTerms<T> {
    let k1 = T::PI() / a;
    let arg = k1 * dist;
    // Below e^-60 the contribution is beyond f64 resolution relative to any other term.
    if v == T::zero() || arg > T::lit(60.0) {
        return PlateTerms::default();
    }
    let trig = Trig::new(k1 * x, n_harmonics);
    plate_terms_with(&trig, (-arg).exp(), T::lit(4.0) * v / a, k1, n_harmonics)
}

/// `sin`/`cos` of the leading and doubled argument, shared by both plates.
#[derive(Clone, Copy)]
struct Trig<T> {
    s1: T,
    c1: T,
    s2: T,
    c2: T,
}

impl<T: Real> Trig<T> {
    #[inline]
    fn new(arg: T, n_harmonics: usize) -> Self {
        let (s1, c1) = arg.sin_cos();
        let (s2, c2) = if n_harmonics > 1 {
            (T::two() * s1 * c1, c1 * c1 - s1 * s1)
        } else {
            (T::zero(), T::one())
        };
        Self { s1, c1, s2, c2 }
    }
}

/// Harmonic sum given the shared trig values and the leading decay factor `e1`.
#[inline]
fn plate_terms_with<T: Real>(tr: &Trig<T>, e1: T, amp: T, k1: T, n_harmonics: usize) -> PlateTerms<T> {
    let mut out = PlateTerms::default();
    let e2 = e1 * e1;
    let (mut sn, mut cn, mut en) = (tr.s1, tr.c1, e1);
    for j in 0..n_harmonics {
        let kn = T::lit((2 * j + 1) as f64) * k1;
        let b = amp * en;
        let bk = b * kn;
        out.ex = out.ex - b * cn;
        out.ez = out.ez + b * sn;
        out.dex_dx = out.dex_dx + bk * sn;
        out.dex_dd = out.dex_dd + bk * cn;
        out.dez_dx = out.dez_dx + bk * cn;
        out.dez_dd = out.dez_dd - bk * sn;
        let s_next = sn * tr.c2 + cn * tr.s2;
        cn = cn * tr.c2 - sn * tr.s2;
        sn = s_next;
        en = en * e2;
        if en < T::lit(1e-30) {
            break;
        }
    }
    out
}

/// Evaluates the trap field for a given geometry and options.
#[derive(Clone, Copy, Debug)]
pub struct FieldModel<'a, T> {
    pub geometry: &'a TrapGeometry<T>,
    pub options: FieldOptions<T>,
    /// π / a
    k1: T,
    /// exp(−π g / a)
    gap_decay: T,
    inv_lambda: T,
    /// exp(−L / λ)
    length_decay: T,
    /// exp(−W / λ)
    width_decay: T,
}

/// Plate-derived field (microstructure + wedge + offset) and half the gradient of its
/// squared magnitude, plus the same for the perimeter magnitude.
struct Parts<T> {
    plate: Vec3<T>,
    plate_half_grad_sq: Vec3<T>,
    perim: T,
    perim_half_grad_sq: Vec3<T>,
}

impl<'a, T: Real> FieldModel<'a, T> {
    pub fn new(geometry: &'a TrapGeometry<T>, options: &FieldOptions<T>) -> Self {
        let k1 = T::PI() / geometry.stripe_period;
        let inv_lambda = T::one() / geometry.perimeter_decay;
        Self {
            geometry,
            options: *options,
            k1,
            gap_decay: (-k1 * geometry.gap_z).exp(),
            inv_lambda,
            length_decay: (-geometry.length_x * inv_lambda).exp(),
            width_decay: (-geometry.width_y * inv_lambda).exp(),
        }
    }

    fn parts(&self, p: Vec3<T>, c: &ElectrodeConfig<T>) -> Parts<T> {
        let g = self.geometry;
        let zero = T::zero();

        let (mut ex, mut ez) = (zero, zero);
        let (mut dex_dx, mut dex_dz, mut dez_dx, mut dez_dz) = (zero, zero, zero, zero);
        if self.options.include_microstructure {
            let n = self.options.n_harmonics.max(1);
            let (b, t) = self.plate_pair(p, c.v_micro, n);
            // Top plate: ez flips sign and d/dz = -d/dz'.
            ex = b.ex + t.ex;
            ez = b.ez - t.ez;
            dex_dx = b.dex_dx + t.dex_dx;
            dex_dz = b.dex_dd - t.dex_dd;
            dez_dx = b.dez_dx - t.dez_dx;
            dez_dz = b.dez_dd + t.dez_dd;
        }
        let em = (ex * ex + ez * ez).sqrt();
        let (dem_dx, dem_dz) = if em > zero {
            ((ex * dex_dx + ez * dez_dx) / em, (ex * dex_dz + ez * dez_dz) / em)
        } else {
            (zero, zero)
        };
        let wy = c.wedge_bias * em;
        let (dwy_dx, dwy_dz) = (c.wedge_bias * dem_dx, c.wedge_bias * dem_dz);

        let h = g.region_smoothing;
        let xi = (p.x - (g.region_split_x - h * T::half())) / h;
        let e1 = g.offset_field(c.v_offset_region1);
        let e2 = g.offset_field(c.v_offset_region2);
        let eo = e1 + (e2 - e1) * smoothstep(xi);
        let deo_dx = (e2 - e1) * smoothstep_deriv(xi) / h;

        let pz = ez + eo;
        let plate = Vec3::new(ex, wy, pz);
        let plate_half_grad_sq = Vec3::new(
            ex * dex_dx + wy * dwy_dx + pz * (dez_dx + deo_dx),
            zero,
            ex * dex_dz + wy * dwy_dz + pz * dez_dz,
        );

        let (perim, perim_half_grad_sq) = if self.options.include_perimeter && c.e_perimeter > zero {
            self.perimeter(p, c)
        } else {
            (zero, Vec3::zero())
        };
        Parts { plate, plate_half_grad_sq, perim, perim_half_grad_sq }
    }

    /// Bottom and top plate terms sharing one `sin_cos` and one `exp`.
    #[inline]
    fn plate_pair(&self, p: Vec3<T>, v: T, n: usize) -> (PlateTerms<T>, PlateTerms<T>) {
        let g = self.geometry;
        if v == T::zero() {
            return (PlateTerms::default(), PlateTerms::default());
        }
        let amp = T::lit(4.0) * v / g.stripe_period;
        let trig = Trig::new(self.k1 * p.x, n);
        let e_bottom = (-self.k1 * p.z).exp();
        // exp(−k (g − z)) = exp(−k g) / exp(−k z), unless that would underflow
        let e_top = if e_bottom > T::min_positive_value().sqrt() {
            self.gap_decay / e_bottom
        } else {
            (-self.k1 * (g.gap_z - p.z)).exp()
        };
        let b = plate_terms_with(&trig, e_bottom, amp, self.k1, n);
        let t = plate_terms_with(&trig, e_top, amp, self.k1, n);
        (b, t)
    }

    /// Perimeter magnitude and `∇(P²/2)`.
    fn perimeter(&self, p: Vec3<T>, c: &ElectrodeConfig<T>) -> (T, Vec3<T>) {
        let g = self.geometry;
        let lam = g.perimeter_decay;
        let inv = self.inv_lambda;
        // far-wall factors from the near ones: exp(−(L − x)/λ) = exp(−L/λ) / exp(−x/λ)
        let tiny = T::min_positive_value().sqrt();
        let q_x0 = (-p.x * inv).exp();
        let u_x1 = if q_x0 > tiny { self.length_decay / q_x0 } else { (-(g.length_x - p.x) * inv).exp() };
        let q_y0 = (-p.y * inv).exp();
        let q_y1 = if q_y0 > tiny { self.width_decay / q_y0 } else { (-(g.width_y - p.y) * inv).exp() };

        let ap = &g.exit_aperture;
        let (wy, dwy) = window(p.y, ap.y_min, ap.y_max, lam);
        let (wz, dwz) = window(p.z, ap.z_min, ap.z_max, lam);
        let open = T::one() - c.exit_gate;
        let gate = T::one() - open * wy * wz;
        let q_x1 = gate * u_x1;

        let sum = q_x0 * q_x0 + q_x1 * q_x1 + q_y0 * q_y0 + q_y1 * q_y1;
        let ep2 = c.e_perimeter * c.e_perimeter;
        let perim = c.e_perimeter * sum.sqrt();
        let gx = -q_x0 * q_x0 * inv + q_x1 * q_x1 * inv;
        let gy = -q_y0 * q_y0 * inv + q_y1 * q_y1 * inv + q_x1 * u_x1 * (-open * dwy * wz);
        let gz = q_x1 * u_x1 * (-open * wy * dwz);
        (perim, Vec3::new(gx, gy, gz) * ep2)
    }

    #[inline]
    fn magnitude(&self, p: Vec3<T>, c: &ElectrodeConfig<T>) -> T {
        let parts = self.parts(p, c);
        (parts.plate.norm_sq() + parts.perim * parts.perim).sqrt()
    }

    /// Field at `p` for the electrode state `c`. No domain checking.
    #[inline]
    pub fn sample(&self, p: Vec3<T>, c: &ElectrodeConfig<T>) -> FieldSample<T> {
        let parts = self.parts(p, c);
        let plate_sq = parts.plate.norm_sq();
        let e_mag = (plate_sq + parts.perim * parts.perim).sqrt();

        let perimeter = if parts.perim > T::zero() {
            let inward = (-parts.perim_half_grad_sq).normalized().unwrap_or(Vec3::unit(0));
            let dir = match parts.plate.normalized() {
                Some(ph) => {
                    let n = inward - ph * inward.dot(ph);
                    n.normalized()
                        .or_else(|| ph.cross(Vec3::unit(0)).normalized())
                        .or_else(|| ph.cross(Vec3::unit(1)).normalized())
                        .unwrap_or(inward)
                }
                None => inward,
            };
            dir * parts.perim
        } else {
            Vec3::zero()
        };
        let e_vec = parts.plate + perimeter;

        let grad_mag = match self.options.gradient {
            GradientMode::Analytic => {
                if e_mag > T::zero() {
                    (parts.plate_half_grad_sq + parts.perim_half_grad_sq) * (T::one() / e_mag)
                } else {
                    Vec3::zero()
                }
            }
            GradientMode::FiniteDifference { step } => {
                let mut grad = Vec3::zero();
                for i in 0..3 {
                    let d = Vec3::unit(i) * step;
                    let hi = self.magnitude(p + d, c);
                    let lo = self.magnitude(p - d, c);
                    grad.set_axis(i, (hi - lo) / (T::two() * step));
                }
                grad
            }
        };
        FieldSample { e_vec, e_mag, grad_mag, perimeter }
    }
}

/// Field at `pos` and time `t` under `schedule`, with domain checks.
pub fn total_field<T: Real>(
    pos: Vec3<T>,
    t: T,
    geometry: &TrapGeometry<T>,
    schedule: &RampSchedule<T>,
    options: &FieldOptions<T>,
) -> Result<FieldSample<T>> {
    if !geometry.contains(pos) {
        return Err(TrapError::Domain(format!("position {pos:?} lies outside the trap")));
    }
    let cfg = schedule.at(t)?;
    Ok(FieldModel::new(geometry, options).sample(pos, &cfg))
}

/// Grid scan and refinement settings for [`find_field_zeros`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroSearch<T> {
    /// Grid pitch; `None` means `stripe_period / 20`.
    pub resolution: Option<T>,
    pub tolerance: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for ZeroSearch<T> {
    fn default() -> Self {
        Self { resolution: None, tolerance: T::lit(1e-9), max_iterations: 200 }
    }
}

/// Local minima of `e_mag` inside `region` whose refined value is below `threshold`.
pub fn find_field_zeros<T: Real>(
    region: &Aabb<T>,
    t: T,
    geometry: &TrapGeometry<T>,
    schedule: &RampSchedule<T>,
    options: &FieldOptions<T>,
    threshold: T,
    search: &ZeroSearch<T>,
) -> Result<Vec<Vec3<T>>> {
    if region.is_empty() {
        return Err(invalid("zero search region is empty"));
    }
    if !(threshold > T::zero()) {
        return Err(invalid("threshold must be positive"));
    }
    let bounds = geometry.bounds();
    if !(bounds.contains(region.min) && bounds.contains(region.max)) {
        return Err(TrapError::Domain("zero search region extends outside the trap".into()));
    }
    let cfg = schedule.at(t)?;
    let model = FieldModel::new(geometry, options);
    let res = search.resolution.unwrap_or(geometry.stripe_period / T::lit(20.0));
    if !(res > T::zero()) {
        return Err(invalid("grid resolution must be positive"));
    }

    let counts: Vec<usize> = (0..3)
        .map(|i| {
            let ext = region.max.axis(i) - region.min.axis(i);
            (ext / res).floor().to_usize().unwrap_or(0) + 1
        })
        .collect();
    let coord = |i: usize, k: usize| -> T {
        if counts[i] == 1 {
            (region.min.axis(i) + region.max.axis(i)) * T::half()
        } else {
            let step = (region.max.axis(i) - region.min.axis(i)) / T::lit((counts[i] - 1) as f64);
            region.min.axis(i) + step * T::lit(k as f64)
        }
    };
    let idx = |i: usize, j: usize, k: usize| (i * counts[1] + j) * counts[2] + k;
    let mut grid = vec![T::zero(); counts[0] * counts[1] * counts[2]];
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                let p = Vec3::new(coord(0, i), coord(1, j), coord(2, k));
                grid[idx(i, j, k)] = model.sample(p, &cfg).e_mag;
            }
        }
    }

    let mut found: Vec<Vec3<T>> = Vec::new();
    let dedupe = geometry.stripe_period / T::lit(10.0);
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                let v = grid[idx(i, j, k)];
                let mut is_min = true;
                'nb: for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        for dk in -1i64..=1 {
                            if di == 0 && dj == 0 && dk == 0 {
                                continue;
                            }
                            let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                            if ni < 0
                                || nj < 0
                                || nk < 0
                                || ni >= counts[0] as i64
                                || nj >= counts[1] as i64
                                || nk >= counts[2] as i64
                            {
                                continue;
                            }
                            if grid[idx(ni as usize, nj as usize, nk as usize)] < v {
                                is_min = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if !is_min {
                    continue;
                }
                let start = Vec3::new(coord(0, i), coord(1, j), coord(2, k));
                let (p, val) = refine_minimum(&model, &cfg, region, start, search);
                if val < threshold && !on_face(region, p, res) && !found.iter().any(|q| (*q - p).norm() < dedupe) {
                    found.push(p);
                }
            }
        }
    }
    Ok(found)
}

/// True when `p` sits on a face of `region` along an axis of nonzero extent.
/// Such points are minima of the search box, not of the field.
fn on_face<T: Real>(region: &Aabb<T>, p: Vec3<T>, res: T) -> bool {
    let eps = res * T::lit(1e-3);
    (0..3).any(|i| {
        let (lo, hi) = (region.min.axis(i), region.max.axis(i));
        hi > lo && (p.axis(i) - lo <= eps || hi - p.axis(i) <= eps)
    })
}

/// Gradient descent on `e_mag²` with backtracking, clamped to `region`.
fn refine_minimum<T: Real>(
    model: &FieldModel<'_, T>,
    cfg: &ElectrodeConfig<T>,
    region: &Aabb<T>,
    start: Vec3<T>,
    search: &ZeroSearch<T>,
) -> (Vec3<T>, T) {
    let mut p = start;
    let mut s = model.sample(p, cfg);
    for _ in 0..search.max_iterations {
        let f = s.e_mag * s.e_mag;
        let grad = s.grad_mag * (T::two() * s.e_mag);
        let gn2 = grad.norm_sq();
        if !(gn2 > T::zero()) {
            break;
        }
        // Full Newton step for a conical zero, halved until the objective drops.
        let mut alpha = T::two() * f / gn2;
        let mut moved = false;
        for _ in 0..60 {
            let q = region.clamp(p - grad * alpha);
            let sq = model.sample(q, cfg);
            if sq.e_mag * sq.e_mag < f {
                let dp = (q - p).norm();
                p = q;
                s = sq;
                moved = dp >= search.tolerance;
                break;
            }
            alpha = alpha * T::half();
        }
        if !moved {
            break;
        }
    }
    (p, s.e_mag)
}
