use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TrapError};
use crate::fields::ElectrodeConfig;
use crate::num::Real;

/// Piecewise-linear electrode trajectory.
///
/// The domain is `[t_first, t_last]`; a schedule with a single breakpoint is static
/// for all `t ≥ t_first`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule<T> {
    breakpoints: Vec<(T, ElectrodeConfig<T>)>,
}

impl<T: Real> RampSchedule<T> {
    pub fn new(breakpoints: Vec<(T, ElectrodeConfig<T>)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(invalid("a schedule needs at least one breakpoint"));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(invalid(format!(
                    "breakpoint times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for (t, cfg) in &breakpoints {
            if !t.is_finite() {
                return Err(invalid("breakpoint time must be finite"));
            }
            cfg.validate()?;
        }
        Ok(Self { breakpoints })
    }

    /// Static schedule starting at `t = 0`.
    pub fn constant(cfg: ElectrodeConfig<T>) -> Result<Self> {
        Self::new(vec![(T::zero(), cfg)])
    }

    pub fn breakpoints(&self) -> &[(T, ElectrodeConfig<T>)] {
        &self.breakpoints
    }

    pub fn start(&self) -> T {
        self.breakpoints[0].0
    }

    /// Last breakpoint time, or `+∞` for a static schedule.
    pub fn end(&self) -> T {
        if self.breakpoints.len() == 1 {
            T::infinity()
        } else {
            self.breakpoints[self.breakpoints.len() - 1].0
        }
    }

    pub fn duration(&self) -> T {
        self.end() - self.start()
    }

    pub fn contains(&self, t: T) -> bool {
        t >= self.start() && t <= self.end()
    }

    pub fn at(&self, t: T) -> Result<ElectrodeConfig<T>> {
        if !self.contains(t) {
            return Err(TrapError::Range(format!(
                "t = {t} s outside schedule domain [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        Ok(self.at_clamped(t))
    }

    /// Interpolated configuration, holding the end values outside the domain.
    #[inline]
    pub fn at_clamped(&self, t: T) -> ElectrodeConfig<T> {
        let seg = self.segment(t);
        self.interpolate(seg, t)
    }

    /// Index `i` of the segment `[t_i, t_{i+1})` containing `t` (clamped).
    #[inline]
    pub fn segment(&self, t: T) -> usize {
        let n = self.breakpoints.len();
        if n == 1 || t <= self.breakpoints[0].0 {
            return 0;
        }
        // partition_point gives the first breakpoint strictly after t
        let i = self.breakpoints.partition_point(|(bt, _)| *bt <= t);
        (i - 1).min(n - 2)
    }

    #[inline]
    pub fn interpolate(&self, seg: usize, t: T) -> ElectrodeConfig<T> {
        let n = self.breakpoints.len();
        if n == 1 {
            return self.breakpoints[0].1;
        }
        let (t0, a) = &self.breakpoints[seg];
        let (t1, b) = &self.breakpoints[seg + 1];
        let s = ((t - *t0) / (*t1 - *t0)).max(T::zero()).min(T::one());
        ElectrodeConfig::lerp(a, b, s)
    }

    /// Time span of segment `seg`. Static schedules have one infinite segment.
    pub fn segment_span(&self, seg: usize) -> (T, T) {
        if self.breakpoints.len() == 1 {
            (self.breakpoints[0].0, T::infinity())
        } else {
            (self.breakpoints[seg].0, self.breakpoints[seg + 1].0)
        }
    }

    pub fn segment_count(&self) -> usize {
        self.breakpoints.len().saturating_sub(1).max(1)
    }

    /// Endpoint configurations of segment `seg`.
    pub fn segment_ends(&self, seg: usize) -> (ElectrodeConfig<T>, ElectrodeConfig<T>) {
        if self.breakpoints.len() == 1 {
            (self.breakpoints[0].1, self.breakpoints[0].1)
        } else {
            (self.breakpoints[seg].1, self.breakpoints[seg + 1].1)
        }
    }
}
