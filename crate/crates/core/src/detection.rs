//! Time-of-flight synthesis: ballistic transport down the exit guide and binning.

use serde::{Deserialize, Serialize};

use crate::dynamics::MoleculeState;
use crate::error::{invalid, Result, TrapError};
use crate::num::Real;
use crate::rng::{Domain, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionGeometry<T> {
    /// Length of the guide between trap exit and detector, m.
    pub guide_length: T,
    pub detection_efficiency: T,
    /// s
    pub bin_width: T,
    /// Histogram span after the trigger; `None` covers every arrival.
    pub window: Option<T>,
    /// Standard deviation of Gaussian arrival-time jitter, s.
    pub jitter: T,
}

impl<T: Real> Default for DetectionGeometry<T> {
    fn default() -> Self {
        Self {
            guide_length: T::lit(0.30),
            detection_efficiency: T::one(),
            bin_width: T::lit(0.01),
            window: None,
            jitter: T::zero(),
        }
    }
}

impl<T: Real> DetectionGeometry<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.guide_length > T::zero() && self.guide_length.is_finite()) {
            return Err(invalid("guide_length must be positive"));
        }
        if !(self.bin_width > T::zero() && self.bin_width.is_finite()) {
            return Err(invalid("bin_width must be positive"));
        }
        if !(self.detection_efficiency > T::zero() && self.detection_efficiency <= T::one()) {
            return Err(invalid("detection_efficiency must lie in (0, 1]"));
        }
        if let Some(w) = self.window {
            if !(w > T::zero() && w.is_finite()) {
                return Err(invalid("window must be positive"));
            }
        }
        if !(self.jitter >= T::zero() && self.jitter.is_finite()) {
            return Err(invalid("jitter must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    UnitPeak,
    UnitArea,
}

impl Normalization {
    pub fn label(self) -> &'static str {
        match self {
            Normalization::Raw => "raw",
            Normalization::UnitPeak => "unit_peak",
            Normalization::UnitArea => "unit_area",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(Normalization::Raw),
            "unit_peak" => Some(Normalization::UnitPeak),
            "unit_area" => Some(Normalization::UnitArea),
            _ => None,
        }
    }
}

/// Binned arrival histogram. Bin times are centres, measured from the trigger `t0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TofSignal<T> {
    pub t0: T,
    pub bin_width: T,
    pub guide_length: T,
    pub bins: Vec<(T, T)>,
    pub normalization: Normalization,
}

impl<T: Real> TofSignal<T> {
    /// Empty raw histogram with `n` bins starting at the trigger.
    pub fn zeros(t0: T, bin_width: T, guide_length: T, n: usize) -> Self {
        let bins = (0..n).map(|k| (bin_width * (T::lit(k as f64) + T::half()), T::zero())).collect();
        Self { t0, bin_width, guide_length, bins, normalization: Normalization::Raw }
    }

    /// Builds a signal from centres and counts, checking the bin invariants.
    pub fn from_bins(t0: T, bin_width: T, guide_length: T, bins: Vec<(T, T)>, normalization: Normalization) -> Result<Self> {
        let s = Self { t0, bin_width, guide_length, bins, normalization };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > T::zero()) {
            return Err(invalid("bin_width must be positive"));
        }
        let tol = self.bin_width * T::lit(1e-6);
        for w in self.bins.windows(2) {
            if ((w[1].0 - w[0].0) - self.bin_width).abs() > tol {
                return Err(TrapError::Data("bin centres must have constant pitch equal to bin_width".into()));
            }
        }
        if self.bins.iter().any(|b| !(b.1 >= T::zero()) || !b.0.is_finite()) {
            return Err(TrapError::Data("counts must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> T {
        self.bins.iter().fold(T::zero(), |a, b| a + b.1)
    }

    /// Sum of counts times bin width.
    pub fn area(&self) -> T {
        self.total() * self.bin_width
    }

    /// Index of the highest bin (first one on ties).
    pub fn peak_index(&self) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (i, b) in self.bins.iter().enumerate() {
            if best.is_none_or(|(_, c)| b.1 > c) {
                best = Some((i, b.1));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Result of [`transport_and_bin`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionOutcome<T> {
    pub signal: TofSignal<T>,
    pub detected: usize,
    /// Exited with `v_x ≤ 0`, so never entered the guide.
    pub skipped_backward: usize,
    /// Lost to the detection efficiency.
    pub missed: usize,
    /// Arrived after the histogram window.
    pub late: usize,
}

/// Arrival at `t_exit + L / v_x`, recorded with probability `detection_efficiency`.
/// Each molecule's draws come from its own detection stream.
pub fn transport_and_bin<T: Real>(
    exiting: &[(MoleculeState<T>, T)],
    t0: T,
    det: &DetectionGeometry<T>,
    seed: u64,
) -> Result<DetectionOutcome<T>> {
    det.validate()?;
    let mut arrivals = Vec::with_capacity(exiting.len());
    let mut skipped_backward = 0;
    let mut missed = 0;
    for (m, t_exit) in exiting {
        if !(*t_exit >= t0) {
            return Err(invalid(format!("exit time {t_exit} precedes the trigger {t0}")));
        }
        let vz = m.vel.x;
        if !(vz > T::zero()) {
            skipped_backward += 1;
            continue;
        }
        let mut rng = Stream::new(seed, Domain::Detection, m.id);
        if det.detection_efficiency < T::one() && !rng.bernoulli(det.detection_efficiency.to_f64_lossy()) {
            missed += 1;
            continue;
        }
        let mut t = *t_exit - t0 + det.guide_length / vz;
        if det.jitter > T::zero() {
            t = t + det.jitter * T::lit(rng.normal());
        }
        arrivals.push(t.max(T::zero()));
    }
    if skipped_backward > 0 {
        log::warn!("{skipped_backward} exiting molecules had v_x <= 0 and were not transported");
    }

    let bw = det.bin_width;
    let n_bins = match det.window {
        Some(w) => (w / bw).ceil().to_f64_lossy() as usize,
        None => arrivals
            .iter()
            .map(|&a| (a / bw).floor().to_f64_lossy() as usize + 1)
            .max()
            .unwrap_or(0),
    };
    let mut signal = TofSignal::zeros(t0, bw, det.guide_length, n_bins);
    let mut late = 0;
    let mut detected = 0;
    for a in arrivals {
        let k = (a / bw).floor().to_f64_lossy() as usize;
        match signal.bins.get_mut(k) {
            Some(b) => {
                b.1 = b.1 + T::one();
                detected += 1;
            }
            None => late += 1,
        }
    }
    Ok(DetectionOutcome { signal, detected, skipped_backward, missed, late })
}

/// Rescales a signal to unit peak or unit area. Idempotent per mode.
pub fn normalize<T: Real>(signal: &TofSignal<T>, mode: Normalization) -> Result<TofSignal<T>> {
    let scale = match mode {
        Normalization::Raw => return Ok(signal.clone()),
        Normalization::UnitPeak => signal.bins.iter().fold(T::zero(), |a, b| a.max(b.1)),
        Normalization::UnitArea => signal.area(),
    };
    if !(scale > T::zero()) {
        return Err(TrapError::Normalization("cannot normalize an all-zero signal".into()));
    }
    let mut out = signal.clone();
    for b in &mut out.bins {
        b.1 = b.1 / scale;
    }
    out.normalization = mode;
    Ok(out)
}

/// Rising-edge cumulative curve: `(t, S)` at bin right edges from the first bin up to
/// and including the peak bin, normalized so `S = 1` at the peak.
pub fn rising_edge_cumulative<T: Real>(signal: &TofSignal<T>) -> Vec<(T, T)> {
    let Some(peak) = signal.peak_index() else {
        return Vec::new();
    };
    let half = signal.bin_width * T::half();
    let mut acc = T::zero();
    let mut out: Vec<(T, T)> = signal.bins[..=peak]
        .iter()
        .map(|&(t, c)| {
            acc = acc + c;
            (t + half, acc)
        })
        .collect();
    if acc > T::zero() {
        for p in &mut out {
            p.1 = p.1 / acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec3::Vec3;

    fn mol(id: u64, vx: f64) -> MoleculeState<f64> {
        MoleculeState::new(id, Vec3::zero(), Vec3::new(vx, 0.0, 0.0), 3.1e-30)
    }

    fn det(bw: f64) -> DetectionGeometry<f64> {
        DetectionGeometry { bin_width: bw, ..DetectionGeometry::default() }
    }

    #[test]
    fn single_molecule_arrival() {
        let out = transport_and_bin(&[(mol(0, 6.0), 2.0)], 2.0, &det(1e-3), 1).unwrap();
        assert_eq!(out.detected, 1);
        let k = out.signal.bins.iter().position(|b| b.1 > 0.0).unwrap();
        // arrival 0.05 s after the trigger, inside the reported bin
        let (c, _) = out.signal.bins[k];
        assert!((c - 0.05).abs() <= 0.5e-3 + 1e-12, "{c}");
    }

    #[test]
    fn binning_conserves_counts() {
        let ms: Vec<_> = (0..500).map(|i| (mol(i, 2.0 + i as f64 * 0.01), 0.1)).collect();
        let out = transport_and_bin(&ms, 0.0, &det(1e-3), 1).unwrap();
        assert_eq!(out.signal.total(), 500.0);
        assert_eq!(out.detected, 500);
    }

    #[test]
    fn backward_and_early_exits() {
        let out = transport_and_bin(&[(mol(0, -1.0), 1.0), (mol(1, 0.0), 1.0)], 0.0, &det(1e-3), 1).unwrap();
        assert_eq!(out.skipped_backward, 2);
        assert!(transport_and_bin(&[(mol(0, 1.0), 0.5)], 1.0, &det(1e-3), 1).is_err());
    }

    #[test]
    fn efficiency_is_deterministic() {
        let d = DetectionGeometry { detection_efficiency: 0.5, ..det(1e-3) };
        let ms: Vec<_> = (0..2000).map(|i| (mol(i, 5.0), 0.0)).collect();
        let a = transport_and_bin(&ms, 0.0, &d, 9).unwrap();
        let b = transport_and_bin(&ms, 0.0, &d, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.detected as f64 - 1000.0).abs() < 150.0);
        assert_eq!(a.detected + a.missed, 2000);
    }

    #[test]
    fn normalization_modes() {
        let s: TofSignal<f64> = TofSignal::from_bins(0.0, 0.5, 0.3, vec![(0.25, 1.0), (0.75, 4.0), (1.25, 2.0)], Normalization::Raw).unwrap();
        let p = normalize(&s, Normalization::UnitPeak).unwrap();
        assert_eq!(p.bins[1].1, 1.0);
        assert_eq!(normalize(&p, Normalization::UnitPeak).unwrap(), p);
        let a = normalize(&s, Normalization::UnitArea).unwrap();
        assert!((a.area() - 1.0).abs() < 1e-12);
        assert!((normalize(&a, Normalization::UnitArea).unwrap().area() - 1.0).abs() < 1e-12);
        let z = TofSignal::zeros(0.0, 0.5, 0.3, 3);
        assert!(matches!(normalize(&z, Normalization::UnitPeak), Err(TrapError::Normalization(_))));
    }

    #[test]
    fn rising_edge_stops_at_peak() {
        let s = TofSignal::from_bins(0.0, 1.0, 0.3, vec![(0.5, 0.0), (1.5, 1.0), (2.5, 3.0), (3.5, 1.0)], Normalization::Raw).unwrap();
        let e = rising_edge_cumulative(&s);
        assert_eq!(e, vec![(1.0, 0.0), (2.0, 0.25), (3.0, 1.0)]);
    }

    #[test]
    fn rejects_uneven_bins() {
        assert!(TofSignal::from_bins(0.0, 1.0, 0.3, vec![(0.5, 0.0), (2.0, 1.0)], Normalization::Raw).is_err());
    }
}
