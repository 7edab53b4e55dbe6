//! CSV artifacts: field maps, trajectory dumps, and TOF signals.
//!
//! Comment lines start with `#` and hold whitespace-separated `key=value` pairs.

use std::io::{BufRead, Write};

use crate::detection::{Normalization, TofSignal};
use crate::dynamics::TrajectoryRow;
use crate::error::{Result, TrapError};
use crate::fields::{ElectrodeConfig, FieldModel};
use crate::num::Real;
use crate::schedule::RampSchedule;
use crate::vec3::Vec3;

/// Provenance written as the first comment line of every artifact.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# config_sha256={} seed={}", self.config_sha256, self.seed)
    }
}

/// Regular sampling grid, inclusive of both ends on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
    pub counts: [usize; 3],
}

impl<T: Real> Grid<T> {
    fn coord(&self, axis: usize, i: usize) -> T {
        let n = self.counts[axis];
        if n <= 1 {
            return self.min[axis];
        }
        self.min[axis] + (self.max[axis] - self.min[axis]) * T::lit(i as f64 / (n - 1) as f64)
    }

    /// Points in z-fastest raster order.
    pub fn points(&self) -> impl Iterator<Item = Vec3<T>> + '_ {
        let [nx, ny, nz] = self.counts;
        (0..nx).flat_map(move |i| {
            (0..ny).flat_map(move |j| {
                (0..nz).map(move |k| Vec3::new(self.coord(0, i), self.coord(1, j), self.coord(2, k)))
            })
        })
    }
}

pub fn write_field_map<T: Real>(
    w: &mut impl Write,
    model: &FieldModel<'_, T>,
    schedule: &RampSchedule<T>,
    grid: &Grid<T>,
    times: &[T],
    prov: &Provenance,
) -> Result<()> {
    let g = model.geometry;
    for p in [grid.min, grid.max] {
        if !g.contains(p) {
            return Err(TrapError::Domain(format!("grid corner ({}, {}, {}) outside the trap", p.x, p.y, p.z)));
        }
    }
    let cfgs: Vec<(T, ElectrodeConfig<T>)> = times
        .iter()
        .map(|&t| schedule.at(t).map(|c| (t, c)))
        .collect::<Result<_>>()?;
    let io = |e: std::io::Error| TrapError::Data(format!("write failed: {e}"));
    prov.write(w).map_err(io)?;
    writeln!(w, "x,y,z,t,Ex,Ey,Ez,Emag").map_err(io)?;
    for (t, c) in &cfgs {
        for p in grid.points() {
            let f = model.sample(p, c);
            writeln!(w, "{},{},{},{},{},{},{},{}", p.x, p.y, p.z, t, f.e_vec.x, f.e_vec.y, f.e_vec.z, f.e_mag)
                .map_err(io)?;
        }
    }
    Ok(())
}

pub fn write_trajectory<T: Real>(w: &mut impl Write, rows: &[TrajectoryRow<T>], prov: &Provenance) -> std::io::Result<()> {
    prov.write(w)?;
    writeln!(w, "i,t,x,y,z,vx,vy,vz,status")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.id,
            r.t,
            r.pos.x,
            r.pos.y,
            r.pos.z,
            r.vel.x,
            r.vel.y,
            r.vel.z,
            r.status.label()
        )?;
    }
    Ok(())
}

pub fn write_tof<T: Real>(w: &mut impl Write, signal: &TofSignal<T>, prov: &Provenance) -> std::io::Result<()> {
    prov.write(w)?;
    writeln!(
        w,
        "# t0={} bin_width={} L={} normalization={}",
        signal.t0,
        signal.bin_width,
        signal.guide_length,
        signal.normalization.label()
    )?;
    writeln!(w, "t_s,count")?;
    for (t, c) in &signal.bins {
        writeln!(w, "{t},{c}")?;
    }
    Ok(())
}

fn parse_num<T: Real>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(T::lit)
        .ok_or_else(|| TrapError::Data(format!("line {line}: cannot parse {what} from {s:?}")))
}

/// Reads a TOF CSV written by [`write_tof`].
pub fn read_tof<T: Real>(r: impl BufRead) -> Result<TofSignal<T>> {
    let mut meta = std::collections::HashMap::new();
    let mut bins = Vec::new();
    let mut header = false;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| TrapError::Data(format!("read failed: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            for kv in c.split_whitespace() {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
            continue;
        }
        if !header {
            if line.replace(' ', "") != "t_s,count" {
                return Err(TrapError::Data(format!("line {}: expected header t_s,count", n + 1)));
            }
            header = true;
            continue;
        }
        let mut it = line.split(',');
        let (Some(t), Some(c), None) = (it.next(), it.next(), it.next()) else {
            return Err(TrapError::Data(format!("line {}: expected two columns", n + 1)));
        };
        bins.push((parse_num(t, "t_s", n + 1)?, parse_num(c, "count", n + 1)?));
    }
    if !header {
        return Err(TrapError::Data("missing header t_s,count".into()));
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| TrapError::Data(format!("missing metadata {k}")));
    let t0 = parse_num(get("t0")?, "t0", 0)?;
    let bin_width = parse_num(get("bin_width")?, "bin_width", 0)?;
    let guide_length = parse_num(get("L")?, "L", 0)?;
    let normalization = match meta.get("normalization") {
        Some(s) => Normalization::parse(s).ok_or_else(|| TrapError::Data(format!("unknown normalization {s}")))?,
        None => Normalization::Raw,
    };
    TofSignal::from_bins(t0, bin_width, guide_length, bins, normalization)
}

/// Reads `t,value` rows (header and `#` comments allowed), as used for lifetime data.
pub fn read_series<T: Real>(r: impl BufRead) -> Result<Vec<(T, T)>> {
    let mut out = Vec::new();
    let mut first = true;
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| TrapError::Data(format!("read failed: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(',');
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            return Err(TrapError::Data(format!("line {}: expected two columns", n + 1)));
        };
        if first && a.trim().parse::<f64>().is_err() {
            first = false;
            continue;
        }
        first = false;
        out.push((parse_num(a, "time", n + 1)?, parse_num(b, "value", n + 1)?));
    }
    Ok(out)
}
