use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use trapsim::analysis::{
    cooling_factor_and_yield, fit_exponential_lifetime, mean_velocity_from_tof, optimal_cooling_factor,
    temperature_from_mean_velocity, two_point_lifetime, CoolingResult, FitOptions, LifetimeFit,
};
use trapsim::detection::rising_edge_cumulative;
use trapsim::dynamics::StatusCounts;
use trapsim::fields::{find_field_zeros, Aabb, FieldModel, ZeroSearch};
use trapsim::io::{read_series, read_tof, write_field_map, write_tof, Grid, Provenance};
use trapsim::protocols::{run_experiment, ExperimentKind, ExperimentReport};
use trapsim::schedule::RampSchedule;
use trapsim::stark::Species;

use crate::config::{LoadedConfig, RunConfig};
use crate::error::CliError;

pub struct Context {
    pub config: LoadedConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context {
    fn provenance(&self) -> Provenance {
        Provenance { config_sha256: self.config.sha256.clone(), seed: self.seed }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    /// Writes a provenance comment followed by pretty JSON.
    fn write_report<S: Serialize>(&self, name: &str, value: &S) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        let body = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(w, "# config_sha256={} seed={}", self.config.sha256, self.seed)?;
        writeln!(w, "{body}")?;
        w.flush()?;
        Ok(())
    }

    fn cfg(&self) -> &RunConfig {
        &self.config.config
    }
}

pub fn fields(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let g = cfg.geometry()?;
    let base = cfg.electrodes(&g)?;
    let options = cfg.field_options()?;
    let s = &cfg.fields;
    let grid = Grid {
        min: RunConfig::vec3(s.min.unwrap_or([0.0, 0.0, 0.0])),
        max: RunConfig::vec3(s.max.unwrap_or([g.length_x, g.width_y, g.gap_z])),
        counts: s.counts.unwrap_or([41, 21, 7]),
    };
    if grid.counts.contains(&0) {
        return Err(CliError::Config("[fields] counts must be positive".into()));
    }
    let times = s.times.clone().unwrap_or_else(|| vec![0.0]);
    let schedule = RampSchedule::constant(base)?;
    let model = FieldModel::new(&g, &options);
    let mut w = ctx.create("field_map.csv")?;
    write_field_map(&mut w, &model, &schedule, &grid, &times, &ctx.provenance())?;
    w.flush()?;
    Ok(())
}

pub fn zeros(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let g = cfg.geometry()?;
    let base = cfg.electrodes(&g)?;
    let options = cfg.field_options()?;
    let s = &cfg.zeros;
    let region = Aabb::new(
        RunConfig::vec3(s.min.unwrap_or([0.0, g.width_y / 2.0, 0.0])),
        RunConfig::vec3(s.max.unwrap_or([g.length_x, g.width_y / 2.0, g.gap_z / 2.0])),
    );
    let schedule = RampSchedule::constant(base)?;
    let search = ZeroSearch { resolution: s.resolution, ..ZeroSearch::default() };
    let found = find_field_zeros(
        &region,
        s.time.unwrap_or(0.0),
        &g,
        &schedule,
        &options,
        s.threshold.unwrap_or(1e3),
        &search,
    )?;
    let model = FieldModel::new(&g, &options);
    let prov = ctx.provenance();
    let mut w = ctx.create("zeros.csv")?;
    writeln!(w, "# config_sha256={} seed={}", prov.config_sha256, prov.seed)?;
    writeln!(w, "x,y,z,Emag")?;
    for p in &found {
        writeln!(w, "{},{},{},{}", p.x, p.y, p.z, model.sample(*p, &base).e_mag)?;
    }
    w.flush()?;
    log::info!("{} field zeros", found.len());
    Ok(())
}

#[derive(Serialize)]
struct StorageReport {
    command: &'static str,
    runs: Vec<ExperimentReport<f64>>,
    lifetime: Option<LifetimeFit<f64>>,
    lifetime_method: Option<&'static str>,
    /// Capped, or consistent with no decay at one standard error.
    lifetime_unbounded: Option<bool>,
}

/// Lifetime from the integrated signal per hold time. Two points use the closed form;
/// a signal that does not decay is reported as capped.
fn fit_holds(points: &[(f64, f64)]) -> Result<Option<(LifetimeFit<f64>, &'static str)>, CliError> {
    let opts = FitOptions::default();
    match points.len() {
        0 | 1 => Ok(None),
        2 => {
            let (a, b) = (points[0], points[1]);
            let (early, late) = if a.0 <= b.0 { (a, b) } else { (b, a) };
            if early.1 > 0.0 && late.1 >= early.1 {
                let capped = LifetimeFit {
                    tau: opts.tau_cap,
                    tau_err: f64::INFINITY,
                    amplitude: early.1,
                    amplitude_err: 0.0,
                    residual_norm: 0.0,
                    iterations: 0,
                    capped: true,
                };
                return Ok(Some((capped, "two_point")));
            }
            Ok(Some((two_point_lifetime(a, b)?, "two_point")))
        }
        _ => Ok(Some((fit_exponential_lifetime(points, &opts)?, "exponential_fit"))),
    }
}

pub fn storage(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let mut setup = cfg.setup(ExperimentKind::Storage)?;
    let holds = cfg.hold_sweep()?;
    let prov = ctx.provenance();
    let mut runs = Vec::with_capacity(holds.len());
    for (i, &t_hold) in holds.iter().enumerate() {
        setup.protocol.t_hold = t_hold;
        log::info!("storage run {i}: t_hold = {t_hold} s");
        let (signal, report) = run_experiment(&setup, ctx.seed)?;
        let mut w = ctx.create(&format!("tof_hold_{i:03}.csv"))?;
        write_tof(&mut w, &signal, &prov)?;
        w.flush()?;
        runs.push(report);
    }
    let points: Vec<(f64, f64)> = runs.iter().map(|r| (r.t_hold, r.integrated_signal)).collect();
    let fit = fit_holds(&points);
    let (lifetime, method) = match &fit {
        Ok(Some((f, m))) => (Some(*f), Some(*m)),
        _ => (None, None),
    };
    let lifetime_unbounded = lifetime.map(|f| f.capped || !(f.tau_err < f.tau));
    ctx.write_report(
        "report.json",
        &StorageReport { command: "storage", runs, lifetime, lifetime_method: method, lifetime_unbounded },
    )?;
    fit.map(|_| ())
}

#[derive(Serialize)]
struct CoolingRow {
    t_ramp: f64,
    t_hold: f64,
    temperature: Option<f64>,
    cooling: Option<CoolingResult<f64>>,
    counts: StatusCounts,
}

#[derive(Serialize)]
struct AdiabaticReport {
    command: &'static str,
    temperature_source: String,
    dimensions: u32,
    f_opt: f64,
    reference_t_ramp: f64,
    reference_temperature: Option<f64>,
    cooling: Vec<CoolingRow>,
    f_max: Option<f64>,
    yield_max: Option<f64>,
    runs: Vec<ExperimentReport<f64>>,
}

pub fn adiabatic(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let mut setup = cfg.setup(ExperimentKind::Adiabatic)?;
    let ramps = cfg.ramp_sweep()?;
    let dimensions = cfg.sweep.dimensions.unwrap_or(3);
    let f_opt = optimal_cooling_factor::<f64>(dimensions).map_err(|e| CliError::Config(format!("[sweep] {e}")))?;
    let source = cfg.sweep.temperature.clone().unwrap_or_else(|| "tof".into());
    if source != "tof" && source != "kinetic" {
        return Err(CliError::Config(format!("[sweep] temperature: unknown value {source:?}")));
    }
    for &r in &ramps {
        setup.protocol.hold_for_ramp(r)?;
    }
    let prov = ctx.provenance();
    let mut runs = Vec::with_capacity(ramps.len());
    for (i, &t_ramp) in ramps.iter().enumerate() {
        setup.protocol.t_ramp = t_ramp;
        setup.protocol.t_hold = setup.protocol.hold_for_ramp(t_ramp)?;
        log::info!("adiabatic run {i}: t_ramp = {t_ramp} s");
        let (signal, report) = run_experiment(&setup, ctx.seed)?;
        let mut w = ctx.create(&format!("tof_ramp_{i:03}.csv"))?;
        write_tof(&mut w, &signal, &prov)?;
        w.flush()?;
        runs.push(report);
    }
    let temperature = |r: &ExperimentReport<f64>| match source.as_str() {
        "tof" => r.tof_temperature,
        _ => (r.alive_at_trigger > 0).then_some(r.temperature_pre_unload),
    };
    let ref_idx = (0..ramps.len()).min_by(|&a, &b| ramps[a].total_cmp(&ramps[b])).unwrap_or(0);
    let t_ref = runs.get(ref_idx).and_then(temperature);
    let mut cooling = Vec::with_capacity(runs.len());
    for r in &runs {
        let t = temperature(r);
        let c = match (t, t_ref) {
            (Some(t), Some(t_ref)) => Some(cooling_factor_and_yield(t, t_ref, f_opt)?),
            _ => None,
        };
        cooling.push(CoolingRow { t_ramp: r.t_ramp, t_hold: r.t_hold, temperature: t, cooling: c, counts: r.counts });
    }
    let best = cooling.iter().filter_map(|c| c.cooling).max_by(|a, b| a.cooling_factor.total_cmp(&b.cooling_factor));
    println!("F_opt(d={dimensions}) = {f_opt:.4}");
    if let Some(b) = best {
        println!("F_max = {:.4}, yield = {:.3}", b.cooling_factor, b.yield_fraction);
    }
    ctx.write_report(
        "report.json",
        &AdiabaticReport {
            command: "adiabatic",
            temperature_source: source,
            dimensions,
            f_opt,
            reference_t_ramp: ramps[ref_idx],
            reference_temperature: t_ref,
            f_max: best.map(|b| b.cooling_factor),
            yield_max: best.map(|b| b.yield_fraction),
            cooling,
            runs,
        },
    )
}

#[derive(Serialize)]
struct TofAnalysis {
    file: String,
    guide_length: f64,
    mass: f64,
    window: &'static str,
    edge_points: usize,
    mean_velocity: f64,
    temperature: f64,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn data_err(path: &Path, e: trapsim::TrapError) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn analyze_tof(ctx: &Context, file: &Path, length: Option<f64>, mass: Option<f64>) -> Result<(), CliError> {
    let mut signal = read_tof::<f64>(open(file)?).map_err(|e| data_err(file, e))?;
    if let Some(l) = length {
        if !(l > 0.0 && l.is_finite()) {
            return Err(CliError::Config("--length must be positive".into()));
        }
        signal.guide_length = l;
    }
    let mass = match mass {
        Some(m) => m,
        None => ctx.cfg().species().map(|s| s.mass).unwrap_or(Species::<f64>::ch3f().mass),
    };
    if signal.total() <= 0.0 {
        return Err(data_err(file, trapsim::TrapError::Data("TOF signal is empty".into())));
    }
    let v = mean_velocity_from_tof(&signal).map_err(|e| data_err(file, e))?;
    let result = TofAnalysis {
        file: file.display().to_string(),
        guide_length: signal.guide_length,
        mass,
        window: "rising edge up to the peak bin, S at bin right edges, normalized at the peak",
        edge_points: rising_edge_cumulative(&signal).len(),
        mean_velocity: v,
        temperature: temperature_from_mean_velocity(v, mass),
    };
    println!("{}", serde_json::to_string_pretty(&result).map_err(|e| CliError::Runtime(e.to_string()))?);
    ctx.write_report("tof_analysis.json", &result)
}

#[derive(Serialize)]
struct FitReport {
    file: String,
    points: usize,
    poisson_weights: bool,
    method: &'static str,
    fit: LifetimeFit<f64>,
}

pub fn fit_lifetime(ctx: &Context, file: &Path, poisson: bool) -> Result<(), CliError> {
    let points: Vec<(f64, f64)> = read_series(open(file)?).map_err(|e| data_err(file, e))?;
    let (fit, method) = if points.len() == 2 {
        fit_holds(&points)?.expect("two points")
    } else {
        let opts = FitOptions { poisson_weights: poisson, ..FitOptions::default() };
        (fit_exponential_lifetime(&points, &opts).map_err(|e| data_err(file, e))?, "exponential_fit")
    };
    let report = FitReport { file: file.display().to_string(), points: points.len(), poisson_weights: poisson, method, fit };
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?);
    ctx.write_report("lifetime_fit.json", &report)
}
