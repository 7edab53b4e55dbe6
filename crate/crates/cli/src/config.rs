//! Run configuration: TOML sections with flat `key = value` entries.
//!
//! Every key is optional and falls back to the library default. Unknown keys are
//! rejected so that typos surface as configuration errors.

use serde::Deserialize;
use sha2::{Digest, Sha256};

use trapsim::detection::DetectionGeometry;
use trapsim::dynamics::{BoundaryModel, IntegratorConfig, LossModelConfig, MajoranaMode};
use trapsim::fields::{ElectrodeConfig, ExitAperture, FieldOptions, GradientMode, TrapGeometry};
use trapsim::protocols::{ExperimentKind, ExperimentSetup, ProtocolConfig, SourceConfig};
use trapsim::stark::{RotState, Species};
use trapsim::Vec3;

use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub electrodes: ElectrodeSection,
    #[serde(default)]
    pub species: SpeciesSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub integration: IntegrationSection,
    #[serde(default)]
    pub fields: FieldMapSection,
    #[serde(default)]
    pub zeros: ZeroSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub length_x: Option<f64>,
    pub width_y: Option<f64>,
    pub gap_z: Option<f64>,
    pub region_split_x: Option<f64>,
    pub stripe_period: Option<f64>,
    pub region_smoothing: Option<f64>,
    pub perimeter_decay: Option<f64>,
    pub aperture_y_min: Option<f64>,
    pub aperture_y_max: Option<f64>,
    pub aperture_z_min: Option<f64>,
    pub aperture_z_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeSection {
    pub v_micro: Option<f64>,
    pub v_offset_region1: Option<f64>,
    pub v_offset_region2: Option<f64>,
    /// Alternative to the voltages: offset fields in V/m.
    pub e_offset_region1: Option<f64>,
    pub e_offset_region2: Option<f64>,
    pub e_perimeter: Option<f64>,
    pub wedge_bias: Option<f64>,
    pub exit_gate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    pub name: Option<String>,
    pub mass: Option<f64>,
    pub dipole: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub flux_temperature: Option<f64>,
    pub n_molecules: Option<usize>,
    /// `[[J, K, M], ...]`
    pub states: Option<Vec<[i64; 3]>>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub majorana_mode: Option<String>,
    pub e_critical: Option<f64>,
    pub xi_critical: Option<f64>,
    pub background_rate: Option<f64>,
    pub leak_probability: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub e_load: Option<f64>,
    pub e_unload: Option<f64>,
    pub t_hold: Option<f64>,
    pub t_ramp: Option<f64>,
    pub t_total: Option<f64>,
    pub step_offset_region1: Option<f64>,
    pub t_switch: Option<f64>,
    pub t_unload: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub t_hold: Option<Vec<f64>>,
    pub t_ramp: Option<Vec<f64>>,
    /// Number of mixed dimensions for the ideal cooling factor.
    pub dimensions: Option<u32>,
    /// `"tof"` or `"kinetic"`.
    pub temperature: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    pub guide_length: Option<f64>,
    pub efficiency: Option<f64>,
    pub bin_width: Option<f64>,
    pub window: Option<f64>,
    pub jitter: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    pub dt: Option<f64>,
    pub boundary: Option<String>,
    pub n_harmonics: Option<usize>,
    pub closed_form: Option<bool>,
    pub finite_difference_step: Option<f64>,
    pub encounter_range: Option<f64>,
    pub guard: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMapSection {
    pub min: Option<[f64; 3]>,
    pub max: Option<[f64; 3]>,
    pub counts: Option<[usize; 3]>,
    pub times: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroSection {
    pub min: Option<[f64; 3]>,
    pub max: Option<[f64; 3]>,
    pub time: Option<f64>,
    pub threshold: Option<f64>,
    pub resolution: Option<f64>,
}

/// Parsed configuration together with the hash of its source text.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn parse(text: &str) -> Result<LoadedConfig, CliError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(LoadedConfig { config, sha256: sha256_hex(text.as_bytes()) })
}

pub fn load(path: Option<&std::path::Path>) -> Result<LoadedConfig, CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                other => other,
            })
        }
        None => parse(""),
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn geometry(&self) -> Result<TrapGeometry<f64>, CliError> {
        let s = &self.geometry;
        let d = TrapGeometry::<f64>::default();
        let width_y = s.width_y.unwrap_or(d.width_y);
        let gap_z = s.gap_z.unwrap_or(d.gap_z);
        // The default aperture is centred on the wall, so follow the actual width and gap.
        let half = (d.exit_aperture.y_max - d.exit_aperture.y_min) / 2.0;
        let g = TrapGeometry {
            length_x: s.length_x.unwrap_or(d.length_x),
            width_y,
            gap_z,
            region_split_x: s.region_split_x.unwrap_or(d.region_split_x),
            stripe_period: s.stripe_period.unwrap_or(d.stripe_period),
            exit_aperture: ExitAperture {
                y_min: s.aperture_y_min.unwrap_or(width_y / 2.0 - half),
                y_max: s.aperture_y_max.unwrap_or(width_y / 2.0 + half),
                z_min: s.aperture_z_min.unwrap_or(0.0),
                z_max: s.aperture_z_max.unwrap_or(gap_z),
            },
            region_smoothing: s.region_smoothing.unwrap_or(2.0 * gap_z),
            perimeter_decay: s.perimeter_decay.unwrap_or(gap_z / std::f64::consts::PI),
        };
        g.validate().map_err(|e| bad(format!("[geometry] {e}")))?;
        Ok(g)
    }

    pub fn electrodes(&self, g: &TrapGeometry<f64>) -> Result<ElectrodeConfig<f64>, CliError> {
        let s = &self.electrodes;
        let offset = |v: Option<f64>, e: Option<f64>, key: &str| match (v, e) {
            (Some(_), Some(_)) => Err(bad(format!("[electrodes] set either v_offset_{key} or e_offset_{key}, not both"))),
            (Some(v), None) => Ok(v),
            (None, Some(e)) => Ok(g.offset_voltage(e)),
            (None, None) => Ok(0.0),
        };
        let c = ElectrodeConfig {
            v_micro: s.v_micro.unwrap_or(0.0),
            v_offset_region1: offset(s.v_offset_region1, s.e_offset_region1, "region1")?,
            v_offset_region2: offset(s.v_offset_region2, s.e_offset_region2, "region2")?,
            e_perimeter: s.e_perimeter.unwrap_or(trapsim::fields::MAX_PERIMETER_FIELD),
            wedge_bias: s.wedge_bias.unwrap_or(0.0),
            exit_gate: s.exit_gate.unwrap_or(1.0),
        };
        c.validate().map_err(|e| bad(format!("[electrodes] {e}")))?;
        Ok(c)
    }

    pub fn species(&self) -> Result<Species<f64>, CliError> {
        let s = &self.species;
        let d = Species::<f64>::ch3f();
        let sp = Species {
            name: s.name.clone().unwrap_or(d.name),
            mass: s.mass.unwrap_or(d.mass),
            dipole: s.dipole.unwrap_or(d.dipole),
        };
        sp.validate().map_err(|e| bad(format!("[species] {e}")))?;
        Ok(sp)
    }

    pub fn source(&self) -> Result<SourceConfig<f64>, CliError> {
        let s = &self.source;
        let d = SourceConfig::<f64>::default();
        let mixture = match (&s.states, &s.weights) {
            (None, None) => d.state_mixture,
            (Some(states), weights) => {
                let weights = match weights {
                    Some(w) => w.clone(),
                    None => vec![1.0 / states.len().max(1) as f64; states.len()],
                };
                if weights.len() != states.len() {
                    return Err(bad("[source] states and weights differ in length"));
                }
                let mut out = Vec::with_capacity(states.len());
                for ([j, k, m], w) in states.iter().zip(weights) {
                    let j = u32::try_from(*j).map_err(|_| bad("[source] states: J must be non-negative"))?;
                    let st = RotState::new(j, *k as i32, *m as i32).map_err(|e| bad(format!("[source] states: {e}")))?;
                    out.push((st, w));
                }
                out
            }
            (None, Some(_)) => return Err(bad("[source] weights given without states")),
        };
        let src = SourceConfig {
            flux_temperature: s.flux_temperature.unwrap_or(d.flux_temperature),
            e_load: self.protocol.e_load.unwrap_or(d.e_load),
            n_molecules: s.n_molecules.unwrap_or(d.n_molecules),
            state_mixture: mixture,
        };
        src.validate().map_err(|e| bad(format!("[source] {e}")))?;
        Ok(src)
    }

    pub fn loss(&self) -> Result<LossModelConfig<f64>, CliError> {
        let s = &self.loss;
        let d = LossModelConfig::<f64>::default();
        let mode = match s.majorana_mode.as_deref() {
            None => d.majorana_mode,
            Some("threshold") => MajoranaMode::Threshold,
            Some("adiabaticity") => MajoranaMode::Adiabaticity,
            Some(other) => return Err(bad(format!("[loss] majorana_mode: unknown value {other:?}"))),
        };
        let l = LossModelConfig {
            majorana_mode: mode,
            e_critical: s.e_critical.unwrap_or(d.e_critical),
            xi_critical: s.xi_critical.unwrap_or(d.xi_critical),
            background_rate: s.background_rate.unwrap_or(d.background_rate),
            leak_probability: s.leak_probability.unwrap_or(d.leak_probability),
        };
        l.validate().map_err(|e| bad(format!("[loss] {e}")))?;
        Ok(l)
    }

    pub fn protocol(&self) -> Result<ProtocolConfig<f64>, CliError> {
        let s = &self.protocol;
        let d = ProtocolConfig::<f64>::default();
        let p = ProtocolConfig {
            e_load: s.e_load.unwrap_or(d.e_load),
            e_unload: s.e_unload.unwrap_or(d.e_unload),
            t_hold: s.t_hold.unwrap_or(d.t_hold),
            t_ramp: s.t_ramp.unwrap_or(d.t_ramp),
            t_total_constraint: s.t_total.unwrap_or(d.t_total_constraint),
            step_offset_region1: s.step_offset_region1,
            t_switch: s.t_switch.unwrap_or(d.t_switch),
            t_unload: s.t_unload.unwrap_or(d.t_unload),
        };
        p.validate().map_err(|e| bad(format!("[protocol] {e}")))?;
        Ok(p)
    }

    pub fn detection(&self) -> Result<DetectionGeometry<f64>, CliError> {
        let s = &self.detection;
        let d = DetectionGeometry::<f64>::default();
        let det = DetectionGeometry {
            guide_length: s.guide_length.unwrap_or(d.guide_length),
            detection_efficiency: s.efficiency.unwrap_or(d.detection_efficiency),
            bin_width: s.bin_width.unwrap_or(d.bin_width),
            window: s.window.or(d.window),
            jitter: s.jitter.unwrap_or(d.jitter),
        };
        det.validate().map_err(|e| bad(format!("[detection] {e}")))?;
        Ok(det)
    }

    pub fn integrator(&self) -> Result<IntegratorConfig<f64>, CliError> {
        let s = &self.integration;
        let base = match s.boundary.as_deref() {
            None | Some("soft") => IntegratorConfig::<f64>::default(),
            Some("hard_wall") => IntegratorConfig::hard_wall(),
            Some(other) => return Err(bad(format!("[integration] boundary: unknown value {other:?}"))),
        };
        let mut field = base.field;
        if let Some(n) = s.n_harmonics {
            field.n_harmonics = n;
        }
        if let Some(h) = s.finite_difference_step {
            field.gradient = GradientMode::FiniteDifference { step: h };
        }
        let ic = IntegratorConfig {
            dt: s.dt.unwrap_or(base.dt),
            boundary: if s.boundary.as_deref() == Some("hard_wall") { BoundaryModel::HardWall } else { BoundaryModel::Soft },
            field,
            closed_form: s.closed_form.unwrap_or(base.closed_form),
            encounter_range: s.encounter_range.unwrap_or(base.encounter_range),
            guard: s.guard.unwrap_or(base.guard),
        };
        ic.validate().map_err(|e| bad(format!("[integration] {e}")))?;
        Ok(ic)
    }

    /// Field options for maps and zero searches: everything the soft tier sees.
    pub fn field_options(&self) -> Result<FieldOptions<f64>, CliError> {
        let mut f = FieldOptions::default();
        if let Some(n) = self.integration.n_harmonics {
            if n == 0 {
                return Err(bad("[integration] n_harmonics must be at least 1"));
            }
            f.n_harmonics = n;
        }
        Ok(f)
    }

    pub fn setup(&self, kind: ExperimentKind) -> Result<ExperimentSetup<f64>, CliError> {
        let geometry = self.geometry()?;
        let setup = ExperimentSetup {
            kind,
            electrode_base: self.electrodes(&geometry)?,
            geometry,
            species: self.species()?,
            source: self.source()?,
            protocol: self.protocol()?,
            loss: self.loss()?,
            integrator: self.integrator()?,
            detection: self.detection()?,
        };
        setup.validate().map_err(|e| bad(e.to_string()))?;
        Ok(setup)
    }

    pub fn hold_sweep(&self) -> Result<Vec<f64>, CliError> {
        let v = match &self.sweep.t_hold {
            Some(v) => v.clone(),
            None => vec![self.protocol()?.t_hold],
        };
        check_sweep(&v, "t_hold")?;
        Ok(v)
    }

    pub fn ramp_sweep(&self) -> Result<Vec<f64>, CliError> {
        let v = match &self.sweep.t_ramp {
            Some(v) => v.clone(),
            None => vec![self.protocol()?.t_ramp],
        };
        check_sweep(&v, "t_ramp")?;
        Ok(v)
    }

    pub fn vec3(a: [f64; 3]) -> Vec3<f64> {
        Vec3::new(a[0], a[1], a[2])
    }
}

fn check_sweep(v: &[f64], key: &str) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(bad(format!("[sweep] {key} must not be empty")));
    }
    if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(bad(format!("[sweep] {key} values must be finite and non-negative")));
    }
    Ok(())
}
