//! TOML experiment files.
//!
//! Every key carries its unit in the name. A file may start from a bundled
//! preset with `base = "<name>"`; its tables are merged key by key over the
//! preset; arrays, and tables that set `kind`, are replaced whole. After
//! merging every key is required.
//! A top-level `scale` multiplies all positions, the start velocity and the
//! acceleration variances (the latter by `scale²`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{dbm_to_watts, RfConfig, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::geometry::{ArraySpec, RadiationPattern, Vec3};
use crate::ris_opt::BcdConfig;
use crate::scenario::{
    MotionParams, OrientationError, OrientationMode, Region, Scenario, StartState,
};
use crate::scheduler::{EpisodeConfig, LoopSettings, Policy, TimescaleConfig};
use crate::tracker::{JacobianMode, NoiseNumerator};
use crate::C64;

/// Bundled presets by name.
pub const PRESETS: [(&str, &str); 3] = [
    ("default", include_str!("../presets/default.toml")),
    ("single", include_str!("../presets/single.toml")),
    ("desk", include_str!("../presets/desk.toml")),
];

const MAX_BASE_DEPTH: usize = 8;

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfSection {
    pub carrier_ghz: f64,
    pub subcarrier_khz: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub total_power_dbm: f64,
    pub pilot_power_mw: f64,
    pub pilot_len: usize,
    pub kappa_h: f64,
    pub kappa_b: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSection {
    pub q: f64,
    pub cell_gain_dbi: f64,
    pub bs_gain_dbi: f64,
    pub ue_gain_dbi: f64,
}

/// Planar array; columns advance along `col_axis`, rows along `row_axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub center_m: [f64; 3],
    pub rows: usize,
    pub cols: usize,
    pub spacing_wavelengths: f64,
    pub col_axis: [f64; 3],
    pub row_axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSection {
    pub antennas: usize,
    pub spacing_wavelengths: f64,
    pub axis: [f64; 3],
    pub row_axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    pub dt_s: f64,
    pub accel_var_m2_s3: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    pub x_m: [f64; 2],
    pub y_m: [f64; 2],
    pub z_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StartSection {
    Fixed {
        position_m: [f64; 3],
        velocity_mps: [f64; 3],
    },
    Random {
        speed_mps: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationSection {
    pub std_deg: f64,
    pub mode: OrientationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimescaleSection {
    /// Steps between RIS updates, 0 for never.
    pub n_r: usize,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub n_bcd: usize,
    pub n_samples: usize,
    pub m: f64,
    pub rel_tol: f64,
    pub ao_sweeps: usize,
    pub opt_tol: f64,
    pub opt_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSection {
    pub jacobian: JacobianMode,
    pub noise_numerator: NoiseNumerator,
    pub bd_rank_tol: f64,
    pub compute_rate: bool,
    pub compute_peb: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub runs: usize,
    pub seed: u64,
    pub policies: Vec<String>,
    /// Number of leading runs whose full traces are written.
    pub trace_runs: usize,
    pub power_map: bool,
    pub map_step_m: f64,
    /// JSON file with one `[[re, im], ...]` list per RIS, for `EXTERNAL`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_profiles: Option<String>,
}

/// A fully merged experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "unit_scale")]
    pub scale: f64,
    pub rf: RfSection,
    pub pattern: PatternSection,
    pub bs: ArraySection,
    pub ue: UeSection,
    pub ris: Vec<ArraySection>,
    pub motion: MotionSection,
    pub region: RegionSection,
    pub start: StartSection,
    pub orientation: OrientationSection,
    pub timescale: TimescaleSection,
    pub optimizer: OptimizerSection,
    pub tracker: TrackerSection,
    pub campaign: CampaignSection,
}

fn unit_scale() -> f64 {
    1.0
}

/// Command-line overrides applied after merging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub dt_s: Option<f64>,
    pub n_r: Option<usize>,
    pub kappa_b: Option<f64>,
    pub orientation_std_deg: Option<f64>,
    pub ris_rows: Option<usize>,
    pub ris_cols: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub policies: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub runs: usize,
    pub seed: u64,
    pub policies: Vec<Policy>,
    pub trace_runs: usize,
    /// Grid step of the power map, if one is requested.
    pub power_map_step: Option<f64>,
    pub external_profiles: Option<Vec<Vec<C64>>>,
}

/// Validated scenario, loop settings and campaign parameters.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: Scenario,
    pub episode: EpisodeConfig,
    pub campaign: CampaignConfig,
    /// The merged file the experiment was built from.
    pub file: ConfigFile,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            // a table naming its `kind` is a different variant, not a patch
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(src: &str, origin: &str) -> Result<toml::Table> {
    src.parse::<toml::Table>().map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })
}

/// Resolve `base` chains into one table.
fn resolve_table(src: &str, origin: &str) -> Result<toml::Table> {
    let mut chain = vec![parse_table(src, origin)?];
    while let Some(base) = chain.last_mut().unwrap().remove("base") {
        let name = base.as_str().ok_or_else(|| Error::Parse {
            path: origin.to_string(),
            message: "`base` must be a preset name".into(),
        })?;
        let text = preset_source(name).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Parse {
                path: origin.to_string(),
                message: format!("unknown base preset `{name}` (known: {})", known.join(", ")),
            }
        })?;
        if chain.len() > MAX_BASE_DEPTH {
            return Err(Error::Parse {
                path: origin.to_string(),
                message: "`base` chain too deep".into(),
            });
        }
        chain.push(parse_table(text, &format!("preset {name}"))?);
    }
    let mut table = chain.pop().unwrap();
    while let Some(over) = chain.pop() {
        merge(&mut table, over);
    }
    Ok(table)
}

impl ConfigFile {
    /// Parse TOML text; `origin` names the source in error messages.
    pub fn from_toml(src: &str, origin: &str) -> Result<Self> {
        let table = resolve_table(src, origin)?;
        // re-serialize so that missing and mistyped keys are reported with their location
        let text = toml::to_string(&table).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let src = preset_source(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{name}`")))?;
        Self::from_toml(src, &format!("preset {name}"))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.dt_s {
            self.motion.dt_s = v;
        }
        if let Some(v) = o.n_r {
            self.timescale.n_r = v;
        }
        if let Some(v) = o.kappa_b {
            self.rf.kappa_b = v;
        }
        if let Some(v) = o.orientation_std_deg {
            self.orientation.std_deg = v;
        }
        for r in &mut self.ris {
            if let Some(v) = o.ris_rows {
                r.rows = v;
            }
            if let Some(v) = o.ris_cols {
                r.cols = v;
            }
        }
        if let Some(v) = o.runs {
            self.campaign.runs = v;
        }
        if let Some(v) = o.seed {
            self.campaign.seed = v;
        }
        if let Some(v) = &o.policies {
            self.campaign.policies = v.clone();
        }
    }

    pub fn steps(&self) -> usize {
        (self.timescale.duration_s / self.motion.dt_s).round() as usize
    }

    /// Check every field and build the experiment; all problems are
    /// reported together. `dir` resolves relative file references.
    pub fn resolve(&self, dir: Option<&Path>) -> Result<Experiment> {
        let mut problems = Vec::new();
        let wavelength = SPEED_OF_LIGHT / (self.rf.carrier_ghz * 1e9);
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            problems.push(format!("scale must be > 0 (got {})", self.scale));
        }
        if !(self.rf.carrier_ghz > 0.0) {
            problems.push(format!(
                "rf.carrier_ghz must be > 0 (got {})",
                self.rf.carrier_ghz
            ));
        }
        let mut array = |name: &str, a: &ArraySection| {
            if a.rows == 0 || a.cols == 0 {
                problems.push(format!("{name}: rows and cols must be >= 1"));
            }
            if !(a.spacing_wavelengths > 0.0) {
                problems.push(format!(
                    "{name}: spacing_wavelengths must be > 0 (got {})",
                    a.spacing_wavelengths
                ));
            }
            check_axes(name, a.col_axis, a.row_axis, &mut problems);
        };
        array("bs", &self.bs);
        for (k, r) in self.ris.iter().enumerate() {
            array(&format!("ris[{k}]"), r);
        }
        if !(self.ue.spacing_wavelengths > 0.0) {
            problems.push(format!(
                "ue: spacing_wavelengths must be > 0 (got {})",
                self.ue.spacing_wavelengths
            ));
        }
        check_axes("ue", self.ue.axis, self.ue.row_axis, &mut problems);
        if !(self.timescale.duration_s > 0.0) {
            problems.push(format!(
                "timescale.duration_s must be > 0 (got {})",
                self.timescale.duration_s
            ));
        }
        if self.campaign.runs == 0 {
            problems.push("campaign.runs must be >= 1".into());
        }
        if self.campaign.policies.is_empty() {
            problems.push("campaign.policies must not be empty".into());
        }
        let mut policies = Vec::new();
        for p in &self.campaign.policies {
            match p.parse::<Policy>() {
                Ok(p) if policies.contains(&p) => {
                    problems.push(format!("campaign.policies lists {p} twice"))
                }
                Ok(p) => policies.push(p),
                Err(e) => problems.push(e.to_string()),
            }
        }
        if self.campaign.power_map && !(self.campaign.map_step_m > 0.0) {
            problems.push(format!(
                "campaign.map_step_m must be > 0 (got {})",
                self.campaign.map_step_m
            ));
        }
        let external = match (
            &self.campaign.external_profiles,
            policies.contains(&Policy::External),
        ) {
            (Some(path), _) => {
                let path = dir.map_or_else(|| Path::new(path).to_path_buf(), |d| d.join(path));
                match load_profiles(&path) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        problems.push(format!("campaign.external_profiles: {e}"));
                        None
                    }
                }
            }
            (None, true) => {
                problems.push("policy EXTERNAL needs campaign.external_profiles".into());
                None
            }
            (None, false) => None,
        };

        let scenario = self.scenario(wavelength);
        problems.extend(scenario.problems());
        let episode = EpisodeConfig {
            timescale: TimescaleConfig {
                n_r: (self.timescale.n_r > 0).then_some(self.timescale.n_r),
                steps: self.steps(),
            },
            bcd: BcdConfig {
                n_bcd: self.optimizer.n_bcd,
                n_samples: self.optimizer.n_samples,
                m: self.optimizer.m,
                rel_tol: self.optimizer.rel_tol,
                ao_sweeps: self.optimizer.ao_sweeps,
                opt_tol: self.optimizer.opt_tol,
                opt_max_iter: self.optimizer.opt_max_iter,
            },
            settings: LoopSettings {
                jacobian: self.tracker.jacobian,
                noise_numerator: self.tracker.noise_numerator,
                bd_rank_tol: self.tracker.bd_rank_tol,
                compute_rate: self.tracker.compute_rate,
                compute_peb: self.tracker.compute_peb,
            },
        };
        if self.timescale.duration_s > 0.0 {
            episode.collect_problems(&mut problems);
        }
        if let Some(p) = &external {
            if p.len() != scenario.ris.len()
                || p.iter().zip(&scenario.ris).any(|(c, r)| c.len() != r.len())
            {
                problems
                    .push("campaign.external_profiles: sizes do not match the RIS arrays".into());
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(Experiment {
            scenario,
            episode,
            campaign: CampaignConfig {
                runs: self.campaign.runs,
                seed: self.campaign.seed,
                policies,
                trace_runs: self.campaign.trace_runs,
                power_map_step: self
                    .campaign
                    .power_map
                    .then_some(self.campaign.map_step_m * self.scale),
                external_profiles: external,
            },
            file: self.clone(),
        })
    }

    fn scenario(&self, wavelength: f64) -> Scenario {
        let v = |a: [f64; 3]| Vec3::from(a);
        let arr = |a: &ArraySection| {
            ArraySpec::ura(
                a.rows,
                a.cols,
                a.spacing_wavelengths * wavelength,
                v(a.center_m),
                unit(a.col_axis),
                unit(a.row_axis),
            )
        };
        let db = |x: f64| 10f64.powf(x / 10.0);
        let rf = &self.rf;
        let s = Scenario {
            rf: RfConfig {
                carrier_hz: rf.carrier_ghz * 1e9,
                subcarrier_hz: rf.subcarrier_khz * 1e3,
                noise_psd_dbm_hz: rf.noise_psd_dbm_hz,
                noise_figure_db: rf.noise_figure_db,
                total_power_w: dbm_to_watts(rf.total_power_dbm),
                pilot_power_w: rf.pilot_power_mw * 1e-3,
                pilot_len: rf.pilot_len,
                kappa_h: rf.kappa_h,
                kappa_b: rf.kappa_b,
                alpha: rf.alpha,
            },
            pattern: RadiationPattern {
                q: self.pattern.q,
                cell_gain: db(self.pattern.cell_gain_dbi),
                bs_gain: db(self.pattern.bs_gain_dbi),
                ue_gain: db(self.pattern.ue_gain_dbi),
            },
            bs: arr(&self.bs),
            ue: ArraySpec::ula(
                self.ue.antennas,
                self.ue.spacing_wavelengths * wavelength,
                Vec3::zeros(),
                unit(self.ue.axis),
                unit(self.ue.row_axis),
            ),
            ris: self.ris.iter().map(arr).collect(),
            motion: MotionParams {
                dt_s: self.motion.dt_s,
                accel_var: self.motion.accel_var_m2_s3,
            },
            region: Region {
                x: self.region.x_m,
                y: self.region.y_m,
                z: self.region.z_m,
            },
            start: match &self.start {
                StartSection::Fixed {
                    position_m,
                    velocity_mps,
                } => StartState::Fixed {
                    position: *position_m,
                    velocity: *velocity_mps,
                },
                StartSection::Random { speed_mps } => StartState::Random {
                    speed_mps: *speed_mps,
                },
            },
            orientation: OrientationError {
                std_deg: self.orientation.std_deg,
                mode: self.orientation.mode,
            },
        };
        if self.scale == 1.0 {
            s
        } else {
            s.scaled(self.scale)
        }
    }
}

fn unit(a: [f64; 3]) -> Vec3 {
    let v = Vec3::from(a);
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

fn check_axes(name: &str, a: [f64; 3], b: [f64; 3], problems: &mut Vec<String>) {
    let (a, b) = (Vec3::from(a), Vec3::from(b));
    if !(a.norm() > 0.0) || !(b.norm() > 0.0) {
        problems.push(format!("{name}: axes must be nonzero"));
    } else if a.normalize().dot(&b.normalize()).abs() > 1e-9 {
        problems.push(format!("{name}: axes must be orthogonal"));
    }
}

/// Read per-RIS profiles stored as `[[[re, im], ...], ...]`.
pub fn load_profiles(path: &Path) -> Result<Vec<Vec<C64>>> {
    let text = std::fs::read_to_string(path)?;
    let raw: Vec<Vec<[f64; 2]>> = serde_json::from_str(&text)?;
    Ok(raw
        .into_iter()
        .map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect())
        .collect())
}

/// Parse a file, or a preset when `spec` names one, and apply overrides.
/// Also returns the directory relative paths in the file resolve against.
pub fn load_file(spec: &str, overrides: &Overrides) -> Result<(ConfigFile, Option<PathBuf>)> {
    let (mut file, dir) = match preset_source(spec) {
        Some(_) => (ConfigFile::preset(spec)?, None),
        None => {
            let path = Path::new(spec);
            let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
                path: spec.to_string(),
                message: e.to_string(),
            })?;
            (
                ConfigFile::from_toml(&text, spec)?,
                path.parent().map(Path::to_path_buf),
            )
        }
    };
    file.apply(overrides);
    Ok((file, dir))
}

/// [`load_file`] followed by validation.
pub fn load_config(spec: &str, overrides: &Overrides) -> Result<Experiment> {
    let (file, dir) = load_file(spec, overrides)?;
    file.resolve(dir.as_deref())
}
