//! Static scenario description and its realized deployment.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelSet, Propagation, RfConfig, RisSite};
use crate::error::{Error, Result};
use crate::geometry::{element_positions, rotation_z, ArraySpec, RadiationPattern, Vec3};
use crate::CMat;

/// Second-order kinematic model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub dt_s: f64,
    /// Acceleration variances along x, y, z in m²/s³.
    pub accel_var: [f64; 3],
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            dt_s: 0.03,
            accel_var: [0.5, 0.5, 0.0],
        }
    }
}

/// Horizontal range of motion at a fixed height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: f64,
}

impl Region {
    pub fn contains(&self, p: &Vec3) -> bool {
        (self.x[0]..=self.x[1]).contains(&p.x) && (self.y[0]..=self.y[1]).contains(&p.y)
    }

    pub fn diameter(&self) -> f64 {
        (self.x[1] - self.x[0]).hypot(self.y[1] - self.y[0])
    }
}

/// Initial UE state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StartState {
    Fixed {
        position: [f64; 3],
        velocity: [f64; 3],
    },
    /// Uniform position in the region, uniform heading at the given speed.
    Random { speed_mps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMode {
    PerStep,
    PerEpisode,
}

/// Random rotation of the UE array about the vertical axis, unknown to the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationError {
    pub std_deg: f64,
    pub mode: OrientationMode,
}

impl Default for OrientationError {
    fn default() -> Self {
        Self {
            std_deg: 0.0,
            mode: OrientationMode::PerStep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rf: RfConfig,
    pub pattern: RadiationPattern,
    pub bs: ArraySpec,
    /// UE array; only its shape and orientation are used, the reference is ignored.
    pub ue: ArraySpec,
    pub ris: Vec<ArraySpec>,
    pub motion: MotionParams,
    pub region: Region,
    pub start: StartState,
    pub orientation: OrientationError,
}

/// `√(16/80)`: distance scale of [`Scenario::desk`].
pub const DESK_SCALE: f64 = 0.447_213_595_499_957_9;

fn ris_strip(rf: &RfConfig, center: Vec3, n_rows: usize, n_cols: usize) -> ArraySpec {
    ArraySpec::ura(
        n_rows,
        n_cols,
        rf.wavelength() / 2.0,
        center,
        Vec3::y(),
        Vec3::z(),
    )
}

impl Scenario {
    /// Indoor office layout: BS on the x = 30 m wall, three 80×5 strips
    /// facing +x, UE with a 4-element ULA at 1 m height.
    pub fn full_scale() -> Self {
        let rf = RfConfig::default();
        let half = rf.wavelength() / 2.0;
        let bs = ArraySpec::ura(2, 8, half, Vec3::new(30.0, 15.0, 2.0), Vec3::y(), Vec3::z());
        let ue = ArraySpec::ula(4, half, Vec3::zeros(), Vec3::y(), Vec3::z());
        let ris = [
            Vec3::new(0.0, 15.0, 3.0),
            Vec3::new(5.0, 0.0, 3.0),
            Vec3::new(10.0, 30.0, 3.0),
        ]
        .into_iter()
        .map(|c| ris_strip(&rf, c, 5, 80))
        .collect();
        Self {
            rf,
            pattern: RadiationPattern::default(),
            bs,
            ue,
            ris,
            motion: MotionParams::default(),
            region: Region {
                x: [0.5, 20.0],
                y: [0.5, 29.5],
                z: 1.0,
            },
            start: StartState::Random { speed_mps: 1.0 },
            orientation: OrientationError::default(),
        }
    }

    /// Single strip at (0, 15, 3), UE starting at (3, 15) moving at 1 m/s along y.
    pub fn single_ris() -> Self {
        let mut s = Self::full_scale();
        s.ris.truncate(1);
        s.start = StartState::Fixed {
            position: [3.0, 15.0, 1.0],
            velocity: [0.0, 1.0, 0.0],
        };
        s
    }

    /// Reduced single-strip layout: one 16×5 strip with every distance, the start
    /// speed and the acceleration scaled so that the RIS path keeps the link
    /// budget of the full 80×5 strip (received power goes as `P²/(d₁d₂)²`).
    pub fn desk() -> Self {
        let mut s = Self::single_ris();
        s.ris[0] = ris_strip(&s.rf, s.ris[0].reference, 5, 16);
        s.scaled(DESK_SCALE)
    }

    /// Shrink or grow the layout by `factor`: positions, region, start
    /// velocity and acceleration variances (by `factor²`). Array spacings
    /// stay in wavelengths.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.bs.reference *= factor;
        for r in &mut self.ris {
            r.reference *= factor;
        }
        self.region.x = self.region.x.map(|v| v * factor);
        self.region.y = self.region.y.map(|v| v * factor);
        self.region.z *= factor;
        for a in &mut self.motion.accel_var {
            *a *= factor * factor;
        }
        match &mut self.start {
            StartState::Fixed { position, velocity } => {
                *position = position.map(|v| v * factor);
                *velocity = velocity.map(|v| v * factor);
            }
            StartState::Random { speed_mps } => *speed_mps *= factor,
        }
        self
    }

    pub fn n_ris(&self) -> usize {
        self.ris.len()
    }

    /// Every invariant violation, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.rf.collect_problems(self.ris.len(), &mut out);
        self.pattern.collect_problems(&mut out);
        self.bs.collect_problems("bs", &mut out);
        self.ue.collect_problems("ue", &mut out);
        if self.ue.len() < 2 {
            out.push("ue: at least 2 antennas are needed to form a phase gradient".into());
        }
        if self.ris.is_empty() {
            out.push("at least one RIS is required".into());
        }
        for (k, r) in self.ris.iter().enumerate() {
            r.collect_problems(&format!("ris[{k}]"), &mut out);
        }
        if !(self.motion.dt_s > 0.0) {
            out.push(format!("dt must be > 0 (got {})", self.motion.dt_s));
        }
        if self.motion.accel_var.iter().any(|v| !(*v >= 0.0)) {
            out.push("acceleration variances must be >= 0".into());
        }
        if !(self.region.x[0] < self.region.x[1]) || !(self.region.y[0] < self.region.y[1]) {
            out.push("region bounds must be increasing".into());
        }
        match &self.start {
            StartState::Fixed { position, .. } => {
                if !self.region.contains(&Vec3::from(*position)) {
                    out.push("start position lies outside the region".into());
                }
            }
            StartState::Random { speed_mps } => {
                if !(*speed_mps >= 0.0) {
                    out.push(format!("start speed must be >= 0 (got {speed_mps})"));
                }
            }
        }
        if !(self.orientation.std_deg >= 0.0) {
            out.push(format!(
                "orientation error std must be >= 0 (got {})",
                self.orientation.std_deg
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    /// Place every element and precompute the static BS-RIS links.
    pub fn deploy(&self) -> Result<Deployment> {
        self.validate()?;
        let prop = Propagation {
            wavelength: self.rf.wavelength(),
            pattern: self.pattern,
        };
        let bs_elements = element_positions(&self.bs);
        let ris: Vec<RisSite> = self
            .ris
            .iter()
            .map(|s| RisSite {
                center: s.reference,
                normal: s.normal(),
                elements: element_positions(s),
            })
            .collect();
        let g = ris
            .iter()
            .map(|site| channel::bs_ris_channel(&prop, site, &self.bs.reference, &bs_elements))
            .collect();
        Ok(Deployment {
            prop,
            noise_power: self.rf.noise_power(),
            kappa_h: self.rf.kappa_h,
            kappa_b: self.rf.kappa_b,
            bs_center: self.bs.reference,
            bs_elements,
            ue_offsets: self.ue.offsets(),
            ris,
            g: Arc::new(g),
        })
    }
}

/// A scenario with every element placed and the static links synthesized.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub prop: Propagation,
    pub noise_power: f64,
    pub kappa_h: f64,
    pub kappa_b: f64,
    pub bs_center: Vec3,
    pub bs_elements: Vec<Vec3>,
    pub ue_offsets: Vec<Vec3>,
    pub ris: Vec<RisSite>,
    pub g: Arc<Vec<CMat>>,
}

impl Deployment {
    pub fn n_tx(&self) -> usize {
        self.bs_elements.len()
    }

    pub fn n_rx(&self) -> usize {
        self.ue_offsets.len()
    }

    pub fn n_ris(&self) -> usize {
        self.ris.len()
    }

    /// UE antenna positions for a center and a yaw error in radians.
    pub fn ue_elements(&self, center: &Vec3, yaw: f64) -> Vec<Vec3> {
        if yaw == 0.0 {
            self.ue_offsets.iter().map(|o| center + o).collect()
        } else {
            let rot = rotation_z(yaw);
            self.ue_offsets.iter().map(|o| center + rot * o).collect()
        }
    }

    /// LOS RIS-UE matrix of RIS `k` without the Rice weight.
    pub fn ris_ue_los(&self, k: usize, center: &Vec3, elements: &[Vec3]) -> CMat {
        channel::ris_ue_los(&self.prop, &self.ris[k], center, elements)
    }

    /// Draw every fading link for the UE at `center` with antennas at `elements`.
    pub fn channels<R: Rng + ?Sized>(
        &self,
        center: &Vec3,
        elements: &[Vec3],
        rng: &mut R,
    ) -> ChannelSet {
        let h = channel::direct_channel(
            &self.prop,
            &self.bs_center,
            &self.bs_elements,
            center,
            elements,
            self.kappa_h,
            rng,
        );
        let b = (0..self.n_ris())
            .map(|k| {
                channel::ris_ue_channel(
                    &self.prop,
                    &self.ris[k],
                    center,
                    elements,
                    self.kappa_b,
                    rng,
                )
            })
            .collect();
        ChannelSet {
            h,
            g: Arc::clone(&self.g),
            b,
        }
    }
}
