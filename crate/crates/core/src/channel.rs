//! Narrowband channel synthesis: direct BS-UE link, static BS-RIS links and
//! Rician RIS-UE links, plus thermal noise power.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{RadiationPattern, Vec3};
use crate::{CMat, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// RF parameters of the pilot link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub carrier_hz: f64,
    pub subcarrier_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    /// Nominal BS transmit power over the whole band.
    pub total_power_w: f64,
    /// Per-subcarrier share spent on pilots; this is the budget `P_tx`.
    pub pilot_power_w: f64,
    pub pilot_len: usize,
    pub kappa_h: f64,
    pub kappa_b: f64,
    /// Oversizing factor applied to the observation noise estimate.
    pub alpha: f64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 28e9,
            subcarrier_hz: 120e3,
            noise_psd_dbm_hz: -174.0,
            noise_figure_db: 7.0,
            total_power_w: dbm_to_watts(23.0),
            pilot_power_w: 0.06e-3,
            pilot_len: 100,
            kappa_h: 0.0,
            kappa_b: 5.0,
            alpha: 0.5,
        }
    }
}

impl RfConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn noise_power(&self) -> f64 {
        noise_power(
            self.noise_psd_dbm_hz,
            self.noise_figure_db,
            self.subcarrier_hz,
        )
    }

    pub(crate) fn collect_problems(&self, n_ris: usize, out: &mut Vec<String>) {
        if !(self.carrier_hz > 0.0) {
            out.push(format!(
                "carrier frequency must be > 0 (got {})",
                self.carrier_hz
            ));
        }
        if !(self.subcarrier_hz > 0.0) {
            out.push(format!(
                "subcarrier bandwidth must be > 0 (got {})",
                self.subcarrier_hz
            ));
        }
        if !(self.pilot_power_w > 0.0) {
            out.push(format!(
                "pilot power must be > 0 (got {})",
                self.pilot_power_w
            ));
        }
        if !(self.total_power_w > 0.0) {
            out.push(format!(
                "total power must be > 0 (got {})",
                self.total_power_w
            ));
        }
        if self.pilot_len < n_ris.max(1) {
            out.push(format!(
                "pilot length {} must be >= number of RISs {n_ris}",
                self.pilot_len
            ));
        }
        if !(self.kappa_h >= 0.0) || !(self.kappa_b >= 0.0) {
            out.push(format!(
                "Rice factors must be >= 0 (got {}, {})",
                self.kappa_h, self.kappa_b
            ));
        }
        if !(self.alpha >= 0.0) {
            out.push(format!("alpha must be >= 0 (got {})", self.alpha));
        }
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbw(w: f64) -> f64 {
    10.0 * w.log10()
}

/// Thermal noise power in watts over `bandwidth_hz`.
pub fn noise_power(npd_dbm_hz: f64, nf_db: f64, bandwidth_hz: f64) -> f64 {
    10f64.powf((npd_dbm_hz + nf_db + 10.0 * bandwidth_hz.log10() - 30.0) / 10.0)
}

/// Weights `(√(κ/(κ+1)), √(1/(κ+1)))` of the LOS and scattered parts.
pub fn rice_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    }
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// Placement of one RIS after realization.
#[derive(Debug, Clone)]
pub struct RisSite {
    pub center: Vec3,
    pub normal: Vec3,
    pub elements: Vec<Vec3>,
}

/// Propagation constants shared by all links.
#[derive(Debug, Clone, Copy)]
pub struct Propagation {
    pub wavelength: f64,
    pub pattern: RadiationPattern,
}

impl Propagation {
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Free-space amplitude `λ/(4π d)` scaled by `√gain`.
    #[inline]
    pub fn amplitude(&self, gain: f64, distance: f64) -> f64 {
        self.wavelength / (4.0 * PI) * gain.sqrt() / distance
    }
}

/// LOS BS-RIS matrix (P×N_TX); deterministic.
pub fn bs_ris_channel(
    prop: &Propagation,
    ris: &RisSite,
    bs_center: &Vec3,
    bs_elements: &[Vec3],
) -> CMat {
    let k0 = prop.wavenumber();
    let d_center = (ris.center - bs_center).norm();
    let base = prop.amplitude(prop.pattern.bs_gain * prop.pattern.cell_gain, d_center);
    DMatrix::from_fn(ris.elements.len(), bs_elements.len(), |p, i| {
        let delta = bs_elements[i] - ris.elements[p];
        let d = delta.norm();
        let f = prop.pattern.power_from_cos(ris.normal.dot(&delta) / d);
        C64::from_polar(base * f.sqrt(), -k0 * d)
    })
}

/// LOS part of the RIS-UE matrix (N_RX×P) without the Rice weight.
pub fn ris_ue_los(
    prop: &Propagation,
    ris: &RisSite,
    ue_center: &Vec3,
    ue_elements: &[Vec3],
) -> CMat {
    let k0 = prop.wavenumber();
    let d_center = (ue_center - ris.center).norm();
    let base = prop.amplitude(prop.pattern.ue_gain * prop.pattern.cell_gain, d_center);
    DMatrix::from_fn(ue_elements.len(), ris.elements.len(), |r, p| {
        let delta = ue_elements[r] - ris.elements[p];
        let d = delta.norm();
        let f = prop.pattern.power_from_cos(ris.normal.dot(&delta) / d);
        C64::from_polar(base * f.sqrt(), -k0 * d)
    })
}

/// Compose a Rician draw around a LOS matrix whose entry moduli are the
/// per-entry amplitudes: `√(κ/(κ+1))·los + √(1/(κ+1))·CN(0, |los|²)`.
pub fn rician_from_los<R: Rng + ?Sized>(los: &CMat, kappa: f64, rng: &mut R) -> CMat {
    let (wl, wn) = rice_weights(kappa);
    if wn == 0.0 {
        return los.clone();
    }
    los.map(|e| {
        let amp2 = e.norm_sqr();
        e * wl + complex_normal(rng, amp2) * wn
    })
}

/// RIS-UE matrix (N_RX×P) with Rician fading.
pub fn ris_ue_channel<R: Rng + ?Sized>(
    prop: &Propagation,
    ris: &RisSite,
    ue_center: &Vec3,
    ue_elements: &[Vec3],
    kappa_b: f64,
    rng: &mut R,
) -> CMat {
    rician_from_los(&ris_ue_los(prop, ris, ue_center, ue_elements), kappa_b, rng)
}

/// LOS part of the direct link (N_RX×N_TX).
pub fn direct_los(
    prop: &Propagation,
    bs_center: &Vec3,
    bs_elements: &[Vec3],
    ue_center: &Vec3,
    ue_elements: &[Vec3],
) -> CMat {
    let k0 = prop.wavenumber();
    let gamma = prop.amplitude(
        prop.pattern.bs_gain * prop.pattern.ue_gain,
        (ue_center - bs_center).norm(),
    );
    DMatrix::from_fn(ue_elements.len(), bs_elements.len(), |r, i| {
        C64::from_polar(gamma, -k0 * (ue_elements[r] - bs_elements[i]).norm())
    })
}

/// Direct BS-UE matrix (N_RX×N_TX) with Rician fading.
pub fn direct_channel<R: Rng + ?Sized>(
    prop: &Propagation,
    bs_center: &Vec3,
    bs_elements: &[Vec3],
    ue_center: &Vec3,
    ue_elements: &[Vec3],
    kappa_h: f64,
    rng: &mut R,
) -> CMat {
    rician_from_los(
        &direct_los(prop, bs_center, bs_elements, ue_center, ue_elements),
        kappa_h,
        rng,
    )
}

/// One realization of every link for a given UE placement.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    pub h: CMat,
    pub g: Arc<Vec<CMat>>,
    pub b: Vec<CMat>,
}

impl ChannelSet {
    pub fn n_ris(&self) -> usize {
        self.g.len()
    }

    pub fn n_tx(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_rx(&self) -> usize {
        self.h.nrows()
    }

    /// `Σ_k B_k diag(c_k) G_k`.
    pub fn equivalent(&self, profiles: &[Vec<C64>]) -> CMat {
        let mut out = CMat::zeros(self.n_rx(), self.n_tx());
        for ((b, g), c) in self.b.iter().zip(self.g.iter()).zip(profiles) {
            let mut bc = b.clone();
            for (p, mut col) in bc.column_iter_mut().enumerate() {
                col *= c[p];
            }
            out += bc * g;
        }
        out
    }
}
