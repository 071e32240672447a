//! Array layouts, spherical coordinates and the unit-cell radiation pattern.
//!
//! Every array (BS, RIS, UE) is a planar grid described by an [`ArraySpec`].
//! Its local frame is spanned by a column axis and a row axis; the broadside
//! normal is `col_axis × row_axis`. Elements are indexed row-major, i.e.
//! element `row * n_cols + col`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Ula,
    Ura,
}

/// Static description of a planar antenna or RIS array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub kind: ArrayKind,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Array centroid.
    pub reference: Vec3,
    /// Unit vector along which columns advance.
    pub col_axis: Vec3,
    /// Unit vector along which rows advance.
    pub row_axis: Vec3,
}

impl ArraySpec {
    pub fn ura(
        n_rows: usize,
        n_cols: usize,
        spacing: f64,
        reference: Vec3,
        col_axis: Vec3,
        row_axis: Vec3,
    ) -> Self {
        Self {
            kind: ArrayKind::Ura,
            n_rows,
            n_cols,
            spacing,
            reference,
            col_axis,
            row_axis,
        }
    }

    /// Linear array of `n` elements along `axis`; `row_axis` only fixes the normal.
    pub fn ula(n: usize, spacing: f64, reference: Vec3, axis: Vec3, row_axis: Vec3) -> Self {
        Self {
            kind: ArrayKind::Ula,
            n_rows: 1,
            n_cols: n,
            spacing,
            reference,
            col_axis: axis,
            row_axis,
        }
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn normal(&self) -> Vec3 {
        self.col_axis.cross(&self.row_axis)
    }

    /// Largest element-to-element extent.
    pub fn aperture(&self) -> f64 {
        let w = (self.n_cols.saturating_sub(1)) as f64 * self.spacing;
        let h = (self.n_rows.saturating_sub(1)) as f64 * self.spacing;
        w.hypot(h)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        self.collect_problems("array", &mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub(crate) fn collect_problems(&self, name: &str, out: &mut Vec<String>) {
        if self.n_rows == 0 || self.n_cols == 0 {
            out.push(format!(
                "{name}: element count must be >= 1 (got {}x{})",
                self.n_rows, self.n_cols
            ));
        }
        if self.kind == ArrayKind::Ula && self.n_rows != 1 && self.n_cols != 1 {
            out.push(format!("{name}: ULA must have a single row or column"));
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            out.push(format!(
                "{name}: element spacing must be > 0 (got {})",
                self.spacing
            ));
        }
        if (self.col_axis.norm() - 1.0).abs() > ORTHO_TOL
            || (self.row_axis.norm() - 1.0).abs() > ORTHO_TOL
        {
            out.push(format!("{name}: orientation axes must be unit vectors"));
        }
        if self.col_axis.dot(&self.row_axis).abs() > ORTHO_TOL {
            out.push(format!("{name}: orientation axes must be orthogonal"));
        }
        if !self.reference.iter().all(|v| v.is_finite()) {
            out.push(format!("{name}: reference position must be finite"));
        }
    }

    /// Element offsets from the centroid in the global frame.
    pub fn offsets(&self) -> Vec<Vec3> {
        let c0 = (self.n_cols as f64 - 1.0) / 2.0;
        let r0 = (self.n_rows as f64 - 1.0) / 2.0;
        let mut out = Vec::with_capacity(self.len());
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                let u = (c as f64 - c0) * self.spacing;
                let v = (r as f64 - r0) * self.spacing;
                out.push(self.col_axis * u + self.row_axis * v);
            }
        }
        out
    }
}

/// Element positions: centered on the reference, uniform spacing on the array plane.
pub fn element_positions(spec: &ArraySpec) -> Vec<Vec3> {
    spec.offsets()
        .into_iter()
        .map(|o| spec.reference + o)
        .collect()
}

/// Spherical coordinates: distance, elevation from +z in `[0, π]`, azimuth from +x in `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spherical {
    pub distance: f64,
    pub elevation: f64,
    pub azimuth: f64,
}

impl Spherical {
    /// Unit direction `[sinθ cosφ, sinθ sinφ, cosθ]`.
    pub fn direction(&self) -> Vec3 {
        direction_vector(self.elevation, self.azimuth)
    }

    pub fn to_cartesian(&self, origin: &Vec3) -> Vec3 {
        origin + self.direction() * self.distance
    }
}

pub fn direction_vector(elevation: f64, azimuth: f64) -> Vec3 {
    let (st, ct) = elevation.sin_cos();
    let (sp, cp) = azimuth.sin_cos();
    Vec3::new(st * cp, st * sp, ct)
}

pub fn spherical_from_cartesian(p: &Vec3, origin: &Vec3) -> Result<Spherical> {
    let d = p - origin;
    let distance = d.norm();
    if distance == 0.0 {
        return Err(Error::DegenerateGeometry(
            "point coincides with origin".into(),
        ));
    }
    let elevation = (d.z / distance).clamp(-1.0, 1.0).acos();
    // pole: azimuth is undefined, report 0
    let azimuth = if d.x == 0.0 && d.y == 0.0 {
        0.0
    } else {
        d.y.atan2(d.x)
    };
    let azimuth = if azimuth == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        azimuth
    };
    Ok(Spherical {
        distance,
        elevation,
        azimuth,
    })
}

pub fn pairwise_distance(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm()
}

/// Distance between two points given their spherical coordinates about a
/// common origin (law of cosines on the sphere).
pub fn pairwise_distance_spherical(a: &Spherical, b: &Spherical) -> f64 {
    let cos_gamma = a.elevation.sin() * b.elevation.sin() * (a.azimuth - b.azimuth).cos()
        + a.elevation.cos() * b.elevation.cos();
    let sq = a.distance * a.distance + b.distance * b.distance
        - 2.0 * a.distance * b.distance * cos_gamma;
    sq.max(0.0).sqrt()
}

/// Exponential-Lambertian unit-cell pattern and element gains (linear).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiationPattern {
    pub q: f64,
    pub cell_gain: f64,
    pub bs_gain: f64,
    pub ue_gain: f64,
}

impl Default for RadiationPattern {
    fn default() -> Self {
        Self {
            q: 1.0,
            cell_gain: 1.0,
            bs_gain: 1.0,
            ue_gain: 1.0,
        }
    }
}

impl RadiationPattern {
    /// Normalized power pattern `F(θ)` for an off-normal angle θ.
    pub fn power(&self, theta: f64) -> f64 {
        radiation_pattern(theta, self.q)
    }

    /// `F` evaluated from the cosine of the off-normal angle.
    #[inline]
    pub fn power_from_cos(&self, cos_theta: f64) -> f64 {
        if cos_theta <= 0.0 {
            0.0
        } else if self.q == 0.0 {
            1.0
        } else {
            cos_theta.min(1.0).powf(self.q)
        }
    }

    pub(crate) fn collect_problems(&self, out: &mut Vec<String>) {
        if !(self.q >= 0.0) {
            out.push(format!("pattern exponent q must be >= 0 (got {})", self.q));
        }
        for (name, g) in [
            ("cell", self.cell_gain),
            ("bs", self.bs_gain),
            ("ue", self.ue_gain),
        ] {
            if !(g > 0.0) {
                out.push(format!("{name} gain must be > 0 (got {g})"));
            }
        }
    }
}

/// `cos^q θ` on `[0, π/2]`, zero beyond.
pub fn radiation_pattern(theta: f64, q: f64) -> f64 {
    if (0.0..=std::f64::consts::FRAC_PI_2).contains(&theta) {
        if q == 0.0 {
            1.0
        } else {
            theta.cos().max(0.0).powf(q)
        }
    } else {
        0.0
    }
}

/// Angle between the array normal and the direction from `from` to `to`.
pub fn off_normal_angle(normal: &Vec3, from: &Vec3, to: &Vec3) -> f64 {
    let d = to - from;
    let n = d.norm();
    if n == 0.0 {
        return 0.0;
    }
    (normal.dot(&d) / n).clamp(-1.0, 1.0).acos()
}

/// Rotation about the global z axis.
pub fn rotation_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
