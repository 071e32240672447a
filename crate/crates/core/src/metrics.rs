//! Localization-error statistics, achievable rate, posterior PEB and CSV output.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::error::Result;
use crate::tracker::{kalman_gain, Jacobian, MotionModel, StateCov};
use crate::CMat;

/// Linear-interpolation quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub count: usize,
    pub mean: f64,
    pub rmse: f64,
    pub q90: f64,
    pub q99: f64,
    pub max: f64,
    sorted: Vec<f64>,
}

impl ErrorStats {
    pub fn new(errors: &[f64]) -> Self {
        let mut sorted: Vec<f64> = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len().max(1) as f64;
        Self {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / n,
            rmse: (sorted.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
            q90: quantile_sorted(&sorted, 0.9),
            q99: quantile_sorted(&sorted, 0.99),
            max: sorted.last().copied().unwrap_or(f64::NAN),
            sorted,
        }
    }

    /// Fraction of errors strictly above `threshold`.
    pub fn ccdf(&self, threshold: f64) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        let at_or_below = self.sorted.partition_point(|e| *e <= threshold);
        (self.sorted.len() - at_or_below) as f64 / self.sorted.len() as f64
    }

    /// `(threshold, ccdf)` on a uniform grid from 0 to `max_threshold`.
    pub fn ccdf_curve(&self, max_threshold: f64, points: usize) -> Vec<(f64, f64)> {
        let points = points.max(2);
        (0..points)
            .map(|i| {
                let t = max_threshold * i as f64 / (points - 1) as f64;
                (t, self.ccdf(t))
            })
            .collect()
    }
}

/// Powers per eigenmode maximizing `Σ log2(1 + p_i g_i)` under `Σ p_i = budget`.
pub fn waterfill(gains: &[f64], budget: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    let mut powers = vec![0.0; gains.len()];
    if budget <= 0.0 {
        return powers;
    }
    // largest active set whose water level clears every member's floor
    let mut level = 0.0;
    let mut active = 0;
    let mut inv_sum = 0.0;
    for (m, &i) in order.iter().enumerate() {
        inv_sum += 1.0 / gains[i];
        let candidate = (budget + inv_sum) / (m + 1) as f64;
        if candidate > 1.0 / gains[i] {
            level = candidate;
            active = m + 1;
        } else {
            break;
        }
    }
    for &i in &order[..active] {
        powers[i] = level - 1.0 / gains[i];
    }
    powers
}

/// Capacity in bit/s/Hz of `H_eq` with noise power `σ²` and budget `P_tx`.
pub fn achievable_rate(h_eq: &CMat, sigma2: f64, p_tx: f64) -> f64 {
    if h_eq.is_empty() {
        return 0.0;
    }
    let gains: Vec<f64> = h_eq
        .singular_values()
        .iter()
        .map(|s| s * s / sigma2)
        .collect();
    let powers = waterfill(&gains, p_tx);
    gains
        .iter()
        .zip(&powers)
        .map(|(g, p)| (1.0 + p * g).log2())
        .sum()
}

/// Posterior bound recursion in covariance form.
///
/// `C⁻ = TCTᵀ + P` and `C = C⁻ − C⁻Jᵀ(JC⁻Jᵀ + R)⁻¹JC⁻`, which equals the
/// inverse of `(P + TΦ⁻¹Tᵀ)⁻¹ + JᵀR⁻¹J` whenever the inverses exist and
/// stays defined when the process noise is rank-deficient.
#[derive(Debug, Clone)]
pub struct PebRecursion {
    pub cov: StateCov,
}

impl PebRecursion {
    /// Start from the process-noise covariance (`Φ₀ = P⁻¹`).
    pub fn new(model: &MotionModel) -> Self {
        Self {
            cov: model.process_noise,
        }
    }

    pub fn peb(&self) -> f64 {
        self.cov.fixed_view::<3, 3>(0, 0).trace().max(0.0).sqrt()
    }

    pub fn predict(&mut self, model: &MotionModel) {
        let t = &model.transition;
        let c = t * self.cov * t.transpose() + model.process_noise;
        self.cov = (c + c.transpose()) * 0.5;
    }

    /// Fold in one measurement; an empty Jacobian leaves the prediction.
    pub fn update(&mut self, jac: &Jacobian, r_diag: &DVector<f64>) -> Result<f64> {
        if jac.nrows() > 0 {
            let (gain, s) = kalman_gain(&self.cov, jac, r_diag)?;
            let c = self.cov - &gain * s * gain.transpose();
            self.cov = (c + c.transpose()) * 0.5;
        }
        Ok(self.peb())
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// `threshold_m,ccdf`.
pub fn write_ccdf(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["threshold_m", "ccdf"])?;
    for (t, c) in curve {
        w.write_record([fmt(*t), fmt(*c)])?;
    }
    w.flush()?;
    Ok(())
}

/// `x_m,y_m,power_w,power_dbw`, row-major in `y` then `x`.
pub fn write_power_map(
    path: &Path,
    xs: &[f64],
    ys: &[f64],
    map: &nalgebra::DMatrix<f64>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x_m", "y_m", "power_w", "power_dbw"])?;
    for (i, y) in ys.iter().enumerate() {
        for (j, x) in xs.iter().enumerate() {
            let p = map[(i, j)];
            w.write_record([
                fmt(*x),
                fmt(*y),
                fmt(p),
                fmt(crate::channel::watts_to_dbw(p)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `step,time_s,rmse_m,peb_m`.
pub fn write_peb(path: &Path, dt: f64, rmse: &[f64], peb: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "time_s", "rmse_m", "peb_m"])?;
    for (t, (r, p)) in rmse.iter().zip(peb).enumerate() {
        w.write_record([t.to_string(), fmt(t as f64 * dt), fmt(*r), fmt(*p)])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary line per policy: `policy,runs,steps,mean_m,rmse_m,q90_m,q99_m,max_m,mean_rate_bps_hz`.
pub fn write_summary(path: &Path, rows: &[(String, usize, ErrorStats, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "policy",
        "runs",
        "steps",
        "mean_m",
        "rmse_m",
        "q90_m",
        "q99_m",
        "max_m",
        "mean_rate_bps_hz",
    ])?;
    for (name, runs, s, rate) in rows {
        w.write_record([
            name.clone(),
            runs.to_string(),
            s.count.to_string(),
            fmt(s.mean),
            fmt(s.rmse),
            fmt(s.q90),
            fmt(s.q99),
            fmt(s.max),
            fmt(*rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `bin_lo,bin_hi,count` histogram over `[lo, hi)` with `bins` equal bins.
pub fn write_histogram(path: &Path, values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<()> {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        if width > 0.0 && *v >= lo && *v < hi {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "bin_lo,bin_hi,count")?;
    for (i, c) in counts.iter().enumerate() {
        writeln!(
            file,
            "{},{},{}",
            fmt(lo + i as f64 * width),
            fmt(lo + (i + 1) as f64 * width),
            c
        )?;
    }
    Ok(())
}
