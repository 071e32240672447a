//! RIS profile design: minimize the average inverse received power over a
//! position density by block coordinate descent, plus the FOCUS baseline.
//!
//! With `h̃(p) = b(p)·diag(g)` the received power is `P⁰(p, c) = |h̃(p) c|²`.
//! The BCD alternates between the scalars
//! `w(p) = (h̃(p) c)* / (P⁰(p, c) + δ)` and the quadratic program
//! `min cᴴAc − 2Re{s c}, |c_p| ≤ 1`.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scenario::Deployment;
use crate::{CMat, CVec, C64};

/// Equal-weight Gaussian mixture over UE positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub means: Vec<Vec3>,
    pub covs: Vec<Matrix3<f64>>,
}

impl Gmm {
    pub fn point(p: Vec3) -> Self {
        Self {
            means: vec![p],
            covs: vec![Matrix3::zeros()],
        }
    }

    pub fn single(mean: Vec3, cov: Matrix3<f64>) -> Self {
        Self {
            means: vec![mean],
            covs: vec![cov],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.len() as f64; self.len()]
    }

    pub fn mean(&self) -> Vec3 {
        self.means.iter().sum::<Vec3>() / self.len() as f64
    }

    /// I.i.d. draws: uniform component, then a Gaussian draw from it.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec3> {
        let roots: Vec<Matrix3<f64>> = self.covs.iter().map(psd_sqrt).collect();
        (0..n)
            .map(|_| {
                let q = rng.random_range(0..self.len());
                let z = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                self.means[q] + roots[q] * z
            })
            .collect()
    }
}

fn psd_sqrt(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let d = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// `h̃(p) = b(p)·diag(g)` for the first UE antenna, using the LOS RIS-UE row.
pub fn effective_row(dep: &Deployment, k: usize, g: &CVec, position: &Vec3) -> CVec {
    let ue = [position + dep.ue_offsets[0]];
    let b = dep.ris_ue_los(k, position, &ue);
    CVec::from_iterator(g.len(), (0..g.len()).map(|p| b[(0, p)] * g[p]))
}

/// Stack `h̃(p_j)` as rows, dropping positions where RIS `k` delivers nothing.
pub fn effective_rows(dep: &Deployment, k: usize, g: &CVec, samples: &[Vec3]) -> CMat {
    let rows: Vec<CVec> = samples
        .iter()
        .map(|p| effective_row(dep, k, g, p))
        .filter(|r| r.norm_squared() > 0.0)
        .collect();
    let mut m = CMat::zeros(rows.len(), g.len());
    for (j, r) in rows.iter().enumerate() {
        m.row_mut(j).tr_copy_from(r);
    }
    m
}

/// `|h̃ c|²`.
pub fn received_power(row: &CVec, c: &[C64]) -> f64 {
    row.iter()
        .zip(c)
        .map(|(h, c)| h * c)
        .sum::<C64>()
        .norm_sqr()
}

fn powers(rows: &CMat, c: &[C64]) -> (CVec, Vec<f64>) {
    let hc = rows * CVec::from_column_slice(c);
    let p = hc.iter().map(|x| x.norm_sqr()).collect();
    (hc, p)
}

/// Sample mean of `1/P⁰`; infinite when some sample receives nothing.
pub fn inverse_power_mean(rows: &CMat, c: &[C64]) -> f64 {
    let (_, p) = powers(rows, c);
    p.iter().map(|x| 1.0 / x).sum::<f64>() / p.len() as f64
}

/// Profile that phase-conjugates the cascade at one position.
pub fn focus_profile(row: &CVec) -> Vec<C64> {
    row.iter()
        .map(|h| {
            if *h == C64::new(0.0, 0.0) {
                C64::new(1.0, 0.0)
            } else {
                h.conj() / h.norm()
            }
        })
        .collect()
}

/// Sample set and BCD auxiliaries for one RIS.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// `h̃(p_j)` as rows.
    pub rows: CMat,
    pub m: f64,
    pub delta: f64,
    pub w: CVec,
}

impl Workspace {
    pub fn new(rows: CMat, m: f64) -> Self {
        let n = rows.nrows();
        Self {
            rows,
            m,
            delta: 0.0,
            w: CVec::zeros(n),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    /// `δ = min_j P⁰/M` for the given profile.
    pub fn update_delta(&mut self, c: &[C64]) -> Result<()> {
        let (_, p) = powers(&self.rows, c);
        let min_p = p.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_p > 0.0) || !min_p.is_finite() {
            return Err(Error::NumericDegenerate(
                "profile delivers zero power to a sample".into(),
            ));
        }
        self.delta = min_p / self.m;
        Ok(())
    }

    /// `w`-step at the current `δ`.
    pub fn update_w(&mut self, c: &[C64]) -> Result<()> {
        let (hc, p) = powers(&self.rows, c);
        self.w = CVec::from_iterator(
            p.len(),
            hc.iter().zip(&p).map(|(h, p)| h.conj() / (p + self.delta)),
        );
        Ok(())
    }

    /// `A = avg |w|² h̃ᴴh̃` and `s = avg w h̃` (returned as a column).
    pub fn accumulate(&self) -> (CMat, CVec) {
        let n = self.n_samples() as f64;
        let (rows, cols) = self.rows.shape();
        // SᴴS from the real Gram matrix of [Re S, Im S]
        let mut z = DMatrix::<f64>::zeros(rows, 2 * cols);
        for p in 0..cols {
            for j in 0..rows {
                let v = self.rows[(j, p)] * self.w[j] / n.sqrt();
                z[(j, p)] = v.re;
                z[(j, cols + p)] = v.im;
            }
        }
        let g = z.tr_mul(&z);
        let a = CMat::from_fn(cols, cols, |p, l| {
            let re = g[(p, l)] + g[(cols + p, cols + l)];
            let im =
                0.5 * (g[(p, cols + l)] - g[(cols + p, l)] - g[(l, cols + p)] + g[(cols + l, p)]);
            C64::new(0.5 * (re + g[(l, p)] + g[(cols + l, cols + p)]), im)
        });
        let s = self.rows.transpose() * &self.w / C64::new(n, 0.0);
        (a, s)
    }

    /// Sample mean of `Υ(p, c, w) = 1 + |w|²P⁰ − 2Re{w h̃ c} + δ|w|²`.
    pub fn surrogate(&self, c: &[C64]) -> f64 {
        let (hc, p) = powers(&self.rows, c);
        let sum: f64 = (0..p.len())
            .map(|j| {
                let w = self.w[j];
                1.0 + w.norm_sqr() * (p[j] + self.delta) - 2.0 * (w * hc[j]).re
            })
            .sum();
        sum / p.len() as f64
    }
}

/// `cᴴAc − 2Re{Σ s_p c_p}`.
pub fn quadratic_objective(a: &CMat, s: &CVec, c: &[C64]) -> f64 {
    let cv = CVec::from_column_slice(c);
    let ac = a * &cv;
    cv.dotc(&ac).re - 2.0 * s.iter().zip(c).map(|(s, c)| s * c).sum::<C64>().re
}

/// Closed-form KKT minimizer over element `p` with the others fixed.
pub fn ao_element_update(a: &CMat, s: &CVec, c: &[C64], p: usize) -> C64 {
    let v: C64 = (0..c.len())
        .filter(|&l| l != p)
        .map(|l| a[(p, l)] * c[l])
        .sum();
    let app = a[(p, p)].re;
    let y = s[p].conj() - v;
    if app > 0.0 && y.norm() < app {
        y / app
    } else if y.norm() > 0.0 {
        y / y.norm()
    } else {
        c[p]
    }
}

/// One ascending sweep of element updates.
pub fn ao_sweep(a: &CMat, s: &CVec, c: &mut [C64]) {
    for p in 0..c.len() {
        c[p] = ao_element_update(a, s, c, p);
    }
}

fn project_disk(c: C64) -> C64 {
    let m = c.norm();
    if m > 1.0 {
        c / m
    } else {
        c
    }
}

/// Outcome of the projected-gradient solve.
#[derive(Debug, Clone)]
pub struct QpReport {
    pub c: Vec<C64>,
    pub iterations: usize,
    /// `‖c − Π(c − ∇/L)‖∞` at the returned point, in units of `1/L`.
    pub stationarity: f64,
    pub converged: bool,
}

fn largest_eigenvalue(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut x = CVec::from_fn(n, |i, _| {
        C64::new(1.0 + (i % 7) as f64 * 0.1, (i % 3) as f64 * 0.05)
    });
    let mut lam = 0.0;
    for _ in 0..200 {
        let y = a * &x;
        let nrm = y.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        let next = nrm / x.norm();
        x = y / C64::new(nrm, 0.0);
        if (next - lam).abs() <= 1e-6 * next {
            lam = next;
            break;
        }
        lam = next;
    }
    lam
}

/// Accelerated projected gradient for `min cᴴAc − 2Re{s c}` on the unit
/// polydisk, with backtracking on the step and restart on objective increase.
pub fn solve_quadratic(a: &CMat, s: &CVec, c0: &[C64], tol: f64, max_iter: usize) -> QpReport {
    let n = c0.len();
    let sh = s.map(|x| x.conj());
    let mut lip = largest_eigenvalue(a).max(f64::MIN_POSITIVE) * 1.01;
    let grad = |c: &CVec| a * c - &sh;
    let obj = |c: &CVec| quadratic_objective(a, s, c.as_slice());
    let step = |c: &CVec, g: &CVec, lip: f64| {
        CVec::from_iterator(
            n,
            c.iter()
                .zip(g.iter())
                .map(|(c, g)| project_disk(c - g / lip)),
        )
    };

    let mut x = CVec::from_iterator(n, c0.iter().map(|c| project_disk(*c)));
    let mut fx = obj(&x);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut stationarity = f64::INFINITY;
    for it in 0..max_iter {
        let gy = grad(&y);
        let fy = obj(&y);
        let mut next;
        loop {
            next = step(&y, &gy, lip);
            let d = &next - &y;
            // exact quadratic: f(y+d) = f(y) + 2Re⟨∇, d⟩ + dᴴAd ≤ f(y) + 2Re⟨∇, d⟩ + L‖d‖²
            let bound = fy + 2.0 * gy.dotc(&d).re + lip * d.norm_squared();
            if obj(&next) <= bound + 1e-14 * bound.abs().max(1.0) {
                break;
            }
            lip *= 2.0;
        }
        let f_next = obj(&next);
        if f_next > fx {
            // restart from the last accepted point
            y = x.clone();
            t = 1.0;
            continue;
        }
        let gx = grad(&next);
        let pg = &next - step(&next, &gx, lip);
        stationarity = pg.iter().fold(0.0f64, |m, v| m.max(v.norm())) * lip;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &x) * C64::new((t - 1.0) / t_next, 0.0);
        x = next;
        fx = f_next;
        t = t_next;
        if stationarity <= tol * lip.max(1.0) {
            return QpReport {
                c: x.as_slice().to_vec(),
                iterations: it + 1,
                stationarity,
                converged: true,
            };
        }
    }
    QpReport {
        c: x.as_slice().to_vec(),
        iterations: max_iter,
        stationarity,
        converged: false,
    }
}

/// Inner solver for the profile step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// Full convex solve.
    Opt,
    /// One sweep of closed-form element updates.
    Ao,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcdConfig {
    pub n_bcd: usize,
    pub n_samples: usize,
    pub m: f64,
    /// Early stop on relative surrogate change between outer iterations.
    pub rel_tol: f64,
    pub ao_sweeps: usize,
    pub opt_tol: f64,
    pub opt_max_iter: usize,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            n_bcd: 20,
            n_samples: 500,
            m: 100.0,
            rel_tol: 1e-6,
            ao_sweeps: 1,
            opt_tol: 1e-8,
            opt_max_iter: 5000,
        }
    }
}

impl BcdConfig {
    pub fn collect_problems(&self, out: &mut Vec<String>) {
        if self.n_samples == 0 {
            out.push("ris optimizer: n_samples must be >= 1".into());
        }
        if !(self.m > 1.0) {
            out.push(format!("ris optimizer: M must be > 1 (got {})", self.m));
        }
        if !(self.rel_tol >= 0.0) || !(self.opt_tol > 0.0) {
            out.push("ris optimizer: tolerances must be positive".into());
        }
        if self.ao_sweeps == 0 || self.opt_max_iter == 0 {
            out.push("ris optimizer: iteration counts must be >= 1".into());
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcdOutcome {
    pub profile: Vec<C64>,
    /// Surrogate value before and after every half-step (`w`-step, then
    /// profile step), each pair under the `δ` in force for that step.
    pub history: Vec<(f64, f64)>,
    /// Sample mean of `1/P⁰` at the returned profile.
    pub objective: f64,
    pub delta: f64,
    pub iterations: usize,
    /// False if some inner convex solve hit its iteration cap.
    pub converged: bool,
}

/// BCD on a fixed sample set given as rows `h̃(p_j)`.
pub fn optimize_rows(
    rows: CMat,
    c_init: &[C64],
    solver: InnerSolver,
    cfg: &BcdConfig,
) -> Result<BcdOutcome> {
    if rows.ncols() != c_init.len() {
        return Err(Error::Dimension(format!(
            "{} RIS elements vs profile of {}",
            rows.ncols(),
            c_init.len()
        )));
    }
    let mut c: Vec<C64> = c_init.iter().map(|c| project_disk(*c)).collect();
    if rows.nrows() == 0 || cfg.n_bcd == 0 {
        let objective = if rows.nrows() == 0 {
            f64::NAN
        } else {
            inverse_power_mean(&rows, &c)
        };
        return Ok(BcdOutcome {
            profile: c,
            history: Vec::new(),
            objective,
            delta: f64::NAN,
            iterations: 0,
            converged: true,
        });
    }
    if powers(&rows, &c).1.contains(&0.0) {
        // a profile that starves some sample cannot seed the w-step
        c = focus_profile(&(rows.row_sum().transpose()));
    }
    let mut ws = Workspace::new(rows, cfg.m);
    let mut history = Vec::with_capacity(2 * cfg.n_bcd);
    let mut converged = true;
    let mut iterations = 0;
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.n_bcd {
        iterations += 1;
        ws.update_delta(&c)?;
        let before = if iterations == 1 {
            f64::INFINITY
        } else {
            ws.surrogate(&c)
        };
        ws.update_w(&c)?;
        let after_w = ws.surrogate(&c);
        history.push((before, after_w));
        let (a, s) = ws.accumulate();
        match solver {
            InnerSolver::Ao => {
                for _ in 0..cfg.ao_sweeps {
                    ao_sweep(&a, &s, &mut c);
                }
            }
            InnerSolver::Opt => {
                let rep = solve_quadratic(&a, &s, &c, cfg.opt_tol, cfg.opt_max_iter);
                converged &= rep.converged;
                c = rep.c;
            }
        }
        history.push((after_w, ws.surrogate(&c)));
        // the surrogate is scale-free under δ = min P⁰/M, so stop on E{1/P⁰}
        let value = inverse_power_mean(&ws.rows, &c);
        if (prev - value).abs() < cfg.rel_tol * value {
            break;
        }
        prev = value;
    }
    ws.update_delta(&c)?;
    let objective = inverse_power_mean(&ws.rows, &c);
    Ok(BcdOutcome {
        profile: c,
        history,
        objective,
        delta: ws.delta,
        iterations,
        converged,
    })
}

/// Optimize the profile of RIS `k` over position samples.
pub fn optimize_ris(
    dep: &Deployment,
    k: usize,
    g: &CVec,
    samples: &[Vec3],
    c_init: &[C64],
    solver: InnerSolver,
    cfg: &BcdConfig,
) -> Result<BcdOutcome> {
    optimize_rows(effective_rows(dep, k, g, samples), c_init, solver, cfg)
}

/// Map `P⁰(p, c)` over a grid of UE positions.
pub fn power_grid(
    dep: &Deployment,
    k: usize,
    g: &CVec,
    c: &[C64],
    xs: &[f64],
    ys: &[f64],
    z: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(ys.len(), xs.len(), |i, j| {
        received_power(&effective_row(dep, k, g, &Vec3::new(xs[j], ys[i], z)), c)
    })
}
