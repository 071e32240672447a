//! Orthogonal pilots, block-diagonalization precoding and pilot-domain
//! projection of the received signal.

use nalgebra::{DVector, SVD};
use rand::Rng;

use crate::channel::{complex_normal, ChannelSet};
use crate::error::{Error, Result};
use crate::{CMat, CVec, C64};

/// Default relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Orthogonal unit-modulus pilots; row `k` of `q` is the sequence of RIS `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    pub q: CMat,
}

/// DFT rows: `q[k, l] = exp(j 2π k l / L)`.
pub fn build_pilots(k: usize, l: usize) -> Result<PilotBook> {
    if l < k {
        return Err(Error::InvalidConfig(format!(
            "pilot length {l} is shorter than the number of RISs {k}"
        )));
    }
    let q = CMat::from_fn(k, l, |r, c| {
        let m = (r * c) % l;
        C64::from_polar(1.0, 2.0 * std::f64::consts::PI * m as f64 / l as f64)
    });
    Ok(PilotBook { q })
}

impl PilotBook {
    pub fn len(&self) -> usize {
        self.q.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.q.ncols() == 0
    }

    pub fn n_seq(&self) -> usize {
        self.q.nrows()
    }

    /// `(1/L) Y q_k` where `q_k` is the conjugate of row `k`.
    pub fn project(&self, y: &CMat, k: usize) -> CVec {
        let l = self.len() as f64;
        let mut out = CVec::zeros(y.nrows());
        for (c, q) in self.q.row(k).iter().enumerate() {
            let qc = q.conj();
            for r in 0..y.nrows() {
                out[r] += y[(r, c)] * qc;
            }
        }
        out / C64::from(l)
    }
}

/// Singular values (descending) and the full right unitary factor `V`
/// (columns are right singular vectors; trailing columns span the null space).
pub fn right_svd(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.ncols();
    let padded;
    let src = if m.nrows() < n {
        padded = m.clone().resize_vertically(n, C64::new(0.0, 0.0));
        &padded
    } else {
        m
    };
    let svd = SVD::new(src.clone(), false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v = CMat::from_fn(n, n, |r, c| vt[(order[c], r)].conj());
    (sv, v)
}

/// Numerical rank: singular values above `rel_tol · σ_max`.
pub fn rank_of(singular_values: &[f64], rel_tol: f64) -> usize {
    let smax = singular_values.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > rel_tol * smax)
        .count()
}

/// Orthonormal basis of the null space of `m` (possibly with zero columns).
pub fn null_space(m: &CMat, rel_tol: f64) -> CMat {
    let (sv, v) = right_svd(m);
    let r = rank_of(&sv, rel_tol);
    v.columns(r, v.ncols() - r).into_owned()
}

/// Compact factor `R` (N_TX×N_TX) with `RᴴR = MᴴM`.
pub fn gram_factor(m: &CMat) -> CMat {
    let (sv, v) = right_svd(m);
    let mut r = v.adjoint();
    for (i, s) in sv.iter().enumerate() {
        r.row_mut(i).scale_mut(*s);
    }
    r
}

fn stack(blocks: &[&CMat], n_cols: usize) -> CMat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, n_cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Null-space basis of `[G_l (l≠k); H]` for RIS `k` under [`RANK_TOL`].
pub fn bd_nullspace(channels: &ChannelSet, k: usize) -> Result<CMat> {
    bd_nullspace_with_tol(channels, k, RANK_TOL)
}

pub fn bd_nullspace_with_tol(channels: &ChannelSet, k: usize, rel_tol: f64) -> Result<CMat> {
    let n_tx = channels.n_tx();
    let mut blocks: Vec<&CMat> = channels
        .g
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != k)
        .map(|(_, g)| g)
        .collect();
    blocks.push(&channels.h);
    let stacked = stack(&blocks, n_tx);
    let (sv, v) = right_svd(&stacked);
    let rank = rank_of(&sv, rel_tol);
    if rank >= n_tx {
        return Err(Error::BdInfeasible { ris: k, rank, n_tx });
    }
    Ok(v.columns(rank, n_tx - rank).into_owned())
}

fn principal_right(m: &CMat) -> Option<CVec> {
    let (sv, v) = right_svd(m);
    if sv.first().copied().unwrap_or(0.0) == 0.0 {
        return None;
    }
    Some(v.column(0).into_owned())
}

fn unit(v: CVec) -> Result<CVec> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateChannel("beamformer has zero norm".into()));
    }
    Ok(v.unscale(n))
}

/// Unit beamformer maximizing `‖G_k v‖` within the span of `basis`.
pub fn bd_beamformer(g_k: &CMat, basis: &CMat) -> Result<CVec> {
    if basis.ncols() == 0 {
        return Err(Error::DegenerateChannel("empty null space".into()));
    }
    let eff = g_k * basis;
    let vbar = principal_right(&eff)
        .ok_or_else(|| Error::DegenerateChannel("effective channel is zero".into()))?;
    unit(basis * vbar)
}

/// Per-RIS beamformers and power weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub v: Vec<CVec>,
    /// Amplitude weights in √W.
    pub beta: Vec<f64>,
}

impl PrecoderSet {
    pub fn f(&self, k: usize) -> CVec {
        &self.v[k] * C64::from(self.beta[k])
    }

    /// `F = [f_1, …, f_K]` (N_TX×K).
    pub fn matrix(&self) -> CMat {
        let n = self.v.first().map_or(0, |v| v.len());
        CMat::from_fn(n, self.v.len(), |i, k| self.v[k][i] * self.beta[k])
    }

    pub fn power(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum()
    }
}

pub fn assemble_precoders(v: Vec<CVec>, beta: Vec<f64>, p_tx: f64) -> Result<PrecoderSet> {
    if v.len() != beta.len() {
        return Err(Error::Dimension(format!(
            "{} beamformers but {} weights",
            v.len(),
            beta.len()
        )));
    }
    let requested: f64 = beta.iter().map(|b| b * b).sum();
    if requested > p_tx * (1.0 + 1e-12) {
        return Err(Error::PowerBudget {
            requested,
            budget: p_tx,
        });
    }
    Ok(PrecoderSet { v, beta })
}

/// Cached Gram factors of the static BS-RIS links so that per-step BD only
/// needs small SVDs involving the redrawn direct channel.
#[derive(Debug, Clone)]
pub struct BdCache {
    others: Vec<CMat>,
    own: Vec<CMat>,
    rel_tol: f64,
}

impl BdCache {
    pub fn new(g: &[CMat], rel_tol: f64) -> Self {
        let n_tx = g.first().map_or(0, |m| m.ncols());
        let others = (0..g.len())
            .map(|k| {
                let blocks: Vec<&CMat> = g
                    .iter()
                    .enumerate()
                    .filter(|(l, _)| *l != k)
                    .map(|(_, m)| m)
                    .collect();
                if blocks.is_empty() {
                    CMat::zeros(0, n_tx)
                } else {
                    gram_factor(&stack(&blocks, n_tx))
                }
            })
            .collect();
        let own = g.iter().map(gram_factor).collect();
        Self {
            others,
            own,
            rel_tol,
        }
    }

    /// Null-space basis for RIS `k` given the current direct channel.
    pub fn nullspace(&self, k: usize, h: &CMat) -> Result<CMat> {
        let n_tx = h.ncols();
        let stacked = stack(&[&self.others[k], h], n_tx);
        let (sv, v) = right_svd(&stacked);
        let rank = rank_of(&sv, self.rel_tol);
        if rank >= n_tx {
            return Err(Error::BdInfeasible { ris: k, rank, n_tx });
        }
        Ok(v.columns(rank, n_tx - rank).into_owned())
    }

    /// Unit BD beamformers of every RIS.
    pub fn beamformers(&self, h: &CMat) -> Result<Vec<CVec>> {
        (0..self.own.len())
            .map(|k| {
                let basis = self.nullspace(k, h)?;
                bd_beamformer(&self.own[k], &basis)
            })
            .collect()
    }
}

/// Noiseless per-RIS useful term `B_k C_k G_k f_k` (N_RX).
pub fn useful_term(channels: &ChannelSet, k: usize, profile: &[C64], f_k: &CVec) -> CVec {
    let gf = &channels.g[k] * f_k;
    let cgf = DVector::from_iterator(gf.len(), gf.iter().zip(profile).map(|(a, c)| a * c));
    &channels.b[k] * cgf
}

/// Synthesize `Y = HX + Σ_k B_k C_k G_k X + N` with `X = FQ` and project on
/// every pilot. Returns one N_RX vector per RIS.
pub fn simulate_received_pilots<R: Rng + ?Sized>(
    channels: &ChannelSet,
    profiles: &[Vec<C64>],
    precoders: &PrecoderSet,
    pilots: &PilotBook,
    sigma2: f64,
    rng: &mut R,
) -> Vec<CVec> {
    let f = precoders.matrix();
    let mut m = &channels.h * &f;
    for (l, c) in profiles.iter().enumerate() {
        let mut gf = &channels.g[l] * &f;
        for (p, mut row) in gf.row_iter_mut().enumerate() {
            row *= c[p];
        }
        m += &channels.b[l] * gf;
    }
    let mut y = &m * &pilots.q;
    if sigma2 > 0.0 {
        for e in y.iter_mut() {
            *e += complex_normal(rng, sigma2);
        }
    }
    (0..pilots.n_seq()).map(|k| pilots.project(&y, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(r, c, |_, _| complex_normal(rng, 1.0))
    }

    #[test]
    fn pilot_shapes() {
        let p = build_pilots(1, 4).unwrap();
        assert!(p.q.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let p = build_pilots(2, 2).unwrap();
        assert!((p.q[(1, 1)] - C64::new(-1.0, 0.0)).norm() < 1e-15);
        let p = build_pilots(3, 100).unwrap();
        let gram = &p.q * p.q.adjoint();
        assert!((gram - CMat::identity(3, 3) * C64::from(100.0)).norm() < 1e-10);
        assert!(p.q.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        assert!(matches!(build_pilots(3, 2), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn no_interference_spans_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = ChannelSet {
            h: CMat::zeros(2, 5),
            g: Arc::new(vec![random_mat(3, 5, &mut rng)]),
            b: vec![random_mat(2, 3, &mut rng)],
        };
        let basis = bd_nullspace(&ch, 0).unwrap();
        assert_eq!(basis.ncols(), 5);
        assert!((basis.adjoint() * &basis - CMat::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn low_rank_interference_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n_tx = 8;
        let g2 = random_mat(6, 2, &mut rng) * random_mat(2, n_tx, &mut rng);
        let h = random_mat(2, n_tx, &mut rng);
        let ch = ChannelSet {
            h: h.clone(),
            g: Arc::new(vec![random_mat(6, n_tx, &mut rng), g2.clone()]),
            b: vec![],
        };
        let basis = bd_nullspace(&ch, 0).unwrap();
        let mut stacked = g2.clone().resize_vertically(8, C64::new(0.0, 0.0));
        stacked.rows_mut(6, 2).copy_from(&h);
        let sv = stacked.singular_values();
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * smax).count();
        assert_eq!(rank, 4);
        assert_eq!(basis.ncols(), n_tx - rank);
        assert!((&g2 * &basis).norm() / g2.norm() < 1e-10);
        assert!((&h * &basis).norm() / h.norm() < 1e-10);
    }

    #[test]
    fn infeasible_when_crowded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ch = ChannelSet {
            h: random_mat(2, 4, &mut rng),
            g: Arc::new(vec![random_mat(3, 4, &mut rng), random_mat(3, 4, &mut rng)]),
            b: vec![],
        };
        assert!(matches!(
            bd_nullspace(&ch, 0),
            Err(Error::BdInfeasible { .. })
        ));
    }

    #[test]
    fn beamformer_reduces_to_principal_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_mat(7, 4, &mut rng);
        let v = bd_beamformer(&g, &CMat::identity(4, 4)).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-14);
        let smax = g.singular_values().max();
        assert!(((&g * &v).norm() - smax).abs() < 1e-12 * smax);
    }

    #[test]
    fn beamformer_dominates_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_mat(9, 6, &mut rng);
        let basis = null_space(&random_mat(2, 6, &mut rng), RANK_TOL);
        let v = bd_beamformer(&g, &basis).unwrap();
        let best = (&g * &v).norm();
        for _ in 0..100 {
            let u = &basis * random_mat(basis.ncols(), 1, &mut rng).column(0);
            let u = u.unscale(u.norm());
            assert!((&g * u).norm() <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_effective_channel_rejected() {
        let basis = CMat::identity(3, 3);
        assert!(matches!(
            bd_beamformer(&CMat::zeros(2, 3), &basis),
            Err(Error::DegenerateChannel(_))
        ));
    }

    #[test]
    fn cache_matches_direct_stacking() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n_tx = 10;
        let g: Vec<CMat> = (0..3)
            .map(|_| random_mat(2, 3, &mut rng) * random_mat(3, n_tx, &mut rng))
            .collect();
        let h = random_mat(2, n_tx, &mut rng);
        let ch = ChannelSet {
            h: h.clone(),
            g: Arc::new(g.clone()),
            b: vec![],
        };
        let cache = BdCache::new(&g, RANK_TOL);
        for k in 0..3 {
            let a = bd_nullspace(&ch, k).unwrap();
            let b = cache.nullspace(k, &h).unwrap();
            assert_eq!(a.ncols(), b.ncols());
            // same subspace: projectors agree
            let pa = &a * a.adjoint();
            let pb = &b * b.adjoint();
            assert!((pa - pb).norm() < 1e-9);
        }
    }

    #[test]
    fn precoder_budget() {
        let v = vec![CVec::from_element(
            2,
            C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
        )];
        let p = assemble_precoders(v.clone(), vec![2.0], 4.0).unwrap();
        assert!((p.f(0).norm_squared() - 4.0).abs() < 1e-12);
        assert!(matches!(
            assemble_precoders(v, vec![2.1], 4.0),
            Err(Error::PowerBudget { .. })
        ));
        let v3 = vec![CVec::from_element(1, C64::new(1.0, 0.0)); 3];
        let p = assemble_precoders(v3.clone(), vec![(1.0f64 / 3.0).sqrt(); 3], 1.0).unwrap();
        assert!((0..3).all(|k| (p.f(k).norm_squared() - 1.0 / 3.0).abs() < 1e-15));
        let p = assemble_precoders(v3, vec![0.0; 3], 1.0).unwrap();
        assert_eq!(p.matrix().norm(), 0.0);
    }

    #[test]
    fn scalar_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (b, g, c, f) = (
            C64::new(0.3, -0.2),
            C64::new(1.5, 0.5),
            C64::from_polar(1.0, 0.4),
            C64::new(0.7, 0.0),
        );
        let ch = ChannelSet {
            h: CMat::zeros(1, 1),
            g: Arc::new(vec![CMat::from_element(1, 1, g)]),
            b: vec![CMat::from_element(1, 1, b)],
        };
        let pre = PrecoderSet {
            v: vec![CVec::from_element(1, C64::new(1.0, 0.0))],
            beta: vec![f.re],
        };
        let y = simulate_received_pilots(
            &ch,
            &[vec![c]],
            &pre,
            &build_pilots(1, 8).unwrap(),
            0.0,
            &mut rng,
        );
        assert!((y[0][0] - b * c * g * f).norm() < 1e-15);
    }

    #[test]
    fn projected_noise_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = 20;
        let sigma2 = 2.0;
        let ch = ChannelSet {
            h: CMat::zeros(1, 1),
            g: Arc::new(vec![CMat::zeros(1, 1); 2]),
            b: vec![CMat::zeros(1, 1); 2],
        };
        let pre = PrecoderSet {
            v: vec![CVec::from_element(1, C64::new(1.0, 0.0)); 2],
            beta: vec![1.0; 2],
        };
        let pilots = build_pilots(2, l).unwrap();
        let profiles = vec![vec![C64::new(1.0, 0.0)]; 2];
        let trials = 100_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let y = simulate_received_pilots(&ch, &profiles, &pre, &pilots, sigma2, &mut rng);
            acc += y[1][0].norm_sqr();
        }
        let var = acc / trials as f64;
        assert!((var / (sigma2 / l as f64) - 1.0).abs() < 0.03, "{var}");
    }
}
