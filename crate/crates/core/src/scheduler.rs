//! The two-timescale tracking loop: EKF and power split every step, RIS
//! profiles every `N_r` steps from the predicted uncertainty area.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::metrics::{achievable_rate, PebRecursion};
use crate::power::{self, Allocation, Gain};
use crate::precoding::{
    assemble_precoders, build_pilots, simulate_received_pilots, useful_term, BdCache,
};
use crate::ris_opt::{self, effective_rows, focus_profile, BcdConfig, Gmm, InnerSolver};
use crate::scenario::{Deployment, OrientationMode, Scenario, StartState};
use crate::tracker::{
    build_observation, ekf_update, expand_blocks, noise_blocks, pairs_per_ris, predict,
    select_rows, JacobianMode, MotionModel, NoiseNumerator, ObservationModel, State, TrackState,
};
use crate::{CVec, C64};

/// Profile and power-splitting strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "OPT")]
    Opt,
    #[serde(rename = "OPT-AO")]
    OptAo,
    #[serde(rename = "bOPT")]
    BetaOpt,
    #[serde(rename = "bOPT-AO")]
    BetaOptAo,
    #[serde(rename = "FOCUS")]
    Focus,
    #[serde(rename = "bFOCUS")]
    BetaFocus,
    /// Caller-supplied constant profiles with an equal power split.
    #[serde(rename = "EXTERNAL")]
    External,
}

impl Policy {
    pub const ALL: [Policy; 7] = [
        Self::Opt,
        Self::OptAo,
        Self::BetaOpt,
        Self::BetaOptAo,
        Self::Focus,
        Self::BetaFocus,
        Self::External,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Opt => "OPT",
            Self::OptAo => "OPT-AO",
            Self::BetaOpt => "bOPT",
            Self::BetaOptAo => "bOPT-AO",
            Self::Focus => "FOCUS",
            Self::BetaFocus => "bFOCUS",
            Self::External => "EXTERNAL",
        }
    }

    /// Inner solver of the BCD, `None` for non-optimizing policies.
    pub fn solver(self) -> Option<InnerSolver> {
        match self {
            Self::Opt | Self::BetaOpt => Some(InnerSolver::Opt),
            Self::OptAo | Self::BetaOptAo => Some(InnerSolver::Ao),
            _ => None,
        }
    }

    pub fn splits_power(self) -> bool {
        matches!(self, Self::BetaOpt | Self::BetaOptAo | Self::BetaFocus)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s
            .trim()
            .replace('β', "B")
            .to_ascii_uppercase()
            .replace('_', "-");
        let norm = norm
            .strip_prefix("BETA")
            .map(|r| format!("B{}", r.trim_start_matches('-')))
            .unwrap_or(norm);
        Self::ALL
            .into_iter()
            .find(|p| p.name().to_ascii_uppercase() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy `{s}` (expected one of OPT, OPT-AO, bOPT, bOPT-AO, FOCUS, bFOCUS, EXTERNAL)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimescaleConfig {
    /// Steps between RIS updates; `None` keeps the initial profiles forever.
    pub n_r: Option<usize>,
    /// Episode length in steps.
    pub steps: usize,
}

impl TimescaleConfig {
    /// `T_O = N_r·dt`, infinite when profiles are never refreshed.
    pub fn t_o(&self, dt: f64) -> f64 {
        self.n_r.map_or(f64::INFINITY, |n| n as f64 * dt)
    }

    pub fn is_update_step(&self, t: usize) -> bool {
        self.n_r.is_some_and(|n| t.is_multiple_of(n))
    }
}

/// Numerical knobs of the per-step loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSettings {
    pub jacobian: JacobianMode,
    pub noise_numerator: NoiseNumerator,
    /// Relative singular-value threshold of the BD null space.
    pub bd_rank_tol: f64,
    pub compute_rate: bool,
    pub compute_peb: bool,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            jacobian: JacobianMode::Exact,
            noise_numerator: NoiseNumerator::Projected,
            bd_rank_tol: 1e-6,
            compute_rate: true,
            compute_peb: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub timescale: TimescaleConfig,
    pub bcd: BcdConfig,
    pub settings: LoopSettings,
}

impl EpisodeConfig {
    pub fn collect_problems(&self, out: &mut Vec<String>) {
        if self.timescale.n_r == Some(0) {
            out.push("N_r must be >= 1".into());
        }
        if self.timescale.steps == 0 {
            out.push("episode must have at least one step".into());
        }
        if !(self.settings.bd_rank_tol > 0.0 && self.settings.bd_rank_tol < 1.0) {
            out.push(format!(
                "bd_rank_tol must lie in (0, 1) (got {})",
                self.settings.bd_rank_tol
            ));
        }
        self.bcd.collect_problems(out);
    }
}

/// Equal-weight mixture of the `1..=N_r`-step predicted position marginals.
pub fn build_uncertainty_gmm(state: &TrackState, model: &MotionModel, n_r: usize) -> Gmm {
    let mut s = state.clone();
    let mut gmm = Gmm {
        means: Vec::with_capacity(n_r),
        covs: Vec::with_capacity(n_r),
    };
    for _ in 0..n_r.max(1) {
        s = predict(&s, model);
        gmm.means.push(s.position());
        gmm.covs.push(s.position_cov());
    }
    gmm
}

fn psd_sqrt6(m: &Matrix6<f64>) -> Matrix6<f64> {
    let eig = nalgebra::SymmetricEigen::new((m + m.transpose()) * 0.5);
    let d = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    eig.eigenvectors * Matrix6::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Filter's initial mean: the configured start or a uniform draw in the region.
pub fn initial_mean<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> State {
    match &scenario.start {
        StartState::Fixed { position, velocity } => {
            State::from_iterator(position.iter().chain(velocity).copied())
        }
        StartState::Random { speed_mps } => {
            let r = &scenario.region;
            let x = rng.random_range(r.x[0]..=r.x[1]);
            let y = rng.random_range(r.y[0]..=r.y[1]);
            let heading = rng.random_range(0.0..std::f64::consts::TAU);
            State::from_column_slice(&[
                x,
                y,
                r.z,
                speed_mps * heading.cos(),
                speed_mps * heading.sin(),
                0.0,
            ])
        }
    }
}

/// Truth trajectory `s_{t+1} = T s_t + w_t` from the known start `s_0 = m_0`.
///
/// A step that would leave the region is redrawn; if every redraw leaves,
/// the UE stays put and its velocity is reversed.
pub fn simulate_truth<R: Rng + ?Sized>(
    scenario: &Scenario,
    model: &MotionModel,
    m0: &State,
    steps: usize,
    rng: &mut R,
) -> Vec<State> {
    const REDRAWS: usize = 100;
    let root = psd_sqrt6(&model.process_noise);
    let draw = |rng: &mut R| root * State::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let inside = |s: &State| scenario.region.contains(&Vec3::new(s[0], s[1], s[2]));
    let mut out = Vec::with_capacity(steps);
    let mut s = *m0;
    out.push(s);
    for _ in 1..steps {
        let base = model.transition * s;
        let next = (0..REDRAWS).map(|_| base + draw(rng)).find(|c| inside(c));
        s = next.unwrap_or_else(|| {
            let mut b = s;
            for i in 3..6 {
                b[i] = -b[i];
            }
            b
        });
        out.push(s);
    }
    out
}

/// One step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub truth: State,
    pub estimate: State,
    pub cov_diag: [f64; 6],
    pub error: f64,
    /// Noiseless `‖B_k C_k G_k f_k‖²` per RIS.
    pub received_power: Vec<f64>,
    pub beta: Vec<f64>,
    /// Per-RIS block of the observation noise estimate.
    pub r_blocks: Vec<f64>,
    pub rate: f64,
    pub peb: f64,
    /// RISs whose rows entered the update.
    pub active: Vec<bool>,
    /// False if the update was skipped because the innovation was singular.
    pub updated: bool,
}

/// One RIS re-optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct RisUpdate {
    pub step: usize,
    pub profiles: Vec<Vec<C64>>,
    /// Sample mean of `1/P⁰` per RIS at the chosen profile.
    pub objective: Vec<f64>,
    pub iterations: Vec<usize>,
    /// `G_k v_k` for unit-power beamformers at the update step.
    pub illumination: Vec<CVec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub policy: Policy,
    pub dt: f64,
    pub steps: Vec<StepRecord>,
    pub ris_updates: Vec<RisUpdate>,
    /// Distance beyond which the track is flagged as diverged.
    pub divergence_threshold: f64,
}

impl EpisodeTrace {
    pub fn errors(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.error).collect()
    }

    pub fn mean_error(&self) -> f64 {
        self.steps.iter().map(|s| s.error).sum::<f64>() / self.steps.len().max(1) as f64
    }

    pub fn diverged(&self) -> bool {
        self.steps
            .iter()
            .any(|s| s.error > self.divergence_threshold)
    }
}

/// Independent random streams of one run, so that every policy sees the
/// same trajectory, orientation errors and fading.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub truth: ChaCha8Rng,
    pub channel: ChaCha8Rng,
    pub sampling: ChaCha8Rng,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        let stream = |n: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(n);
            r
        };
        Self {
            truth: stream(0),
            channel: stream(1),
            sampling: stream(2),
        }
    }
}

struct Loop<'a> {
    scenario: &'a Scenario,
    dep: &'a Deployment,
    cfg: &'a EpisodeConfig,
    model: MotionModel,
    policy: Policy,
    p_tx: f64,
    sigma2: f64,
    noise: f64,
    z: usize,
}

impl Loop<'_> {
    fn ris_gains(&self, v: &[CVec]) -> Vec<CVec> {
        (0..self.dep.n_ris())
            .map(|k| &self.dep.g[k] * &v[k])
            .collect()
    }

    /// New profiles for the window ahead of `state`.
    fn update_profiles<R: Rng + ?Sized>(
        &self,
        step: usize,
        state: &TrackState,
        v: &[CVec],
        current: &[Vec<C64>],
        rng: &mut R,
    ) -> Result<(RisUpdate, Vec<crate::geometry::Vec3>)> {
        let n_r = self.cfg.timescale.n_r.unwrap_or(1);
        let gmm = build_uncertainty_gmm(state, &self.model, n_r);
        let gains = self.ris_gains(v);
        let target = gmm.means[0];
        let mut update = RisUpdate {
            step,
            profiles: Vec::new(),
            objective: Vec::new(),
            iterations: Vec::new(),
            illumination: gains.clone(),
        };
        let samples = match self.policy.solver() {
            Some(_) => gmm.sample(self.cfg.bcd.n_samples, rng),
            None => Vec::new(),
        };
        for (k, g) in gains.iter().enumerate() {
            let focus = focus_profile(&ris_opt::effective_row(self.dep, k, g, &target));
            match self.policy.solver() {
                Some(solver) => {
                    let init = if step == 0 { &focus } else { &current[k] };
                    let out = ris_opt::optimize_ris(
                        self.dep,
                        k,
                        g,
                        &samples,
                        init,
                        solver,
                        &self.cfg.bcd,
                    )?;
                    update.objective.push(out.objective);
                    update.iterations.push(out.iterations);
                    update.profiles.push(out.profile);
                }
                None => {
                    update.objective.push(f64::NAN);
                    update.iterations.push(0);
                    update.profiles.push(focus);
                }
            }
        }
        Ok((update, samples))
    }

    /// Optimal split from the predicted state and last step's noise blocks.
    fn allocate<R: Rng + ?Sized>(
        &self,
        prior: &TrackState,
        profiles: &[Vec<C64>],
        v: &[CVec],
        prev: &Option<(Vec<f64>, Vec<f64>)>,
        samples: Option<&[Vec3]>,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let n_ris = self.dep.n_ris();
        let Some((r_prev, beta_prev)) = prev else {
            return Ok(Allocation::uniform(n_ris, self.p_tx).beta);
        };
        let obs = ObservationModel::new(self.dep, profiles, v, self.cfg.settings.jacobian);
        let lin = obs.linearize(&prior.position());
        let rows = lin.active_rows(self.z);
        let r_breve = expand_blocks(&power::breve_blocks(r_prev, beta_prev, self.p_tx)?, self.z);
        let mut gain = Gain::zeros(obs.n_obs());
        if !rows.is_empty() {
            let (_, _, jac, r) = select_rows(&rows, &lin.h, &lin.h, &lin.jacobian, &r_breve);
            let g = power::fixed_kalman_gain(&prior.cov, &jac, &r)?;
            for (a, &n) in rows.iter().enumerate() {
                gain.column_mut(n).copy_from(&g.column(a));
            }
        }
        let xi = power::xi_weights(&gain, self.scenario.rf.alpha, self.sigma2, n_ris, self.z);
        let drawn;
        let samples = match samples {
            Some(s) if !s.is_empty() => s,
            _ => {
                drawn = Gmm::single(prior.position(), prior.position_cov())
                    .sample(self.cfg.bcd.n_samples, rng);
                &drawn
            }
        };
        let gamma: Vec<f64> = (0..n_ris)
            .map(|k| {
                let rows = effective_rows(self.dep, k, &(&self.dep.g[k] * &v[k]), samples);
                let powers: Vec<f64> = rows
                    .row_iter()
                    .map(|r| ris_opt::received_power(&r.transpose(), &profiles[k]))
                    .collect();
                let pi = power::pi_value(&powers, self.cfg.bcd.m).unwrap_or(f64::INFINITY);
                // an RIS that is unobservable or unreachable only gets the floor
                let g = xi[k] * pi;
                if g.is_finite() && g > 0.0 {
                    g
                } else {
                    f64::MIN_POSITIVE
                }
            })
            .collect();
        Ok(power::allocate_power(&gamma, self.p_tx)?.beta)
    }
}

/// Run one episode. `external` supplies the constant profiles of
/// [`Policy::External`] and is ignored otherwise.
pub fn run_episode(
    scenario: &Scenario,
    dep: &Deployment,
    cfg: &EpisodeConfig,
    policy: Policy,
    external: Option<&[Vec<C64>]>,
    streams: &mut RunStreams,
) -> Result<EpisodeTrace> {
    let mut problems = Vec::new();
    cfg.collect_problems(&mut problems);
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let n_ris = dep.n_ris();
    let ext: Option<Vec<Vec<C64>>> = match (policy, external) {
        (Policy::External, Some(p)) => {
            if p.len() != n_ris
                || p.iter()
                    .zip(&dep.ris)
                    .any(|(c, s)| c.len() != s.elements.len())
            {
                return Err(Error::Dimension(
                    "external profiles do not match the RIS sizes".into(),
                ));
            }
            Some(p.to_vec())
        }
        (Policy::External, None) => {
            return Err(Error::InvalidConfig(
                "policy EXTERNAL needs profiles".into(),
            ))
        }
        _ => None,
    };
    let rf = &scenario.rf;
    let lp = Loop {
        scenario,
        dep,
        cfg,
        model: MotionModel::new(scenario.motion.dt_s, scenario.motion.accel_var),
        policy,
        p_tx: rf.pilot_power_w,
        sigma2: dep.noise_power,
        noise: cfg
            .settings
            .noise_numerator
            .value(dep.noise_power, rf.pilot_len),
        z: pairs_per_ris(dep.n_rx()),
    };
    let steps = cfg.timescale.steps;
    let m0 = initial_mean(scenario, &mut streams.truth);
    let truth = simulate_truth(scenario, &lp.model, &m0, steps, &mut streams.truth);
    let yaw_dist = Normal::new(0.0, scenario.orientation.std_deg.to_radians())
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let episode_yaw = streams.truth.sample(yaw_dist);

    let bd = BdCache::new(&dep.g, cfg.settings.bd_rank_tol);
    let pilots = build_pilots(n_ris, rf.pilot_len)?;
    let mut peb = PebRecursion::new(&lp.model);
    let mut post = TrackState {
        mean: m0,
        cov: lp.model.process_noise,
    };
    let mut profiles: Vec<Vec<C64>> = Vec::new();
    let mut prev_noise: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut records = Vec::with_capacity(steps);
    let mut ris_updates = Vec::new();

    for (t, s) in truth.iter().enumerate() {
        let prior = if t == 0 {
            post.clone()
        } else {
            predict(&post, &lp.model)
        };
        let pos = Vec3::new(s[0], s[1], s[2]);
        let yaw = match scenario.orientation.mode {
            OrientationMode::PerEpisode => episode_yaw,
            OrientationMode::PerStep => streams.truth.sample(yaw_dist),
        };
        let channels = dep.channels(&pos, &dep.ue_elements(&pos, yaw), &mut streams.channel);
        let v = bd.beamformers(&channels.h)?;

        let mut samples = None;
        if t == 0 || cfg.timescale.is_update_step(t) {
            if let Some(p) = &ext {
                if t == 0 {
                    profiles = p.clone();
                    ris_updates.push(RisUpdate {
                        step: 0,
                        profiles: p.clone(),
                        objective: vec![f64::NAN; n_ris],
                        iterations: vec![0; n_ris],
                        illumination: lp.ris_gains(&v),
                    });
                }
            } else {
                // the window ahead is predicted from the latest posterior
                let (update, drawn) =
                    lp.update_profiles(t, &post, &v, &profiles, &mut streams.sampling)?;
                profiles = update.profiles.clone();
                ris_updates.push(update);
                samples = Some(drawn);
            }
        }

        let beta = if policy.splits_power() {
            lp.allocate(
                &prior,
                &profiles,
                &v,
                &prev_noise,
                samples.as_deref(),
                &mut streams.sampling,
            )?
        } else {
            Allocation::uniform(n_ris, lp.p_tx).beta
        };
        let precoders = assemble_precoders(v.clone(), beta.clone(), lp.p_tx)?;
        let ys = simulate_received_pilots(
            &channels,
            &profiles,
            &precoders,
            &pilots,
            lp.sigma2,
            &mut streams.channel,
        );
        let o = build_observation(&ys)?;
        let r_blocks = noise_blocks(&ys, rf.alpha, lp.noise)?;
        let r_diag = expand_blocks(&r_blocks, lp.z);

        let obs = ObservationModel::new(dep, &profiles, &v, cfg.settings.jacobian);
        let lin = obs.linearize(&prior.position());
        let rows = lin.active_rows(lp.z);
        let (o_a, h_a, j_a, r_a) = select_rows(&rows, &o, &lin.h, &lin.jacobian, &r_diag);
        let (next, updated) = match ekf_update(&prior, &o_a, &h_a, &j_a, &r_a) {
            Ok(p) => (p, true),
            Err(Error::SingularInnovation) => (prior.clone(), false),
            Err(e) => return Err(e),
        };
        post = next;

        let received_power: Vec<f64> = (0..n_ris)
            .map(|k| useful_term(&channels, k, &profiles[k], &precoders.f(k)).norm_squared())
            .collect();
        let rate = if cfg.settings.compute_rate {
            achievable_rate(&channels.equivalent(&profiles), lp.sigma2, lp.p_tx)
        } else {
            f64::NAN
        };
        let peb_t = if cfg.settings.compute_peb {
            if t > 0 {
                peb.predict(&lp.model);
            }
            genie_update(
                &mut peb,
                &obs,
                &pos,
                &received_power,
                dep.n_rx(),
                rf.alpha,
                lp.noise,
                lp.z,
            )?
        } else {
            f64::NAN
        };

        let est = post.position();
        records.push(StepRecord {
            truth: *s,
            estimate: post.mean,
            cov_diag: std::array::from_fn(|i| post.cov[(i, i)]),
            error: (est - pos).norm(),
            received_power,
            beta: beta.clone(),
            r_blocks: r_blocks.clone(),
            rate,
            peb: peb_t,
            active: lin.active.clone(),
            updated,
        });
        prev_noise = Some((r_blocks, beta));
    }
    Ok(EpisodeTrace {
        policy,
        dt: scenario.motion.dt_s,
        steps: records,
        ris_updates,
        divergence_threshold: scenario.region.diameter(),
    })
}

/// Posterior bound step with the Jacobian at the true position and the noise
/// level implied by the noiseless received power.
#[allow(clippy::too_many_arguments)]
fn genie_update(
    peb: &mut PebRecursion,
    obs: &ObservationModel<'_>,
    pos: &Vec3,
    received_power: &[f64],
    n_rx: usize,
    alpha: f64,
    noise: f64,
    z: usize,
) -> Result<f64> {
    let lin = obs.linearize(pos);
    let blocks: Vec<f64> = received_power
        .iter()
        .map(|p| {
            if *p > 0.0 {
                noise * (1.0 + alpha) * n_rx as f64 / p
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let r = expand_blocks(&blocks, z);
    let rows: Vec<usize> = lin
        .active_rows(z)
        .into_iter()
        .filter(|&n| r[n].is_finite())
        .collect();
    let (_, _, jac, r) = select_rows(&rows, &lin.h, &lin.h, &lin.jacobian, &r);
    peb.update(&jac, &r)
}

/// Position marginal of a state covariance.
pub fn position_block(cov: &Matrix6<f64>) -> Matrix3<f64> {
    cov.fixed_view::<3, 3>(0, 0).into_owned()
}
