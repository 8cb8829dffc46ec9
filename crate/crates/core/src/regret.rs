//! Multi-fidelity regret, an LSVI-UCB optimiser on one-hot features, and
//! log-log sublinearity fits.
//!
//! ```text
//! R(budget) = N_e * ( (budget / cost_K) * g* - sum_r V_{k_r}^{pi_r} )
//! ```

use crate::error::{Error, Result};
use crate::fidelity::FidelityFamily;
use crate::mdp::{argmax, evaluate_schedule, value_iteration, Policy, QTable, TabularMdp};
use crate::rng::{sample_index, RngStream};

/// One online round as seen by the regret computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    /// One-based round index.
    pub round: usize,
    /// Zero-based fidelity index.
    pub fidelity: usize,
    pub cost: f64,
    /// Exact return of the round's policy in the simulator it ran on.
    pub return_sim: f64,
    /// Exact return of the round's policy in the true environment.
    pub return_true: f64,
    /// Exact true-environment return of the posterior-weighted mixture policy.
    pub return_mixture: f64,
    pub gain: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub total_regret: f64,
    pub g_star: f64,
    /// Sum of gains over rounds not run at the highest fidelity.
    pub gamma_low: f64,
    /// `max_r 1 / beta_r`.
    pub alpha_gamma: f64,
    /// `N_e g* / cost_K`.
    pub c_const: f64,
    /// `N_e (budget / cost_K) g*`.
    pub benchmark: f64,
    /// `N_e V_{k_r}^{pi_r}` per round.
    pub per_round: Vec<f64>,
}

impl RegretReport {
    /// Benchmark minus the per-round contributions.
    pub fn recompute(&self) -> f64 {
        self.benchmark - self.per_round.iter().sum::<f64>()
    }
}

pub fn multi_fidelity_regret(
    records: &[RoundRecord],
    family: &FidelityFamily,
    g_star: f64,
    n_episodes: usize,
    budget: f64,
) -> Result<RegretReport> {
    if records.is_empty() {
        return Err(Error::InvalidConfig(
            "regret needs at least one round".into(),
        ));
    }
    let top = family.truth_index();
    for r in records {
        family.check_index(r.fidelity)?;
        if r.cost != family.cost(r.fidelity) {
            return Err(Error::AuditFailure(format!(
                "round {} records cost {} for fidelity {}",
                r.round, r.cost, r.fidelity
            )));
        }
        if !r.return_sim.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "round {} return is not finite",
                r.round
            )));
        }
    }
    let ne = n_episodes as f64;
    let cost_k = family.cost(top);
    let benchmark = ne * (budget / cost_k) * g_star;
    let per_round: Vec<f64> = records.iter().map(|r| ne * r.return_sim).collect();
    let total_regret = benchmark - per_round.iter().sum::<f64>();
    let gamma_low = records
        .iter()
        .filter(|r| r.fidelity != top && r.gain.is_finite())
        .map(|r| r.gain)
        .sum();
    let alpha_gamma = records
        .iter()
        .map(|r| 1.0 / r.beta)
        .filter(|x| x.is_finite())
        .fold(0.0, f64::max);
    Ok(RegretReport {
        total_regret,
        g_star,
        gamma_low,
        alpha_gamma,
        c_const: ne * g_star / cost_k,
        benchmark,
        per_round,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsviConfig {
    /// Number of one-hot features, `S * A`.
    pub feature_dim: usize,
    pub bonus_scale: f64,
    pub episodes: usize,
    pub ridge: f64,
}

impl LsviConfig {
    /// Bonus `c d H sqrt(ln(2 d T / delta))`.
    pub fn theory(mdp: &TabularMdp, episodes: usize, c: f64, delta: f64) -> Self {
        let d = (mdp.num_states() * mdp.num_actions()) as f64;
        let h = mdp.episode_len() as f64;
        let t = episodes as f64;
        Self {
            feature_dim: mdp.num_states() * mdp.num_actions(),
            bonus_scale: c * d * h * (2.0 * d * t / delta).ln().sqrt(),
            episodes,
            ridge: 1.0,
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.feature_dim != mdp.num_states() * mdp.num_actions() {
            return Err(Error::dims(
                mdp.num_states() * mdp.num_actions(),
                self.feature_dim,
            ));
        }
        if !(self.bonus_scale.is_finite() && self.bonus_scale >= 0.0) {
            return Err(Error::InvalidConfig(
                "bonus_scale must be nonnegative".into(),
            ));
        }
        if !(self.ridge.is_finite() && self.ridge >= 1e-6) {
            return Err(Error::InvalidConfig(format!("ridge {} < 1e-6", self.ridge)));
        }
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be positive".into()));
        }
        Ok(())
    }
}

/// Sufficient statistics for one-hot least squares, pooled over steps.
///
/// The dynamics are time-homogeneous, so every step regresses on the same
/// samples. With one-hot features the design matrix `Lambda` is diagonal with
/// entries `n(s,a) + ridge`, so `phi^T Lambda^{-1} phi = 1 / (n(s,a) + ridge)`.
#[derive(Debug, Clone)]
pub struct LsviStatistics {
    pub counts: Vec<f64>,
    pub reward_sums: Vec<f64>,
    /// `next_counts[(s*A + a)*S + s']`.
    pub next_counts: Vec<f64>,
}

impl LsviStatistics {
    fn new(pairs: usize, num_states: usize) -> Self {
        Self {
            counts: vec![0.0; pairs],
            reward_sums: vec![0.0; pairs],
            next_counts: vec![0.0; pairs * num_states],
        }
    }

    /// Smallest diagonal entry of the design matrix.
    pub fn min_design_eigenvalue(&self, ridge: f64) -> f64 {
        self.counts
            .iter()
            .fold(f64::INFINITY, |m, c| m.min(c + ridge))
    }
}

#[derive(Debug, Clone)]
pub struct LsviResult {
    /// Step-0 greedy policy of each episode.
    pub policies: Vec<Policy>,
    /// Greedy time-indexed policy after the last episode.
    pub final_schedule: Vec<Policy>,
    /// Exact return of each episode's schedule.
    pub episode_returns: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub g_star: f64,
    pub statistics: LsviStatistics,
}

/// Greedy time-indexed policy of the bonus-augmented least-squares Q, capped at
/// the largest discounted return-to-go.
pub fn optimistic_schedule(
    mdp: &TabularMdp,
    stats: &LsviStatistics,
    cfg: &LsviConfig,
) -> Vec<Policy> {
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let steps = mdp.episode_len();
    let r_max = mdp.rewards().iter().cloned().fold(0.0, f64::max);
    let mut v_next = vec![0.0; n];
    let mut schedule = vec![Policy::uniform(n, m); steps];
    let mut cap = 0.0;
    for h in (0..steps).rev() {
        cap = r_max + mdp.gamma() * cap;
        let mut q = QTable::zeros(n, m);
        for s in 0..n {
            for a in 0..m {
                let i = s * m + a;
                let denom = stats.counts[i] + cfg.ridge;
                let row = &stats.next_counts[i * n..(i + 1) * n];
                let backup: f64 = row.iter().zip(&v_next).map(|(c, v)| c * v).sum();
                let w = (stats.reward_sums[i] + mdp.gamma() * backup) / denom;
                let bonus = cfg.bonus_scale / denom.sqrt();
                q.set(s, a, (w + bonus).min(cap));
            }
        }
        let actions: Vec<usize> = (0..n).map(|s| argmax(q.row(s))).collect();
        for (s, v) in v_next.iter_mut().enumerate() {
            *v = q.get(s, actions[s]);
        }
        schedule[h] = Policy::deterministic(m, &actions).expect("valid actions");
    }
    schedule
}

/// Least-squares value iteration with an optimism bonus on one-hot features.
pub fn lsvi_ucb(mdp: &TabularMdp, cfg: &LsviConfig, rng: &mut RngStream) -> Result<LsviResult> {
    cfg.validate(mdp)?;
    let (n, m) = (mdp.num_states(), mdp.num_actions());
    let g_star = value_iteration(mdp).expected_value(mdp);
    let mut stats = LsviStatistics::new(n * m, n);
    let mut policies = Vec::with_capacity(cfg.episodes);
    let mut episode_returns = Vec::with_capacity(cfg.episodes);
    let mut cumulative_regret = Vec::with_capacity(cfg.episodes);
    let mut total = 0.0;
    for _ in 0..cfg.episodes {
        let schedule = optimistic_schedule(mdp, &stats, cfg);
        let ret = evaluate_schedule(mdp, &schedule)?.expected(mdp.init_dist());
        total += g_star - ret;
        episode_returns.push(ret);
        cumulative_regret.push(total);
        let mut s = sample_index(mdp.init_dist(), rng);
        for policy in &schedule {
            let a = policy.modal_actions()[s];
            let s_next = sample_index(mdp.transition_row(s, a), rng);
            let i = s * m + a;
            stats.counts[i] += 1.0;
            stats.reward_sums[i] += mdp.reward(s, a);
            stats.next_counts[i * n + s_next] += 1.0;
            s = s_next;
        }
        policies.push(schedule[0].clone());
    }
    let final_schedule = optimistic_schedule(mdp, &stats, cfg);
    Ok(LsviResult {
        policies,
        final_schedule,
        episode_returns,
        cumulative_regret,
        g_star,
        statistics: stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SublinearityFit {
    pub slope: f64,
    pub intercept: f64,
    /// `R / budget` strictly decreases along the points.
    pub ratio_decreasing: bool,
    /// Some `R <= 0` was replaced by `1e-9`.
    pub substituted: bool,
}

/// Least-squares slope of `ln R` against `ln budget`.
pub fn sublinearity_fit(points: &[(f64, f64)]) -> Result<SublinearityFit> {
    if points.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) || points[0].0 <= 0.0 {
        return Err(Error::InvalidConfig(
            "budgets must be positive and strictly increasing".into(),
        ));
    }
    let mut substituted = false;
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|&(g, r)| {
            let r = if r > 0.0 {
                r
            } else {
                substituted = true;
                1e-9
            };
            (g.ln(), r.ln())
        })
        .collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ratios: Vec<f64> = points.iter().map(|(g, r)| r / g).collect();
    let ratio_decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    Ok(SublinearityFit {
        slope,
        intercept: my - slope * mx,
        ratio_decreasing,
        substituted,
    })
}

/// Log-log slope of a cumulative-regret curve against episode count.
pub fn curve_slope(curve: &[f64], start: usize) -> Result<f64> {
    let points: Vec<(f64, f64)> = curve
        .iter()
        .enumerate()
        .skip(start)
        .map(|(i, r)| ((i + 1) as f64, *r))
        .collect();
    Ok(sublinearity_fit(&points)?.slope)
}
