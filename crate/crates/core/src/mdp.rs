//! Finite tabular MDPs, exact finite-horizon solvers and trajectory sampling.
//!
//! All tables are stored flat in row-major order: `(s, a)` pairs at
//! `s * num_actions + a`, transition rows at `(s * num_actions + a) * num_states`.
//! Episodes run for exactly `horizon + 1` steps (t = 0..=H) and returns are
//! discounted by `gamma^t`.

use crate::error::{Error, Result};
use crate::rng::sample_index;
use rand::Rng;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    reward: Vec<f64>,
    transition: Vec<f64>,
    init_dist: Vec<f64>,
    gamma: f64,
    horizon: usize,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        reward: Vec<f64>,
        transition: Vec<f64>,
        init_dist: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        let sa = num_states * num_actions;
        if reward.len() != sa {
            return Err(Error::dims(sa, reward.len()));
        }
        if transition.len() != sa * num_states {
            return Err(Error::dims(sa * num_states, transition.len()));
        }
        if init_dist.len() != num_states {
            return Err(Error::dims(num_states, init_dist.len()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside (0, 1]")));
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidMdp(format!("reward {r} outside [0, 1]")));
        }
        for (idx, row) in transition.chunks(num_states).enumerate() {
            check_distribution(row).map_err(|msg| {
                Error::InvalidMdp(format!(
                    "transition row (s={}, a={}): {msg}",
                    idx / num_actions,
                    idx % num_actions
                ))
            })?;
        }
        check_distribution(&init_dist)
            .map_err(|msg| Error::InvalidMdp(format!("initial distribution: {msg}")))?;
        Ok(Self {
            num_states,
            num_actions,
            reward,
            transition,
            init_dist,
            gamma,
            horizon,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Steps per episode, `H + 1`.
    pub fn episode_len(&self) -> usize {
        self.horizon + 1
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    /// Returns a copy with the transition tensor replaced.
    pub fn with_transitions(&self, transition: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.reward.clone(),
            transition,
            self.init_dist.clone(),
            self.gamma,
            self.horizon,
        )
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.num_states != self.num_states || policy.num_actions != self.num_actions {
            return Err(Error::dims(
                format!("{}x{} policy", self.num_states, self.num_actions),
                format!("{}x{}", policy.num_states, policy.num_actions),
            ));
        }
        Ok(())
    }

    /// `sum_s' P(s'|s,a) v(s')`
    fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum()
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(format!("entry {p} is negative or not finite"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

/// Stochastic stationary policy `pi(a|s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::dims(num_states * num_actions, probs.len()));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            check_distribution(row)
                .map_err(|msg| Error::InvalidPolicy(format!("row {s}: {msg}")))?;
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::IndexOutOfRange(format!("action {a} in state {s}")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        Ok(Self {
            num_states: actions.len(),
            num_actions,
            probs,
        })
    }

    /// `weight * first + (1 - weight) * second`, row by row.
    pub fn mixture(first: &Policy, second: &Policy, weight: f64) -> Result<Self> {
        if first.num_states != second.num_states || first.num_actions != second.num_actions {
            return Err(Error::dims(
                format!("{}x{}", first.num_states, first.num_actions),
                format!("{}x{}", second.num_states, second.num_actions),
            ));
        }
        let probs = first
            .probs
            .iter()
            .zip(&second.probs)
            .map(|(p, q)| weight * p + (1.0 - weight) * q)
            .collect();
        Policy::new(first.num_states, first.num_actions, probs)
    }

    /// Mixes with the uniform policy: `(1 - epsilon) * self + epsilon * uniform`.
    pub fn explore(&self, epsilon: f64) -> Policy {
        let u = epsilon / self.num_actions as f64;
        Policy {
            num_states: self.num_states,
            num_actions: self.num_actions,
            probs: self.probs.iter().map(|p| (1.0 - epsilon) * p + u).collect(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Most likely action per state (lowest index on ties).
    pub fn modal_actions(&self) -> Vec<usize> {
        (0..self.num_states).map(|s| argmax(self.row(s))).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self::filled(num_states, num_actions, 0.0)
    }

    pub fn filled(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![value; num_states * num_actions],
        }
    }

    pub fn from_values(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::dims(num_states * num_actions, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "q table has non-finite entries".into(),
            ));
        }
        Ok(Self {
            num_states,
            num_actions,
            values,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.num_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `sum_a pi(a|s) Q(s,a)`
    pub fn policy_value(&self, policy: &Policy, s: usize) -> f64 {
        self.row(s)
            .iter()
            .zip(policy.row(s))
            .map(|(q, p)| q * p)
            .sum()
    }
}

/// State-value table at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct VTable(pub Vec<f64>);

impl VTable {
    /// `E_{s0 ~ rho}[V(s0)]`
    pub fn expected(&self, init_dist: &[f64]) -> f64 {
        self.0.iter().zip(init_dist).map(|(v, p)| v * p).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchSource {
    Offline,
    /// Zero-based simulator index.
    Simulator(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub transitions: Vec<Transition>,
    pub source: BatchSource,
    pub round: usize,
}

impl Batch {
    pub fn new(transitions: Vec<Transition>, source: BatchSource, round: usize) -> Self {
        Self {
            transitions,
            source,
            round,
        }
    }

    pub fn tagged(mut self, source: BatchSource, round: usize) -> Self {
        self.source = source;
        self.round = round;
        self
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.transitions.iter()
    }

    pub fn check_indices(&self, num_states: usize, num_actions: usize) -> Result<()> {
        for t in &self.transitions {
            if t.s >= num_states || t.s_next >= num_states || t.a >= num_actions {
                return Err(Error::IndexOutOfRange(format!(
                    "transition ({}, {}, {}) in a {num_states}x{num_actions} table",
                    t.s, t.a, t.s_next
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Exact finite-horizon policy evaluation by backward induction; returns `V_0`.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &Policy) -> Result<VTable> {
    mdp.check_policy(policy)?;
    let n = mdp.num_states;
    let mut next = vec![0.0; n];
    let mut cur = vec![0.0; n];
    for _t in (0..=mdp.horizon).rev() {
        for (s, v) in cur.iter_mut().enumerate() {
            *v = (0..mdp.num_actions)
                .map(|a| {
                    let p = policy.prob(s, a);
                    if p == 0.0 {
                        0.0
                    } else {
                        p * (mdp.reward(s, a) + mdp.gamma * mdp.expected_next(s, a, &next))
                    }
                })
                .sum();
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(VTable(next))
}

/// Evaluates a time-indexed policy `schedule[t]`, t = 0..=H.
pub fn evaluate_schedule(mdp: &TabularMdp, schedule: &[Policy]) -> Result<VTable> {
    if schedule.len() != mdp.episode_len() {
        return Err(Error::dims(mdp.episode_len(), schedule.len()));
    }
    let n = mdp.num_states;
    let mut next = vec![0.0; n];
    let mut cur = vec![0.0; n];
    for policy in schedule.iter().rev() {
        mdp.check_policy(policy)?;
        for (s, v) in cur.iter_mut().enumerate() {
            *v = (0..mdp.num_actions)
                .map(|a| {
                    let p = policy.prob(s, a);
                    if p == 0.0 {
                        0.0
                    } else {
                        p * (mdp.reward(s, a) + mdp.gamma * mdp.expected_next(s, a, &next))
                    }
                })
                .sum();
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(VTable(next))
}

/// `E_{s0 ~ rho}[sum_{t=0}^{H} gamma^t r(s_t, a_t)]`, computed exactly.
pub fn expected_return(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    Ok(evaluate_policy(mdp, policy)?.expected(&mdp.init_dist))
}

/// Optimal finite-horizon solution.
#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub values: VTable,
    pub q: QTable,
    /// Greedy with respect to the time-0 slice of `Q*`.
    pub policy: Policy,
    /// `Q*_t` for t = 0..=H.
    pub q_by_step: Vec<QTable>,
}

impl OptimalSolution {
    /// `E_{s0 ~ rho}[V*_0(s0)]`
    pub fn expected_value(&self, mdp: &TabularMdp) -> f64 {
        self.values.expected(mdp.init_dist())
    }
}

/// Backward induction over t = H..0 with greedy (lowest-index) maximisation.
pub fn value_iteration(mdp: &TabularMdp) -> OptimalSolution {
    let (n, m) = (mdp.num_states, mdp.num_actions);
    let mut next = vec![0.0; n];
    let mut q_by_step = Vec::with_capacity(mdp.episode_len());
    for _t in (0..=mdp.horizon).rev() {
        let mut q = QTable::zeros(n, m);
        for s in 0..n {
            for a in 0..m {
                q.set(
                    s,
                    a,
                    mdp.reward(s, a) + mdp.gamma * mdp.expected_next(s, a, &next),
                );
            }
        }
        for (s, v) in next.iter_mut().enumerate() {
            *v = q.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        }
        q_by_step.push(q);
    }
    q_by_step.reverse();
    let q0 = q_by_step[0].clone();
    let policy = greedy_improve(&q0, 0.0);
    OptimalSolution {
        values: VTable(next),
        q: q0,
        policy,
        q_by_step,
    }
}

/// Sample-based Bellman targets `r + gamma * sum_a' pi(a'|s') q(s', a')`.
pub fn bellman_backup(q: &QTable, policy: &Policy, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
    if q.num_states != policy.num_states || q.num_actions != policy.num_actions {
        return Err(Error::dims(
            format!("{}x{}", q.num_states, q.num_actions),
            format!("{}x{}", policy.num_states, policy.num_actions),
        ));
    }
    batch.check_indices(q.num_states, q.num_actions)?;
    let next_values: Vec<f64> = (0..q.num_states)
        .map(|s| q.policy_value(policy, s))
        .collect();
    Ok(batch
        .iter()
        .map(|t| t.r + gamma * next_values[t.s_next])
        .collect())
}

/// Epsilon-greedy improvement. The argmax action gets `1 - eps + eps/A`,
/// every other action `eps/A`; ties go to the lowest action index.
pub fn greedy_improve(q: &QTable, epsilon: f64) -> Policy {
    let m = q.num_actions;
    let base = epsilon / m as f64;
    let mut probs = vec![base; q.num_states * m];
    for s in 0..q.num_states {
        let best = argmax(q.row(s));
        probs[s * m + best] += 1.0 - epsilon;
    }
    Policy {
        num_states: q.num_states,
        num_actions: m,
        probs,
    }
}

/// Samples `num_episodes` episodes of exactly `H + 1` steps each.
pub fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    num_episodes: usize,
    rng: &mut R,
) -> Result<Batch> {
    mdp.check_policy(policy)?;
    let mut transitions = Vec::with_capacity(num_episodes * mdp.episode_len());
    for _ in 0..num_episodes {
        let mut s = sample_index(&mdp.init_dist, rng);
        for _t in 0..=mdp.horizon {
            let a = sample_index(policy.row(s), rng);
            let s_next = sample_index(mdp.transition_row(s, a), rng);
            transitions.push(Transition {
                s,
                a,
                r: mdp.reward(s, a),
                s_next,
            });
            s = s_next;
        }
    }
    Ok(Batch::new(transitions, BatchSource::Offline, 0))
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn geometric_return_single_state() {
        let mdp = two_armed(0.9, 2);
        let pi = Policy::deterministic(2, &[1]).unwrap();
        assert_abs_diff_eq!(expected_return(&mdp, &pi).unwrap(), 2.71, epsilon = 1e-12);
    }

    #[test]
    fn zero_reward_gives_zero_return() {
        let mut rng = stream(3, 0);
        let m = random_mdp(&mut rng, 4, 3, 0.9, 10);
        let zero = TabularMdp::new(
            4,
            3,
            vec![0.0; 12],
            m.transitions().to_vec(),
            m.init_dist().to_vec(),
            0.9,
            10,
        )
        .unwrap();
        let pi = random_policy(&mut rng, 4, 3);
        assert_eq!(expected_return(&zero, &pi).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mdp = two_armed(0.9, 2);
        let pi = Policy::uniform(2, 2);
        assert!(matches!(
            expected_return(&mdp, &pi),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn constructor_rejects_bad_tables() {
        assert!(TabularMdp::new(1, 1, vec![1.5], vec![1.0], vec![1.0], 0.9, 1).is_err());
        assert!(TabularMdp::new(1, 1, vec![0.5], vec![0.9], vec![1.0], 0.9, 1).is_err());
        assert!(TabularMdp::new(1, 1, vec![0.5], vec![1.0], vec![1.0], 0.0, 1).is_err());
        assert!(TabularMdp::new(
            2,
            1,
            vec![0.5, 0.5],
            vec![1.2, -0.2, 0.0, 1.0],
            vec![1.0, 0.0],
            0.9,
            1
        )
        .is_err());
    }

    #[test]
    fn value_iteration_two_armed() {
        let mdp = two_armed(0.9, 2);
        let sol = value_iteration(&mdp);
        assert_abs_diff_eq!(sol.values.0[0], 2.71, epsilon = 1e-12);
        assert_eq!(sol.policy.modal_actions(), vec![1]);
        assert_eq!(sol.policy.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn identical_rewards_tie_to_lowest_action() {
        let mdp =
            TabularMdp::new(2, 3, vec![0.5; 6], vec![0.5; 12], vec![0.5, 0.5], 0.9, 5).unwrap();
        let sol = value_iteration(&mdp);
        assert_eq!(sol.policy.modal_actions(), vec![0, 0]);
        let r0 = expected_return(&mdp, &sol.policy).unwrap();
        for a in 0..3 {
            let pi = Policy::deterministic(3, &[a, 2 - a]).unwrap();
            assert_abs_diff_eq!(expected_return(&mdp, &pi).unwrap(), r0, epsilon = 1e-12);
        }
    }

    /// Brute force over all 2^3 stationary deterministic policies.
    #[test]
    fn value_iteration_matches_enumeration() {
        for seed in 0..20 {
            let mut rng = stream(seed, 11);
            let mdp = random_mdp(&mut rng, 3, 2, 0.9, 12);
            let sol = value_iteration(&mdp);
            let mut best = f64::NEG_INFINITY;
            let mut best_actions = vec![];
            for code in 0..8usize {
                let actions: Vec<usize> = (0..3).map(|s| (code >> s) & 1).collect();
                let pi = Policy::deterministic(2, &actions).unwrap();
                let j = expected_return(&mdp, &pi).unwrap();
                if j > best + 1e-12 {
                    best = j;
                    best_actions = actions;
                }
            }
            let j_star = expected_return(&mdp, &sol.policy).unwrap();
            assert_abs_diff_eq!(j_star, best, epsilon = 1e-9);
            assert!(sol.expected_value(&mdp) >= best - 1e-12);
            assert_eq!(sol.policy.modal_actions(), best_actions, "seed {seed}");
        }
    }

    #[test]
    fn evaluation_of_optimal_policy_matches_optimal_values() {
        let mdp = two_armed(0.95, 20);
        let sol = value_iteration(&mdp);
        let v = evaluate_policy(&mdp, &sol.policy).unwrap();
        for (x, y) in v.0.iter().zip(&sol.values.0) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_reward_closed_form() {
        let (gamma, h, c) = (0.95, 30usize, 0.3);
        let mut rng = stream(5, 0);
        let base = random_mdp(&mut rng, 5, 3, gamma, h);
        let mdp = TabularMdp::new(
            5,
            3,
            vec![c; 15],
            base.transitions().to_vec(),
            base.init_dist().to_vec(),
            gamma,
            h,
        )
        .unwrap();
        let v = evaluate_policy(&mdp, &Policy::uniform(5, 3)).unwrap();
        let expected = c * (1.0 - gamma.powi(h as i32 + 1)) / (1.0 - gamma);
        for x in v.0 {
            assert_abs_diff_eq!(x, expected, epsilon = 1e-12);
        }
    }

    /// Plain Monte-Carlo estimate with its standard error.
    fn monte_carlo(mdp: &TabularMdp, pi: &Policy, episodes: usize, seed: u64) -> (f64, f64) {
        let mut rng = stream(seed, 99);
        let batch = rollout(mdp, pi, episodes, &mut rng).unwrap();
        let len = mdp.episode_len();
        let returns: Vec<f64> = batch
            .transitions
            .chunks(len)
            .map(|ep| {
                ep.iter()
                    .enumerate()
                    .map(|(t, tr)| mdp.gamma().powi(t as i32) * tr.r)
                    .sum()
            })
            .collect();
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn expected_return_matches_monte_carlo_on_slippery_chain() {
        // two states; action 1 moves toward state 1 (reward), slip 0.1 flips the move
        let slip = 0.1;
        let transition = vec![
            1.0 - slip,
            slip, // s0, a0 -> stay
            slip,
            1.0 - slip, // s0, a1 -> move right
            1.0 - slip,
            slip, // s1, a0 -> move left
            slip,
            1.0 - slip, // s1, a1 -> stay
        ];
        let mdp = TabularMdp::new(
            2,
            2,
            vec![0.0, 0.0, 1.0, 1.0],
            transition,
            vec![1.0, 0.0],
            0.95,
            20,
        )
        .unwrap();
        let greedy = value_iteration(&mdp).policy;
        let exact = expected_return(&mdp, &greedy).unwrap();
        let (mc, se) = monte_carlo(&mdp, &greedy, 100_000, 1);
        assert!(
            (exact - mc).abs() <= 3.0 * se,
            "exact {exact} mc {mc} se {se}"
        );
    }

    #[test]
    fn evaluate_policy_matches_monte_carlo_on_random_instance() {
        let mut rng = stream(21, 0);
        let mdp = random_mdp(&mut rng, 4, 3, 0.9, 8);
        let pi = random_policy(&mut rng, 4, 3);
        let exact = evaluate_policy(&mdp, &pi)
            .unwrap()
            .expected(mdp.init_dist());
        let (mc, se) = monte_carlo(&mdp, &pi, 100_000, 2);
        assert!(
            (exact - mc).abs() <= 3.0 * se,
            "exact {exact} mc {mc} se {se}"
        );
    }

    #[test]
    fn bellman_backup_zero_q_returns_rewards() {
        let mut rng = stream(8, 0);
        let mdp = random_mdp(&mut rng, 4, 2, 0.9, 5);
        let batch = rollout(&mdp, &Policy::uniform(4, 2), 3, &mut rng).unwrap();
        let targets =
            bellman_backup(&QTable::zeros(4, 2), &Policy::uniform(4, 2), &batch, 0.9).unwrap();
        for (y, t) in targets.iter().zip(batch.iter()) {
            assert_eq!(*y, t.r);
        }
    }

    #[test]
    fn bellman_backup_plug_in() {
        let mut q = QTable::zeros(2, 2);
        q.set(1, 1, 1.0);
        let pi = Policy::deterministic(2, &[0, 1]).unwrap();
        let batch = Batch::new(
            vec![Transition {
                s: 0,
                a: 0,
                r: 0.5,
                s_next: 1,
            }],
            BatchSource::Offline,
            0,
        );
        let y = bellman_backup(&q, &pi, &batch, 0.9).unwrap();
        assert_abs_diff_eq!(y[0], 1.4, epsilon = 1e-15);
    }

    #[test]
    fn bellman_backup_matches_direct_summation() {
        let mut rng = stream(4, 0);
        let mdp = random_mdp(&mut rng, 5, 3, 0.8, 4);
        let pi = random_policy(&mut rng, 5, 3);
        let q = QTable::from_values(
            5,
            3,
            (0..15).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect(),
        )
        .unwrap();
        let batch = rollout(&mdp, &pi, 4, &mut rng).unwrap();
        let got = bellman_backup(&q, &pi, &batch, 0.8).unwrap();
        for (y, t) in got.iter().zip(batch.iter()) {
            let mut acc = 0.0;
            for a in 0..3 {
                acc += pi.as_slice()[t.s_next * 3 + a] * q.as_slice()[t.s_next * 3 + a];
            }
            assert_abs_diff_eq!(*y, t.r + 0.8 * acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn bellman_backup_rejects_out_of_range() {
        let batch = Batch::new(
            vec![Transition {
                s: 0,
                a: 0,
                r: 0.0,
                s_next: 7,
            }],
            BatchSource::Offline,
            0,
        );
        assert!(matches!(
            bellman_backup(&QTable::zeros(2, 2), &Policy::uniform(2, 2), &batch, 0.9),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn greedy_improve_examples() {
        let q = QTable::from_values(1, 2, vec![0.1, 0.9]).unwrap();
        assert_eq!(greedy_improve(&q, 0.0).row(0), &[0.0, 1.0]);
        let q = QTable::from_values(1, 2, vec![0.9, 0.1]).unwrap();
        let p = greedy_improve(&q, 0.2);
        assert_abs_diff_eq!(p.row(0)[0], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(p.row(0)[1], 0.1, epsilon = 1e-15);
        let q = QTable::filled(1, 4, 0.3);
        assert_eq!(greedy_improve(&q, 0.0).modal_actions(), vec![0]);
    }

    #[test]
    fn rollout_counts_and_determinism() {
        let mut rng = stream(2, 0);
        let mdp = random_mdp(&mut rng, 3, 2, 0.9, 4);
        let pi = Policy::uniform(3, 2);
        let a = rollout(&mdp, &pi, 3, &mut stream(10, 1)).unwrap();
        let b = rollout(&mdp, &pi, 3, &mut stream(10, 1)).unwrap();
        assert_eq!(a.len(), 15);
        assert_eq!(a, b);
    }

    /// Deterministic dynamics: each (s, a) visited always lands on its one successor.
    #[test]
    fn rollout_frequencies_on_deterministic_mdp() {
        // 3-state cycle, action 0 advances, action 1 stays
        let mut transition = vec![0.0; 3 * 2 * 3];
        for s in 0..3 {
            transition[(s * 2) * 3 + (s + 1) % 3] = 1.0;
            transition[(s * 2 + 1) * 3 + s] = 1.0;
        }
        let mdp =
            TabularMdp::new(3, 2, vec![0.0; 6], transition, vec![1.0, 0.0, 0.0], 0.9, 6).unwrap();
        let pi = Policy::deterministic(2, &[0, 1, 0]).unwrap();
        let batch = rollout(&mdp, &pi, 5, &mut stream(1, 1)).unwrap();
        let mut counts = [0usize; 18];
        let mut visits = [0usize; 6];
        for t in batch.iter() {
            counts[(t.s * 2 + t.a) * 3 + t.s_next] += 1;
            visits[t.s * 2 + t.a] += 1;
        }
        for sa in 0..6 {
            if visits[sa] == 0 {
                continue;
            }
            for s_next in 0..3 {
                let freq = counts[sa * 3 + s_next] as f64 / visits[sa] as f64;
                assert_eq!(freq, mdp.transitions()[sa * 3 + s_next]);
            }
        }
    }

    #[test]
    fn schedule_evaluation_reduces_to_stationary() {
        let mut rng = stream(6, 0);
        let mdp = random_mdp(&mut rng, 4, 2, 0.9, 6);
        let pi = random_policy(&mut rng, 4, 2);
        let sched = vec![pi.clone(); 7];
        let a = evaluate_schedule(&mdp, &sched).unwrap();
        let b = evaluate_policy(&mdp, &pi).unwrap();
        assert_eq!(a, b);
    }
}
