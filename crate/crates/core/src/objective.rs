//! The conservative hybrid objective on a Q-table.
//!
//! ```text
//! L(Q) = alpha * (ln sum_sa w(s,a) e^{Q(s,a)} - E_off[Q(s,a)])
//!      + mean_off (Q(s,a) - y)^2
//!      + mean_sim rho(s,a,s') (Q(s,a) - y)^2
//! y    = r + gamma * sum_a' pi(a'|s') Q(s',a')
//! ```
//!
//! Samples are grouped by `(s, a, s')` into a [`CompressedBatch`], which makes
//! every loss, gradient and target refresh linear in the number of distinct
//! transitions rather than in the batch size. Importance weights depend only on
//! `(s, a, s')`, so grouping loses nothing.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mdp::{greedy_improve, Policy, QTable, Transition};

/// Shape of the tables an objective acts on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableShape {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
}

impl TableShape {
    pub fn pairs(&self) -> usize {
        self.num_states * self.num_actions
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedTransition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub count: f64,
    pub sum_r: f64,
    pub sum_r2: f64,
    /// Importance weight applied to every sample in the group.
    pub weight: f64,
}

/// Transitions grouped by `(s, a, s')` in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBatch {
    groups: Vec<GroupedTransition>,
    num_samples: usize,
}

impl CompressedBatch {
    pub fn from_transitions<'a, I>(transitions: I) -> Self
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let mut map: BTreeMap<(usize, usize, usize), (f64, f64, f64)> = BTreeMap::new();
        let mut num_samples = 0;
        for t in transitions {
            let e = map.entry((t.s, t.a, t.s_next)).or_insert((0.0, 0.0, 0.0));
            e.0 += 1.0;
            e.1 += t.r;
            e.2 += t.r * t.r;
            num_samples += 1;
        }
        let groups = map
            .into_iter()
            .map(
                |((s, a, s_next), (count, sum_r, sum_r2))| GroupedTransition {
                    s,
                    a,
                    s_next,
                    count,
                    sum_r,
                    sum_r2,
                    weight: 1.0,
                },
            )
            .collect();
        Self {
            groups,
            num_samples,
        }
    }

    /// Sets each group's weight from `(s, a, s')`.
    pub fn with_weights<F: FnMut(usize, usize, usize) -> f64>(mut self, mut weight: F) -> Self {
        for g in &mut self.groups {
            g.weight = weight(g.s, g.a, g.s_next);
        }
        self
    }

    pub fn groups(&self) -> &[GroupedTransition] {
        &self.groups
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.num_samples == 0
    }

    /// Empirical `(s, a)` distribution (ignores weights).
    pub fn pair_frequencies(&self, shape: &TableShape) -> Vec<f64> {
        let mut freq = vec![0.0; shape.pairs()];
        let n = self.num_samples as f64;
        for g in &self.groups {
            freq[g.s * shape.num_actions + g.a] += g.count / n;
        }
        freq
    }

    pub fn visited_pairs(&self, shape: &TableShape, visited: &mut [bool]) {
        for g in &self.groups {
            visited[g.s * shape.num_actions + g.a] = true;
        }
    }
}

/// Per-component loss values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub conservative: f64,
    pub offline_bellman: f64,
    pub online_bellman: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.conservative + self.offline_bellman + self.online_bellman
    }
}

/// `ln sum_i w_i e^{x_i}` over entries with `w_i > 0`, shifted by the max.
pub(crate) fn weighted_log_sum_exp(weights: &[f64], xs: &[f64]) -> f64 {
    let m = weights
        .iter()
        .zip(xs)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, x)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = weights
        .iter()
        .zip(xs)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, x)| w * (x - m).exp())
        .sum();
    m + s.ln()
}

pub(crate) fn check_normalized(omega: &[f64]) -> Result<()> {
    let total: f64 = omega.iter().sum();
    if omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::OmegaNotNormalized(total));
    }
    Ok(())
}

/// Frozen-target quadratic: `sum_sa (curv_sa Q^2 - 2 lin_sa Q) + constant`,
/// plus the conservative term which is never frozen.
#[derive(Debug, Clone)]
pub struct FrozenTargets {
    curvature: Vec<f64>,
    linear: Vec<f64>,
    offline_constant: f64,
    online_constant: f64,
    offline_curvature: Vec<f64>,
    offline_linear: Vec<f64>,
}

/// The objective for one member: its offline data, optional simulator data and
/// the weights of the conservative term.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub shape: TableShape,
    pub alpha_c: f64,
    pub omega: &'a [f64],
    pub offline: &'a CompressedBatch,
    pub online: Option<&'a CompressedBatch>,
    offline_freq: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(
        shape: TableShape,
        alpha_c: f64,
        omega: &'a [f64],
        offline: &'a CompressedBatch,
        online: Option<&'a CompressedBatch>,
    ) -> Result<Self> {
        if offline.is_empty() {
            return Err(Error::EmptyBatch("offline"));
        }
        if matches!(online, Some(b) if b.is_empty()) {
            return Err(Error::EmptyBatch("simulator"));
        }
        if omega.len() != shape.pairs() {
            return Err(Error::dims(shape.pairs(), omega.len()));
        }
        check_normalized(omega)?;
        let offline_freq = offline.pair_frequencies(&shape);
        Ok(Self {
            shape,
            alpha_c,
            omega,
            offline,
            online,
            offline_freq,
        })
    }

    fn next_values(&self, q: &QTable, policy: &Policy) -> Vec<f64> {
        (0..self.shape.num_states)
            .map(|s| q.policy_value(policy, s))
            .collect()
    }

    fn conservative(&self, q: &QTable) -> f64 {
        if self.alpha_c == 0.0 {
            return 0.0;
        }
        let lse = weighted_log_sum_exp(self.omega, q.as_slice());
        let mean_q: f64 = self
            .offline_freq
            .iter()
            .zip(q.as_slice())
            .map(|(f, x)| f * x)
            .sum();
        self.alpha_c * (lse - mean_q)
    }

    fn conservative_gradient(&self, q: &QTable, grad: &mut [f64]) {
        if self.alpha_c == 0.0 {
            return;
        }
        let lse = weighted_log_sum_exp(self.omega, q.as_slice());
        for (i, g) in grad.iter_mut().enumerate() {
            let soft = if self.omega[i] > 0.0 {
                self.omega[i] * (q.as_slice()[i] - lse).exp()
            } else {
                0.0
            };
            *g += self.alpha_c * (soft - self.offline_freq[i]);
        }
    }

    /// `mean w (Q(s,a) - r - gamma v(s'))^2` over one batch.
    fn bellman(&self, batch: &CompressedBatch, q: &QTable, v: &[f64]) -> f64 {
        let gamma = self.shape.gamma;
        let mut acc = 0.0;
        for g in batch.groups() {
            let c = q.get(g.s, g.a) - gamma * v[g.s_next];
            // sum over samples of (c - r)^2
            acc += g.weight * (g.count * c * c - 2.0 * c * g.sum_r + g.sum_r2);
        }
        acc / batch.num_samples() as f64
    }

    /// Loss with targets computed from `q` itself under `policy`.
    pub fn parts(&self, q: &QTable, policy: &Policy) -> LossParts {
        let v = self.next_values(q, policy);
        LossParts {
            conservative: self.conservative(q),
            offline_bellman: self.bellman(self.offline, q, &v),
            online_bellman: self.online.map(|b| self.bellman(b, q, &v)).unwrap_or(0.0),
        }
    }

    /// Gradient of [`Objective::parts`] total with respect to every Q entry,
    /// differentiating through the targets with `policy` held fixed.
    pub fn full_gradient(&self, q: &QTable, policy: &Policy) -> Vec<f64> {
        let v = self.next_values(q, policy);
        let gamma = self.shape.gamma;
        let m = self.shape.num_actions;
        let mut grad = vec![0.0; self.shape.pairs()];
        self.conservative_gradient(q, &mut grad);
        let batches = std::iter::once(self.offline).chain(self.online);
        for batch in batches {
            let n = batch.num_samples() as f64;
            for g in batch.groups() {
                let c = q.get(g.s, g.a) - gamma * v[g.s_next];
                // d/dc of sum (c - r)^2 = 2 (count c - sum_r)
                let dc = 2.0 * g.weight * (g.count * c - g.sum_r) / n;
                grad[g.s * m + g.a] += dc;
                for b in 0..m {
                    grad[g.s_next * m + b] -= dc * gamma * policy.prob(g.s_next, b);
                }
            }
        }
        grad
    }

    /// Freezes Bellman targets at `(q_target, policy)`.
    pub fn freeze(&self, q_target: &QTable, policy: &Policy) -> FrozenTargets {
        let v = self.next_values(q_target, policy);
        let gamma = self.shape.gamma;
        let m = self.shape.num_actions;
        let pairs = self.shape.pairs();
        let accumulate = |batch: &CompressedBatch| {
            let n = batch.num_samples() as f64;
            let mut curv = vec![0.0; pairs];
            let mut lin = vec![0.0; pairs];
            let mut constant = 0.0;
            for g in batch.groups() {
                let w = g.weight / n;
                let gv = gamma * v[g.s_next];
                let i = g.s * m + g.a;
                curv[i] += w * g.count;
                // sum of targets y = r + gamma v(s')
                lin[i] += w * (g.sum_r + g.count * gv);
                constant += w * (g.sum_r2 + 2.0 * gv * g.sum_r + g.count * gv * gv);
            }
            (curv, lin, constant)
        };
        let (offline_curvature, offline_linear, offline_constant) = accumulate(self.offline);
        let (mut curvature, mut linear) = (offline_curvature.clone(), offline_linear.clone());
        let mut online_constant = 0.0;
        if let Some(b) = self.online {
            let (c2, l2, k2) = accumulate(b);
            for i in 0..pairs {
                curvature[i] += c2[i];
                linear[i] += l2[i];
            }
            online_constant = k2;
        }
        FrozenTargets {
            curvature,
            linear,
            offline_constant,
            online_constant,
            offline_curvature,
            offline_linear,
        }
    }

    pub fn frozen_loss(&self, frozen: &FrozenTargets, q: &QTable) -> f64 {
        let quad: f64 = q
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, x)| frozen.curvature[i] * x * x - 2.0 * frozen.linear[i] * x)
            .sum();
        self.conservative(q) + quad + frozen.offline_constant + frozen.online_constant
    }

    /// Offline-only frozen Bellman loss; useful for diagnostics.
    pub fn frozen_offline_bellman(&self, frozen: &FrozenTargets, q: &QTable) -> f64 {
        let quad: f64 = q
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, x)| frozen.offline_curvature[i] * x * x - 2.0 * frozen.offline_linear[i] * x)
            .sum();
        quad + frozen.offline_constant
    }

    pub fn frozen_gradient(&self, frozen: &FrozenTargets, q: &QTable) -> Vec<f64> {
        let mut grad: Vec<f64> = q
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, x)| 2.0 * (frozen.curvature[i] * x - frozen.linear[i]))
            .collect();
        self.conservative_gradient(q, &mut grad);
        grad
    }

    /// Gradient descent on the table entries. Targets are refreshed, with the
    /// greedy policy of the current table, every `target_refresh` steps
    /// (including step 0).
    ///
    /// Each entry's step is capped at `1 / (2 c_i + alpha)`, where `c_i` is its
    /// frozen curvature. The Hessian of the frozen loss is bounded by
    /// `diag(2 c) + alpha I`, so every capped step is a descent step even when
    /// large importance weights make single entries stiff.
    pub fn descend(&self, q: &mut QTable, learning_rate: f64, steps: usize, target_refresh: usize) {
        let refresh = target_refresh.max(1);
        let mut frozen = None;
        let mut rates = Vec::new();
        for step in 0..steps {
            if step % refresh == 0 {
                let target_policy = greedy_improve(q, 0.0);
                let f = self.freeze(q, &target_policy);
                rates = f
                    .curvature
                    .iter()
                    .map(|c| learning_rate.min(1.0 / (2.0 * c + self.alpha_c)))
                    .collect();
                frozen = Some(f);
            }
            let grad = self.frozen_gradient(frozen.as_ref().unwrap(), q);
            for ((x, g), lr) in q.as_mut_slice().iter_mut().zip(grad).zip(&rates) {
                *x -= lr * g;
            }
        }
    }
}
