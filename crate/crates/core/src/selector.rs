//! Generalized posterior over ensemble members and cost-aware fidelity choice.
//!
//! The posterior is updated multiplicatively, `p_l <- p_l exp(-eta L_l)`.
//! Each fidelity is scored by the plug-in information gain its past batches
//! would have produced, divided by its cost. When the best score falls below
//! the threshold `1 / sqrt(remaining budget)` the most faithful simulator is
//! used instead.

use std::collections::VecDeque;

use crate::ensemble::EnsembleMember;
use crate::error::{Error, Result};
use crate::fidelity::{BudgetLedger, FidelityFamily};
use crate::mdp::{argmax, Policy};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorBelief {
    pub probs: Vec<f64>,
    pub round: usize,
}

impl PosteriorBelief {
    pub fn uniform(num_members: usize) -> Result<Self> {
        if num_members == 0 {
            return Err(Error::InvalidConfig(
                "posterior needs at least one member".into(),
            ));
        }
        Ok(Self {
            probs: vec![1.0 / num_members as f64; num_members],
            round: 0,
        })
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (total - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidConfig(format!("invalid posterior {probs:?}")));
        }
        Ok(Self { probs, round: 0 })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index (zero-based) of the most probable member; ties go to the lowest.
    pub fn map_index(&self) -> usize {
        argmax(&self.probs)
    }
}

/// `p_l exp(-eta loss_l)`, normalised with a max shift.
pub fn posterior_update(p: &PosteriorBelief, losses: &[f64], eta: f64) -> Result<PosteriorBelief> {
    if losses.len() != p.len() {
        return Err(Error::dims(p.len(), losses.len()));
    }
    if let Some(x) = losses.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite loss {x}")));
    }
    let logits: Vec<f64> = p
        .probs
        .iter()
        .zip(losses)
        .map(|(pi, l)| {
            if *pi > 0.0 {
                pi.ln() - eta * l
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(PosteriorBelief {
        probs: weights.iter().map(|w| w / z).collect(),
        round: p.round + 1,
    })
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &PosteriorBelief) -> f64 {
    -p.probs
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Per-fidelity ring buffers of the most recent batches.
#[derive(Debug, Clone)]
pub struct HistoryBuffer<T> {
    capacity: usize,
    buffers: Vec<VecDeque<T>>,
}

impl<T> HistoryBuffer<T> {
    pub fn new(num_fidelities: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig(
                "history buffer size must be positive".into(),
            ));
        }
        Ok(Self {
            capacity,
            buffers: (0..num_fidelities)
                .map(|_| VecDeque::with_capacity(capacity))
                .collect(),
        })
    }

    /// Stores `item` under fidelity `k`, evicting the oldest entry when full.
    pub fn push(&mut self, k: usize, item: T) -> Result<()> {
        let n = self.buffers.len();
        let buf = self
            .buffers
            .get_mut(k)
            .ok_or_else(|| Error::IndexOutOfRange(format!("fidelity {k} >= {n}")))?;
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(item);
        Ok(())
    }

    pub fn get(&self, k: usize) -> &VecDeque<T> {
        &self.buffers[k]
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn num_fidelities(&self) -> usize {
        self.buffers.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorConfig {
    /// Posterior temperature.
    pub eta: f64,
    pub buffer_size: usize,
    /// One mandatory round per fidelity before scoring starts.
    pub warmup: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            buffer_size: 8,
            warmup: true,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eta {} must be positive",
                self.eta
            )));
        }
        if self.buffer_size == 0 {
            return Err(Error::InvalidConfig("buffer_size must be positive".into()));
        }
        Ok(())
    }
}

/// Mean entropy of the hypothetical posteriors obtained by updating `p` with
/// the member losses of each stored batch.
pub fn expected_posterior_entropy<'a, T: 'a, I, F>(
    p: &PosteriorBelief,
    batches: I,
    eta: f64,
    mut losses: F,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a T>,
    F: FnMut(&T) -> Result<Vec<f64>>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in batches {
        let l = losses(batch)?;
        total += entropy(&posterior_update(p, &l, eta)?);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyBuffer(0));
    }
    Ok(total / count as f64)
}

/// `max(0, H(p) - expected posterior entropy)`.
pub fn information_gain<'a, T: 'a, I, F>(
    p: &PosteriorBelief,
    batches: I,
    eta: f64,
    losses: F,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a T>,
    F: FnMut(&T) -> Result<Vec<f64>>,
{
    let h = entropy(p);
    let expected = expected_posterior_entropy(p, batches, eta, losses)?;
    Ok((h - expected).clamp(0.0, h))
}

/// Why a fidelity was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionReason {
    /// Best gain per cost cleared the threshold.
    GainPerCost,
    /// Threshold failed; the most faithful simulator was taken.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityChoice {
    /// Zero-based fidelity index.
    pub k: usize,
    pub candidate: usize,
    pub score: f64,
    pub beta: f64,
    pub reason: SelectionReason,
    /// The preferred fidelity was unaffordable and a cheaper one was taken.
    pub downgraded: bool,
}

/// Chooses the next fidelity from per-fidelity gains.
pub fn select_fidelity(
    gains: &[f64],
    family: &FidelityFamily,
    ledger: &BudgetLedger,
) -> Result<FidelityChoice> {
    if gains.len() != family.len() {
        return Err(Error::dims(family.len(), gains.len()));
    }
    if ledger.remaining() <= 0.0 {
        return Err(Error::BudgetExhausted {
            remaining: ledger.remaining(),
        });
    }
    let beta = ledger.threshold()?;
    let mut candidate = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, g) in gains.iter().enumerate() {
        let score = g / family.cost(k);
        if score >= best {
            best = score;
            candidate = k;
        }
    }
    let (preferred, reason) = if best >= beta {
        (candidate, SelectionReason::GainPerCost)
    } else {
        (family.truth_index(), SelectionReason::Threshold)
    };
    let k = if ledger.can_afford(family.cost(preferred)) {
        preferred
    } else {
        (0..family.len())
            .rev()
            .find(|&j| ledger.can_afford(family.cost(j)))
            .ok_or(Error::BudgetExhausted {
                remaining: ledger.remaining(),
            })?
    };
    Ok(FidelityChoice {
        k,
        candidate,
        score: best,
        beta,
        reason,
        downgraded: k != preferred,
    })
}

/// Policy of the most probable member.
pub fn map_policy<'a>(p: &PosteriorBelief, members: &'a [EnsembleMember]) -> &'a Policy {
    &members[p.map_index()].policy
}

/// Posterior-weighted mixture of the member policies.
pub fn mixture_policy(p: &PosteriorBelief, members: &[EnsembleMember]) -> Result<Policy> {
    let first = &members[0].policy;
    let mut probs = vec![0.0; first.as_slice().len()];
    for (w, m) in p.probs.iter().zip(members) {
        for (acc, x) in probs.iter_mut().zip(m.policy.as_slice()) {
            *acc += w * x;
        }
    }
    Policy::new(first.num_states(), first.num_actions(), probs)
}
