#![allow(dead_code)]

use mfhrl_core::mdp::greedy_improve;
use mfhrl_core::rng::sample_index;
use mfhrl_core::rng::stream;
use mfhrl_core::{
    Batch, BatchSource, BootstrapMask, EnsembleMember, Policy, QTable, TabularMdp, Transition,
};
use rand::Rng;

pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let resid = 1.0 - out.iter().sum::<f64>();
    out[0] += resid;
    out
}

pub fn random_mdp<R: Rng>(
    rng: &mut R,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    horizon: usize,
) -> TabularMdp {
    let reward = (0..num_states * num_actions)
        .map(|_| rng.gen::<f64>())
        .collect();
    let mut transition = Vec::new();
    for _ in 0..num_states * num_actions {
        transition.extend(random_distribution(rng, num_states));
    }
    let init = random_distribution(rng, num_states);
    TabularMdp::new(
        num_states,
        num_actions,
        reward,
        transition,
        init,
        gamma,
        horizon,
    )
    .unwrap()
}

pub fn random_policy<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize) -> Policy {
    let probs = (0..num_states)
        .flat_map(|_| random_distribution(rng, num_actions))
        .collect();
    Policy::new(num_states, num_actions, probs).unwrap()
}

pub fn random_q<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize) -> QTable {
    let values = (0..num_states * num_actions)
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    QTable::from_values(num_states, num_actions, values).unwrap()
}

/// Member with the given table and policy and a full mask over `n` transitions.
pub fn member(q: QTable, policy: Policy, n: usize) -> EnsembleMember {
    EnsembleMember {
        index: 1,
        mask: BootstrapMask::full(n, 1),
        q,
        policy,
        rng: stream(0, 0),
    }
}

/// Member whose policy is greedy in `q`.
pub fn greedy_member(q: QTable, n: usize) -> EnsembleMember {
    let policy = greedy_improve(&q, 0.0);
    member(q, policy, n)
}

/// `n` transitions with `(s, a)` uniform and `s'` drawn from `mdp`.
pub fn uniform_pairs<R: Rng>(mdp: &TabularMdp, n: usize, rng: &mut R) -> Batch {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let ts = (0..n)
        .map(|_| {
            let s = rng.gen_range(0..ns);
            let a = rng.gen_range(0..na);
            let s_next = sample_index(mdp.transition_row(s, a), rng);
            Transition {
                s,
                a,
                r: mdp.reward(s, a),
                s_next,
            }
        })
        .collect();
    Batch::new(ts, BatchSource::Offline, 0)
}

/// Deterministic chain of `n` states with actions (left, right); reward 1 for
/// pushing right at the right end.
pub fn chain(n: usize, gamma: f64, horizon: usize) -> TabularMdp {
    let mut reward = vec![0.0; n * 2];
    reward[(n - 1) * 2 + 1] = 1.0;
    let mut transition = vec![0.0; n * 2 * n];
    for s in 0..n {
        transition[(s * 2) * n + s.saturating_sub(1)] = 1.0;
        transition[(s * 2 + 1) * n + (s + 1).min(n - 1)] = 1.0;
    }
    let mut init = vec![0.0; n];
    init[0] = 1.0;
    TabularMdp::new(n, 2, reward, transition, init, gamma, horizon).unwrap()
}
