//! The online loop shared by the selector-driven strategy and the baselines.

use std::time::{Duration, Instant};

use crate::ensemble::{draw_masks, train_cql, EnsembleMember};
use crate::error::{Error, Result};
use crate::fidelity::{
    build_family, generate_offline, BudgetLedger, FidelityFamily, OfflineDataset,
};
use crate::hybrid::{h2o_update_prepared, PreparedBatch};
use crate::mdp::{expected_return, rollout, value_iteration, BatchSource, Policy};
use crate::objective::{CompressedBatch, Objective, TableShape};
use crate::regret::{multi_fidelity_regret, RegretReport, RoundRecord};
use crate::rng::{self, RngStream};
use crate::selector::{
    entropy, information_gain, map_policy, mixture_policy, posterior_update, select_fidelity,
    HistoryBuffer, PosteriorBelief,
};

use super::config::{Behavior, ExperimentConfig, PosteriorLoss, Strategy};

/// One line of the per-round selector log.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorLogRow {
    pub round: usize,
    /// Posterior entropy before the round.
    pub entropy: f64,
    /// Per-fidelity gains; NaN where not computed.
    pub gains: Vec<f64>,
    pub beta: f64,
    /// Zero-based.
    pub chosen: usize,
    /// Budget left after the round's charge.
    pub remaining: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub budget: f64,
    pub seed: u64,
    /// True-environment return of the final most probable member's policy.
    pub final_return: f64,
    /// True-environment return of the final posterior mixture policy.
    pub final_return_mixture: f64,
    /// Optimal return in the true environment.
    pub optimal_return: f64,
    pub rounds: Vec<RoundRecord>,
    pub selector_log: Vec<SelectorLogRow>,
    pub regret: Option<RegretReport>,
    pub ledger: BudgetLedger,
    pub posterior: PosteriorBelief,
    pub wall_clock: Duration,
}

/// Everything that depends only on the configuration and the seed: the family,
/// the offline data and the pretrained ensemble.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub family: FidelityFamily,
    pub offline: OfflineDataset,
    pub members: Vec<EnsembleMember>,
    pub optimal_return: f64,
    pub seed: u64,
}

pub fn build_desk_family(cfg: &ExperimentConfig) -> Result<FidelityFamily> {
    let env = cfg.env.build()?;
    build_family(&env, &cfg.factors, &cfg.costs)
}

/// Builds the family, collects the offline data and pretrains the ensemble.
pub fn pretrain(cfg: &ExperimentConfig, seed: u64) -> Result<Pretrained> {
    cfg.validate()?;
    let family = build_desk_family(cfg)?;
    let truth = family.truth();
    let (n, m) = (truth.num_states(), truth.num_actions());
    let optimal = value_iteration(truth);
    let behavior = match cfg.behavior {
        Behavior::Uniform => Policy::uniform(n, m),
        Behavior::EpsOptimal(e) => optimal.policy.explore(e),
    };
    let offline = generate_offline(
        &family,
        &behavior,
        cfg.offline_size,
        &mut rng::stream(seed, rng::ids::OFFLINE_DATA),
    )?;
    let masks = draw_masks(
        offline.len(),
        cfg.ensemble_size,
        &mut rng::stream(seed, rng::ids::MASKS),
    )?;
    let shape = TableShape {
        num_states: n,
        num_actions: m,
        gamma: truth.gamma(),
    };
    let members = masks
        .iter()
        .map(|mask| {
            let id = rng::ids::MEMBER_BASE + mask.member_index as u64;
            train_cql(&offline, mask, &cfg.pretrain, shape, rng::stream(seed, id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pretrained {
        optimal_return: optimal.expected_value(truth),
        family,
        offline,
        members,
        seed,
    })
}

struct OnlineLoop<'a> {
    cfg: &'a ExperimentConfig,
    family: &'a FidelityFamily,
    offline: &'a OfflineDataset,
    full_offline: CompressedBatch,
    member_data: Vec<CompressedBatch>,
    members: Vec<EnsembleMember>,
    posterior: PosteriorBelief,
    history: HistoryBuffer<PreparedBatch>,
    ledger: BudgetLedger,
    rng: RngStream,
    shape: TableShape,
    rounds: Vec<RoundRecord>,
    log: Vec<SelectorLogRow>,
}

impl<'a> OnlineLoop<'a> {
    fn new(cfg: &'a ExperimentConfig, pre: &'a Pretrained, budget: f64) -> Result<Self> {
        let truth = pre.family.truth();
        let member_data = pre
            .members
            .iter()
            .map(|m| CompressedBatch::from_transitions(m.mask.select(&pre.offline.batch)))
            .collect();
        Ok(Self {
            cfg,
            family: &pre.family,
            offline: &pre.offline,
            full_offline: CompressedBatch::from_transitions(pre.offline.batch.iter()),
            member_data,
            members: pre.members.clone(),
            posterior: PosteriorBelief::uniform(pre.members.len())?,
            history: HistoryBuffer::new(pre.family.len(), cfg.selector.buffer_size)?,
            ledger: BudgetLedger::new(budget)?,
            rng: rng::stream(pre.seed, rng::ids::ONLINE),
            shape: TableShape {
                num_states: truth.num_states(),
                num_actions: truth.num_actions(),
                gamma: truth.gamma(),
            },
            rounds: Vec::new(),
            log: Vec::new(),
        })
    }

    fn member_losses(&self, prepared: &PreparedBatch) -> Result<Vec<f64>> {
        self.members
            .iter()
            .zip(&self.member_data)
            .map(|(member, own)| {
                let offline = match self.cfg.posterior_loss {
                    PosteriorLoss::Online => own,
                    PosteriorLoss::Total => &self.full_offline,
                };
                let objective = Objective::new(
                    self.shape,
                    self.cfg.online.alpha_c,
                    &prepared.omega,
                    offline,
                    Some(&prepared.data),
                )?;
                let parts = objective.parts(&member.q, &member.policy);
                Ok(match self.cfg.posterior_loss {
                    PosteriorLoss::Online => parts.online_bellman,
                    PosteriorLoss::Total => parts.total(),
                })
            })
            .collect()
    }

    fn gains(&self) -> Result<Vec<f64>> {
        (0..self.family.len())
            .map(|k| {
                let buffer = self.history.get(k);
                if buffer.is_empty() {
                    return Err(Error::EmptyBuffer(k));
                }
                information_gain(&self.posterior, buffer.iter(), self.cfg.selector.eta, |b| {
                    self.member_losses(b)
                })
            })
            .collect()
    }

    fn affordable(&self, k: usize) -> bool {
        self.ledger.can_afford(self.family.cost(k))
    }

    /// Charges, collects, updates every member and the posterior, and records
    /// the round.
    fn play(&mut self, k: usize, gains: Vec<f64>) -> Result<()> {
        let round = self.rounds.len() + 1;
        let h_before = entropy(&self.posterior);
        let beta = self.ledger.threshold()?;
        self.ledger.charge(round, k, self.family)?;
        let sim = self.family.simulator(k);
        let behavior = map_policy(&self.posterior, &self.members).explore(self.cfg.explore_epsilon);
        let batch = rollout(sim, &behavior, self.cfg.episodes_per_round, &mut self.rng)?
            .tagged(BatchSource::Simulator(k), round);
        let prepared =
            PreparedBatch::new(&self.offline.batch, &batch, self.family, k, &self.cfg.ratio)?;
        for (member, own) in self.members.iter_mut().zip(&self.member_data) {
            h2o_update_prepared(member, own, &prepared, &self.cfg.online, self.shape.gamma)?;
        }
        let losses = self.member_losses(&prepared)?;
        self.posterior = posterior_update(&self.posterior, &losses, self.cfg.selector.eta)?;
        self.history.push(k, prepared)?;

        let policy = map_policy(&self.posterior, &self.members);
        let mixture = mixture_policy(&self.posterior, &self.members)?;
        self.rounds.push(RoundRecord {
            round,
            fidelity: k,
            cost: self.family.cost(k),
            return_sim: expected_return(sim, policy)?,
            return_true: expected_return(self.family.truth(), policy)?,
            return_mixture: expected_return(self.family.truth(), &mixture)?,
            gain: gains[k],
            beta,
        });
        self.log.push(SelectorLogRow {
            round,
            entropy: h_before,
            gains,
            beta,
            chosen: k,
            remaining: self.ledger.remaining(),
        });
        Ok(())
    }

    fn unscored(&self) -> Vec<f64> {
        vec![f64::NAN; self.family.len()]
    }

    fn run_selector(&mut self) -> Result<()> {
        if self.cfg.selector.warmup {
            for k in 0..self.family.len() {
                if !self.affordable(k) {
                    return Ok(());
                }
                let g = self.unscored();
                self.play(k, g)?;
            }
        }
        loop {
            if self.ledger.remaining() <= 0.0 {
                return Ok(());
            }
            let gains = if (0..self.family.len()).all(|k| !self.history.get(k).is_empty()) {
                self.gains()?
            } else {
                vec![0.0; self.family.len()]
            };
            match select_fidelity(&gains, self.family, &self.ledger) {
                Ok(choice) => self.play(choice.k, gains)?,
                Err(Error::BudgetExhausted { .. }) => return Ok(()),
                Err(e) => return Err(e),
            }
        }
    }

    fn run_fixed(&mut self, k: usize) -> Result<()> {
        while self.affordable(k) {
            let g = self.unscored();
            self.play(k, g)?;
        }
        Ok(())
    }

    fn run_uniform(&mut self) -> Result<()> {
        let share = self.ledger.total_budget() / self.family.len() as f64;
        for k in 0..self.family.len() {
            for _ in 0..uniform_rounds(share, self.family.cost(k)) {
                let g = self.unscored();
                self.play(k, g)?;
            }
        }
        Ok(())
    }
}

/// Rounds affordable at `cost` within one share; the remainder stays unspent.
pub fn uniform_rounds(share: f64, cost: f64) -> usize {
    ((share / cost) * (1.0 + 1e-12)).floor() as usize
}

/// Runs one strategy from a pretrained starting point.
pub fn run_from(
    cfg: &ExperimentConfig,
    pre: &Pretrained,
    strategy: Strategy,
    budget: f64,
) -> Result<RunResult> {
    let start = Instant::now();
    let mut state = OnlineLoop::new(cfg, pre, budget)?;
    match strategy {
        Strategy::MfHrlIgm => state.run_selector()?,
        Strategy::Lowest => state.run_fixed(0)?,
        Strategy::Highest => state.run_fixed(pre.family.truth_index())?,
        Strategy::Uniform => state.run_uniform()?,
    }
    state.ledger.audit(&pre.family)?;
    let truth = pre.family.truth();
    let final_policy = map_policy(&state.posterior, &state.members);
    let final_return = expected_return(truth, final_policy)?;
    let final_return_mixture =
        expected_return(truth, &mixture_policy(&state.posterior, &state.members)?)?;
    let regret = if state.rounds.is_empty() {
        None
    } else {
        Some(multi_fidelity_regret(
            &state.rounds,
            &pre.family,
            pre.optimal_return,
            cfg.episodes_per_round,
            budget,
        )?)
    };
    Ok(RunResult {
        strategy,
        budget,
        seed: pre.seed,
        final_return,
        final_return_mixture,
        optimal_return: pre.optimal_return,
        rounds: state.rounds,
        selector_log: state.log,
        regret,
        ledger: state.ledger,
        posterior: state.posterior,
        wall_clock: start.elapsed(),
    })
}

/// Full pipeline for the selector-driven strategy at `cfg.budget`.
pub fn run_mf_hrl_igm(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let pre = pretrain(cfg, seed)?;
    run_from(cfg, &pre, Strategy::MfHrlIgm, cfg.budget)
}

/// Full pipeline for `cfg.strategy`, which must be a baseline.
pub fn run_baseline(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    if cfg.strategy == Strategy::MfHrlIgm {
        return Err(Error::InvalidConfig(
            "run_baseline needs a baseline strategy".into(),
        ));
    }
    let pre = pretrain(cfg, seed)?;
    run_from(cfg, &pre, cfg.strategy, cfg.budget)
}

/// Full pipeline for `cfg.strategy` at `cfg.budget`.
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    let pre = pretrain(cfg, seed)?;
    run_from(cfg, &pre, cfg.strategy, cfg.budget)
}
