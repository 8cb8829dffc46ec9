//! Bootstrapped ensemble pretraining with tabular conservative Q-learning.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fidelity::OfflineDataset;
use crate::mdp::{greedy_improve, Batch, Policy, QTable};
use crate::objective::{
    check_normalized, weighted_log_sum_exp, CompressedBatch, Objective, TableShape,
};
use crate::rng::RngStream;

/// Bernoulli(0.5) inclusion mask over the offline dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BootstrapMask {
    pub bits: Vec<bool>,
    /// One-based member index.
    pub member_index: usize,
}

impl BootstrapMask {
    pub fn full(n: usize, member_index: usize) -> Self {
        Self {
            bits: vec![true; n],
            member_index,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Transitions of `batch` whose bit is set.
    pub fn select<'a>(
        &'a self,
        batch: &'a Batch,
    ) -> impl Iterator<Item = &'a crate::mdp::Transition> {
        batch
            .iter()
            .zip(&self.bits)
            .filter(|(_, keep)| **keep)
            .map(|(t, _)| t)
    }
}

/// Draws `num_members` independent masks of length `n`; an all-zero mask is redrawn.
pub fn draw_masks<R: Rng + ?Sized>(
    n: usize,
    num_members: usize,
    rng: &mut R,
) -> Result<Vec<BootstrapMask>> {
    if n == 0 {
        return Err(Error::InvalidConfig("mask length must be positive".into()));
    }
    if num_members < 2 {
        return Err(Error::InvalidConfig(format!(
            "ensemble needs at least 2 members, got {num_members}"
        )));
    }
    let masks = (1..=num_members)
        .map(|member_index| loop {
            let bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            if bits.iter().any(|b| *b) {
                break BootstrapMask { bits, member_index };
            }
        })
        .collect();
    Ok(masks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CqlConfig {
    pub alpha_c: f64,
    pub learning_rate: f64,
    /// Gradient steps per training call.
    pub epochs: usize,
    /// Steps between Bellman target refreshes.
    pub target_refresh: usize,
}

impl Default for CqlConfig {
    fn default() -> Self {
        Self {
            alpha_c: 1.0,
            learning_rate: 0.05,
            epochs: 200,
            target_refresh: 10,
        }
    }
}

impl CqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_c.is_finite() && self.alpha_c >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_c {} < 0",
                self.alpha_c
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} < 0",
                self.learning_rate
            )));
        }
        if self.target_refresh == 0 {
            return Err(Error::InvalidConfig(
                "target_refresh must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One bootstrapped hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    /// One-based.
    pub index: usize,
    pub mask: BootstrapMask,
    pub q: QTable,
    /// Greedy in `q`; refreshed after every update.
    pub policy: Policy,
    pub rng: RngStream,
}

impl EnsembleMember {
    pub fn sync_policy(&mut self) {
        self.policy = greedy_improve(&self.q, 0.0);
    }
}

/// `alpha_c * (ln sum_sa w(s,a) exp(Q(s,a)) - E_{(s,a) ~ offline}[Q(s,a)])`
pub fn cql_term(q: &QTable, omega: &[f64], offline: &Batch, alpha_c: f64) -> Result<f64> {
    if offline.is_empty() {
        return Err(Error::EmptyBatch("offline"));
    }
    if omega.len() != q.as_slice().len() {
        return Err(Error::dims(q.as_slice().len(), omega.len()));
    }
    check_normalized(omega)?;
    offline.check_indices(q.num_states(), q.num_actions())?;
    if alpha_c == 0.0 {
        return Ok(0.0);
    }
    let lse = weighted_log_sum_exp(omega, q.as_slice());
    let mean_q = offline.iter().map(|t| q.get(t.s, t.a)).sum::<f64>() / offline.len() as f64;
    Ok(alpha_c * (lse - mean_q))
}

/// Uniform weights over the pairs marked in `visited`.
pub fn uniform_over_visited(visited: &[bool]) -> Result<Vec<f64>> {
    let n = visited.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(Error::EmptyVisitedSet);
    }
    Ok(visited
        .iter()
        .map(|v| if *v { 1.0 / n as f64 } else { 0.0 })
        .collect())
}

/// Pretrains one member on its masked share of the offline data.
///
/// Minimises the conservative term plus the mean squared Bellman residual by
/// full-batch gradient descent on the table, with targets frozen between
/// refreshes. The conservative weights are uniform over the visited pairs of
/// the masked data.
pub fn train_cql(
    dataset: &OfflineDataset,
    mask: &BootstrapMask,
    cfg: &CqlConfig,
    shape: TableShape,
    rng: RngStream,
) -> Result<EnsembleMember> {
    cfg.validate()?;
    if mask.len() != dataset.len() {
        return Err(Error::dims(dataset.len(), mask.len()));
    }
    dataset
        .batch
        .check_indices(shape.num_states, shape.num_actions)?;
    let data = CompressedBatch::from_transitions(mask.select(&dataset.batch));
    if data.is_empty() {
        return Err(Error::EmptyBatch("masked offline data"));
    }
    let mut visited = vec![false; shape.pairs()];
    data.visited_pairs(&shape, &mut visited);
    let omega = uniform_over_visited(&visited)?;
    let objective = Objective::new(shape, cfg.alpha_c, &omega, &data, None)?;
    let mut q = QTable::zeros(shape.num_states, shape.num_actions);
    objective.descend(&mut q, cfg.learning_rate, cfg.epochs, cfg.target_refresh);
    let policy = greedy_improve(&q, 0.0);
    Ok(EnsembleMember {
        index: mask.member_index,
        mask: mask.clone(),
        q,
        policy,
        rng,
    })
}

/// Writes `member_<l>_q.csv`, `member_<l>_policy.csv` and `member_<l>.meta`.
pub fn write_checkpoint(
    member: &EnsembleMember,
    cfg: &CqlConfig,
    mask_seed: u64,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let l = member.index;
    let fmt = crate::experiment::output::fmt_g9;
    let mut w = csv::Writer::from_path(dir.join(format!("member_{l}_q.csv")))?;
    w.write_record(["s", "a", "q"])?;
    for s in 0..member.q.num_states() {
        for a in 0..member.q.num_actions() {
            w.write_record([s.to_string(), a.to_string(), fmt(member.q.get(s, a))])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(format!("member_{l}_policy.csv")))?;
    w.write_record(["s", "a", "prob"])?;
    for s in 0..member.policy.num_states() {
        for a in 0..member.policy.num_actions() {
            w.write_record([s.to_string(), a.to_string(), fmt(member.policy.prob(s, a))])?;
        }
    }
    w.flush()?;
    let meta = format!(
        "member.index = {l}\nmember.mask_seed = {mask_seed}\nmember.mask_len = {}\nmember.mask_ones = {}\n\
         cql.alpha_c = {}\ncql.learning_rate = {}\ncql.epochs = {}\ncql.target_refresh = {}\n",
        member.mask.len(),
        member.mask.ones(),
        fmt(cfg.alpha_c),
        fmt(cfg.learning_rate),
        cfg.epochs,
        cfg.target_refresh
    );
    fs::write(dir.join(format!("member_{l}.meta")), meta)?;
    Ok(())
}

/// A checkpoint read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub q: QTable,
    pub policy: Policy,
    pub meta: BTreeMap<String, String>,
}

pub fn read_checkpoint(
    dir: &Path,
    index: usize,
    num_states: usize,
    num_actions: usize,
) -> Result<Checkpoint> {
    let read_table = |name: String| -> Result<Vec<f64>> {
        let mut values = vec![f64::NAN; num_states * num_actions];
        let mut rd = csv::Reader::from_path(dir.join(name))?;
        for rec in rd.records() {
            let rec = rec?;
            let parse = |i: usize| {
                rec.get(i)
                    .ok_or_else(|| Error::Parse("short record".into()))
            };
            let s: usize = parse(0)?
                .parse()
                .map_err(|e| Error::Parse(format!("{e}")))?;
            let a: usize = parse(1)?
                .parse()
                .map_err(|e| Error::Parse(format!("{e}")))?;
            let v: f64 = parse(2)?
                .parse()
                .map_err(|e| Error::Parse(format!("{e}")))?;
            if s >= num_states || a >= num_actions {
                return Err(Error::IndexOutOfRange(format!("({s}, {a})")));
            }
            values[s * num_actions + a] = v;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("checkpoint table is incomplete".into()));
        }
        Ok(values)
    };
    let q = QTable::from_values(
        num_states,
        num_actions,
        read_table(format!("member_{index}_q.csv"))?,
    )?;
    let policy = Policy::new(
        num_states,
        num_actions,
        read_table(format!("member_{index}_policy.csv"))?,
    )?;
    let text = fs::read_to_string(dir.join(format!("member_{index}.meta")))?;
    let meta = crate::experiment::config::parse_key_values(&text)?;
    Ok(Checkpoint { q, policy, meta })
}
