//! Simulator families, the cost ledger, offline data and KL gaps.
//!
//! Simulator indices are zero-based in code; the last simulator (`K - 1`) is
//! the true environment.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::SlipEnvironment;
use crate::mdp::{rollout, Batch, BatchSource, Policy, TabularMdp, Transition};

/// Ordered simulators with strictly increasing fidelity and cost.
#[derive(Debug, Clone)]
pub struct FidelityFamily {
    simulators: Vec<TabularMdp>,
    fidelities: Vec<f64>,
    costs: Vec<f64>,
    slips: Vec<f64>,
}

impl FidelityFamily {
    pub fn len(&self) -> usize {
        self.simulators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simulators.is_empty()
    }

    pub fn truth_index(&self) -> usize {
        self.simulators.len() - 1
    }

    pub fn truth(&self) -> &TabularMdp {
        &self.simulators[self.truth_index()]
    }

    pub fn simulator(&self, k: usize) -> &TabularMdp {
        &self.simulators[k]
    }

    pub fn simulators(&self) -> &[TabularMdp] {
        &self.simulators
    }

    pub fn cost(&self, k: usize) -> f64 {
        self.costs[k]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn fidelity(&self, k: usize) -> f64 {
        self.fidelities[k]
    }

    pub fn slip(&self, k: usize) -> f64 {
        self.slips[k]
    }

    pub fn slips(&self) -> &[f64] {
        &self.slips
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.len() {
            return Err(Error::IndexOutOfRange(format!(
                "fidelity {k} in a family of {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Scales the base slip by each factor (clamped to 1). The last factor must be
/// exactly 1, making the last simulator the base environment itself.
/// Fidelities are `l_k = (k + 1) / K`.
pub fn build_family(
    base: &SlipEnvironment,
    perturb_factors: &[f64],
    costs: &[f64],
) -> Result<FidelityFamily> {
    if perturb_factors.is_empty() {
        return Err(Error::InvalidFamily("no fidelity levels".into()));
    }
    if perturb_factors.len() != costs.len() {
        return Err(Error::InvalidFamily(format!(
            "{} factors but {} costs",
            perturb_factors.len(),
            costs.len()
        )));
    }
    if *perturb_factors.last().unwrap() != 1.0 {
        return Err(Error::InvalidFamily(format!(
            "last factor must be 1.0, got {}",
            perturb_factors.last().unwrap()
        )));
    }
    if let Some(f) = perturb_factors
        .iter()
        .find(|f| !(f.is_finite() && **f >= 0.0))
    {
        return Err(Error::InvalidFamily(format!("invalid factor {f}")));
    }
    if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidFamily("costs must be positive".into()));
    }
    if costs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidFamily(format!(
            "costs must be strictly increasing: {costs:?}"
        )));
    }
    let k = perturb_factors.len();
    let slips: Vec<f64> = perturb_factors
        .iter()
        .map(|f| (f * base.base_slip()).min(1.0))
        .collect();
    let simulators = slips.iter().map(|&p| base.with_slip(p)).collect();
    Ok(FidelityFamily {
        simulators,
        fidelities: (1..=k).map(|i| i as f64 / k as f64).collect(),
        costs: costs.to_vec(),
        slips,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charge {
    pub round: usize,
    pub fidelity: usize,
    pub cost: f64,
}

/// Running account of simulation spend against the total budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetLedger {
    total_budget: f64,
    spent: f64,
    history: Vec<Charge>,
}

impl BudgetLedger {
    pub fn new(total_budget: f64) -> Result<Self> {
        if !(total_budget.is_finite() && total_budget > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "budget must be positive, got {total_budget}"
            )));
        }
        Ok(Self {
            total_budget,
            spent: 0.0,
            history: Vec::new(),
        })
    }

    pub fn total_budget(&self) -> f64 {
        self.total_budget
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        self.total_budget - self.spent
    }

    pub fn history(&self) -> &[Charge] {
        &self.history
    }

    pub fn can_afford(&self, cost: f64) -> bool {
        self.spent + cost <= self.total_budget
    }

    /// Charges one round at fidelity `k`.
    pub fn charge(&mut self, round: usize, k: usize, family: &FidelityFamily) -> Result<()> {
        family.check_index(k)?;
        let cost = family.cost(k);
        if !self.can_afford(cost) {
            return Err(Error::InsufficientBudget {
                cost,
                remaining: self.remaining(),
            });
        }
        self.spent += cost;
        self.history.push(Charge {
            round,
            fidelity: k,
            cost,
        });
        Ok(())
    }

    /// `beta_r = 1 / sqrt(remaining budget)`.
    pub fn threshold(&self) -> Result<f64> {
        let remaining = self.remaining();
        if remaining <= 0.0 {
            return Err(Error::BudgetExhausted { remaining });
        }
        Ok(1.0 / remaining.sqrt())
    }

    /// Replays the history in order and checks it against `spent` and the budget.
    pub fn audit(&self, family: &FidelityFamily) -> Result<()> {
        let mut replay = 0.0;
        for c in &self.history {
            family.check_index(c.fidelity)?;
            if c.cost != family.cost(c.fidelity) {
                return Err(Error::AuditFailure(format!(
                    "round {} charged {} at fidelity {} (cost {})",
                    c.round,
                    c.cost,
                    c.fidelity,
                    family.cost(c.fidelity)
                )));
            }
            replay += c.cost;
        }
        if replay != self.spent {
            return Err(Error::AuditFailure(format!(
                "history replays to {replay}, ledger says {}",
                self.spent
            )));
        }
        if replay > self.total_budget {
            return Err(Error::AuditFailure(format!(
                "spent {replay} exceeds budget {}",
                self.total_budget
            )));
        }
        Ok(())
    }
}

/// Transitions collected in the true environment under a fixed behaviour policy.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub batch: Batch,
    pub behavior: Policy,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_transitions_csv(&self.batch, writer)
    }
}

pub fn generate_offline<R: Rng + ?Sized>(
    family: &FidelityFamily,
    behavior: &Policy,
    n_transitions: usize,
    rng: &mut R,
) -> Result<OfflineDataset> {
    let truth = family.truth();
    let len = truth.episode_len();
    if n_transitions == 0 || !n_transitions.is_multiple_of(len) {
        return Err(Error::IndivisibleDatasetSize {
            n: n_transitions,
            episode_len: len,
        });
    }
    let batch = rollout(truth, behavior, n_transitions / len, rng)?;
    Ok(OfflineDataset {
        batch: batch.tagged(BatchSource::Offline, 0),
        behavior: behavior.clone(),
    })
}

/// CSV with header `s,a,r,s_next`.
pub fn write_transitions_csv<W: Write>(batch: &Batch, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["s", "a", "r", "s_next"])?;
    for t in batch.iter() {
        w.write_record([
            t.s.to_string(),
            t.a.to_string(),
            crate::experiment::output::fmt_g9(t.r),
            t.s_next.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transitions_csv<R: Read>(reader: R) -> Result<Batch> {
    let mut rd = csv::Reader::from_reader(reader);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["s", "a", "r", "s_next"] {
        return Err(Error::Parse(format!("unexpected header {headers:?}")));
    }
    let mut transitions = Vec::new();
    for record in rd.records() {
        let record = record?;
        let field = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| Error::Parse("short record".into()))
        };
        let parse_idx = |i: usize| -> Result<usize> {
            field(i)?
                .parse()
                .map_err(|e| Error::Parse(format!("column {i}: {e}")))
        };
        transitions.push(Transition {
            s: parse_idx(0)?,
            a: parse_idx(1)?,
            r: field(2)?
                .parse()
                .map_err(|e| Error::Parse(format!("reward: {e}")))?,
            s_next: parse_idx(3)?,
        });
    }
    Ok(Batch::new(transitions, BatchSource::Offline, 0))
}

/// `KL(P_truth(.|s,a) || P_k(.|s,a))` for every `(s, a)`, with `0 ln 0 = 0`.
pub fn kl_gap(family: &FidelityFamily, k: usize) -> Result<Vec<f64>> {
    family.check_index(k)?;
    let truth = family.truth();
    let sim = family.simulator(k);
    let (n, m) = (truth.num_states(), truth.num_actions());
    let mut out = Vec::with_capacity(n * m);
    for s in 0..n {
        for a in 0..m {
            let (p, q) = (truth.transition_row(s, a), sim.transition_row(s, a));
            match kl_divergence(p, q) {
                Some(kl) => out.push(kl),
                None => {
                    let s_next = p
                        .iter()
                        .zip(q)
                        .position(|(pi, qi)| *pi > 0.0 && *qi <= 0.0)
                        .unwrap_or(0);
                    return Err(Error::SupportMismatch { s, a, s_next });
                }
            }
        }
    }
    Ok(out)
}

/// `sum p ln(p / q)`; `None` when `p > 0` somewhere `q == 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Option<f64> {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return None;
            }
            acc += pi * (pi / qi).ln();
        }
    }
    // rounding can leave tiny negatives for identical rows
    Some(acc.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::mdp::{value_iteration, Policy};
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;

    fn desk_env() -> SlipEnvironment {
        GridSpec::default().build().unwrap()
    }

    fn desk_family() -> FidelityFamily {
        build_family(&desk_env(), &[2.75, 2.0, 1.25, 1.0], &[1.0, 2.0, 4.0, 8.0]).unwrap()
    }

    #[test]
    fn family_slips() {
        let fam = desk_family();
        let expected = [0.275, 0.2, 0.125, 0.1];
        for (got, want) in fam.slips().iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-15);
        }
        assert_eq!(fam.truth(), &desk_env().base());
    }

    #[test]
    fn identity_factors_give_identical_simulators() {
        let env = desk_env();
        let fam = build_family(&env, &[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        for sim in fam.simulators() {
            assert_eq!(sim, &env.base());
        }
    }

    #[test]
    fn oversized_factor_clamps_slip() {
        let fam = build_family(&desk_env(), &[25.0, 1.0], &[1.0, 2.0]).unwrap();
        assert_eq!(fam.slip(0), 1.0);
        let sim = fam.simulator(0);
        for s in 0..sim.num_states() {
            for a in 0..sim.num_actions() {
                let total: f64 = sim.transition_row(s, a).iter().sum();
                assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn family_rejects_bad_inputs() {
        let env = desk_env();
        assert!(build_family(&env, &[2.0, 1.0], &[2.0, 1.0]).is_err());
        assert!(build_family(&env, &[2.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(build_family(&env, &[2.0, 1.5], &[1.0, 2.0]).is_err());
        assert!(build_family(&env, &[2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ledger_arithmetic_and_errors() {
        let fam = build_family(&desk_env(), &[2.0, 1.0], &[3.0, 8.0]).unwrap();
        let mut ledger = BudgetLedger::new(10.0).unwrap();
        ledger.charge(1, 0, &fam).unwrap();
        ledger.charge(2, 0, &fam).unwrap();
        assert_eq!(ledger.spent(), 6.0);
        assert_eq!(ledger.remaining(), 4.0);
        assert!(matches!(
            ledger.charge(3, 1, &fam),
            Err(Error::InsufficientBudget { .. })
        ));
        ledger.charge(3, 0, &fam).unwrap();
        assert!(matches!(
            ledger.charge(4, 0, &fam),
            Err(Error::InsufficientBudget { .. })
        ));
        assert_eq!(ledger.spent(), 9.0);
        ledger.audit(&fam).unwrap();
    }

    #[test]
    fn thresholds() {
        let fam = build_family(&desk_env(), &[1.0], &[1.0]).unwrap();
        let ledger = BudgetLedger::new(100.0).unwrap();
        assert_abs_diff_eq!(ledger.threshold().unwrap(), 0.1, epsilon = 1e-15);
        let mut ledger = BudgetLedger::new(3.0).unwrap();
        ledger.charge(1, 0, &fam).unwrap();
        assert_abs_diff_eq!(
            ledger.threshold().unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        ledger.charge(2, 0, &fam).unwrap();
        assert_abs_diff_eq!(ledger.threshold().unwrap(), 1.0, epsilon = 1e-15);
        ledger.charge(3, 0, &fam).unwrap();
        assert!(matches!(
            ledger.threshold(),
            Err(Error::BudgetExhausted { .. })
        ));
    }

    #[test]
    fn offline_counts_and_divisibility() {
        let spec = GridSpec {
            horizon: 4,
            ..GridSpec::default()
        };
        let fam = build_family(&spec.build().unwrap(), &[1.0], &[1.0]).unwrap();
        let pi = Policy::uniform(25, 4);
        let data = generate_offline(&fam, &pi, 30, &mut stream(1, 1)).unwrap();
        assert_eq!(data.len(), 30);
        assert_eq!(data.batch.source, BatchSource::Offline);
        assert!(matches!(
            generate_offline(&fam, &pi, 31, &mut stream(1, 1)),
            Err(Error::IndivisibleDatasetSize { .. })
        ));
        let again = generate_offline(&fam, &pi, 30, &mut stream(1, 1)).unwrap();
        assert_eq!(data, again);
    }

    #[test]
    fn deterministic_env_offline_support_is_optimal_path() {
        let spec = GridSpec {
            slip: 0.0,
            horizon: 10,
            ..GridSpec::default()
        };
        let fam = build_family(&spec.build().unwrap(), &[1.0], &[1.0]).unwrap();
        let sol = value_iteration(fam.truth());
        let data = generate_offline(&fam, &sol.policy, 11 * 5, &mut stream(2, 1)).unwrap();
        let actions = sol.policy.modal_actions();
        for t in data.batch.iter() {
            assert_eq!(t.a, actions[t.s]);
        }
        // a single deterministic path: at most H + 1 distinct pairs
        let mut pairs: Vec<_> = data.batch.iter().map(|t| (t.s, t.a)).collect();
        pairs.sort();
        pairs.dedup();
        assert!(pairs.len() <= 11);
    }

    #[test]
    fn csv_round_trip() {
        let fam = desk_family();
        let data =
            generate_offline(&fam, &Policy::uniform(25, 4), 31 * 2, &mut stream(3, 1)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("s,a,r,s_next\n"));
        let back = read_transitions_csv(&buf[..]).unwrap();
        assert_eq!(back, data.batch);
    }

    #[test]
    fn kl_examples() {
        let kl = kl_divergence(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(kl, 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(kl, 0.368064, epsilon = 1e-6);
        assert!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]).is_none());
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 2f64.ln());
    }

    #[test]
    fn kl_gap_properties() {
        let fam = desk_family();
        let truth_gap = kl_gap(&fam, fam.truth_index()).unwrap();
        assert!(truth_gap.iter().all(|&x| x == 0.0));
        let mut prev = f64::INFINITY;
        for k in 0..fam.len() {
            let gap = kl_gap(&fam, k).unwrap();
            assert!(gap.iter().all(|&x| x >= 0.0));
            let mean = gap.iter().sum::<f64>() / gap.len() as f64;
            if k < fam.truth_index() {
                assert!(gap.iter().any(|&x| x > 0.0));
            }
            assert!(mean < prev);
            prev = mean;
        }
        assert!(kl_gap(&fam, 9).is_err());
    }

    #[test]
    fn kl_gap_support_mismatch() {
        // truth slips, simulator is deterministic: truth puts mass where the sim has none
        let env = desk_env();
        let fam = build_family(&env, &[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!(matches!(
            kl_gap(&fam, 0),
            Err(Error::SupportMismatch { .. })
        ));
    }
}
