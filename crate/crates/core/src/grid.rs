//! Slip-perturbed gridworlds.
//!
//! A [`SlipEnvironment`] pairs a nominal (slip-free) MDP with a slip
//! probability. With probability `slip` the agent executes a uniformly random
//! action instead of the chosen one, so
//! `P(s'|s,a) = (1 - slip) P0(s'|s,a) + slip / A * sum_b P0(s'|s,b)`.

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, PartialEq)]
pub struct SlipEnvironment {
    nominal: TabularMdp,
    base_slip: f64,
}

impl SlipEnvironment {
    pub fn new(nominal: TabularMdp, base_slip: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&base_slip) {
            return Err(Error::InvalidConfig(format!(
                "slip {base_slip} outside [0, 1]"
            )));
        }
        Ok(Self { nominal, base_slip })
    }

    pub fn base_slip(&self) -> f64 {
        self.base_slip
    }

    pub fn nominal(&self) -> &TabularMdp {
        &self.nominal
    }

    /// The environment at its own slip probability.
    pub fn base(&self) -> TabularMdp {
        self.with_slip(self.base_slip)
    }

    pub fn with_slip(&self, slip: f64) -> TabularMdp {
        let slip = slip.clamp(0.0, 1.0);
        let (n, m) = (self.nominal.num_states(), self.nominal.num_actions());
        let mut transition = vec![0.0; n * m * n];
        for s in 0..n {
            let mut avg = vec![0.0; n];
            for b in 0..m {
                for (acc, p) in avg.iter_mut().zip(self.nominal.transition_row(s, b)) {
                    *acc += p / m as f64;
                }
            }
            for a in 0..m {
                let row = &mut transition[(s * m + a) * n..(s * m + a + 1) * n];
                for ((out, p), q) in row
                    .iter_mut()
                    .zip(self.nominal.transition_row(s, a))
                    .zip(&avg)
                {
                    *out = (1.0 - slip) * p + slip * q;
                }
                normalize_in_place(row);
            }
        }
        self.nominal
            .with_transitions(transition)
            .expect("slip mixture of valid rows is a valid row")
    }
}

/// Removes floating-point drift so rows sum to one within 1e-12.
fn normalize_in_place(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    if total > 0.0 {
        row.iter_mut().for_each(|p| *p /= total);
    }
}

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

/// Layout of a 4-action gridworld. Cells are `(row, col)` with row 0 at the top.
///
/// The goal pays reward 1 for every step spent on it; pits are absorbing and
/// pay nothing. Moves into a wall leave the agent in place.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub slip: f64,
    pub goal: (usize, usize),
    pub start: (usize, usize),
    pub pits: Vec<(usize, usize)>,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 5,
            slip: 0.1,
            goal: (4, 4),
            start: (0, 0),
            pits: Vec::new(),
            gamma: 0.95,
            horizon: 30,
        }
    }
}

impl GridSpec {
    pub fn num_states(&self) -> usize {
        self.rows * self.cols
    }

    pub fn state(&self, cell: (usize, usize)) -> usize {
        cell.0 * self.cols + cell.1
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s / self.cols, s % self.cols)
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidConfig("empty grid".into()));
        }
        let inside = |c: (usize, usize)| c.0 < self.rows && c.1 < self.cols;
        if !inside(self.goal) || !inside(self.start) || !self.pits.iter().all(|&p| inside(p)) {
            return Err(Error::InvalidConfig("grid cell outside the board".into()));
        }
        if self.pits.contains(&self.goal) || self.pits.contains(&self.start) {
            return Err(Error::InvalidConfig("start or goal placed on a pit".into()));
        }
        Ok(())
    }

    fn step(&self, cell: (usize, usize), action: usize) -> (usize, usize) {
        let (r, c) = cell;
        match action {
            UP if r > 0 => (r - 1, c),
            RIGHT if c + 1 < self.cols => (r, c + 1),
            DOWN if r + 1 < self.rows => (r + 1, c),
            LEFT if c > 0 => (r, c - 1),
            _ => cell,
        }
    }

    pub fn build(&self) -> Result<SlipEnvironment> {
        self.validate()?;
        let (n, m) = (self.num_states(), 4);
        let mut reward = vec![0.0; n * m];
        let mut transition = vec![0.0; n * m * n];
        for s in 0..n {
            let cell = self.cell(s);
            let is_pit = self.pits.contains(&cell);
            for a in 0..m {
                if cell == self.goal {
                    reward[s * m + a] = 1.0;
                }
                let dest = if is_pit { cell } else { self.step(cell, a) };
                transition[(s * m + a) * n + self.state(dest)] = 1.0;
            }
        }
        let mut init = vec![0.0; n];
        init[self.state(self.start)] = 1.0;
        let nominal = TabularMdp::new(n, m, reward, transition, init, self.gamma, self.horizon)?;
        SlipEnvironment::new(nominal, self.slip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;
    use approx::assert_abs_diff_eq;

    #[test]
    fn slip_mixture_rows() {
        let env = GridSpec::default().build().unwrap();
        let mdp = env.base();
        let spec = GridSpec::default();
        // interior cell moving right: 0.9 + 0.1/4 on the target, 0.025 on each neighbour
        let s = spec.state((2, 2));
        let row = mdp.transition_row(s, RIGHT);
        assert_abs_diff_eq!(row[spec.state((2, 3))], 0.925, epsilon = 1e-12);
        assert_abs_diff_eq!(row[spec.state((1, 2))], 0.025, epsilon = 1e-12);
        assert_abs_diff_eq!(row[spec.state((2, 1))], 0.025, epsilon = 1e-12);
        // corner: two wall bumps collapse onto the cell itself
        let s = spec.state((0, 0));
        let row = mdp.transition_row(s, RIGHT);
        assert_abs_diff_eq!(row[s], 0.05, epsilon = 1e-12);
    }

    #[test]
    fn full_slip_is_action_independent() {
        let env = GridSpec::default().build().unwrap();
        let mdp = env.with_slip(1.0);
        for s in 0..mdp.num_states() {
            for a in 1..4 {
                assert_eq!(mdp.transition_row(s, a), mdp.transition_row(s, 0));
            }
        }
    }

    #[test]
    fn pits_absorb() {
        let spec = GridSpec {
            pits: vec![(2, 2)],
            ..GridSpec::default()
        };
        let mdp = spec.build().unwrap().base();
        let pit = spec.state((2, 2));
        for a in 0..4 {
            assert_eq!(mdp.transition_row(pit, a)[pit], 1.0);
            assert_eq!(mdp.reward(pit, a), 0.0);
        }
    }

    #[test]
    fn optimal_policy_heads_for_goal() {
        let spec = GridSpec::default();
        let mdp = spec.build().unwrap().base();
        let sol = value_iteration(&mdp);
        let a = sol.policy.modal_actions()[spec.state((0, 0))];
        assert!(a == RIGHT || a == DOWN);
    }

    #[test]
    fn rejects_pit_on_goal() {
        let spec = GridSpec {
            pits: vec![(4, 4)],
            ..GridSpec::default()
        };
        assert!(spec.build().is_err());
    }
}
