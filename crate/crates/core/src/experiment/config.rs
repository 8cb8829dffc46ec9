//! Plain-text `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::ensemble::CqlConfig;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::hybrid::{RatioConfig, RatioMode};
use crate::selector::SelectorConfig;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected 'key = value'", i + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        if out
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(Error::Parse(format!(
                "line {}: duplicate key '{key}'",
                i + 1
            )));
        }
    }
    Ok(out)
}

/// Which rule picks the fidelity of each online round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    MfHrlIgm,
    Lowest,
    Highest,
    Uniform,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::MfHrlIgm,
        Strategy::Lowest,
        Strategy::Highest,
        Strategy::Uniform,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::MfHrlIgm => "mf-hrl-igm",
            Strategy::Lowest => "lowest",
            Strategy::Highest => "highest",
            Strategy::Uniform => "uniform",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown strategy '{s}'")))
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Behaviour policy of the offline dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    Uniform,
    /// Epsilon-greedy around the optimal policy of the true environment.
    EpsOptimal(f64),
}

/// Member loss fed to the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorLoss {
    /// Importance-weighted Bellman residual on the simulator batch.
    Online,
    /// Conservative term plus both Bellman residuals.
    Total,
}

impl FromStr for PosteriorLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "online" => Ok(PosteriorLoss::Online),
            "total" => Ok(PosteriorLoss::Total),
            other => Err(Error::Parse(format!("unknown posterior loss '{other}'"))),
        }
    }
}

impl fmt::Display for PosteriorLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosteriorLoss::Online => "online",
            PosteriorLoss::Total => "total",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: GridSpec,
    pub factors: Vec<f64>,
    pub costs: Vec<f64>,
    pub budget: f64,
    /// Largest budget of the sweep; sweep budgets are fractions of it.
    pub budget_max: f64,
    pub budget_fractions: Vec<f64>,
    pub ensemble_size: usize,
    pub episodes_per_round: usize,
    /// Exploration rate of simulator rollouts.
    pub explore_epsilon: f64,
    pub offline_size: usize,
    pub behavior: Behavior,
    pub pretrain: CqlConfig,
    pub online: CqlConfig,
    pub selector: SelectorConfig,
    pub posterior_loss: PosteriorLoss,
    pub ratio: RatioConfig,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub output: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: GridSpec::default(),
            factors: vec![2.75, 2.0, 1.25, 1.0],
            costs: vec![1.0, 2.0, 4.0, 8.0],
            budget: 2000.0,
            budget_max: 2000.0,
            budget_fractions: vec![0.25, 0.6, 1.0],
            ensemble_size: 3,
            episodes_per_round: 5,
            explore_epsilon: 0.1,
            offline_size: 31 * 20,
            behavior: Behavior::EpsOptimal(0.5),
            pretrain: CqlConfig::default(),
            online: CqlConfig {
                learning_rate: 0.05,
                epochs: 50,
                ..CqlConfig::default()
            },
            selector: SelectorConfig::default(),
            posterior_loss: PosteriorLoss::Online,
            ratio: RatioConfig::default(),
            strategy: Strategy::MfHrlIgm,
            seeds: (0..20).collect(),
            output: "out".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Parse(format!("{key} = '{value}': {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(|x| x.trim())
        .filter(|x| !x.is_empty())
        .map(|x| parse(key, x))
        .collect()
}

fn parse_cell(key: &str, value: &str) -> Result<(usize, usize)> {
    let v: Vec<usize> = parse_list(key, value)?;
    match v.as_slice() {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Parse(format!(
            "{key} = '{value}': expected 'row,col'"
        ))),
    }
}

fn parse_cells(key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(';')
        .map(|x| x.trim())
        .filter(|x| !x.is_empty())
        .map(|x| parse_cell(key, x))
        .collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn apply_cql(cfg: &mut CqlConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "alpha_c" => cfg.alpha_c = parse(key, value)?,
        "learning_rate" => cfg.learning_rate = parse(key, value)?,
        "epochs" => cfg.epochs = parse(key, value)?,
        "target_refresh" => cfg.target_refresh = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl ExperimentConfig {
    /// Starts from the defaults and overrides every key present in `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut behavior_kind: Option<String> = None;
        let mut behavior_eps: Option<f64> = None;
        for (full, value) in parse_key_values(text)? {
            let (section, key) = full
                .split_once('.')
                .ok_or_else(|| Error::Parse(format!("key '{full}' has no section")))?;
            let v = value.as_str();
            let known = match section {
                "env" => {
                    match key {
                        "rows" => cfg.env.rows = parse(&full, v)?,
                        "cols" => cfg.env.cols = parse(&full, v)?,
                        "slip" => cfg.env.slip = parse(&full, v)?,
                        "goal" => cfg.env.goal = parse_cell(&full, v)?,
                        "start" => cfg.env.start = parse_cell(&full, v)?,
                        "pits" => cfg.env.pits = parse_cells(&full, v)?,
                        "gamma" => cfg.env.gamma = parse(&full, v)?,
                        "horizon" => cfg.env.horizon = parse(&full, v)?,
                        _ => return Err(unknown(&full)),
                    }
                    true
                }
                "family" => {
                    match key {
                        "factors" => cfg.factors = parse_list(&full, v)?,
                        "costs" => cfg.costs = parse_list(&full, v)?,
                        _ => return Err(unknown(&full)),
                    }
                    true
                }
                "experiment" => {
                    match key {
                        "budget" => cfg.budget = parse(&full, v)?,
                        "budget_max" => cfg.budget_max = parse(&full, v)?,
                        "budget_fractions" => cfg.budget_fractions = parse_list(&full, v)?,
                        "ensemble_size" => cfg.ensemble_size = parse(&full, v)?,
                        "episodes_per_round" => cfg.episodes_per_round = parse(&full, v)?,
                        "explore_epsilon" => cfg.explore_epsilon = parse(&full, v)?,
                        "strategy" => cfg.strategy = parse(&full, v)?,
                        "seeds" => cfg.seeds = parse_list(&full, v)?,
                        "output" => cfg.output = v.to_string(),
                        _ => return Err(unknown(&full)),
                    }
                    true
                }
                "offline" => match key {
                    "size" => {
                        cfg.offline_size = parse(&full, v)?;
                        true
                    }
                    "behavior" => {
                        behavior_kind = Some(v.to_string());
                        true
                    }
                    "behavior_epsilon" => {
                        behavior_eps = Some(parse(&full, v)?);
                        true
                    }
                    _ => apply_cql(&mut cfg.pretrain, key, v)?,
                },
                "online" => apply_cql(&mut cfg.online, key, v)?,
                "selector" => {
                    match key {
                        "eta" => cfg.selector.eta = parse(&full, v)?,
                        "buffer_size" => cfg.selector.buffer_size = parse(&full, v)?,
                        "warmup" => cfg.selector.warmup = parse(&full, v)?,
                        "loss" => cfg.posterior_loss = parse(&full, v)?,
                        _ => return Err(unknown(&full)),
                    }
                    true
                }
                "ratio" => {
                    match key {
                        "mode" => cfg.ratio.mode = parse::<RatioMode>(&full, v)?,
                        "clip_low" => cfg.ratio.clip_low = parse(&full, v)?,
                        "clip_high" => cfg.ratio.clip_high = parse(&full, v)?,
                        "smoothing" => cfg.ratio.smoothing = parse(&full, v)?,
                        _ => return Err(unknown(&full)),
                    }
                    true
                }
                _ => false,
            };
            if !known {
                return Err(unknown(&full));
            }
        }
        cfg.behavior = match (behavior_kind.as_deref(), behavior_eps) {
            (None, None) => cfg.behavior,
            (Some("uniform"), None) => Behavior::Uniform,
            (Some("eps-optimal"), e) => Behavior::EpsOptimal(e.unwrap_or(0.5)),
            (None, Some(e)) if matches!(cfg.behavior, Behavior::EpsOptimal(_)) => {
                Behavior::EpsOptimal(e)
            }
            (kind, eps) => {
                return Err(Error::Parse(format!(
                    "offline.behavior = {kind:?} with behavior_epsilon = {eps:?}"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.len() != self.costs.len() || self.factors.is_empty() {
            return Err(Error::InvalidConfig(
                "family factors and costs must have equal, nonzero length".into(),
            ));
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "budget {} must be positive",
                self.budget
            )));
        }
        if self.ensemble_size < 2 {
            return Err(Error::InvalidConfig(
                "ensemble_size must be at least 2".into(),
            ));
        }
        if self.episodes_per_round == 0 {
            return Err(Error::InvalidConfig(
                "episodes_per_round must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.explore_epsilon) {
            return Err(Error::InvalidConfig(
                "explore_epsilon must lie in [0, 1]".into(),
            ));
        }
        if let Behavior::EpsOptimal(e) = self.behavior {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidConfig(
                    "behavior_epsilon must lie in [0, 1]".into(),
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must be non-empty".into()));
        }
        self.pretrain.validate()?;
        self.online.validate()?;
        self.selector.validate()?;
        self.ratio.validate()?;
        Ok(())
    }

    /// Budgets of the default sweep.
    pub fn sweep_budgets(&self) -> Vec<f64> {
        self.budget_fractions
            .iter()
            .map(|f| f * self.budget_max)
            .collect()
    }

    /// Serialises every field; [`ExperimentConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let cell = |c: (usize, usize)| format!("{},{}", c.0, c.1);
        let pits = self
            .env
            .pits
            .iter()
            .map(|c| cell(*c))
            .collect::<Vec<_>>()
            .join("; ");
        let mut lines = vec![
            format!("env.rows = {}", self.env.rows),
            format!("env.cols = {}", self.env.cols),
            format!("env.slip = {}", self.env.slip),
            format!("env.goal = {}", cell(self.env.goal)),
            format!("env.start = {}", cell(self.env.start)),
            format!("env.pits = {pits}"),
            format!("env.gamma = {}", self.env.gamma),
            format!("env.horizon = {}", self.env.horizon),
            format!("family.factors = {}", join(&self.factors)),
            format!("family.costs = {}", join(&self.costs)),
            format!("experiment.budget = {}", self.budget),
            format!("experiment.budget_max = {}", self.budget_max),
            format!(
                "experiment.budget_fractions = {}",
                join(&self.budget_fractions)
            ),
            format!("experiment.ensemble_size = {}", self.ensemble_size),
            format!(
                "experiment.episodes_per_round = {}",
                self.episodes_per_round
            ),
            format!("experiment.explore_epsilon = {}", self.explore_epsilon),
            format!("experiment.strategy = {}", self.strategy),
            format!("experiment.seeds = {}", join(&self.seeds)),
            format!("experiment.output = {}", self.output),
            format!("offline.size = {}", self.offline_size),
        ];
        match self.behavior {
            Behavior::Uniform => lines.push("offline.behavior = uniform".into()),
            Behavior::EpsOptimal(e) => {
                lines.push("offline.behavior = eps-optimal".into());
                lines.push(format!("offline.behavior_epsilon = {e}"));
            }
        }
        for (section, c) in [("offline", &self.pretrain), ("online", &self.online)] {
            lines.push(format!("{section}.alpha_c = {}", c.alpha_c));
            lines.push(format!("{section}.learning_rate = {}", c.learning_rate));
            lines.push(format!("{section}.epochs = {}", c.epochs));
            lines.push(format!("{section}.target_refresh = {}", c.target_refresh));
        }
        lines.extend([
            format!("selector.eta = {}", self.selector.eta),
            format!("selector.buffer_size = {}", self.selector.buffer_size),
            format!("selector.warmup = {}", self.selector.warmup),
            format!("selector.loss = {}", self.posterior_loss),
            format!("ratio.mode = {}", self.ratio.mode),
            format!("ratio.clip_low = {}", self.ratio.clip_low),
            format!("ratio.clip_high = {}", self.ratio.clip_high),
            format!("ratio.smoothing = {}", self.ratio.smoothing),
        ]);
        lines.join("\n") + "\n"
    }
}

fn unknown(key: &str) -> Error {
    Error::Parse(format!("unknown key '{key}'"))
}
