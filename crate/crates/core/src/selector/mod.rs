//! Runtime skill selection: drop skills whose predicted viability is below
//! their threshold, pick the cheapest survivor, and commit only when a
//! sliding window of raw decisions is unanimous.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::nnet::{CnnModel, HeadKind, NnetError};
use crate::simkernel::{SkillId, SkillProfile};
use crate::terrain::Heightfield;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("predictions cover {found} skills, registry has {expected}")]
    SkillSetMismatch { expected: usize, found: usize },
    #[error("skill id {0} is already registered")]
    DuplicateId(SkillId),
    #[error("{role} model for `{skill}` has a {found} head, expected {expected}")]
    HeadKindMismatch { skill: String, role: &'static str, expected: HeadKind, found: HeadKind },
    #[error("invalid selector config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] NnetError),
}

impl From<ConfigError> for SelectorError {
    fn from(e: ConfigError) -> Self {
        SelectorError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Skill(SkillId),
    Stop,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::Skill(id) => write!(f, "skill {id}"),
            Decision::Stop => f.write_str("stop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorConfig {
    /// Viability threshold per skill name.
    pub thresholds: BTreeMap<String, f64>,
    pub window_length: usize,
    pub tick_rate: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        let thresholds = [("walk", 0.95), ("ascend", 0.925), ("descend", 0.925)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self { thresholds, window_length: 10, tick_rate: 50.0 }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectorError> {
        if self.window_length == 0 {
            return Err(SelectorError::Config("window_length must be at least 1".into()));
        }
        if !(self.tick_rate > 0.0) {
            return Err(SelectorError::Config("tick_rate must be positive".into()));
        }
        for (name, &t) in &self.thresholds {
            if !(t > 0.0 && t < 1.0) {
                return Err(SelectorError::Config(format!("threshold for `{name}` must lie in (0, 1), got {t}")));
            }
        }
        Ok(())
    }

    pub fn threshold(&self, skill: &str) -> Result<f64, SelectorError> {
        self.thresholds
            .get(skill)
            .copied()
            .ok_or_else(|| SelectorError::Config(format!("no threshold for skill `{skill}`")))
    }

    /// Read `selector.threshold.<skill>`, `selector.window_length` and
    /// `selector.tick_rate`.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self, SelectorError> {
        let d = Self::default();
        let mut thresholds = BTreeMap::new();
        for name in cfg.sections("selector.threshold") {
            let t: f64 = cfg.require(&format!("selector.threshold.{name}"))?;
            thresholds.insert(name, t);
        }
        if thresholds.is_empty() {
            thresholds = d.thresholds;
        }
        let c = Self {
            thresholds,
            window_length: cfg.get_or("selector.window_length", d.window_length)?,
            tick_rate: cfg.get_or("selector.tick_rate", d.tick_rate)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn write_kv(&self, cfg: &mut KvConfig) {
        for (name, t) in &self.thresholds {
            cfg.set(&format!("selector.threshold.{name}"), t);
        }
        cfg.set("selector.window_length", self.window_length);
        cfg.set("selector.tick_rate", self.tick_rate);
    }
}

/// Filter by threshold, then take the lowest predicted CoT; equal costs go
/// to the lowest skill id. NaN viabilities never pass the filter.
pub fn raw_decision(
    ids: &[SkillId],
    viabilities: &[f64],
    cots: &[f64],
    thresholds: &[f64],
) -> Result<Decision, SelectorError> {
    let n = ids.len();
    for len in [viabilities.len(), cots.len(), thresholds.len()] {
        if len != n {
            return Err(SelectorError::SkillSetMismatch { expected: n, found: len });
        }
    }
    let mut best: Option<(f64, SkillId)> = None;
    for i in 0..n {
        if !(viabilities[i] >= thresholds[i]) {
            continue;
        }
        let c = cots[i];
        let better = match best {
            None => true,
            Some((bc, bid)) => c < bc || (c == bc && ids[i] < bid) || (bc.is_nan() && !c.is_nan()),
        };
        if better {
            best = Some((c, ids[i]));
        }
    }
    Ok(best.map_or(Decision::Stop, |(_, id)| Decision::Skill(id)))
}

/// Sliding window of raw decisions and the decision currently executing.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorState {
    window: VecDeque<Decision>,
    window_length: usize,
    committed: Decision,
}

impl SelectorState {
    /// Fresh state: empty window, committed to `Stop`.
    pub fn new(window_length: usize) -> Self {
        let window_length = window_length.max(1);
        Self { window: VecDeque::with_capacity(window_length), window_length, committed: Decision::Stop }
    }

    pub fn committed(&self) -> Decision {
        self.committed
    }

    pub fn window(&self) -> &VecDeque<Decision> {
        &self.window
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    /// Push one raw decision. The window keeps rolling after a commit.
    pub fn push(&mut self, raw: Decision) -> Decision {
        if self.window.len() == self.window_length {
            self.window.pop_front();
        }
        self.window.push_back(raw);
        if self.window.len() == self.window_length && self.window.iter().all(|&d| d == raw) {
            self.committed = raw;
        }
        self.committed
    }

    /// Predict with every registered model, decide, and update the window.
    pub fn tick(&mut self, hf: &Heightfield, registry: &SkillRegistry) -> Result<TickRecord, SelectorError> {
        let p = registry.predict(hf)?;
        Ok(self.apply(p, registry))
    }

    /// Update from predictions computed elsewhere, e.g. in a batch.
    pub fn apply(&mut self, p: Predictions, registry: &SkillRegistry) -> TickRecord {
        let raw = raw_decision(&registry.ids(), &p.viabilities, &p.cots, &registry.thresholds())
            .expect("predictions come from the same registry");
        let committed = self.push(raw);
        TickRecord { viabilities: p.viabilities, cots: p.cots, raw, committed }
    }
}

/// Per-skill model outputs, in registry order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub viabilities: Vec<f64>,
    pub cots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub viabilities: Vec<f64>,
    pub cots: Vec<f64>,
    pub raw: Decision,
    pub committed: Decision,
}

#[derive(Debug, Clone)]
pub struct RegisteredSkill {
    pub profile: SkillProfile,
    pub viability: CnnModel,
    pub cot: CnnModel,
    pub threshold: f64,
}

/// Skills available to the selector, kept sorted by id.
#[derive(Debug, Clone, Default)]
pub struct SkillRegistry {
    skills: Vec<RegisteredSkill>,
}

impl SkillRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a skill with its own models. Models already registered are not
    /// touched.
    pub fn register(
        &mut self,
        profile: SkillProfile,
        viability: CnnModel,
        cot: CnnModel,
        threshold: f64,
    ) -> Result<(), SelectorError> {
        if self.skills.iter().any(|s| s.profile.id == profile.id) {
            return Err(SelectorError::DuplicateId(profile.id));
        }
        for (role, model, expected) in [("viability", &viability, HeadKind::Sigmoid), ("cot", &cot, HeadKind::Linear)] {
            if model.head_kind != expected {
                return Err(SelectorError::HeadKindMismatch {
                    skill: profile.name.clone(),
                    role,
                    expected,
                    found: model.head_kind,
                });
            }
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(SelectorError::Config(format!("threshold for `{}` must lie in (0, 1)", profile.name)));
        }
        let at = self.skills.partition_point(|s| s.profile.id < profile.id);
        self.skills.insert(at, RegisteredSkill { profile, viability, cot, threshold });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[RegisteredSkill] {
        &self.skills
    }

    pub fn get(&self, id: SkillId) -> Option<&RegisteredSkill> {
        self.skills.iter().find(|s| s.profile.id == id)
    }

    pub fn ids(&self) -> Vec<SkillId> {
        self.skills.iter().map(|s| s.profile.id).collect()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.skills.iter().map(|s| s.threshold).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.skills.iter().map(|s| s.profile.name.as_str()).collect()
    }

    /// Skill name for a decision, or `stop`.
    pub fn label(&self, d: Decision) -> String {
        match d {
            Decision::Stop => "stop".to_string(),
            Decision::Skill(id) => self.get(id).map_or_else(|| format!("skill{id}"), |s| s.profile.name.clone()),
        }
    }

    pub fn predict(&self, hf: &Heightfield) -> Result<Predictions, SelectorError> {
        let mut p = Predictions { viabilities: Vec::with_capacity(self.len()), cots: Vec::with_capacity(self.len()) };
        for s in &self.skills {
            p.viabilities.push(s.viability.predict(hf)?);
            p.cots.push(s.cot.predict(hf)?);
        }
        Ok(p)
    }

    /// [`predict`](Self::predict) for many heightfields at once.
    pub fn predict_batch(&self, hfs: &[&Heightfield]) -> Result<Vec<Predictions>, SelectorError> {
        let mut out: Vec<Predictions> = hfs
            .iter()
            .map(|_| Predictions { viabilities: Vec::with_capacity(self.len()), cots: Vec::with_capacity(self.len()) })
            .collect();
        for s in &self.skills {
            let v = s.viability.predict_batch(hfs)?;
            let c = s.cot.predict_batch(hfs)?;
            for (k, p) in out.iter_mut().enumerate() {
                p.viabilities.push(v[k]);
                p.cots.push(c[k]);
            }
        }
        Ok(out)
    }
}

/// CSV header for per-tick logs: `tick`, the `extra` columns, per-skill
/// viability and CoT, raw and committed decisions.
pub fn log_header(registry: &SkillRegistry, extra: &[&str]) -> String {
    let mut cols = vec!["tick".to_string()];
    cols.extend(extra.iter().map(|s| s.to_string()));
    for name in registry.names() {
        cols.push(format!("v_{name}"));
    }
    for name in registry.names() {
        cols.push(format!("c_{name}"));
    }
    cols.push("raw".into());
    cols.push("committed".into());
    cols.join(",")
}

pub fn log_row(tick: usize, extra: &[String], rec: &TickRecord, registry: &SkillRegistry) -> String {
    let mut cols = vec![tick.to_string()];
    cols.extend(extra.iter().cloned());
    cols.extend(rec.viabilities.iter().map(|v| format!("{v:.6}")));
    cols.extend(rec.cots.iter().map(|v| format!("{v:.6}")));
    cols.push(registry.label(rec.raw));
    cols.push(registry.label(rec.committed));
    cols.join(",")
}
