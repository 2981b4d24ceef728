//! Synthetic skill kernel.
//!
//! Stands in for a physics simulator: the base advances along its heading at
//! the commanded speed, each tick emits a mechanical power sample, and every
//! discontinuous elevation change under the leading feet is a hazard event
//! whose failure probability is logistic in how far the change exceeds the
//! skill's capability.

mod rollout;
mod spawn;

use std::fmt;

use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::terrain::{Pose2p5D, TerrainError};

pub use rollout::{compute_cot, rollout, BaseWalker, StepReport, WARMUP_SECONDS};
pub use spawn::{validate_spawn, SpawnCheck};

/// Forward distance from the base to the leading feet, where terrain changes
/// are encountered.
pub const PROBE_AHEAD: f64 = 0.3;
/// Per-tick elevation change below which no hazard event fires.
pub const EVENT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("spawn pose ({x:.3}, {y:.3}, yaw {yaw:.3}) fails the settling check")]
    InvalidSpawn { x: f64, y: f64, yaw: f64 },
    #[error("cost of transport is undefined for a rollout that did not reach its target")]
    CrashedTrace,
    #[error("no distance covered after the warmup window")]
    ZeroDistance,
    #[error("invalid skill profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SkillId(pub u16);

impl fmt::Display for SkillId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Parametric stand-in for one low-level locomotion policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillProfile {
    pub id: SkillId,
    pub name: String,
    /// Largest upward step handled reliably, meters.
    pub max_ascend: f64,
    /// Largest downward step handled reliably, meters.
    pub max_descend: f64,
    /// Power on flat ground at the commanded speed, watts.
    pub base_power: f64,
    /// Extra energy per meter climbed, joules per meter.
    pub power_per_ascend: f64,
    /// Extra energy per meter descended, joules per meter.
    pub power_per_descend: f64,
    /// Steepness of the logistic failure law, per meter.
    pub slip_sharpness: f64,
    /// Upward edges taller than this are struck and end the rollout.
    pub swing_clearance: f64,
    /// Widest trench the skill leaps over; zero for skills that cannot.
    pub max_gap: f64,
}

impl SkillProfile {
    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |reason: &str| {
            Err(KernelError::InvalidProfile { name: self.name.clone(), reason: reason.to_string() })
        };
        if !(self.max_ascend >= 0.0 && self.max_descend >= 0.0) {
            return bad("capabilities must be non-negative");
        }
        if !(self.base_power > 0.0) {
            return bad("base_power must be positive");
        }
        if !(self.slip_sharpness > 0.0) {
            return bad("slip_sharpness must be positive");
        }
        if !(self.power_per_ascend >= 0.0 && self.power_per_descend >= 0.0) {
            return bad("power coefficients must be non-negative");
        }
        if !(self.swing_clearance >= 0.0 && self.max_gap >= 0.0) {
            return bad("clearance and gap width must be non-negative");
        }
        Ok(())
    }

    /// Probability that one event of signed height change `dh` ends the
    /// rollout.
    pub fn failure_probability(&self, dh: f64) -> f64 {
        let capability = if dh >= 0.0 { self.max_ascend } else { self.max_descend };
        logistic(self.slip_sharpness * (dh.abs() - capability))
    }

    /// Read `skill.<name>.*`.
    pub fn from_kv(cfg: &KvConfig, name: &str) -> Result<Self, KernelError> {
        let key = |field: &str| format!("skill.{name}.{field}");
        let profile = Self {
            id: SkillId(cfg.require(&key("id"))?),
            name: name.to_string(),
            max_ascend: cfg.require(&key("max_ascend"))?,
            max_descend: cfg.require(&key("max_descend"))?,
            base_power: cfg.require(&key("base_power"))?,
            power_per_ascend: cfg.require(&key("power_per_ascend"))?,
            power_per_descend: cfg.require(&key("power_per_descend"))?,
            slip_sharpness: cfg.require(&key("slip_sharpness"))?,
            swing_clearance: cfg.require(&key("swing_clearance"))?,
            max_gap: cfg.get_or(&key("max_gap"), 0.0)?,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn write_kv(&self, cfg: &mut KvConfig) {
        let key = |field: &str| format!("skill.{}.{field}", self.name);
        cfg.set(&key("id"), self.id);
        cfg.set(&key("max_ascend"), self.max_ascend);
        cfg.set(&key("max_descend"), self.max_descend);
        cfg.set(&key("base_power"), self.base_power);
        cfg.set(&key("power_per_ascend"), self.power_per_ascend);
        cfg.set(&key("power_per_descend"), self.power_per_descend);
        cfg.set(&key("slip_sharpness"), self.slip_sharpness);
        cfg.set(&key("swing_clearance"), self.swing_clearance);
        cfg.set(&key("max_gap"), self.max_gap);
    }
}

/// Every `skill.<name>.*` profile in `cfg`, ordered by id.
pub fn load_skills(cfg: &KvConfig) -> Result<Vec<SkillProfile>, KernelError> {
    let mut skills = cfg
        .sections("skill")
        .iter()
        .map(|name| SkillProfile::from_kv(cfg, name))
        .collect::<Result<Vec<_>, _>>()?;
    skills.sort_by_key(|s| s.id);
    if let Some(w) = skills.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(KernelError::InvalidProfile {
            name: w[1].name.clone(),
            reason: format!("id {} already used by `{}`", w[1].id, w[0].name),
        });
    }
    Ok(skills)
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    pub mass: f64,
    pub gravity: f64,
    pub command_speed: f64,
    pub control_dt: f64,
    pub time_limit: f64,
    pub horizon_distance: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 50.0,
            gravity: 9.81,
            command_speed: 0.6,
            control_dt: 0.02,
            time_limit: 4.0,
            horizon_distance: 1.5,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), KernelError> {
        let ok = self.mass > 0.0
            && self.gravity > 0.0
            && self.control_dt > 0.0
            && self.command_speed > 0.0
            && self.time_limit > 0.0
            && self.horizon_distance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(KernelError::InvalidParams("mass, gravity, speed, dt, time limit and horizon must be positive".into()))
        }
    }

    pub fn step_length(&self) -> f64 {
        self.command_speed * self.control_dt
    }

    pub fn from_kv(cfg: &KvConfig) -> Result<Self, KernelError> {
        let d = Self::default();
        let p = Self {
            mass: cfg.get_or("robot.mass", d.mass)?,
            gravity: cfg.get_or("robot.gravity", d.gravity)?,
            command_speed: cfg.get_or("robot.command_speed", d.command_speed)?,
            control_dt: cfg.get_or("robot.control_dt", d.control_dt)?,
            time_limit: cfg.get_or("robot.time_limit", d.time_limit)?,
            horizon_distance: cfg.get_or("robot.horizon_distance", d.horizon_distance)?,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    ReachedTarget,
    BaseCollision,
    TimedOut,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::ReachedTarget => "reached_target",
            Outcome::BaseCollision => "base_collision",
            Outcome::TimedOut => "timed_out",
        }
    }
}

/// Per-tick record of one rollout. Entry `t` describes the state at the end
/// of control step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub powers: Vec<f64>,
    pub distances: Vec<f64>,
    pub poses: Vec<Pose2p5D>,
    pub outcome: Outcome,
    pub steps: usize,
}

impl RolloutTrace {
    pub fn final_distance(&self) -> f64 {
        self.distances.last().copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("step,power,distance,x,y,z,yaw\n");
        for t in 0..self.steps {
            let p = &self.poses[t];
            let _ = writeln!(s, "{t},{},{},{},{},{},{}", self.powers[t], self.distances[t], p.x, p.y, p.z, p.yaw);
        }
        let _ = writeln!(s, "# outcome={}", self.outcome.name());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> SkillProfile {
        SkillProfile {
            id: SkillId(0),
            name: "walk".into(),
            max_ascend: 0.1,
            max_descend: 0.08,
            base_power: 150.0,
            power_per_ascend: 900.0,
            power_per_descend: 500.0,
            slip_sharpness: 60.0,
            swing_clearance: 0.15,
            max_gap: 0.0,
        }
    }

    #[test]
    fn failure_law_uses_directional_capability() {
        let p = profile();
        assert!((p.failure_probability(0.1) - 0.5).abs() < 1e-12);
        assert!((p.failure_probability(-0.08) - 0.5).abs() < 1e-12);
        assert!(p.failure_probability(0.05) < p.failure_probability(0.07));
        assert!(p.failure_probability(-0.09) > p.failure_probability(0.09));
    }

    #[test]
    fn profile_validation() {
        assert!(profile().validate().is_ok());
        let mut p = profile();
        p.base_power = 0.0;
        assert!(p.validate().is_err());
        let mut p = profile();
        p.slip_sharpness = -1.0;
        assert!(p.validate().is_err());
        let mut p = profile();
        p.max_descend = -0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn profile_kv_round_trip() {
        let mut cfg = KvConfig::new();
        profile().write_kv(&mut cfg);
        assert_eq!(SkillProfile::from_kv(&cfg, "walk").unwrap(), profile());
        cfg.set("skill.walk.base_power", -3);
        assert!(SkillProfile::from_kv(&cfg, "walk").is_err());
    }

    #[test]
    fn default_skills_load_in_id_order() {
        let cfg = crate::config::default_config();
        let skills = load_skills(&cfg).unwrap();
        let names: Vec<&str> = skills.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["walk", "ascend", "descend", "climb", "gap"]);
        let walk = &skills[0];
        assert!(skills[1..].iter().all(|s| s.base_power > walk.base_power));
        assert!(skills[1..3].iter().all(|s| s.max_ascend > walk.max_ascend || s.max_descend > walk.max_descend));
        let mut dup = cfg.clone();
        dup.set("skill.gap.id", 0);
        assert!(load_skills(&dup).is_err());
    }

    #[test]
    fn robot_defaults() {
        let p = RobotParams::default();
        assert_eq!(p.command_speed, 0.6);
        assert_eq!(p.time_limit, 4.0);
        assert_eq!(p.horizon_distance, 1.5);
        assert_eq!(p.control_dt, 0.02);
        assert!(p.validate().is_ok());
        let mut cfg = KvConfig::new();
        cfg.set("robot.mass", 0);
        assert!(RobotParams::from_kv(&cfg).is_err());
    }
}
