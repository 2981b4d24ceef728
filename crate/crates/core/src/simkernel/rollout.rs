use rand::Rng;

use super::{
    validate_spawn, KernelError, Outcome, RobotParams, RolloutTrace, SkillProfile, EVENT_THRESHOLD, PROBE_AHEAD,
};
use crate::terrain::{Pose2p5D, TerrainField};

/// Default start-up window excluded from cost-of-transport measurement.
pub const WARMUP_SECONDS: f64 = 0.5;

const GAP_SCAN_STEP: f64 = 0.02;

/// What happened during one control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub power: f64,
    /// Signed elevation change under the leading feet this tick.
    pub dh: f64,
    pub collided: bool,
}

/// Kinematic state of the base while it is driven across a terrain, possibly
/// by a different skill on every tick.
#[derive(Debug, Clone)]
pub struct BaseWalker<'a> {
    field: &'a TerrainField,
    params: &'a RobotParams,
    origin: Pose2p5D,
    steps_moved: usize,
    probe_height: f64,
    /// Probe distance at which the current leap lands.
    airborne_until: Option<f64>,
    /// Spans `(from, to, level)` of path distance where the body is carried
    /// over a trench at the take-off level.
    bridges: Vec<(f64, f64, f64)>,
}

impl<'a> BaseWalker<'a> {
    pub fn new(field: &'a TerrainField, params: &'a RobotParams, start: Pose2p5D) -> Self {
        let (px, py) = start.to_world(PROBE_AHEAD, 0.0);
        Self {
            field,
            params,
            origin: start,
            steps_moved: 0,
            probe_height: field.elevation(px, py),
            airborne_until: None,
            bridges: Vec::new(),
        }
    }

    /// True between take-off and landing of a leap; the base cannot stop
    /// until it lands.
    pub fn airborne(&self) -> bool {
        self.airborne_until.is_some()
    }

    /// Distance traveled along the heading.
    pub fn traveled(&self) -> f64 {
        self.steps_moved as f64 * self.params.step_length()
    }

    pub fn pose(&self) -> Pose2p5D {
        let d = self.traveled();
        let (x, y) = self.origin.to_world(d, 0.0);
        let mut pose = self.field.pose_at(x, y, self.origin.yaw);
        for &(from, to, level) in &self.bridges {
            if d >= from && d <= to {
                pose.z = pose.z.max(level);
            }
        }
        pose
    }

    /// Advance one control step under `skill`. Hazard draws are taken from
    /// `rng` only when an event fires.
    pub fn step<R: Rng + ?Sized>(&mut self, skill: &SkillProfile, rng: &mut R) -> StepReport {
        self.steps_moved += 1;
        let dt = self.params.control_dt;
        let probe_s = self.traveled() + PROBE_AHEAD;
        let (px, py) = self.origin.to_world(probe_s, 0.0);
        let h = self.field.elevation(px, py);
        let d = self.traveled();
        self.bridges.retain(|b| b.1 >= d);

        if let Some(rim) = self.airborne_until {
            if probe_s < rim {
                return StepReport { power: skill.base_power, dh: 0.0, collided: false };
            }
            self.airborne_until = None;
            self.probe_height = h;
            return StepReport { power: skill.base_power, dh: 0.0, collided: false };
        }

        let dh = h - self.probe_height;
        if dh <= -EVENT_THRESHOLD && skill.max_gap > 0.0 {
            if let Some(rim) = self.far_rim(probe_s, self.probe_height, skill.max_gap) {
                // The leap ends once the hind feet, as far behind the base
                // as the probe is ahead, have cleared the far rim.
                self.airborne_until = Some(rim + 2.0 * PROBE_AHEAD);
                self.bridges.push((probe_s, rim, self.probe_height));
                return StepReport { power: skill.base_power, dh: 0.0, collided: false };
            }
        }
        self.probe_height = h;

        let power = skill.base_power
            + skill.power_per_ascend * dh.max(0.0) / dt
            + skill.power_per_descend * (-dh).max(0.0) / dt;
        let mut collided = false;
        if dh > skill.swing_clearance {
            collided = true;
        } else if dh.abs() >= EVENT_THRESHOLD {
            let u: f64 = rng.gen();
            collided = u < skill.failure_probability(dh);
        }
        StepReport { power, dh, collided }
    }

    /// Stand still for one tick.
    pub fn hold(&mut self, skill: Option<&SkillProfile>) -> StepReport {
        StepReport { power: skill.map_or(0.0, |s| s.base_power * 0.25), dh: 0.0, collided: false }
    }

    /// Path distance where the terrain returns to `level` within `max_gap`
    /// ahead of `from`.
    fn far_rim(&self, from: f64, level: f64, max_gap: f64) -> Option<f64> {
        let n = (max_gap / GAP_SCAN_STEP).floor() as usize;
        (1..=n).map(|k| from + k as f64 * GAP_SCAN_STEP).find(|&s| {
            let (x, y) = self.origin.to_world(s, 0.0);
            self.field.elevation(x, y) >= level - EVENT_THRESHOLD
        })
    }
}

/// Drive `skill` from `pose` toward a target `horizon_distance` ahead.
pub fn rollout<R: Rng + ?Sized>(
    field: &TerrainField,
    skill: &SkillProfile,
    pose: &Pose2p5D,
    params: &RobotParams,
    rng: &mut R,
) -> Result<RolloutTrace, KernelError> {
    if !validate_spawn(field, pose) {
        return Err(KernelError::InvalidSpawn { x: pose.x, y: pose.y, yaw: pose.yaw });
    }
    let step = params.step_length();
    let needed = (params.horizon_distance / step - 1e-9).ceil().max(1.0) as usize;
    let max_steps = (params.time_limit / params.control_dt + 1e-9).floor() as usize;

    let mut walker = BaseWalker::new(field, params, *pose);
    let mut trace = RolloutTrace {
        powers: Vec::with_capacity(needed.min(max_steps)),
        distances: Vec::with_capacity(needed.min(max_steps)),
        poses: Vec::with_capacity(needed.min(max_steps)),
        outcome: Outcome::TimedOut,
        steps: 0,
    };
    for k in 1..=max_steps {
        let report = walker.step(skill, rng);
        let mut d = walker.traveled();
        if k == needed && (d - params.horizon_distance).abs() < 1e-9 {
            d = d.max(params.horizon_distance);
        }
        trace.powers.push(report.power);
        trace.distances.push(d);
        trace.poses.push(walker.pose());
        if report.collided {
            trace.outcome = Outcome::BaseCollision;
            break;
        }
        if k >= needed {
            trace.outcome = Outcome::ReachedTarget;
            break;
        }
    }
    trace.steps = trace.powers.len();
    Ok(trace)
}

/// Energy per unit weight per unit distance over the ticks after `warmup`
/// seconds; negative power samples contribute nothing.
pub fn compute_cot(trace: &RolloutTrace, params: &RobotParams, warmup: f64) -> Result<f64, KernelError> {
    if trace.outcome != Outcome::ReachedTarget {
        return Err(KernelError::CrashedTrace);
    }
    let skip = ((warmup / params.control_dt).round().max(0.0) as usize).min(trace.steps);
    let energy = trace.powers[skip..]
        .iter()
        .fold(0.0, |acc, &p| acc + p.max(0.0) * params.control_dt);
    let start = if skip == 0 { 0.0 } else { trace.distances[skip - 1] };
    let distance = trace.final_distance() - start;
    if !(distance > 0.0) {
        return Err(KernelError::ZeroDistance);
    }
    Ok(energy / (params.mass * params.gravity * distance))
}
