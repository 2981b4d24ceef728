use std::fmt::Write as _;

use super::EvalError;
use crate::datagen::observe;
use crate::rng::{derive, derived_stream, Stream};
use crate::selector::{log_row, Decision, SelectorState, SkillRegistry};
use crate::simkernel::{BaseWalker, RobotParams, SkillId, SkillProfile};
use crate::terrain::{CourseBuilder, Heightfield, Pose2p5D, TerrainField, TerrainKind, TerrainSpec};

/// Extra per-tick log columns written by [`run_episodes`].
pub const LOG_EXTRA_COLUMNS: [&str; 3] = ["x", "z", "traveled"];

/// Seconds added to the nominal traversal time of a course.
const BUDGET_SLACK: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// Layout and protocol of the flat, stairs, flat courses.
#[derive(Debug, Clone, PartialEq)]
pub struct CourseConfig {
    pub heights: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub noise_amplitude: f64,
    pub window_length: usize,
    pub width: f64,
    pub approach: f64,
    pub steps: u32,
    pub step_depth: f64,
    pub landing: f64,
    pub spawn_x: f64,
    /// Distance from the spawn to the target waypoint.
    pub target_distance: f64,
}

impl Default for CourseConfig {
    fn default() -> Self {
        Self {
            heights: (1..=6).map(|k| k as f64 * 0.05).collect(),
            trials: 100,
            seed: 0,
            noise_amplitude: crate::terrain::NOISE_AMPLITUDE,
            window_length: 10,
            width: 4.0,
            approach: 3.0,
            steps: 5,
            step_depth: 0.3,
            landing: 3.5,
            spawn_x: 1.0,
            target_distance: 4.5,
        }
    }
}

impl CourseConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Config(m.to_string()));
        if self.trials == 0 || self.window_length == 0 {
            return bad("trials and window_length must be at least 1");
        }
        if self.heights.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return bad("course heights must be finite and non-negative");
        }
        if !(self.width > 0.0 && self.step_depth > 0.0 && self.target_distance > 0.0) {
            return bad("course dimensions must be positive");
        }
        let length = self.approach + self.steps as f64 * self.step_depth + self.landing;
        if !(self.spawn_x >= 0.0 && self.spawn_x + self.target_distance <= length) {
            return bad("spawn and target must lie on the course");
        }
        Ok(())
    }
}

/// Flat approach, `steps` stairs of `height` up or down, flat landing.
pub fn transition_course(direction: Direction, height: f64, cfg: &CourseConfig) -> TerrainField {
    let (rise, kind) = match direction {
        Direction::Up => (height, TerrainKind::StairsUp),
        Direction::Down => (-height, TerrainKind::StairsDown),
    };
    CourseBuilder::new(cfg.width)
        .flat(cfg.approach)
        .stairs(rise, cfg.step_depth, cfg.steps)
        .flat(cfg.landing)
        .build(TerrainSpec {
            kind,
            step_height: height,
            step_depth: cfg.step_depth,
            feature_start: cfg.approach,
            feature_count: Some(cfg.steps),
            ..TerrainSpec::default()
        })
}

/// Flat, a 0.4 m wall, flat, a 0.5 m gap, flat.
pub fn obstacle_course(width: f64) -> TerrainField {
    CourseBuilder::new(width)
        .flat(2.0)
        .wall(0.4, 1.0)
        .flat(2.0)
        .gap(0.5)
        .flat(2.0)
        .build(TerrainSpec { kind: TerrainKind::Wall, wall_height: 0.4, obstacle_size: 1.0, ..TerrainSpec::default() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeOutcome {
    Success,
    /// The time budget ran out without a collision.
    StopActivated,
    Crash,
}

impl EpisodeOutcome {
    pub fn name(self) -> &'static str {
        match self {
            EpisodeOutcome::Success => "success",
            EpisodeOutcome::StopActivated => "stop_activated",
            EpisodeOutcome::Crash => "crash",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub outcome: EpisodeOutcome,
    pub ticks: usize,
    pub traveled: f64,
    /// Committed decision of every tick.
    pub committed: Vec<Decision>,
    /// Per-tick CSV rows when logging was requested.
    pub log: Vec<String>,
}

/// Control ticks allowed for a course of `length` meters.
pub fn budget_ticks(length: f64, params: &RobotParams) -> usize {
    ((length / params.command_speed + BUDGET_SLACK) / params.control_dt).round() as usize
}

struct Live<'a> {
    walker: BaseWalker<'a>,
    state: SelectorState,
    noise: Stream,
    hazard: Stream,
    /// Last skill that drove the base; it finishes a leap under `Stop`.
    moving: Option<SkillId>,
    outcome: Option<EpisodeOutcome>,
    committed: Vec<Decision>,
    log: Vec<String>,
}

fn episode_streams(seed: u64) -> (Stream, Stream) {
    (derived_stream(seed, &[1]), derived_stream(seed, &[2]))
}

/// Drive one selector-controlled episode per seed from `start`, all in
/// lockstep so model inference is batched across episodes. Each tick the
/// robot observes, the selector updates, and the committed skill moves the
/// base one step (or it holds on `Stop`).
#[allow(clippy::too_many_arguments)]
pub fn run_episodes(
    field: &TerrainField,
    start: Pose2p5D,
    target_distance: f64,
    budget: usize,
    registry: &SkillRegistry,
    window_length: usize,
    params: &RobotParams,
    noise_amplitude: f64,
    seeds: &[u64],
    keep_log: bool,
) -> Result<Vec<Episode>, EvalError> {
    let mut live: Vec<Live> = seeds
        .iter()
        .map(|&s| {
            let (noise, hazard) = episode_streams(s);
            Live {
                walker: BaseWalker::new(field, params, start),
                state: SelectorState::new(window_length),
                noise,
                hazard,
                moving: None,
                outcome: None,
                committed: Vec::new(),
                log: Vec::new(),
            }
        })
        .collect();
    let mut ticks = vec![0usize; seeds.len()];
    for t in 0..budget {
        let active: Vec<usize> = (0..live.len()).filter(|&k| live[k].outcome.is_none()).collect();
        if active.is_empty() {
            break;
        }
        let mut hfs: Vec<Heightfield> = Vec::with_capacity(active.len());
        for &k in &active {
            let e = &mut live[k];
            hfs.push(observe(field, &e.walker.pose(), noise_amplitude, &mut e.noise)?);
        }
        let refs: Vec<&Heightfield> = hfs.iter().collect();
        let preds = registry.predict_batch(&refs)?;
        for (&k, p) in active.iter().zip(preds) {
            let e = &mut live[k];
            let pose = e.walker.pose();
            let rec = e.state.apply(p, registry);
            let report = match rec.committed {
                Decision::Skill(id) => {
                    let skill = &registry.get(id).expect("committed skill is registered").profile;
                    e.walker.step(skill, &mut e.hazard)
                }
                Decision::Stop => match e.moving {
                    Some(id) if e.walker.airborne() => {
                        let skill = &registry.get(id).expect("moving skill is registered").profile;
                        e.walker.step(skill, &mut e.hazard)
                    }
                    _ => e.walker.hold(None),
                },
            };
            if let Decision::Skill(id) = rec.committed {
                e.moving = Some(id);
            }
            e.committed.push(rec.committed);
            if keep_log {
                let extra = [format!("{:.4}", pose.x), format!("{:.4}", pose.z), format!("{:.4}", e.walker.traveled())];
                e.log.push(log_row(t, &extra, &rec, registry));
            }
            ticks[k] = t + 1;
            if report.collided {
                e.outcome = Some(EpisodeOutcome::Crash);
            } else if e.walker.traveled() >= target_distance - 1e-9 {
                e.outcome = Some(EpisodeOutcome::Success);
            }
        }
    }
    Ok(live
        .into_iter()
        .zip(ticks)
        .map(|(e, ticks)| Episode {
            outcome: e.outcome.unwrap_or(EpisodeOutcome::StopActivated),
            ticks,
            traveled: e.walker.traveled(),
            committed: e.committed,
            log: e.log,
        })
        .collect())
}

/// The same episodes driven by one fixed skill; hazard draws come from the
/// same per-seed stream as under the selector.
pub fn run_baseline_episodes(
    field: &TerrainField,
    start: Pose2p5D,
    target_distance: f64,
    budget: usize,
    skill: &SkillProfile,
    params: &RobotParams,
    seeds: &[u64],
) -> Vec<EpisodeOutcome> {
    seeds
        .iter()
        .map(|&s| {
            let (_, mut hazard) = episode_streams(s);
            let mut walker = BaseWalker::new(field, params, start);
            for _ in 0..budget {
                if walker.step(skill, &mut hazard).collided {
                    return EpisodeOutcome::Crash;
                }
                if walker.traveled() >= target_distance - 1e-9 {
                    return EpisodeOutcome::Success;
                }
            }
            EpisodeOutcome::StopActivated
        })
        .collect()
}

/// Outcome counts of one condition at one height.
#[derive(Debug, Clone, PartialEq)]
pub struct CourseRow {
    pub height: f64,
    pub condition: String,
    pub trials: usize,
    pub successes: usize,
    pub stops: usize,
    pub crashes: usize,
}

impl CourseRow {
    fn tally(height: f64, condition: String, outcomes: impl Iterator<Item = EpisodeOutcome>) -> Self {
        let mut row = Self { height, condition, trials: 0, successes: 0, stops: 0, crashes: 0 };
        for o in outcomes {
            row.trials += 1;
            match o {
                EpisodeOutcome::Success => row.successes += 1,
                EpisodeOutcome::StopActivated => row.stops += 1,
                EpisodeOutcome::Crash => row.crashes += 1,
            }
        }
        row
    }

    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    pub fn stop_activated_rate(&self) -> f64 {
        self.stops as f64 / self.trials as f64
    }

    pub fn crash_rate(&self) -> f64 {
        self.crashes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CourseResult {
    pub direction: Direction,
    pub baseline: String,
    pub rows: Vec<CourseRow>,
}

impl CourseResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("direction,height,condition,trials,success_rate,stop_activated_rate,crash_rate\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.4},{},{},{:.4},{:.4},{:.4}",
                self.direction.name(),
                r.height,
                r.condition,
                r.trials,
                r.success_rate(),
                r.stop_activated_rate(),
                r.crash_rate()
            );
        }
        s
    }

    /// Selector and baseline rows at `height`.
    pub fn pair(&self, height: f64) -> Option<(&CourseRow, &CourseRow)> {
        let at = |c: &str| self.rows.iter().find(|r| (r.height - height).abs() < 1e-9 && r.condition == c);
        Some((at("selector")?, at(&format!("baseline_{}", self.baseline))?))
    }
}

/// Selector against `baseline` on the transition course at every height.
/// Trial `i` uses the same seed at every height and under both conditions.
pub fn run_transition_course(
    direction: Direction,
    cfg: &CourseConfig,
    registry: &SkillRegistry,
    baseline: &SkillProfile,
    params: &RobotParams,
) -> Result<CourseResult, EvalError> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.trials).map(|i| derive(cfg.seed, &[i as u64])).collect();
    let mut rows = Vec::new();
    for &h in &cfg.heights {
        let field = transition_course(direction, h, cfg);
        let start = field.pose_at(cfg.spawn_x, cfg.width / 2.0, 0.0);
        let budget = budget_ticks(field.extent().0, params);
        let eps = run_episodes(
            &field,
            start,
            cfg.target_distance,
            budget,
            registry,
            cfg.window_length,
            params,
            cfg.noise_amplitude,
            &seeds,
            false,
        )?;
        rows.push(CourseRow::tally(h, "selector".into(), eps.iter().map(|e| e.outcome)));
        let base = run_baseline_episodes(&field, start, cfg.target_distance, budget, baseline, params, &seeds);
        rows.push(CourseRow::tally(h, format!("baseline_{}", baseline.name), base.into_iter()));
    }
    Ok(CourseResult { direction, baseline: baseline.name.clone(), rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleRun {
    pub episode: Episode,
    /// Committed skills in the order they first appeared, `Stop` excluded.
    pub skills_used: Vec<String>,
}

impl ObstacleRun {
    pub fn completed(&self) -> bool {
        self.episode.outcome == EpisodeOutcome::Success
    }
}

/// One logged selector episode across [`obstacle_course`], from 1 m in to
/// 1 m past the gap.
pub fn run_obstacle_course(
    registry: &SkillRegistry,
    window_length: usize,
    params: &RobotParams,
    noise_amplitude: f64,
    seed: u64,
) -> Result<ObstacleRun, EvalError> {
    let field = obstacle_course(4.0);
    let start = field.pose_at(1.0, 2.0, 0.0);
    let budget = budget_ticks(field.extent().0, params);
    let mut eps =
        run_episodes(&field, start, 5.5, budget, registry, window_length, params, noise_amplitude, &[seed], true)?;
    let episode = eps.pop().expect("one episode");
    let mut skills_used = Vec::new();
    for d in &episode.committed {
        if let Decision::Skill(_) = d {
            let name = registry.label(*d);
            if !skills_used.contains(&name) {
                skills_used.push(name);
            }
        }
    }
    Ok(ObstacleRun { episode, skills_used })
}
