//! Evaluation protocols: viability calibration and CoT curves over step
//! height sweeps, selector-versus-baseline transition courses, and the
//! obstacle course used to show skills added after the fact.

mod course;

use std::fmt::Write as _;

use thiserror::Error;

use crate::datagen::{collect_cot_sample, collect_viability_sample, spawn_candidate, DatagenConfig, DatagenError};
use crate::nnet::{CnnModel, HeadKind, NnetError};
use crate::rng::{derive, derived_stream};
use crate::selector::SelectorError;
use crate::simkernel::{validate_spawn, KernelError, SkillProfile};
use crate::terrain::{generate_terrain, Heightfield, TerrainError, TerrainField, TerrainKind};

pub use course::{
    budget_ticks, obstacle_course, run_baseline_episodes, run_episodes, run_obstacle_course, run_transition_course,
    transition_course, CourseConfig, CourseResult, CourseRow, Direction, Episode, EpisodeOutcome, ObstacleRun,
    LOG_EXTRA_COLUMNS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    Config(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Model(#[from] NnetError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

const TAG_SWEEP_TERRAIN: u64 = 11;
const TAG_SWEEP_SPAWN: u64 = 12;
const TAG_SWEEP_SAMPLE: u64 = 13;

/// A difficulty sweep over one terrain family.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: TerrainKind,
    pub start: f64,
    pub end: f64,
    pub increment: f64,
    pub samples_per_height: usize,
    pub seed: u64,
}

impl SweepConfig {
    pub fn new(kind: TerrainKind, samples_per_height: usize, seed: u64) -> Self {
        Self { kind, start: 0.0, end: 0.30, increment: 0.025, samples_per_height, seed }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.increment > 0.0) {
            return Err(EvalError::Config("sweep increment must be positive".into()));
        }
        if !(self.start >= 0.0 && self.end >= self.start && self.end.is_finite()) {
            return Err(EvalError::Config("sweep range must satisfy 0 <= start <= end".into()));
        }
        if self.samples_per_height == 0 {
            return Err(EvalError::Config("samples_per_height must be at least 1".into()));
        }
        Ok(())
    }

    /// `start, start + increment, ...` up to and including `end`.
    pub fn heights(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.increment + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * self.increment).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Viability,
    Cot,
}

impl CurveKind {
    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Viability => "viability",
            CurveKind::Cot => "cot",
        }
    }
}

/// Statistics of one sweep height.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveBucket {
    pub height: f64,
    pub count: usize,
    /// Samples whose measurement exists: all of them for viability, the
    /// successful rollouts for CoT.
    pub measured: usize,
    pub empirical_mean: f64,
    pub empirical_std: f64,
    pub predicted_mean: f64,
    pub predicted_std: f64,
    /// Fraction of rollouts that did not reach the target.
    pub crash_fraction: f64,
    /// CoT buckets below the viability cutoff are not reported.
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub kind: CurveKind,
    pub skill: String,
    pub terrain: TerrainKind,
    pub buckets: Vec<CurveBucket>,
}

impl CurveResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "curve,skill,terrain,height,count,measured,empirical_mean,empirical_std,predicted_mean,predicted_std,crash_fraction,omitted\n",
        );
        for b in &self.buckets {
            let num = |v: f64| if v.is_finite() { format!("{v:.6}") } else { String::new() };
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{},{},{},{},{},{},{:.6},{}",
                self.kind.name(),
                self.skill,
                self.terrain,
                b.height,
                b.count,
                b.measured,
                num(b.empirical_mean),
                num(b.empirical_std),
                num(b.predicted_mean),
                num(b.predicted_std),
                b.crash_fraction,
                b.omitted
            );
        }
        s
    }
}

/// Population mean and standard deviation; NaN for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// One terrain per sweep height, all sharing a seed.
pub fn sweep_fields(sweep: &SweepConfig, dg: &DatagenConfig) -> Result<Vec<TerrainField>, EvalError> {
    let seed = derive(sweep.seed, &[TAG_SWEEP_TERRAIN]);
    sweep
        .heights()
        .iter()
        .map(|&h| Ok(generate_terrain(&dg.terrain_spec(sweep.kind, h, seed))?))
        .collect()
}

/// Spawn positions shared by every height: sample `i` keeps drawing until a
/// candidate settles on all of `fields`, so buckets differ only in the
/// terrain and each sample's randomness is reused across heights.
pub fn sweep_spawns(sweep: &SweepConfig, dg: &DatagenConfig, fields: &[TerrainField]) -> Result<Vec<(f64, f64, f64)>, EvalError> {
    let extent = fields.first().map_or(dg.extent, |f| f.extent());
    let mut out = Vec::with_capacity(sweep.samples_per_height);
    for i in 0..sweep.samples_per_height {
        let mut rng = derived_stream(sweep.seed, &[TAG_SWEEP_SPAWN, i as u64]);
        let mut found = None;
        for _ in 0..crate::datagen::SPAWN_RETRIES {
            let (x, y, yaw) = spawn_candidate(extent, dg, &mut rng);
            if fields.iter().all(|f| validate_spawn(f, &f.pose_at(x, y, yaw))) {
                found = Some((x, y, yaw));
                break;
            }
        }
        match found {
            Some(p) => out.push(p),
            None => {
                return Err(DatagenError::RetriesExhausted {
                    attempts: crate::datagen::SPAWN_RETRIES,
                    terrain: format!("{} sweep", sweep.kind),
                }
                .into())
            }
        }
    }
    Ok(out)
}

fn sample_seed(sweep: &SweepConfig, i: usize) -> u64 {
    derive(sweep.seed, &[TAG_SWEEP_SAMPLE, i as u64])
}

fn check_head(model: &CnnModel, expected: HeadKind) -> Result<(), EvalError> {
    if model.head_kind != expected {
        return Err(NnetError::HeadKindMismatch { expected, found: model.head_kind }.into());
    }
    Ok(())
}

/// Empirical success rate (over `dg.rollouts_per_sample` rollouts) against
/// the model's prediction on the same heightfield, per height.
pub fn run_viability_calibration(
    sweep: &SweepConfig,
    dg: &DatagenConfig,
    skill: &SkillProfile,
    model: &CnnModel,
) -> Result<CurveResult, EvalError> {
    sweep.validate()?;
    dg.validate()?;
    check_head(model, HeadKind::Sigmoid)?;
    let fields = sweep_fields(sweep, dg)?;
    let spawns = sweep_spawns(sweep, dg, &fields)?;
    let mut buckets = Vec::new();
    for (field, h) in fields.iter().zip(sweep.heights()) {
        let mut labels = Vec::with_capacity(spawns.len());
        let mut hfs: Vec<Heightfield> = Vec::with_capacity(spawns.len());
        for (i, &(x, y, yaw)) in spawns.iter().enumerate() {
            let pose = field.pose_at(x, y, yaw);
            let s = collect_viability_sample(
                field,
                skill,
                &pose,
                dg.rollouts_per_sample,
                &dg.robot,
                dg.noise_amplitude,
                sample_seed(sweep, i),
            )?;
            labels.push(s.label);
            hfs.push(s.heightfield);
        }
        let refs: Vec<&Heightfield> = hfs.iter().collect();
        let predicted = model.predict_batch(&refs)?;
        let (em, es) = mean_std(&labels);
        let (pm, ps) = mean_std(&predicted);
        buckets.push(CurveBucket {
            height: h,
            count: spawns.len(),
            measured: labels.len(),
            empirical_mean: em,
            empirical_std: es,
            predicted_mean: pm,
            predicted_std: ps,
            crash_fraction: 1.0 - em,
            omitted: false,
        });
    }
    Ok(CurveResult { kind: CurveKind::Viability, skill: skill.name.clone(), terrain: sweep.kind, buckets })
}

/// Empirical CoT of one rollout per sample against the model's prediction
/// on the same heightfield. Buckets whose success rate is below
/// `viability_cutoff` are marked omitted.
pub fn run_cot_curve(
    sweep: &SweepConfig,
    dg: &DatagenConfig,
    skill: &SkillProfile,
    model: &CnnModel,
    viability_cutoff: f64,
) -> Result<CurveResult, EvalError> {
    sweep.validate()?;
    dg.validate()?;
    check_head(model, HeadKind::Linear)?;
    if !(0.0..=1.0).contains(&viability_cutoff) {
        return Err(EvalError::Config("viability cutoff must lie in [0, 1]".into()));
    }
    let fields = sweep_fields(sweep, dg)?;
    let spawns = sweep_spawns(sweep, dg, &fields)?;
    let mut buckets = Vec::new();
    for (field, h) in fields.iter().zip(sweep.heights()) {
        let mut labels = Vec::new();
        let mut hfs: Vec<Heightfield> = Vec::new();
        for (i, &(x, y, yaw)) in spawns.iter().enumerate() {
            let pose = field.pose_at(x, y, yaw);
            if let Some(s) =
                collect_cot_sample(field, skill, &pose, &dg.robot, dg.noise_amplitude, sample_seed(sweep, i))?
            {
                labels.push(s.label);
                hfs.push(s.heightfield);
            }
        }
        let refs: Vec<&Heightfield> = hfs.iter().collect();
        let predicted = model.predict_batch(&refs)?;
        let success = labels.len() as f64 / spawns.len() as f64;
        let (em, es) = mean_std(&labels);
        let (pm, ps) = mean_std(&predicted);
        buckets.push(CurveBucket {
            height: h,
            count: spawns.len(),
            measured: labels.len(),
            empirical_mean: em,
            empirical_std: es,
            predicted_mean: pm,
            predicted_std: ps,
            crash_fraction: 1.0 - success,
            omitted: success < viability_cutoff || labels.is_empty(),
        });
    }
    Ok(CurveResult { kind: CurveKind::Cot, skill: skill.name.clone(), terrain: sweep.kind, buckets })
}

/// The stair family a skill is swept on: descending skills on stairs down,
/// everything else on stairs up.
pub fn sweep_family(skill: &SkillProfile) -> TerrainKind {
    if skill.max_descend > skill.max_ascend {
        TerrainKind::StairsDown
    } else {
        TerrainKind::StairsUp
    }
}

#[cfg(test)]
mod tests;
