//! Labeled dataset collection: heightfields paired with empirical viability
//! (success rate over repeated rollouts) or cost of transport (one
//! successful rollout).

mod format;

use std::f64::consts::FRAC_PI_4;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::rng::{derive, derived_stream, stream};
use crate::simkernel::{
    compute_cot, rollout, validate_spawn, KernelError, Outcome, RobotParams, SkillId, SkillProfile, WARMUP_SECONDS,
};
use crate::terrain::{
    extract_heightfield, forward_fill, generate_terrain, inject_noise, normalize, Heightfield, Pose2p5D, TerrainError,
    TerrainField, TerrainKind, TerrainSpec, NOISE_AMPLITUDE,
};

pub use format::{read_dataset, write_dataset, DATASET_FORMAT_VERSION};

/// Spawn draws before a terrain is declared untenable.
pub const SPAWN_RETRIES: usize = 100;

// Stream tags for per-sample randomness.
const TAG_TERRAIN: u64 = 1;
const TAG_SPAWN: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_ROLLOUT: u64 = 4;
const TAG_DIFFICULTY: u64 = 5;
const TAG_ASSIGN: u64 = 0x5eed_a551;
const TAG_SPLIT: u64 = 0x5eed_5b17;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("no valid spawn pose after {attempts} attempts on {terrain}")]
    RetriesExhausted { attempts: usize, terrain: String },
    #[error("invalid datagen config: {0}")]
    Config(String),
    #[error("malformed dataset at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("dataset format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for DatagenError {
    fn from(e: ConfigError) -> Self {
        DatagenError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Viability,
    Cot,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Viability => "viability",
            DatasetKind::Cot => "cot",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "viability" => Ok(DatasetKind::Viability),
            "cot" => Ok(DatasetKind::Cot),
            other => Err(format!("unknown dataset kind `{other}`")),
        }
    }
}

/// Summary of the terrain a sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainMeta {
    pub kind: TerrainKind,
    pub difficulty: f64,
}

/// One labeled heightfield: viability in `[0, 1]` or a non-negative cost of
/// transport, depending on the dataset kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub heightfield: Heightfield,
    pub label: f64,
    pub skill_id: SkillId,
    pub terrain: TerrainMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub skill_id: SkillId,
    pub master_seed: u64,
    pub samples: Vec<Sample>,
    /// Sorted, disjoint, and together covering every sample index.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn new(kind: DatasetKind, skill_id: SkillId, master_seed: u64, samples: Vec<Sample>) -> Self {
        let (train, test) = split_indices(samples.len(), master_seed);
        Self { kind, skill_id, master_seed, samples, train, test }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Seeded 90/10 split.
pub fn split_indices(n: usize, master_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived_stream(master_seed, &[TAG_SPLIT]));
    let n_test = (n as f64 * 0.1).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// One terrain family in the collection mix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixEntry {
    pub kind: TerrainKind,
    pub weight: f64,
    pub min_difficulty: f64,
    pub max_difficulty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatagenConfig {
    pub rollouts_per_sample: usize,
    pub yaw_spread: f64,
    pub noise_amplitude: f64,
    pub extent: (f64, f64),
    /// Spawn positions keep this far from the back, front and side edges.
    pub margin_back: f64,
    pub margin_front: f64,
    pub margin_side: f64,
    pub step_depth: f64,
    pub stairs_start: f64,
    /// Position of the single wall or gap on those families.
    pub obstacle_start: f64,
    pub wall_thickness: f64,
    pub block_size: f64,
    /// Draws allowed per cost-of-transport slot before giving up.
    pub cot_attempts: usize,
    pub mix: Vec<MixEntry>,
    pub robot: RobotParams,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        let entry = |kind, weight, min_difficulty, max_difficulty| MixEntry { kind, weight, min_difficulty, max_difficulty };
        Self {
            rollouts_per_sample: 10,
            yaw_spread: FRAC_PI_4,
            noise_amplitude: NOISE_AMPLITUDE,
            extent: (8.0, 4.0),
            margin_back: 1.5,
            margin_front: 2.5,
            margin_side: 1.5,
            step_depth: 0.3,
            stairs_start: 3.5,
            obstacle_start: 4.0,
            wall_thickness: 1.0,
            block_size: 0.4,
            cot_attempts: 1000,
            mix: vec![
                entry(TerrainKind::Flat, 0.1, 0.0, 0.0),
                entry(TerrainKind::Rough, 0.1, 0.0, 0.08),
                entry(TerrainKind::Discrete, 0.1, 0.0, 0.2),
                entry(TerrainKind::StairsUp, 0.25, 0.0, 0.32),
                entry(TerrainKind::StairsDown, 0.25, 0.0, 0.32),
                entry(TerrainKind::Wall, 0.1, 0.0, 0.8),
                entry(TerrainKind::Gap, 0.1, 0.0, 0.8),
            ],
            robot: RobotParams::default(),
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: &str| Err(DatagenError::Config(m.to_string()));
        if self.rollouts_per_sample == 0 {
            return bad("rollouts_per_sample must be at least 1");
        }
        if self.mix.is_empty() || self.mix.iter().any(|m| !(m.weight >= 0.0)) {
            return bad("terrain mix needs non-negative weights");
        }
        if !(self.mix.iter().map(|m| m.weight).sum::<f64>() > 0.0) {
            return bad("terrain mix weights sum to zero");
        }
        if self.mix.iter().any(|m| !(m.min_difficulty >= 0.0 && m.max_difficulty >= m.min_difficulty)) {
            return bad("difficulty ranges must satisfy 0 <= min <= max");
        }
        if self.extent.0 <= self.margin_back + self.margin_front || self.extent.1 <= 2.0 * self.margin_side {
            return bad("spawn margins leave no room inside the extent");
        }
        if self.cot_attempts == 0 {
            return bad("cot_attempts must be at least 1");
        }
        self.robot.validate()?;
        Ok(())
    }

    /// Read `datagen.*` and `robot.*`; the mix is replaced wholesale when any
    /// `datagen.mix.<kind>.weight` key is present.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self, DatagenError> {
        let d = Self::default();
        let g = |k: &str| format!("datagen.{k}");
        let mut c = Self {
            rollouts_per_sample: cfg.get_or(&g("rollouts_per_sample"), d.rollouts_per_sample)?,
            yaw_spread: cfg.get_or(&g("yaw_spread"), d.yaw_spread)?,
            noise_amplitude: cfg.get_or(&g("noise_amplitude"), d.noise_amplitude)?,
            extent: (cfg.get_or(&g("extent_x"), d.extent.0)?, cfg.get_or(&g("extent_y"), d.extent.1)?),
            margin_back: cfg.get_or(&g("margin_back"), d.margin_back)?,
            margin_front: cfg.get_or(&g("margin_front"), d.margin_front)?,
            margin_side: cfg.get_or(&g("margin_side"), d.margin_side)?,
            step_depth: cfg.get_or(&g("step_depth"), d.step_depth)?,
            stairs_start: cfg.get_or(&g("stairs_start"), d.stairs_start)?,
            obstacle_start: cfg.get_or(&g("obstacle_start"), d.obstacle_start)?,
            wall_thickness: cfg.get_or(&g("wall_thickness"), d.wall_thickness)?,
            block_size: cfg.get_or(&g("block_size"), d.block_size)?,
            cot_attempts: cfg.get_or(&g("cot_attempts"), d.cot_attempts)?,
            mix: d.mix.clone(),
            robot: RobotParams::from_kv(cfg)?,
        };
        if let Some(mix) = parse_mix(cfg, "datagen.mix", &d.mix)? {
            c.mix = mix;
        }
        c.validate()?;
        Ok(c)
    }

    /// The collection setup for one skill: a `skill.<name>.mix.*` section,
    /// when present, replaces the shared mix.
    pub fn for_skill(&self, cfg: &KvConfig, skill: &str) -> Result<Self, DatagenError> {
        let mut c = self.clone();
        if let Some(mix) = parse_mix(cfg, &format!("skill.{skill}.mix"), &Self::default().mix)? {
            c.mix = mix;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn write_kv(&self, cfg: &mut KvConfig) {
        let g = |k: &str| format!("datagen.{k}");
        cfg.set(&g("rollouts_per_sample"), self.rollouts_per_sample);
        cfg.set(&g("yaw_spread"), self.yaw_spread);
        cfg.set(&g("noise_amplitude"), self.noise_amplitude);
        cfg.set(&g("extent_x"), self.extent.0);
        cfg.set(&g("extent_y"), self.extent.1);
        cfg.set(&g("margin_back"), self.margin_back);
        cfg.set(&g("margin_front"), self.margin_front);
        cfg.set(&g("margin_side"), self.margin_side);
        cfg.set(&g("step_depth"), self.step_depth);
        cfg.set(&g("stairs_start"), self.stairs_start);
        cfg.set(&g("obstacle_start"), self.obstacle_start);
        cfg.set(&g("wall_thickness"), self.wall_thickness);
        cfg.set(&g("block_size"), self.block_size);
        cfg.set(&g("cot_attempts"), self.cot_attempts);
        for m in &self.mix {
            cfg.set(&format!("datagen.mix.{}.weight", m.kind), m.weight);
            cfg.set(&format!("datagen.mix.{}.min", m.kind), m.min_difficulty);
            cfg.set(&format!("datagen.mix.{}.max", m.kind), m.max_difficulty);
        }
    }

    /// A flat-only mix, handy for smoke runs.
    pub fn flat_only() -> Self {
        Self {
            mix: vec![MixEntry { kind: TerrainKind::Flat, weight: 1.0, min_difficulty: 0.0, max_difficulty: 0.0 }],
            ..Self::default()
        }
    }

    /// Terrain of `kind` at `difficulty` laid out as in collection.
    pub fn terrain_spec(&self, kind: TerrainKind, difficulty: f64, seed: u64) -> TerrainSpec {
        let mut spec = TerrainSpec {
            kind,
            step_depth: self.step_depth,
            obstacle_size: self.block_size,
            extent: self.extent,
            seed,
            ..TerrainSpec::default()
        };
        match kind {
            TerrainKind::StairsUp | TerrainKind::StairsDown => spec.feature_start = self.stairs_start,
            TerrainKind::Wall | TerrainKind::Gap => {
                spec.feature_start = self.obstacle_start;
                spec.feature_count = Some(1);
                spec.obstacle_size = self.wall_thickness;
            }
            _ => {}
        }
        spec.with_difficulty(difficulty)
    }
}

/// Mix entries under `prefix.<kind>.{weight,min,max}`; difficulty ranges
/// default to those in `defaults`.
fn parse_mix(cfg: &KvConfig, prefix: &str, defaults: &[MixEntry]) -> Result<Option<Vec<MixEntry>>, DatagenError> {
    let kinds = cfg.sections(prefix);
    if kinds.is_empty() {
        return Ok(None);
    }
    let mut mix = Vec::new();
    for name in kinds {
        let kind: TerrainKind = name.parse()?;
        let key = |f: &str| format!("{prefix}.{name}.{f}");
        let default = defaults.iter().find(|m| m.kind == kind);
        mix.push(MixEntry {
            kind,
            weight: cfg.require(&key("weight"))?,
            min_difficulty: cfg.get_or(&key("min"), default.map_or(0.0, |m| m.min_difficulty))?,
            max_difficulty: cfg.get_or(&key("max"), default.map_or(0.0, |m| m.max_difficulty))?,
        });
    }
    mix.sort_by_key(|m| m.kind);
    Ok(Some(mix))
}

/// One uniform `(x, y, yaw)` draw inside the spawn margins of `extent`.
pub fn spawn_candidate<R: Rng + ?Sized>(extent: (f64, f64), cfg: &DatagenConfig, rng: &mut R) -> (f64, f64, f64) {
    let (lx, ly) = extent;
    let x = rng.gen_range(cfg.margin_back..=(lx - cfg.margin_front).max(cfg.margin_back));
    let y = rng.gen_range(cfg.margin_side..=(ly - cfg.margin_side).max(cfg.margin_side));
    let yaw = if cfg.yaw_spread > 0.0 { rng.gen_range(-cfg.yaw_spread..=cfg.yaw_spread) } else { 0.0 };
    (x, y, yaw)
}

/// Draw uniform poses until one passes the settling check.
pub fn sample_spawn<R: Rng + ?Sized>(
    field: &TerrainField,
    cfg: &DatagenConfig,
    rng: &mut R,
) -> Result<Pose2p5D, DatagenError> {
    for _ in 0..SPAWN_RETRIES {
        let (x, y, yaw) = spawn_candidate(field.extent(), cfg, rng);
        let pose = field.pose_at(x, y, yaw);
        if validate_spawn(field, &pose) {
            return Ok(pose);
        }
    }
    Err(DatagenError::RetriesExhausted { attempts: SPAWN_RETRIES, terrain: describe(&field.spec) })
}

fn describe(spec: &TerrainSpec) -> String {
    format!("{} terrain (difficulty {}, seed {})", spec.kind, spec.difficulty(), spec.seed)
}

/// The robot's perception at `pose`: extract, perturb, fill, normalize.
pub fn observe<R: Rng + ?Sized>(
    field: &TerrainField,
    pose: &Pose2p5D,
    noise_amplitude: f64,
    rng: &mut R,
) -> Result<Heightfield, TerrainError> {
    let raw = extract_heightfield(field, pose)?;
    let noisy = inject_noise(&raw, noise_amplitude, rng);
    normalize(&forward_fill(&noisy)?)
}

fn meta(field: &TerrainField) -> TerrainMeta {
    TerrainMeta { kind: field.spec.kind, difficulty: field.spec.difficulty() }
}

/// Run `n` rollouts from one pose; the label is the fraction that reached
/// the target. Rollout `j` draws from `derived_stream(seed, &[j])`.
pub fn collect_viability_sample(
    field: &TerrainField,
    skill: &SkillProfile,
    pose: &Pose2p5D,
    n: usize,
    params: &RobotParams,
    noise_amplitude: f64,
    seed: u64,
) -> Result<Sample, DatagenError> {
    if n == 0 {
        return Err(DatagenError::Config("at least one rollout per sample".into()));
    }
    if !validate_spawn(field, pose) {
        return Err(KernelError::InvalidSpawn { x: pose.x, y: pose.y, yaw: pose.yaw }.into());
    }
    let heightfield = observe(field, pose, noise_amplitude, &mut derived_stream(seed, &[TAG_NOISE]))?;
    let successes = success_count(field, skill, pose, n, params, seed)?;
    Ok(Sample { heightfield, label: successes as f64 / n as f64, skill_id: skill.id, terrain: meta(field) })
}

/// Rollouts that reached the target out of `n` from `pose`.
pub fn success_count(
    field: &TerrainField,
    skill: &SkillProfile,
    pose: &Pose2p5D,
    n: usize,
    params: &RobotParams,
    seed: u64,
) -> Result<usize, DatagenError> {
    let mut successes = 0;
    for j in 0..n {
        let trace = rollout(field, skill, pose, params, &mut derived_stream(seed, &[TAG_ROLLOUT, j as u64]))?;
        if trace.outcome == Outcome::ReachedTarget {
            successes += 1;
        }
    }
    Ok(successes)
}

/// One rollout; `None` unless it reached the target.
pub fn collect_cot_sample(
    field: &TerrainField,
    skill: &SkillProfile,
    pose: &Pose2p5D,
    params: &RobotParams,
    noise_amplitude: f64,
    seed: u64,
) -> Result<Option<Sample>, DatagenError> {
    let trace = rollout(field, skill, pose, params, &mut derived_stream(seed, &[TAG_ROLLOUT, 0]))?;
    if trace.outcome != Outcome::ReachedTarget {
        return Ok(None);
    }
    let label = compute_cot(&trace, params, WARMUP_SECONDS)?;
    let heightfield = observe(field, pose, noise_amplitude, &mut derived_stream(seed, &[TAG_NOISE]))?;
    Ok(Some(Sample { heightfield, label, skill_id: skill.id, terrain: meta(field) }))
}

/// Per-family sample counts by largest remainder, in mix order.
pub fn family_counts(mix: &[MixEntry], size: usize) -> Vec<usize> {
    let total: f64 = mix.iter().map(|m| m.weight).sum();
    let quotas: Vec<f64> = mix.iter().map(|m| m.weight / total * size as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    // Stable sort keeps ties in mix order.
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(size - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Family index and difficulty for every slot: counts from
/// [`family_counts`], slots shuffled, and the `k`-th slot of a family drawn
/// from the `k`-th of its equal-width difficulty strata.
fn slot_plan(cfg: &DatagenConfig, size: usize, master_seed: u64) -> Vec<(usize, f64)> {
    let counts = family_counts(&cfg.mix, size);
    let mut families: Vec<usize> = counts.iter().enumerate().flat_map(|(f, &c)| std::iter::repeat(f).take(c)).collect();
    families.shuffle(&mut derived_stream(master_seed, &[TAG_ASSIGN]));
    let mut seen = vec![0usize; cfg.mix.len()];
    families
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let m = &cfg.mix[f];
            let k = seen[f];
            seen[f] += 1;
            let u: f64 = derived_stream(master_seed, &[i as u64, TAG_DIFFICULTY]).gen();
            let d = m.min_difficulty + (m.max_difficulty - m.min_difficulty) * (k as f64 + u) / counts[f] as f64;
            (f, d)
        })
        .collect()
}

/// Collect exactly `size` samples for `skill`. Slot `i` draws all of its
/// randomness from streams derived from `(master_seed, i, attempt)`, so the
/// result does not depend on collection order.
pub fn build_dataset(
    cfg: &DatagenConfig,
    kind: DatasetKind,
    skill: &SkillProfile,
    size: usize,
    master_seed: u64,
) -> Result<Dataset, DatagenError> {
    cfg.validate()?;
    skill.validate()?;
    if size == 0 {
        return Err(DatagenError::Config("dataset size must be at least 1".into()));
    }
    let plan = slot_plan(cfg, size, master_seed);
    let mut samples = Vec::with_capacity(size);
    for (i, &(family, difficulty)) in plan.iter().enumerate() {
        let i = i as u64;
        let entry = &cfg.mix[family];
        let sample = match kind {
            DatasetKind::Viability => {
                let seed = derive(master_seed, &[i, 0]);
                let field = generate_terrain(&cfg.terrain_spec(entry.kind, difficulty, derive(seed, &[TAG_TERRAIN])))?;
                let pose = sample_spawn(&field, cfg, &mut derived_stream(seed, &[TAG_SPAWN]))?;
                collect_viability_sample(&field, skill, &pose, cfg.rollouts_per_sample, &cfg.robot, cfg.noise_amplitude, seed)?
            }
            DatasetKind::Cot => cot_slot(cfg, entry, difficulty, skill, master_seed, i)?,
        };
        samples.push(sample);
    }
    Ok(Dataset::new(kind, skill.id, master_seed, samples))
}

/// Redraw terrain, spawn and (after the first attempt) difficulty until a
/// rollout succeeds.
fn cot_slot(
    cfg: &DatagenConfig,
    entry: &MixEntry,
    difficulty: f64,
    skill: &SkillProfile,
    master_seed: u64,
    i: u64,
) -> Result<Sample, DatagenError> {
    let mut last_spec = None;
    for attempt in 0..cfg.cot_attempts as u64 {
        let seed = derive(master_seed, &[i, attempt]);
        let d = if attempt == 0 {
            difficulty
        } else {
            stream(derive(seed, &[TAG_DIFFICULTY])).gen_range(entry.min_difficulty..=entry.max_difficulty)
        };
        let spec = cfg.terrain_spec(entry.kind, d, derive(seed, &[TAG_TERRAIN]));
        let field = generate_terrain(&spec)?;
        let pose = sample_spawn(&field, cfg, &mut derived_stream(seed, &[TAG_SPAWN]))?;
        if let Some(s) = collect_cot_sample(&field, skill, &pose, &cfg.robot, cfg.noise_amplitude, seed)? {
            return Ok(s);
        }
        last_spec = Some(spec);
    }
    Err(DatagenError::Config(format!(
        "no successful rollout for skill `{}` in {} attempts on {}",
        skill.name,
        cfg.cot_attempts,
        last_spec.map_or_else(|| entry.kind.to_string(), |s| describe(&s))
    )))
}

#[cfg(test)]
mod tests;
