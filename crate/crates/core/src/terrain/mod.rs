//! Procedural terrain and robot-frame heightfields.
//!
//! A [`TerrainField`] is a total elevation function over a rectangular extent
//! whose origin is the lower-left corner. Heightfields are sampled from it in
//! the robot's yaw-aligned frame and then pass through the transform chain
//! `extract -> inject_noise -> forward_fill -> normalize`.

mod field;
mod heightfield;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::config::{ConfigError, KvConfig};

pub use field::{generate_terrain, CourseBuilder, TerrainField, GAP_DEPTH};
pub use heightfield::{
    extract_heightfield, forward_fill, inject_noise, normalize, Heightfield, CELLS, CENTER_COL,
    BASE_HEIGHT, CENTER_ROW, COLS, NOISE_AMPLITUDE, ROWS, SENSOR_HEIGHT, SPACING,
};

#[derive(Debug, Error, PartialEq)]
pub enum TerrainError {
    #[error("invalid terrain spec: {0}")]
    InvalidSpec(String),
    #[error("pose ({x:.3}, {y:.3}) lies outside the terrain extent")]
    OutOfExtent { x: f64, y: f64 },
    #[error("center cell is occluded; fill before normalizing")]
    OccludedCenter,
    #[error("column {column} has an occluded cell with no visible cell behind it")]
    UnfillableColumn { column: usize },
    #[error("heightfield csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TerrainKind {
    Flat,
    Rough,
    Discrete,
    StairsUp,
    StairsDown,
    Gap,
    Wall,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 7] = [
        TerrainKind::Flat,
        TerrainKind::Rough,
        TerrainKind::Discrete,
        TerrainKind::StairsUp,
        TerrainKind::StairsDown,
        TerrainKind::Gap,
        TerrainKind::Wall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::Rough => "rough",
            TerrainKind::Discrete => "discrete",
            TerrainKind::StairsUp => "stairs_up",
            TerrainKind::StairsDown => "stairs_down",
            TerrainKind::Gap => "gap",
            TerrainKind::Wall => "wall",
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainKind {
    type Err = TerrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        TerrainKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| TerrainError::InvalidSpec(format!("unknown terrain kind `{s}`")))
    }
}

/// Generator parameters. Which fields matter depends on `kind`:
///
/// * stairs: `step_height`, `step_depth`, `feature_start`, `feature_count`
/// * rough: `roughness_amplitude` with lattice spacing `obstacle_size`
/// * discrete: blocks of side `obstacle_size`, heights up to `step_height`
/// * wall: walls `wall_height` tall and `obstacle_size` thick, repeating every
///   `step_depth` from `feature_start`
/// * gap: trenches `gap_width` wide, repeating like walls
///
/// `feature_count = None` repeats features to the end of the extent.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainSpec {
    pub kind: TerrainKind,
    pub step_height: f64,
    pub step_depth: f64,
    pub roughness_amplitude: f64,
    pub obstacle_size: f64,
    pub gap_width: f64,
    pub wall_height: f64,
    pub extent: (f64, f64),
    pub seed: u64,
    pub feature_start: f64,
    pub feature_count: Option<u32>,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            kind: TerrainKind::Flat,
            step_height: 0.0,
            step_depth: 0.3,
            roughness_amplitude: 0.0,
            obstacle_size: 0.4,
            gap_width: 0.0,
            wall_height: 0.0,
            extent: (8.0, 4.0),
            seed: 0,
            feature_start: 0.0,
            feature_count: None,
        }
    }
}

impl TerrainSpec {
    pub fn flat() -> Self {
        Self::default()
    }

    pub fn stairs(kind: TerrainKind, step_height: f64, step_depth: f64) -> Self {
        Self { kind, step_height, step_depth, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        let bad = |m: &str| Err(TerrainError::InvalidSpec(m.to_string()));
        let finite = [
            self.step_height,
            self.step_depth,
            self.roughness_amplitude,
            self.obstacle_size,
            self.gap_width,
            self.wall_height,
            self.extent.0,
            self.extent.1,
            self.feature_start,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if !(self.extent.0 > 0.0 && self.extent.1 > 0.0) {
            return bad("extent must be strictly positive");
        }
        if self.step_depth <= 0.0 {
            return bad("step_depth must be positive");
        }
        if self.step_height < 0.0 {
            return bad("step_height must be non-negative");
        }
        if self.roughness_amplitude < 0.0 || self.gap_width < 0.0 || self.wall_height < 0.0 {
            return bad("amplitudes and widths must be non-negative");
        }
        if self.obstacle_size <= 0.0 {
            return bad("obstacle_size must be positive");
        }
        Ok(())
    }

    /// The parameter a difficulty sweep varies for this kind.
    pub fn difficulty(&self) -> f64 {
        match self.kind {
            TerrainKind::Flat => 0.0,
            TerrainKind::Rough => self.roughness_amplitude,
            TerrainKind::Discrete | TerrainKind::StairsUp | TerrainKind::StairsDown => self.step_height,
            TerrainKind::Gap => self.gap_width,
            TerrainKind::Wall => self.wall_height,
        }
    }

    pub fn with_difficulty(mut self, value: f64) -> Self {
        match self.kind {
            TerrainKind::Flat => {}
            TerrainKind::Rough => self.roughness_amplitude = value,
            TerrainKind::Discrete | TerrainKind::StairsUp | TerrainKind::StairsDown => self.step_height = value,
            TerrainKind::Gap => self.gap_width = value,
            TerrainKind::Wall => self.wall_height = value,
        }
        self
    }

    pub fn write_kv(&self, cfg: &mut KvConfig, prefix: &str) {
        cfg.set(&format!("{prefix}.kind"), self.kind);
        cfg.set(&format!("{prefix}.step_height"), self.step_height);
        cfg.set(&format!("{prefix}.step_depth"), self.step_depth);
        cfg.set(&format!("{prefix}.roughness_amplitude"), self.roughness_amplitude);
        cfg.set(&format!("{prefix}.obstacle_size"), self.obstacle_size);
        cfg.set(&format!("{prefix}.gap_width"), self.gap_width);
        cfg.set(&format!("{prefix}.wall_height"), self.wall_height);
        cfg.set(&format!("{prefix}.extent_x"), self.extent.0);
        cfg.set(&format!("{prefix}.extent_y"), self.extent.1);
        cfg.set(&format!("{prefix}.seed"), self.seed);
        cfg.set(&format!("{prefix}.feature_start"), self.feature_start);
        if let Some(n) = self.feature_count {
            cfg.set(&format!("{prefix}.feature_count"), n);
        }
    }

    /// Read a spec from `prefix.*` keys; absent keys take their defaults.
    pub fn from_kv(cfg: &KvConfig, prefix: &str) -> Result<Self, TerrainError> {
        let d = Self::default();
        let key = |name: &str| format!("{prefix}.{name}");
        let kind = match cfg.raw(&key("kind")) {
            Some(s) => s.parse()?,
            None => d.kind,
        };
        let spec = Self {
            kind,
            step_height: cfg.get_or(&key("step_height"), d.step_height)?,
            step_depth: cfg.get_or(&key("step_depth"), d.step_depth)?,
            roughness_amplitude: cfg.get_or(&key("roughness_amplitude"), d.roughness_amplitude)?,
            obstacle_size: cfg.get_or(&key("obstacle_size"), d.obstacle_size)?,
            gap_width: cfg.get_or(&key("gap_width"), d.gap_width)?,
            wall_height: cfg.get_or(&key("wall_height"), d.wall_height)?,
            extent: (cfg.get_or(&key("extent_x"), d.extent.0)?, cfg.get_or(&key("extent_y"), d.extent.1)?),
            seed: cfg.get_or(&key("seed"), d.seed)?,
            feature_start: cfg.get_or(&key("feature_start"), d.feature_start)?,
            feature_count: cfg.get(&key("feature_count"))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Planar base pose with the ground height under the base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2p5D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose2p5D {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { x, y, z, yaw: wrap_angle(yaw) }
    }

    pub fn heading(&self) -> (f64, f64) {
        (self.yaw.cos(), self.yaw.sin())
    }

    /// Body-frame offset (forward, left) to world xy.
    pub fn to_world(&self, forward: f64, left: f64) -> (f64, f64) {
        let (c, s) = self.heading();
        (self.x + forward * c - left * s, self.y + forward * s + left * c)
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}
