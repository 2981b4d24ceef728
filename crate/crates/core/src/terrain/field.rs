use super::{Pose2p5D, TerrainError, TerrainKind, TerrainSpec};
use crate::rng::{derive, lattice_unit};

/// Depth of gap trenches below the surrounding surface.
pub const GAP_DEPTH: f64 = 1.0;

const EXPORT_RESOLUTION: f64 = 0.02;
/// Sampling step for line-of-sight tests over non-profile surfaces.
const RAY_STEP: f64 = 0.05;

/// Piecewise-constant elevation along x: `heights[i]` holds on
/// `[edges[i-1], edges[i])`, with `heights[0]` before the first edge.
#[derive(Debug, Clone, PartialEq)]
struct Profile {
    edges: Vec<f64>,
    heights: Vec<f64>,
}

impl Profile {
    fn constant(h: f64) -> Self {
        Self { edges: Vec::new(), heights: vec![h] }
    }

    fn at(&self, x: f64) -> f64 {
        self.heights[self.edges.partition_point(|&e| e <= x)]
    }

    fn push(&mut self, edge: f64, height: f64) {
        if let Some(&last) = self.edges.last() {
            if edge <= last {
                // Zero-length segment: overwrite the previous level.
                *self.heights.last_mut().unwrap() = height;
                return;
            }
        }
        self.edges.push(edge);
        self.heights.push(height);
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Surface {
    Profile(Profile),
    ValueNoise { amplitude: f64, cell: f64, seed: u64 },
    Blocks { max_height: f64, size: f64, seed: u64 },
}

/// Total elevation function over `[0, extent.0] x [0, extent.1]`; queries
/// outside are clamped to the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainField {
    pub spec: TerrainSpec,
    /// Raster spacing used when the field is exported.
    pub resolution: f64,
    surface: Surface,
}

pub fn generate_terrain(spec: &TerrainSpec) -> Result<TerrainField, TerrainError> {
    spec.validate()?;
    let length = spec.extent.0;
    let surface = match spec.kind {
        TerrainKind::Flat => Surface::Profile(Profile::constant(0.0)),
        TerrainKind::StairsUp | TerrainKind::StairsDown => {
            let sign = if spec.kind == TerrainKind::StairsUp { 1.0 } else { -1.0 };
            let mut p = Profile::constant(0.0);
            let mut k = 1u32;
            loop {
                let edge = spec.feature_start + k as f64 * spec.step_depth;
                if edge >= length || spec.feature_count.is_some_and(|n| k > n) {
                    break;
                }
                p.push(edge, sign * spec.step_height * k as f64);
                k += 1;
            }
            Surface::Profile(p)
        }
        TerrainKind::Wall => Surface::Profile(periodic(spec, spec.obstacle_size, spec.wall_height)),
        TerrainKind::Gap => Surface::Profile(periodic(spec, spec.gap_width, -GAP_DEPTH)),
        TerrainKind::Rough => Surface::ValueNoise {
            amplitude: spec.roughness_amplitude,
            cell: spec.obstacle_size,
            seed: derive(spec.seed, &[1]),
        },
        TerrainKind::Discrete => Surface::Blocks {
            max_height: spec.step_height,
            size: spec.obstacle_size,
            seed: derive(spec.seed, &[2]),
        },
    };
    Ok(TerrainField { spec: spec.clone(), resolution: EXPORT_RESOLUTION, surface })
}

/// Features of `width` raised to `level`, starting at `feature_start` and
/// repeating every `step_depth`.
fn periodic(spec: &TerrainSpec, width: f64, level: f64) -> Profile {
    let mut p = Profile::constant(0.0);
    if width <= 0.0 || level == 0.0 {
        return p;
    }
    let length = spec.extent.0;
    let mut k = 0u32;
    loop {
        if spec.feature_count.is_some_and(|n| k >= n) {
            break;
        }
        let start = spec.feature_start + k as f64 * spec.step_depth;
        if start >= length {
            break;
        }
        p.push(start, level);
        let end = start + width;
        let next = start + spec.step_depth;
        let last = spec.feature_count.is_some_and(|n| k + 1 >= n) || next >= length;
        if end < next || last {
            p.push(end, 0.0);
        }
        k += 1;
    }
    p
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl TerrainField {
    pub fn extent(&self) -> (f64, f64) {
        self.spec.extent
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.spec.extent.0).contains(&x) && (0.0..=self.spec.extent.1).contains(&y)
    }

    pub fn elevation(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, self.spec.extent.0);
        let y = y.clamp(0.0, self.spec.extent.1);
        match &self.surface {
            Surface::Profile(p) => p.at(x),
            Surface::ValueNoise { amplitude, cell, seed } => {
                let (gx, gy) = (x / cell, y / cell);
                let (i, j) = (gx.floor(), gy.floor());
                let (tx, ty) = (smooth(gx - i), smooth(gy - j));
                let (i, j) = (i as i64, j as i64);
                let v = |a, b| 2.0 * lattice_unit(*seed, a, b) - 1.0;
                let top = v(i, j) * (1.0 - tx) + v(i + 1, j) * tx;
                let bottom = v(i, j + 1) * (1.0 - tx) + v(i + 1, j + 1) * tx;
                amplitude * (top * (1.0 - ty) + bottom * ty)
            }
            Surface::Blocks { max_height, size, seed } => {
                let u = lattice_unit(*seed, (x / size).floor() as i64, (y / size).floor() as i64);
                // Roughly a third of the blocks stay at ground level.
                if u < 0.3 {
                    0.0
                } else {
                    max_height * (u - 0.3) / 0.7
                }
            }
        }
    }

    /// True when the terrain rises above the straight segment `from -> to`
    /// anywhere strictly between its endpoints.
    pub fn occludes(&self, from: (f64, f64, f64), to: (f64, f64, f64)) -> bool {
        const EPS: f64 = 1e-9;
        let ray_z = |s: f64| from.2 + s * (to.2 - from.2);
        match &self.surface {
            Surface::Profile(p) => {
                // Terrain is constant between edges and the ray is linear, so
                // the largest excess over the ray occurs at a crossed edge.
                let x0 = from.0.clamp(0.0, self.spec.extent.0);
                let x1 = to.0.clamp(0.0, self.spec.extent.0);
                if x0 == x1 {
                    return false;
                }
                let (lo, hi) = if x0 < x1 { (x0, x1) } else { (x1, x0) };
                let first = p.edges.partition_point(|&e| e <= lo);
                let last = p.edges.partition_point(|&e| e < hi);
                (first..last).any(|i| {
                    let s = (p.edges[i] - x0) / (x1 - x0);
                    s > 0.0 && s < 1.0 && p.heights[i].max(p.heights[i + 1]) > ray_z(s) + EPS
                })
            }
            _ => {
                let dist = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
                let n = (dist / RAY_STEP).ceil().max(1.0) as usize;
                (1..n).any(|k| {
                    let s = k as f64 / n as f64;
                    self.elevation(from.0 + s * (to.0 - from.0), from.1 + s * (to.1 - from.1)) > ray_z(s) + EPS
                })
            }
        }
    }

    /// Pose at `(x, y)` standing on the terrain.
    pub fn pose_at(&self, x: f64, y: f64, yaw: f64) -> Pose2p5D {
        Pose2p5D::new(x, y, self.elevation(x, y), yaw)
    }

    /// Elevation raster at `resolution`: one row per y sample, one column per x.
    pub fn rasterize(&self) -> Vec<Vec<f64>> {
        let nx = (self.spec.extent.0 / self.resolution).round() as usize + 1;
        let ny = (self.spec.extent.1 / self.resolution).round() as usize + 1;
        (0..ny)
            .map(|j| (0..nx).map(|i| self.elevation(i as f64 * self.resolution, j as f64 * self.resolution)).collect())
            .collect()
    }
}

/// Assembles an x-only course such as flat, stairs, flat.
#[derive(Debug, Clone)]
pub struct CourseBuilder {
    profile: Profile,
    cursor: f64,
    level: f64,
    width: f64,
}

impl CourseBuilder {
    pub fn new(width: f64) -> Self {
        Self { profile: Profile::constant(0.0), cursor: 0.0, level: 0.0, width }
    }

    pub fn length(&self) -> f64 {
        self.cursor
    }

    pub fn flat(mut self, length: f64) -> Self {
        self.cursor += length;
        self
    }

    /// `count` steps of signed `rise`, each `depth` long.
    pub fn stairs(mut self, rise: f64, depth: f64, count: u32) -> Self {
        for _ in 0..count {
            self.level += rise;
            self.profile.push(self.cursor, self.level);
            self.cursor += depth;
        }
        self
    }

    pub fn wall(mut self, height: f64, thickness: f64) -> Self {
        self.profile.push(self.cursor, self.level + height);
        self.cursor += thickness;
        self.profile.push(self.cursor, self.level);
        self
    }

    pub fn gap(mut self, width: f64) -> Self {
        self.profile.push(self.cursor, self.level - GAP_DEPTH);
        self.cursor += width;
        self.profile.push(self.cursor, self.level);
        self
    }

    /// Finish the course; `summary` describes its dominant feature and its
    /// extent is replaced by the course dimensions.
    pub fn build(self, mut summary: TerrainSpec) -> TerrainField {
        summary.extent = (self.cursor, self.width);
        TerrainField { spec: summary, resolution: EXPORT_RESOLUTION, surface: Surface::Profile(self.profile) }
    }
}
