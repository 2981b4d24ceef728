use std::fmt::Write as _;

use rand::Rng;

use super::{Pose2p5D, TerrainError, TerrainField};

pub const ROWS: usize = 31;
pub const COLS: usize = 11;
pub const CELLS: usize = ROWS * COLS;
/// Row 0 is 2 m ahead of the base; row 20 sits under the base.
pub const CENTER_ROW: usize = 20;
pub const CENTER_COL: usize = 5;
pub const SPACING: f64 = 0.1;
/// Nominal trunk height above the ground reference of a pose.
pub const BASE_HEIGHT: f64 = 0.5;
/// Sensor origin above the trunk, used for occlusion.
pub const SENSOR_HEIGHT: f64 = 0.5;
/// Half-width of the uniform per-cell height noise.
pub const NOISE_AMPLITUDE: f64 = 0.10;

/// 31x11 robot-frame elevation grid, row-major. Occluded cells hold `NaN`
/// and are flagged in `mask`.
#[derive(Debug, Clone)]
pub struct Heightfield {
    pub values: [f64; CELLS],
    pub mask: [bool; CELLS],
}

impl PartialEq for Heightfield {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &occluded)| occluded || a == b)
    }
}

impl Heightfield {
    pub fn from_values(values: [f64; CELLS]) -> Self {
        Self { values, mask: [false; CELLS] }
    }

    pub fn zeros() -> Self {
        Self::from_values([0.0; CELLS])
    }

    pub const fn index(row: usize, col: usize) -> usize {
        row * COLS + col
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[Self::index(row, col)]
    }

    pub fn is_occluded(&self, row: usize, col: usize) -> bool {
        self.mask[Self::index(row, col)]
    }

    pub fn occlude(&mut self, row: usize, col: usize) {
        let i = Self::index(row, col);
        self.mask[i] = true;
        self.values[i] = f64::NAN;
    }

    pub fn center(&self) -> f64 {
        self.get(CENTER_ROW, CENTER_COL)
    }

    pub fn occluded_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Forward offset of a row from the base in meters.
    pub fn row_offset(row: usize) -> f64 {
        (CENTER_ROW as f64 - row as f64) * SPACING
    }

    /// Leftward offset of a column from the base in meters.
    pub fn col_offset(col: usize) -> f64 {
        (CENTER_COL as f64 - col as f64) * SPACING
    }

    /// Add a constant to every visible cell.
    pub fn offset(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (v, &m) in out.values.iter_mut().zip(&self.mask) {
            if !m {
                *v += c;
            }
        }
        out
    }

    /// 31 lines of 11 comma-separated values; occluded cells print as `nan`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(CELLS * 8);
        for r in 0..ROWS {
            for c in 0..COLS {
                if c > 0 {
                    s.push(',');
                }
                if self.is_occluded(r, c) {
                    s.push_str("nan");
                } else {
                    let _ = write!(s, "{}", self.get(r, c));
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, TerrainError> {
        let mut hf = Self::zeros();
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.len() != ROWS {
            return Err(TerrainError::Csv(format!("expected {ROWS} rows, found {}", lines.len())));
        }
        for (r, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != COLS {
                return Err(TerrainError::Csv(format!("row {r}: expected {COLS} values, found {}", fields.len())));
            }
            for (c, f) in fields.iter().enumerate() {
                let f = f.trim();
                if f.eq_ignore_ascii_case("nan") {
                    hf.occlude(r, c);
                } else {
                    hf.values[Self::index(r, c)] =
                        f.parse().map_err(|_| TerrainError::Csv(format!("row {r} col {c}: bad value `{f}`")))?;
                }
            }
        }
        Ok(hf)
    }
}

/// Sample the 31x11 grid in the pose's yaw-aligned frame.
///
/// Cells ahead of the base are occluded when the segment from the sensor
/// (`SENSOR_HEIGHT` above a trunk standing `BASE_HEIGHT` over the ground
/// reference) to the cell surface dips
/// below the terrain. Cells at or behind the base row are always visible: the
/// ground the robot stands on or has passed is already mapped.
pub fn extract_heightfield(field: &TerrainField, pose: &Pose2p5D) -> Result<Heightfield, TerrainError> {
    if !field.contains(pose.x, pose.y) {
        return Err(TerrainError::OutOfExtent { x: pose.x, y: pose.y });
    }
    let sensor_z = pose.z + BASE_HEIGHT + SENSOR_HEIGHT;
    let mut hf = Heightfield::zeros();
    for r in 0..ROWS {
        let fwd = Heightfield::row_offset(r);
        for c in 0..COLS {
            let left = Heightfield::col_offset(c);
            let (wx, wy) = pose.to_world(fwd, left);
            let h = field.elevation(wx, wy);
            hf.values[Heightfield::index(r, c)] = h;
            if r < CENTER_ROW && field.occludes((pose.x, pose.y, sensor_z), (wx, wy, h)) {
                hf.occlude(r, c);
            }
        }
    }
    Ok(hf)
}

/// Perturb each visible cell by an independent draw from
/// `[-amplitude, amplitude)`. One draw is consumed per cell regardless of
/// the mask, so the noise pattern does not depend on occlusion.
pub fn inject_noise<R: Rng + ?Sized>(hf: &Heightfield, amplitude: f64, rng: &mut R) -> Heightfield {
    let mut out = hf.clone();
    for (v, &occluded) in out.values.iter_mut().zip(&hf.mask) {
        let u: f64 = rng.gen();
        if !occluded {
            *v += amplitude * (2.0 * u - 1.0);
        }
    }
    out
}

/// Subtract the center value from every visible cell.
pub fn normalize(hf: &Heightfield) -> Result<Heightfield, TerrainError> {
    if hf.is_occluded(CENTER_ROW, CENTER_COL) {
        return Err(TerrainError::OccludedCenter);
    }
    let center = hf.center();
    let mut out = hf.clone();
    for (v, &m) in out.values.iter_mut().zip(&hf.mask) {
        if !m {
            *v -= center;
        }
    }
    Ok(out)
}

/// Walk each column from the back row to the front row, replacing occluded
/// cells with the last visible value behind them.
pub fn forward_fill(hf: &Heightfield) -> Result<Heightfield, TerrainError> {
    let mut out = hf.clone();
    for c in 0..COLS {
        let mut last = None;
        for r in (0..ROWS).rev() {
            let i = Heightfield::index(r, c);
            if hf.mask[i] {
                out.values[i] = last.ok_or(TerrainError::UnfillableColumn { column: c })?;
                out.mask[i] = false;
            } else {
                last = Some(hf.values[i]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::terrain::{generate_terrain, TerrainKind, TerrainSpec};

    fn column(hf: &Heightfield, c: usize) -> Vec<f64> {
        (0..ROWS).rev().map(|r| hf.get(r, c)).collect()
    }

    #[test]
    fn geometry_constants() {
        assert_eq!(Heightfield::row_offset(0), 2.0);
        assert_eq!(Heightfield::row_offset(CENTER_ROW), 0.0);
        assert!((Heightfield::row_offset(ROWS - 1) + 1.0).abs() < 1e-12);
        assert!((Heightfield::col_offset(0) - 0.5).abs() < 1e-12);
        assert!((Heightfield::col_offset(COLS - 1) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_extraction_is_constant_and_visible() {
        let f = generate_terrain(&TerrainSpec::flat()).unwrap();
        for &(x, y, yaw) in &[(4.0, 2.0, 0.0), (1.3, 2.7, 2.1), (5.0, 1.0, -3.0)] {
            let hf = extract_heightfield(&f, &f.pose_at(x, y, yaw)).unwrap();
            assert_eq!(hf.occluded_count(), 0);
            assert!(hf.values.iter().all(|&v| v == 0.0));
            let n = normalize(&hf).unwrap();
            assert!(n.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ascending_step_raises_forward_rows() {
        // Edge at x = 2.0 with a 0.15 m rise; the base stands 0.5 m before it.
        let spec = TerrainSpec {
            feature_start: 1.5,
            feature_count: Some(1),
            step_depth: 0.5,
            ..TerrainSpec::stairs(TerrainKind::StairsUp, 0.15, 0.5)
        };
        let f = generate_terrain(&spec).unwrap();
        let hf = extract_heightfield(&f, &f.pose_at(1.5, 2.0, 0.0)).unwrap();
        for r in 0..ROWS {
            // Row r samples x = 1.5 + (20 - r) * 0.1; closed-form step sampling.
            let x = 1.5 + (CENTER_ROW as f64 - r as f64) * SPACING;
            let expected = if x >= 2.0 - 1e-9 { 0.15 } else { 0.0 };
            for c in 0..COLS {
                if !hf.is_occluded(r, c) {
                    assert!((hf.get(r, c) - expected).abs() < 1e-12, "row {r}");
                }
            }
        }
        assert!((hf.get(15, 5) - 0.15).abs() < 1e-12);
        assert_eq!(hf.get(16, 5), 0.0);
    }

    #[test]
    fn descending_edge_shadows_lower_tread() {
        // Base on the top landing with a 0.3 m drop located 0.45 m ahead.
        let spec = TerrainSpec {
            feature_start: 2.2,
            feature_count: Some(1),
            step_depth: 0.25,
            ..TerrainSpec::stairs(TerrainKind::StairsDown, 0.3, 0.25)
        };
        let f = generate_terrain(&spec).unwrap();
        let pose = f.pose_at(2.0, 2.0, 0.0);
        let hf = extract_heightfield(&f, &pose).unwrap();
        // Ray from (0, 1.0) to a cell at forward distance d on the lower
        // level (-0.3) passes the corner (0.45, 0) at height 1.0 - 1.3*0.45/d,
        // which is below the corner (occluded) iff d < 0.585.
        for r in 0..CENTER_ROW {
            let d = Heightfield::row_offset(r);
            let expected = if d <= 0.45 { false } else { d < 0.585 };
            // Skip grazing rays.
            if (d - 0.585).abs() < 0.03 {
                continue;
            }
            assert_eq!(hf.is_occluded(r, CENTER_COL), expected, "row {r} d {d}");
        }
        assert!(hf.occluded_count() > 0);
        let filled = forward_fill(&hf).unwrap();
        assert_eq!(filled.occluded_count(), 0);
    }

    #[test]
    fn out_of_extent_pose_rejected() {
        let f = generate_terrain(&TerrainSpec::flat()).unwrap();
        let pose = Pose2p5D::new(-1.0, 2.0, 0.0, 0.0);
        assert!(matches!(extract_heightfield(&f, &pose), Err(TerrainError::OutOfExtent { .. })));
    }

    #[test]
    fn zero_width_noise_is_identity() {
        let mut hf = Heightfield::zeros();
        hf.values[7] = 0.4;
        let out = inject_noise(&hf, 0.0, &mut stream(3));
        assert_eq!(out, hf);
    }

    #[test]
    fn noise_respects_support_and_mask() {
        let mut hf = Heightfield::zeros();
        hf.occlude(0, 0);
        let out = inject_noise(&hf, NOISE_AMPLITUDE, &mut stream(8));
        assert!(out.mask[0] && out.values[0].is_nan());
        assert!(out.values[1..].iter().all(|v| v.abs() <= NOISE_AMPLITUDE));
        assert!(out.values[1..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn noise_mean_converges() {
        // 10^6 draws per cell; the standard error is 0.1/sqrt(3e6) ~ 5.8e-5.
        let hf = Heightfield::zeros();
        let mut rng = stream(2024);
        let mut sums = [0.0f64; CELLS];
        let n = 1_000_000;
        for _ in 0..n {
            let out = inject_noise(&hf, NOISE_AMPLITUDE, &mut rng);
            for (s, v) in sums.iter_mut().zip(out.values.iter()) {
                *s += v;
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn normalize_examples() {
        let mut hf = Heightfield::zeros();
        hf.values[Heightfield::index(CENTER_ROW, CENTER_COL)] = 0.3;
        hf.values[0] = 0.5;
        let n = normalize(&hf).unwrap();
        assert!((n.values[0] - 0.2).abs() < 1e-15);
        assert_eq!(n.center(), 0.0);
        let same = Heightfield::from_values([0.7; CELLS]);
        assert!(normalize(&same).unwrap().values.iter().all(|&v| v == 0.0));
        let mut occ = Heightfield::zeros();
        occ.occlude(CENTER_ROW, CENTER_COL);
        assert_eq!(normalize(&occ), Err(TerrainError::OccludedCenter));
    }

    #[test]
    fn forward_fill_examples() {
        let mut hf = Heightfield::zeros();
        // Column 2, back to front: 0.0, occluded, 0.2, ...
        hf.values[Heightfield::index(28, 2)] = 0.2;
        hf.occlude(29, 2);
        // Column 4: 0.1 then occluded to the front.
        for r in 0..ROWS {
            hf.values[Heightfield::index(r, 4)] = 0.1;
        }
        for r in 0..ROWS - 1 {
            hf.occlude(r, 4);
        }
        let out = forward_fill(&hf).unwrap();
        assert_eq!(&column(&out, 2)[..3], &[0.0, 0.0, 0.2]);
        assert!(column(&out, 4).iter().all(|&v| v == 0.1));
        assert_eq!(out.occluded_count(), 0);

        let plain = Heightfield::from_values([0.25; CELLS]);
        assert_eq!(forward_fill(&plain).unwrap(), plain);

        let mut bad = Heightfield::zeros();
        bad.occlude(ROWS - 1, 7);
        assert_eq!(forward_fill(&bad), Err(TerrainError::UnfillableColumn { column: 7 }));
    }

    #[test]
    fn csv_round_trip() {
        let mut hf = Heightfield::zeros();
        hf.values[3] = -0.125;
        hf.values[200] = 1.0 / 3.0;
        hf.occlude(2, 2);
        let text = hf.to_csv();
        assert_eq!(text.lines().count(), ROWS);
        assert_eq!(Heightfield::from_csv(&text).unwrap(), hf);
        assert!(Heightfield::from_csv("1,2\n").is_err());
    }
}
