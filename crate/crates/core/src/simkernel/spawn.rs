use crate::terrain::{Pose2p5D, TerrainField};

/// Nominal foot placements in the body frame (forward, left).
pub(crate) const FEET: [(f64, f64); 4] = [(0.3, 0.2), (0.3, -0.2), (-0.3, 0.2), (-0.3, -0.2)];
/// Half-distance between the support samples taken around each foot.
const FOOT_PROBE: f64 = 0.03;
/// Largest local support slope (rise over run) a foot settles on.
const SUPPORT_SLOPE_LIMIT: f64 = 1.0;
/// Allowed gap between the settled and the requested base height.
const HEIGHT_TOLERANCE: f64 = 0.05;
/// Largest settled roll; steeper stances slide and twist away from the
/// requested yaw.
const ROLL_LIMIT: f64 = 0.35;
/// Terrain this far above the settled support under the body is a collision.
pub const BODY_CLEARANCE: f64 = 0.35;
const BODY_HALF_LENGTH: f64 = 0.35;
const BODY_HALF_WIDTH: f64 = 0.2;

/// Result of the synthetic one-second settling check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnCheck {
    pub support_ok: bool,
    pub height_ok: bool,
    pub yaw_ok: bool,
    pub clearance_ok: bool,
}

impl SpawnCheck {
    pub fn evaluate(field: &TerrainField, pose: &Pose2p5D) -> Self {
        let (c, s) = pose.heading();
        let mut feet_h = [0.0; 4];
        let mut support_ok = true;
        for (h, &(fwd, left)) in feet_h.iter_mut().zip(FEET.iter()) {
            let (fx, fy) = pose.to_world(fwd, left);
            *h = field.elevation(fx, fy);
            let probes = [
                field.elevation(fx + FOOT_PROBE * c, fy + FOOT_PROBE * s),
                field.elevation(fx - FOOT_PROBE * c, fy - FOOT_PROBE * s),
                field.elevation(fx - FOOT_PROBE * s, fy + FOOT_PROBE * c),
                field.elevation(fx + FOOT_PROBE * s, fy - FOOT_PROBE * c),
            ];
            let lo = probes.iter().fold(*h, |a, &b| a.min(b));
            let hi = probes.iter().fold(*h, |a, &b| a.max(b));
            if (hi - lo) / (2.0 * FOOT_PROBE) > SUPPORT_SLOPE_LIMIT {
                support_ok = false;
            }
        }
        let settled = feet_h.iter().sum::<f64>() / 4.0;
        let desired = field.elevation(pose.x, pose.y);
        let height_ok = (settled - desired).abs() <= HEIGHT_TOLERANCE;

        let left = (feet_h[0] + feet_h[2]) / 2.0;
        let right = (feet_h[1] + feet_h[3]) / 2.0;
        let roll = ((left - right) / (2.0 * FEET[0].1)).atan();
        let yaw_ok = roll.abs() <= ROLL_LIMIT;

        let mut clearance_ok = true;
        let steps_l = (2.0 * BODY_HALF_LENGTH / 0.05).round() as usize;
        let steps_w = (2.0 * BODY_HALF_WIDTH / 0.1).round() as usize;
        'body: for i in 0..=steps_l {
            let fwd = -BODY_HALF_LENGTH + i as f64 * 0.05;
            for j in 0..=steps_w {
                let lat = -BODY_HALF_WIDTH + j as f64 * 0.1;
                let (bx, by) = pose.to_world(fwd, lat);
                if field.elevation(bx, by) - settled > BODY_CLEARANCE {
                    clearance_ok = false;
                    break 'body;
                }
            }
        }
        Self { support_ok, height_ok, yaw_ok, clearance_ok }
    }

    pub fn passed(&self) -> bool {
        self.support_ok && self.height_ok && self.yaw_ok && self.clearance_ok
    }
}

/// Settling check: every foot on locally flat support, the settled base
/// within 5 cm of the requested height, no roll large enough to twist the
/// yaw, and nothing under the body above the clearance.
pub fn validate_spawn(field: &TerrainField, pose: &Pose2p5D) -> bool {
    field.contains(pose.x, pose.y) && SpawnCheck::evaluate(field, pose).passed()
}
