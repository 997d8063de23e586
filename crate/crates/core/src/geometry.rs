//! Planar rigid transforms and polyline utilities.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
pub use vcplan_numerics::wrap_angle;

/// A planar pose: position in meters and heading in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub const ORIGIN: Pose = Pose {
        x: 0.0,
        y: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 3]> for Pose {
    fn from([x, y, yaw]: [f64; 3]) -> Self {
        Self { x, y, yaw }
    }
}

impl From<Pose> for [f64; 3] {
    fn from(p: Pose) -> Self {
        [p.x, p.y, p.yaw]
    }
}

/// Expresses a world point in the frame of `origin` (x forward, y left).
pub fn to_ego_frame(origin: &Pose, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = origin.yaw.sin_cos();
    let dx = p[0] - origin.x;
    let dy = p[1] - origin.y;
    [c * dx + s * dy, -s * dx + c * dy]
}

pub fn from_ego_frame(origin: &Pose, p: [f64; 2]) -> [f64; 2] {
    let (s, c) = origin.yaw.sin_cos();
    [
        origin.x + c * p[0] - s * p[1],
        origin.y + s * p[0] + c * p[1],
    ]
}

pub fn pose_to_ego(origin: &Pose, pose: &Pose) -> Pose {
    let [x, y] = to_ego_frame(origin, pose.position());
    Pose::new(x, y, wrap_angle(pose.yaw - origin.yaw))
}

pub fn pose_from_ego(origin: &Pose, pose: &Pose) -> Pose {
    let [x, y] = from_ego_frame(origin, pose.position());
    Pose::new(x, y, wrap_angle(pose.yaw + origin.yaw))
}

pub fn polyline_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Resamples a polyline at uniform arc-length `spacing`, starting at the first
/// point. The last point is appended when it does not fall on the grid.
pub fn interpolate_polyline(points: &[[f64; 2]], spacing: f64) -> Result<Vec<[f64; 2]>> {
    if spacing.is_nan() || spacing <= 0.0 {
        return Err(CoreError::Geometry(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    if points.len() < 2 {
        return Err(CoreError::Geometry(
            "polyline needs at least two points".into(),
        ));
    }
    let total = polyline_length(points);
    if total.is_nan() || total <= 0.0 {
        return Err(CoreError::Geometry("polyline has zero length".into()));
    }
    let tol = 1e-9 * total.max(1.0);
    let steps = ((total + tol) / spacing).floor() as usize;

    let mut out = Vec::with_capacity(steps + 2);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for k in 0..=steps {
        let s = (k as f64 * spacing).min(total);
        loop {
            let (a, b) = (points[seg], points[seg + 1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if s <= seg_start + len || seg + 2 == points.len() {
                let t = if len > 0.0 {
                    ((s - seg_start) / len).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    let last = *points.last().expect("non-empty");
    if total - steps as f64 * spacing > tol {
        out.push(last);
    } else if let Some(end) = out.last_mut() {
        // Snap the on-grid endpoint exactly.
        *end = last;
    }
    Ok(out)
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

pub fn point_polyline_distance(p: [f64; 2], points: &[[f64; 2]]) -> f64 {
    match points {
        [] => f64::INFINITY,
        [single] => (p[0] - single[0]).hypot(p[1] - single[1]),
        _ => points
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}
