use serde::{Deserialize, Serialize};
use vcplan_numerics::Array;

use crate::geometry::{wrap_angle, Pose};

/// Future waypoints `(x, y, yaw)` in the ego frame at planning time, one per
/// `dt` seconds starting one step ahead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrajectory {
    pub dt: f64,
    pub waypoints: Vec<Pose>,
}

impl PlannedTrajectory {
    pub fn new(dt: f64, waypoints: Vec<Pose>) -> Self {
        Self { dt, waypoints }
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// `T × 3` matrix of `(x, y, yaw)` rows.
    pub fn to_array(&self) -> Array {
        let data = self
            .waypoints
            .iter()
            .flat_map(|p| [p.x, p.y, p.yaw])
            .collect();
        Array::matrix(self.len(), 3, data)
    }

    /// Reads a `T × 3` matrix back, wrapping yaw.
    pub fn from_array(dt: f64, a: &Array) -> Self {
        let waypoints = (0..a.rows())
            .map(|i| Pose::new(a.get(i, 0), a.get(i, 1), wrap_angle(a.get(i, 2))))
            .collect();
        Self { dt, waypoints }
    }
}
