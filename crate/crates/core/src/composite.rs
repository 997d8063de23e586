//! The 3×3 composite camera grid and a synthetic detector that projects
//! world-frame agents into composite-frame boxes.
//!
//! Eight cameras fill every cell except the center. The left and right
//! middle cameras are rotated a quarter turn (counterclockwise and clockwise),
//! the rear row is turned upside down, and the front row is kept as is.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{to_ego_frame, wrap_angle};
use crate::scenario::{Agent, AgentState, BBox, EgoState, TrackedObject};

pub const DEFAULT_CELL_SIZE: u32 = 213;

/// Focal factor of the synthetic detector, in px·m.
pub const FOCAL: f64 = 150.0;
/// Agents farther than this are not detected.
pub const MAX_RANGE: f64 = 80.0;
/// Smallest apparent box side in pixels.
pub const MIN_BOX: f64 = 4.0;

const SECTOR: f64 = PI / 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Camera {
    FrontLeft,
    Front,
    FrontRight,
    Left,
    Right,
    RearLeft,
    Rear,
    RearRight,
}

impl Camera {
    pub const ALL: [Camera; 8] = [
        Camera::FrontLeft,
        Camera::Front,
        Camera::FrontRight,
        Camera::Left,
        Camera::Right,
        Camera::RearLeft,
        Camera::Rear,
        Camera::RearRight,
    ];

    /// Optical-axis bearing in the ego frame (counterclockwise from forward).
    pub fn bearing(self) -> f64 {
        match self {
            Camera::Front => 0.0,
            Camera::FrontLeft => SECTOR,
            Camera::Left => 2.0 * SECTOR,
            Camera::RearLeft => 3.0 * SECTOR,
            Camera::Rear => -PI,
            Camera::RearRight => -3.0 * SECTOR,
            Camera::Right => -2.0 * SECTOR,
            Camera::FrontRight => -SECTOR,
        }
    }

    /// Camera whose 45° sector contains `bearing`; the front sector is
    /// `[−22.5°, 22.5°)`.
    pub fn for_bearing(bearing: f64) -> Camera {
        let b = wrap_angle(bearing);
        let k = ((b + SECTOR / 2.0) / SECTOR).floor().rem_euclid(8.0) as usize;
        [
            Camera::Front,
            Camera::FrontLeft,
            Camera::Left,
            Camera::RearLeft,
            Camera::Rear,
            Camera::RearRight,
            Camera::Right,
            Camera::FrontRight,
        ][k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    None,
    Ccw90,
    Cw90,
    Inv180,
}

impl Rotation {
    pub fn inverse(self) -> Rotation {
        match self {
            Rotation::Ccw90 => Rotation::Cw90,
            Rotation::Cw90 => Rotation::Ccw90,
            r => r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSlot {
    pub camera: Camera,
    pub row: u8,
    pub col: u8,
    pub rotation: Rotation,
}

/// A box in one camera's own `S × S` frame, before rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraBBox {
    pub camera: Camera,
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub cell_size: u32,
    pub slots: Vec<CameraSlot>,
}

impl Default for GridLayout {
    fn default() -> Self {
        Self::standard(DEFAULT_CELL_SIZE)
    }
}

impl GridLayout {
    /// Front row front-left/front/front-right, middle row left/blank/right,
    /// rear row rear-left/rear/rear-right.
    pub fn standard(cell_size: u32) -> Self {
        use Camera::*;
        let slot = |camera, row, col, rotation| CameraSlot {
            camera,
            row,
            col,
            rotation,
        };
        Self {
            cell_size,
            slots: vec![
                slot(FrontLeft, 0, 0, Rotation::None),
                slot(Front, 0, 1, Rotation::None),
                slot(FrontRight, 0, 2, Rotation::None),
                slot(Left, 1, 0, Rotation::Ccw90),
                slot(Right, 1, 2, Rotation::Cw90),
                slot(RearLeft, 2, 0, Rotation::Inv180),
                slot(Rear, 2, 1, Rotation::Inv180),
                slot(RearRight, 2, 2, Rotation::Inv180),
            ],
        }
    }

    pub fn cell(&self) -> f64 {
        self.cell_size as f64
    }

    /// Side of the composite frame in pixels (3·S).
    pub fn composite_extent(&self) -> f64 {
        3.0 * self.cell()
    }

    pub fn slot(&self, camera: Camera) -> Result<&CameraSlot> {
        self.slots
            .iter()
            .find(|s| s.camera == camera)
            .ok_or_else(|| CoreError::Geometry(format!("camera {camera:?} has no cell")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::validation("layout", m));
        if self.cell_size == 0 {
            return bad("cell size must be positive".into());
        }
        if self.slots.len() != 8 {
            return bad(format!("expected 8 cameras, got {}", self.slots.len()));
        }
        let mut seen_cells = [[false; 3]; 3];
        for cam in Camera::ALL {
            let n = self.slots.iter().filter(|s| s.camera == cam).count();
            if n != 1 {
                return bad(format!("camera {cam:?} assigned {n} times"));
            }
        }
        for s in &self.slots {
            let (r, c) = (s.row as usize, s.col as usize);
            if r > 2 || c > 2 || (r, c) == (1, 1) {
                return bad(format!("{:?} placed in invalid cell ({r}, {c})", s.camera));
            }
            if std::mem::replace(&mut seen_cells[r][c], true) {
                return bad(format!("cell ({r}, {c}) used twice"));
            }
            let expected = match (r, c) {
                (0, _) => Rotation::None,
                (1, 0) => Rotation::Ccw90,
                (1, _) => Rotation::Cw90,
                _ => Rotation::Inv180,
            };
            if s.rotation != expected {
                return bad(format!(
                    "{:?} in cell ({r}, {c}) must use {expected:?}",
                    s.camera
                ));
            }
        }
        Ok(())
    }
}

fn check_in_frame(b: &BBox, s: f64) -> Result<()> {
    let tol = 1e-9 * s;
    let ok = b.w > 0.0
        && b.h > 0.0
        && b.x >= -tol
        && b.y >= -tol
        && b.x + b.w <= s + tol
        && b.y + b.h <= s + tol;
    if ok {
        Ok(())
    } else {
        Err(CoreError::Geometry(format!(
            "box {b:?} is not inside the {s}x{s} frame"
        )))
    }
}

/// Rotates a box within an `s × s` frame.
pub fn rotate_bbox(b: &BBox, rotation: Rotation, s: f64) -> Result<BBox> {
    check_in_frame(b, s)?;
    Ok(match rotation {
        Rotation::None => *b,
        Rotation::Ccw90 => BBox::new(b.y, s - b.x - b.w, b.h, b.w),
        Rotation::Cw90 => BBox::new(s - b.y - b.h, b.x, b.h, b.w),
        Rotation::Inv180 => BBox::new(s - b.x - b.w, s - b.y - b.h, b.w, b.h),
    })
}

/// Places a camera-frame box into the composite frame.
pub fn to_composite(layout: &GridLayout, cb: &CameraBBox) -> Result<BBox> {
    let slot = layout.slot(cb.camera)?;
    let s = layout.cell();
    let r = rotate_bbox(&cb.bbox, slot.rotation, s)?;
    Ok(BBox::new(
        r.x + slot.col as f64 * s,
        r.y + slot.row as f64 * s,
        r.w,
        r.h,
    ))
}

/// Synthetic detector: a sector camera model with apparent size ∝ 1/distance.
/// Returns `None` when the agent is out of range.
pub fn project_agent(
    ego: &EgoState,
    agent: &AgentState,
    radius: f64,
    layout: &GridLayout,
) -> Result<Option<CameraBBox>> {
    let [ex, ey] = to_ego_frame(&ego.pose(), [agent.x, agent.y]);
    let d = ex.hypot(ey);
    if d == 0.0 {
        return Err(CoreError::Geometry("agent coincides with the ego".into()));
    }
    if d > MAX_RANGE {
        return Ok(None);
    }
    let s = layout.cell();
    let bearing = wrap_angle(ey.atan2(ex));
    let camera = Camera::for_bearing(bearing);
    // Offset from the optical axis, measured clockwise so that objects on the
    // right of the axis land on the right of the image.
    let local = -wrap_angle(bearing - camera.bearing());
    let u = s * (local + SECTOR / 2.0) / SECTOR;
    let side = (FOCAL * 2.0 * radius / d).clamp(MIN_BOX, s);
    let v = (s * (0.5 + (0.8 / d).clamp(0.0, 0.45))).clamp(side / 2.0, s - side / 2.0);

    let x0 = (u - side / 2.0).max(0.0);
    let x1 = (u + side / 2.0).min(s);
    let y0 = (v - side / 2.0).max(0.0);
    let y1 = (v + side / 2.0).min(s);
    if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
        return Ok(None);
    }
    Ok(Some(CameraBBox {
        camera,
        bbox: BBox::new(x0, y0, x1 - x0, y1 - y0),
    }))
}

/// Detector class assigned to an agent of a given footprint radius
/// (pedestrian, bicycle, car, truck).
pub fn class_for_radius(radius: f64) -> u8 {
    if radius <= 0.5 {
        6
    } else if radius <= 0.75 {
        1
    } else if radius <= 1.1 {
        3
    } else {
        9
    }
}

/// Runs the synthetic detector over past frames. Frame `j` pairs
/// `ego_frames[j]` with `agent.track[track_offset + j]`. Agents never seen
/// are dropped.
pub fn detect_agents(
    agents: &[Agent],
    ego_frames: &[EgoState],
    track_offset: usize,
    layout: &GridLayout,
) -> Result<Vec<TrackedObject>> {
    let mut out = Vec::new();
    for agent in agents {
        let mut frames = Vec::with_capacity(ego_frames.len());
        for (j, ego) in ego_frames.iter().enumerate() {
            let state = agent.track.get(track_offset + j).ok_or_else(|| {
                CoreError::Contract(format!("agent {} track too short", agent.id))
            })?;
            let bbox = match project_agent(ego, state, agent.radius, layout)? {
                Some(cb) => Some(to_composite(layout, &cb)?),
                None => None,
            };
            frames.push(bbox);
        }
        if frames.iter().any(Option::is_some) {
            out.push(TrackedObject {
                track_id: agent.id,
                class_id: class_for_radius(agent.radius),
                frames,
            });
        }
    }
    Ok(out)
}
