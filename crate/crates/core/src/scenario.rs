//! Scenario data model and the line-delimited scenario file format.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::composite::GridLayout;
use crate::error::{CoreError, Result};
use crate::geometry::{pose_to_ego, Pose};
use crate::trajectory::PlannedTrajectory;

/// Number of detector classes; class ids live in `0..NUM_CLASSES`.
pub const NUM_CLASSES: u8 = 10;

/// Ego pose plus speed. Serialized as `[x, y, yaw, v]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v: f64,
}

impl EgoState {
    pub fn new(x: f64, y: f64, yaw: f64, v: f64) -> Self {
        Self { x, y, yaw, v }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.yaw)
    }
}

impl From<[f64; 4]> for EgoState {
    fn from([x, y, yaw, v]: [f64; 4]) -> Self {
        Self { x, y, yaw, v }
    }
}

impl From<EgoState> for [f64; 4] {
    fn from(s: EgoState) -> Self {
        [s.x, s.y, s.yaw, s.v]
    }
}

/// Agent tracks share the ego state layout: world pose plus speed along yaw.
pub type AgentState = EgoState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Road,
    Sidewalk,
    Crosswalk,
    Lane,
    TrafficSignal,
}

impl MapKind {
    pub fn is_drivable(self) -> bool {
        matches!(self, MapKind::Road | MapKind::Lane)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub kind: MapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u32,
    pub radius: f64,
    /// One state per scenario sample: `t_past` past frames (the last is the
    /// current time) followed by `T_future` future frames.
    pub track: Vec<AgentState>,
}

/// Axis-aligned box in composite-frame pixels. Serialized as `[x, y, w, h]`
/// with `(x, y)` the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// The five-value detection feature: class plus box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBoxFeature {
    pub class_id: u8,
    pub bbox: BBox,
}

/// A tracked detection over the past frames; `None` marks an occluded frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackedObject {
    pub track_id: u32,
    pub class_id: u8,
    pub frames: Vec<Option<BBox>>,
}

impl TrackedObject {
    pub fn feature(&self, frame: usize) -> Option<BBoxFeature> {
        self.frames[frame].map(|bbox| BBoxFeature {
            class_id: self.class_id,
            bbox,
        })
    }

    pub fn present_frames(&self) -> usize {
        self.frames.iter().filter(|f| f.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub dt: f64,
    pub t_past: usize,
    #[serde(rename = "T_future")]
    pub t_future: usize,
    pub map: Vec<MapElement>,
    pub agents: Vec<Agent>,
    pub detections: Vec<TrackedObject>,
    pub ego_history: Vec<EgoState>,
    /// Expert ground truth, world frame.
    pub ego_future: Vec<Pose>,
}

impl Scenario {
    pub fn current_ego(&self) -> &EgoState {
        self.ego_history
            .last()
            .expect("validated scenario has history")
    }

    /// Index of the current time inside agent tracks.
    pub fn current_index(&self) -> usize {
        self.t_past - 1
    }

    /// Expert future expressed in the ego frame at planning time.
    pub fn expert_trajectory(&self) -> PlannedTrajectory {
        let origin = self.current_ego().pose();
        PlannedTrajectory::new(
            self.dt,
            self.ego_future
                .iter()
                .map(|p| pose_to_ego(&origin, p))
                .collect(),
        )
    }

    /// Checks every type invariant. `composite_extent` is the side of the
    /// composite frame in pixels (3·S).
    pub fn validate(&self, composite_extent: f64) -> Result<()> {
        fn v(f: &str, m: impl Into<String>) -> CoreError {
            CoreError::validation(f, m)
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(v("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.t_past == 0 {
            return Err(v("t_past", "must be at least 1"));
        }
        if self.t_future == 0 {
            return Err(v("T_future", "must be at least 1"));
        }
        if self.ego_history.len() != self.t_past {
            return Err(v(
                "ego_history",
                format!(
                    "has {} states, t_past is {}",
                    self.ego_history.len(),
                    self.t_past
                ),
            ));
        }
        if self.ego_future.len() != self.t_future {
            return Err(v(
                "ego_future",
                format!(
                    "has {} poses, T_future is {}",
                    self.ego_future.len(),
                    self.t_future
                ),
            ));
        }
        for s in &self.ego_history {
            check_state(s, "ego_history")?;
        }
        for p in &self.ego_future {
            if !(p.x.is_finite() && p.y.is_finite() && p.yaw.is_finite()) {
                return Err(v("ego_future", "non-finite pose"));
            }
            check_yaw(p.yaw, "ego_future")?;
        }

        for m in &self.map {
            if m.points.len() < 2 {
                return Err(v("points", "map element needs at least two points"));
            }
            if m.points.iter().flatten().any(|c| !c.is_finite()) {
                return Err(v("points", "non-finite map point"));
            }
            if m.points.windows(2).any(|w| w[0] == w[1]) {
                return Err(v("points", "consecutive map points coincide"));
            }
            match (m.kind.is_drivable(), m.half_width) {
                (true, None) => {
                    return Err(v("half_width", format!("required for {:?}", m.kind)));
                }
                (_, Some(hw)) if !(hw.is_finite() && hw > 0.0) => {
                    return Err(v("half_width", format!("must be positive, got {hw}")));
                }
                _ => {}
            }
        }

        let mut agent_ids = HashSet::new();
        for a in &self.agents {
            if !agent_ids.insert(a.id) {
                return Err(v("id", format!("duplicate agent id {}", a.id)));
            }
            if !(a.radius.is_finite() && a.radius > 0.0) {
                return Err(v("radius", format!("must be positive, got {}", a.radius)));
            }
            if a.track.len() != self.t_past + self.t_future {
                return Err(v(
                    "track",
                    format!(
                        "agent {} has {} states, expected {}",
                        a.id,
                        a.track.len(),
                        self.t_past + self.t_future
                    ),
                ));
            }
            for s in &a.track {
                check_state(s, "track")?;
            }
        }

        let mut track_ids = HashSet::new();
        for d in &self.detections {
            if !track_ids.insert(d.track_id) {
                return Err(v("track_id", format!("duplicate track id {}", d.track_id)));
            }
            if d.class_id >= NUM_CLASSES {
                return Err(v("class_id", format!("{} is not in 0..=9", d.class_id)));
            }
            if d.frames.len() != self.t_past {
                return Err(v(
                    "frames",
                    format!("{} frames, t_past is {}", d.frames.len(), self.t_past),
                ));
            }
            if d.present_frames() == 0 {
                return Err(v(
                    "frames",
                    format!("track {} is never observed", d.track_id),
                ));
            }
            for b in d.frames.iter().flatten() {
                check_bbox(b, composite_extent)?;
            }
        }
        Ok(())
    }
}

fn check_yaw(yaw: f64, field: &str) -> Result<()> {
    if (-PI..PI).contains(&yaw) {
        Ok(())
    } else {
        Err(CoreError::validation(
            field,
            format!("yaw {yaw} not wrapped to [-pi, pi)"),
        ))
    }
}

fn check_state(s: &EgoState, field: &str) -> Result<()> {
    if ![s.x, s.y, s.yaw, s.v].iter().all(|c| c.is_finite()) {
        return Err(CoreError::validation(field, "non-finite state"));
    }
    check_yaw(s.yaw, field)?;
    if s.v < 0.0 {
        return Err(CoreError::validation(
            "v",
            format!("speed {} is negative", s.v),
        ));
    }
    Ok(())
}

fn check_bbox(b: &BBox, extent: f64) -> Result<()> {
    let fields = [("x", b.x), ("y", b.y), ("w", b.w), ("h", b.h)];
    for (name, value) in fields {
        if !value.is_finite() {
            return Err(CoreError::validation(name, "non-finite"));
        }
    }
    if b.w <= 0.0 {
        return Err(CoreError::validation(
            "w",
            format!("must be positive, got {}", b.w),
        ));
    }
    if b.h <= 0.0 {
        return Err(CoreError::validation(
            "h",
            format!("must be positive, got {}", b.h),
        ));
    }
    if b.x < 0.0 || b.x + b.w > extent {
        return Err(CoreError::validation(
            "x",
            format!("box leaves the composite frame [0, {extent})"),
        ));
    }
    if b.y < 0.0 || b.y + b.h > extent {
        return Err(CoreError::validation(
            "y",
            format!("box leaves the composite frame [0, {extent})"),
        ));
    }
    Ok(())
}

/// Loads a scenario file, validating detections against the default layout.
pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    load_scenarios_with(path, &GridLayout::default())
}

pub fn load_scenarios_with(path: impl AsRef<Path>, layout: &GridLayout) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
    parse_scenarios(BufReader::new(file), layout)
}

/// Parses one scenario per non-blank line.
pub fn parse_scenarios(reader: impl BufRead, layout: &GridLayout) -> Result<Vec<Scenario>> {
    let extent = layout.composite_extent();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CoreError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let scenario: Scenario = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        scenario.validate(extent).map_err(|e| match e {
            CoreError::Validation { field, message } => CoreError::Validation {
                field,
                message: format!("line {line_no} (scenario {}): {message}", scenario.id),
            },
            other => other,
        })?;
        out.push(scenario);
    }
    Ok(out)
}

pub fn save_scenarios(scenarios: &[Scenario], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_scenarios(scenarios, &mut w).map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}

pub fn write_scenarios(scenarios: &[Scenario], w: &mut impl Write) -> std::io::Result<()> {
    for s in scenarios {
        serde_json::to_writer(&mut *w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
