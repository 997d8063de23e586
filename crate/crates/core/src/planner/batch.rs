use std::f64::consts::PI;

use vcplan_numerics::Array;

use super::config::{PlannerConfig, FEATURE_WIDTH};
use crate::error::Result;
use crate::geometry::{interpolate_polyline, pose_to_ego, to_ego_frame};
use crate::scenario::{MapKind, Scenario};

/// Element categories distinguished by the type embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Ego,
    Agent,
    MapRoad,
    MapSidewalk,
    MapCrosswalk,
    MapLane,
    MapSignal,
}

impl ElementKind {
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_map(kind: MapKind) -> Self {
        match kind {
            MapKind::Road => ElementKind::MapRoad,
            MapKind::Sidewalk => ElementKind::MapSidewalk,
            MapKind::Crosswalk => ElementKind::MapCrosswalk,
            MapKind::Lane => ElementKind::MapLane,
            MapKind::TrafficSignal => ElementKind::MapSignal,
        }
    }
}

/// One graph element: its raw node rows and which rows are present.
#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub kind: ElementKind,
    /// `n_points × 5`; absent rows are all zero.
    pub nodes: Array,
    pub mask: Vec<bool>,
}

impl Element {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn present(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Converts a scenario into planner elements: the ego history first, then one
/// element per tracked object, then one per map polyline. All positions are
/// in the ego frame at the current pose.
pub fn build_element_batch(scenario: &Scenario, config: &PlannerConfig) -> Result<Vec<Element>> {
    let origin = scenario.current_ego().pose();
    let cs = config.coord_scale;
    let ps = config.pixel_scale;
    let mut out = Vec::with_capacity(1 + scenario.detections.len() + scenario.map.len());

    let mut ego = Vec::with_capacity(scenario.ego_history.len() * FEATURE_WIDTH);
    for state in &scenario.ego_history {
        let p = pose_to_ego(&origin, &state.pose());
        ego.extend_from_slice(&[
            p.x / cs,
            p.y / cs,
            p.yaw / PI,
            state.v / config.speed_scale,
            0.0,
        ]);
    }
    out.push(Element {
        kind: ElementKind::Ego,
        nodes: Array::matrix(scenario.ego_history.len(), FEATURE_WIDTH, ego),
        mask: vec![true; scenario.ego_history.len()],
    });

    for track in &scenario.detections {
        let mut rows = Vec::with_capacity(track.frames.len() * FEATURE_WIDTH);
        let mut mask = Vec::with_capacity(track.frames.len());
        for frame in &track.frames {
            match frame {
                Some(b) => {
                    rows.extend_from_slice(&[
                        track.class_id as f64 / 10.0,
                        b.x / ps,
                        b.y / ps,
                        b.w / ps,
                        b.h / ps,
                    ]);
                    mask.push(true);
                }
                None => {
                    rows.extend_from_slice(&[0.0; FEATURE_WIDTH]);
                    mask.push(false);
                }
            }
        }
        out.push(Element {
            kind: ElementKind::Agent,
            nodes: Array::matrix(mask.len(), FEATURE_WIDTH, rows),
            mask,
        });
    }

    for element in &scenario.map {
        let pts = interpolate_polyline(&element.points, config.map_spacing)?;
        let mut rows = Vec::with_capacity(pts.len() * FEATURE_WIDTH);
        for p in &pts {
            let [x, y] = to_ego_frame(&origin, *p);
            rows.extend_from_slice(&[x / cs, y / cs, 0.0, 0.0, 0.0]);
        }
        out.push(Element {
            kind: ElementKind::from_map(element.kind),
            nodes: Array::matrix(pts.len(), FEATURE_WIDTH, rows),
            mask: vec![true; pts.len()],
        });
    }
    Ok(out)
}
