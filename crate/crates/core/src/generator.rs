//! Synthetic driving scenarios.
//!
//! Every scenario is laid out in a local road frame `(s, l)` (arc length along
//! the road, lateral offset to the left) and then placed in the world with a
//! random translation and heading. The ego starts in the right lane at
//! constant speed; agents follow scripted motions; detections come from the
//! synthetic detector in [`crate::composite`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composite::{detect_agents, GridLayout};
use crate::error::{CoreError, Result};
use crate::geometry::wrap_angle;
use crate::scenario::{Agent, AgentState, EgoState, MapElement, MapKind, Scenario};

pub const DT: f64 = 0.5;
pub const T_PAST: usize = 4;
pub const T_FUTURE: usize = 16;

pub const LANE_WIDTH: f64 = 3.75;
pub const EGO_RADIUS: f64 = 1.5;
/// Clearance the expert keeps from every agent beyond the footprint radii.
pub const EXPERT_MARGIN: f64 = 1.0;

const CAR_RADIUS: f64 = 1.0;
const PEDESTRIAN_RADIUS: f64 = 0.4;
const SIDEWALK_OFFSET: f64 = -(LANE_WIDTH / 2.0 + 1.5);
const MAP_BEGIN: f64 = -12.0;
const MAP_END: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    LeadBrake,
    Crosswalk,
    LaneChange,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Straight,
        ScenarioKind::LeadBrake,
        ScenarioKind::Crosswalk,
        ScenarioKind::LaneChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::LeadBrake => "lead_brake",
            ScenarioKind::Crosswalk => "crosswalk",
            ScenarioKind::LaneChange => "lane_change",
        }
    }

    fn salt(self) -> u64 {
        match self {
            ScenarioKind::Straight => 0x5354_5241,
            ScenarioKind::LeadBrake => 0x4c45_4144,
            ScenarioKind::Crosswalk => 0x4352_4f53,
            ScenarioKind::LaneChange => 0x4c41_4e45,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::validation("kind", format!("unknown scenario kind `{s}`")))
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn smoothstep_rate(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        6.0 * u * (1.0 - u)
    } else {
        0.0
    }
}

/// Longitudinal profile: constant speed, optionally braking to a stop with a
/// smoothstep speed ramp of duration `tau` starting at `onset`.
#[derive(Clone, Copy, Debug)]
struct Longitudinal {
    s0: f64,
    v0: f64,
    brake: Option<(f64, f64)>,
}

impl Longitudinal {
    fn cruise(s0: f64, v0: f64) -> Self {
        Self {
            s0,
            v0,
            brake: None,
        }
    }

    fn speed(&self, t: f64) -> f64 {
        match self.brake {
            Some((onset, tau)) => self.v0 * (1.0 - smoothstep((t - onset) / tau)),
            None => self.v0,
        }
    }

    fn position(&self, t: f64) -> f64 {
        match self.brake {
            Some((onset, tau)) if t > onset => {
                let u = ((t - onset) / tau).min(1.0);
                // ∫ (1 − 3u² + 2u³) τ du
                let braking = tau * (u - u.powi(3) + 0.5 * u.powi(4));
                self.s0 + self.v0 * (onset + braking)
            }
            _ => self.s0 + self.v0 * t,
        }
    }

    fn stop_position(&self) -> f64 {
        match self.brake {
            Some((onset, tau)) => self.s0 + self.v0 * (onset + 0.5 * tau),
            None => f64::INFINITY,
        }
    }
}

/// Lateral profile: constant offset, optionally shifting by `shift` with a
/// smoothstep over `tau` seconds starting at `onset`.
#[derive(Clone, Copy, Debug)]
struct Lateral {
    l0: f64,
    shift: Option<(f64, f64, f64)>,
}

impl Lateral {
    fn fixed(l0: f64) -> Self {
        Self { l0, shift: None }
    }

    fn offset(&self, t: f64) -> f64 {
        match self.shift {
            Some((onset, tau, d)) => self.l0 + d * smoothstep((t - onset) / tau),
            None => self.l0,
        }
    }

    fn rate(&self, t: f64) -> f64 {
        match self.shift {
            Some((onset, tau, d)) => d * smoothstep_rate((t - onset) / tau) / tau,
            None => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Motion {
    Road(Longitudinal, Lateral),
    /// Walk across the road (towards +l) from `(s, l0)` starting at `onset`.
    Crossing {
        s: f64,
        l0: f64,
        l1: f64,
        onset: f64,
        speed: f64,
    },
}

impl Motion {
    /// Local `(s, l, heading, speed)` at time `t`.
    fn local(&self, t: f64) -> (f64, f64, f64, f64) {
        match *self {
            Motion::Road(lon, lat) => {
                let vs = lon.speed(t);
                let vl = lat.rate(t);
                let heading = if vl == 0.0 { 0.0 } else { vl.atan2(vs) };
                (lon.position(t), lat.offset(t), heading, vs.hypot(vl))
            }
            Motion::Crossing {
                s,
                l0,
                l1,
                onset,
                speed,
            } => {
                let walked = (speed * (t - onset)).clamp(0.0, l1 - l0);
                let moving = t > onset && walked < l1 - l0;
                (s, l0 + walked, PI / 2.0, if moving { speed } else { 0.0 })
            }
        }
    }
}

/// Maps road-frame coordinates into the world.
#[derive(Clone, Copy, Debug)]
struct Placement {
    origin: [f64; 2],
    heading: f64,
}

impl Placement {
    fn point(&self, s: f64, l: f64) -> [f64; 2] {
        let (sin, cos) = self.heading.sin_cos();
        [
            self.origin[0] + cos * s - sin * l,
            self.origin[1] + sin * s + cos * l,
        ]
    }

    fn state(&self, (s, l, heading, v): (f64, f64, f64, f64)) -> AgentState {
        let [x, y] = self.point(s, l);
        EgoState::new(x, y, wrap_angle(self.heading + heading), v)
    }
}

struct Layout {
    ego: Motion,
    agents: Vec<(f64, Motion)>,
    extra_map: Vec<(MapKind, Option<f64>, Vec<[f64; 2]>)>,
}

fn sample_time(n: usize) -> f64 {
    (n as f64 - (T_PAST as f64 - 1.0)) * DT
}

fn straight(rng: &mut ChaCha8Rng) -> Layout {
    let v0 = rng.gen_range(3.5..6.0);
    let ego = Motion::Road(Longitudinal::cruise(0.0, v0), Lateral::fixed(0.0));
    let car = Motion::Road(
        Longitudinal::cruise(rng.gen_range(-8.0..25.0), rng.gen_range(2.0..7.0)),
        Lateral::fixed(LANE_WIDTH),
    );
    let walker = Motion::Road(
        Longitudinal::cruise(rng.gen_range(0.0..30.0), rng.gen_range(0.8..1.6)),
        Lateral::fixed(SIDEWALK_OFFSET),
    );
    Layout {
        ego,
        agents: vec![(CAR_RADIUS, car), (PEDESTRIAN_RADIUS, walker)],
        extra_map: vec![],
    }
}

fn lead_brake(rng: &mut ChaCha8Rng) -> Layout {
    let v0 = rng.gen_range(4.0..6.0);
    let gap = rng.gen_range(12.0..18.0);
    let lead_onset = rng.gen_range(0.5..1.5);
    let lead_tau = rng.gen_range(2.5..3.5);
    let lead = Longitudinal {
        s0: gap,
        v0,
        brake: Some((lead_onset, lead_tau)),
    };
    // Stop 7 m (center to center) behind the stopped lead.
    let target = lead.stop_position() - 7.0;
    let tau = lead_tau + 1.0;
    let onset = (target / v0 - 0.5 * tau).max(0.0);
    let ego = Motion::Road(
        Longitudinal {
            s0: 0.0,
            v0,
            brake: Some((onset, tau)),
        },
        Lateral::fixed(0.0),
    );
    let car = Motion::Road(
        Longitudinal::cruise(rng.gen_range(-10.0..20.0), rng.gen_range(3.0..7.0)),
        Lateral::fixed(LANE_WIDTH),
    );
    Layout {
        ego,
        agents: vec![
            (CAR_RADIUS, Motion::Road(lead, Lateral::fixed(0.0))),
            (CAR_RADIUS, car),
        ],
        extra_map: vec![],
    }
}

fn crosswalk(rng: &mut ChaCha8Rng) -> Layout {
    let v0 = rng.gen_range(4.0..6.0);
    let s_cross = rng.gen_range(20.0..28.0);
    let stop = s_cross - 4.5;
    let onset = rng.gen_range(0.0..1.0);
    let tau = 2.0 * (stop / v0 - onset);
    let ego = Motion::Road(
        Longitudinal {
            s0: 0.0,
            v0,
            brake: Some((onset, tau)),
        },
        Lateral::fixed(0.0),
    );
    let far_side = LANE_WIDTH * 1.5 + 1.5;
    let walker = Motion::Crossing {
        s: s_cross,
        l0: SIDEWALK_OFFSET,
        l1: far_side,
        onset: rng.gen_range(-1.0..1.0),
        speed: rng.gen_range(1.1..1.5),
    };
    let half = LANE_WIDTH / 2.0;
    Layout {
        ego,
        agents: vec![(PEDESTRIAN_RADIUS, walker)],
        extra_map: vec![
            (
                MapKind::Crosswalk,
                None,
                vec![[s_cross, SIDEWALK_OFFSET], [s_cross, far_side]],
            ),
            (
                MapKind::TrafficSignal,
                None,
                vec![[s_cross - 2.5, -half], [s_cross - 2.5, half]],
            ),
        ],
    }
}

fn lane_change(rng: &mut ChaCha8Rng) -> Layout {
    let v0 = rng.gen_range(4.5..6.0);
    let onset = rng.gen_range(0.0..1.0);
    let tau = rng.gen_range(3.0..4.0);
    let ego = Motion::Road(
        Longitudinal::cruise(0.0, v0),
        Lateral {
            l0: 0.0,
            shift: Some((onset, tau, LANE_WIDTH)),
        },
    );
    let slow = Motion::Road(
        Longitudinal::cruise(rng.gen_range(18.0..26.0), rng.gen_range(1.0..2.0)),
        Lateral::fixed(0.0),
    );
    let walker = Motion::Road(
        Longitudinal::cruise(rng.gen_range(0.0..30.0), rng.gen_range(0.8..1.6)),
        Lateral::fixed(SIDEWALK_OFFSET),
    );
    Layout {
        ego,
        agents: vec![(CAR_RADIUS, slow), (PEDESTRIAN_RADIUS, walker)],
        extra_map: vec![],
    }
}

fn expert_is_clear(layout: &Layout) -> bool {
    (0..T_PAST + T_FUTURE).all(|n| {
        let t = sample_time(n);
        let (es, el, _, _) = layout.ego.local(t);
        layout.agents.iter().all(|(r, m)| {
            let (s, l, _, _) = m.local(t);
            (s - es).hypot(l - el) >= EGO_RADIUS + r + EXPERT_MARGIN
        })
    })
}

fn base_map() -> Vec<(MapKind, Option<f64>, Vec<[f64; 2]>)> {
    let line = |l: f64| vec![[MAP_BEGIN, l], [MAP_END, l]];
    vec![
        (MapKind::Road, Some(LANE_WIDTH), line(LANE_WIDTH / 2.0)),
        (MapKind::Lane, Some(LANE_WIDTH / 2.0), line(0.0)),
        (MapKind::Lane, Some(LANE_WIDTH / 2.0), line(LANE_WIDTH)),
        (MapKind::Sidewalk, None, line(SIDEWALK_OFFSET)),
    ]
}

/// Deterministic in `(kind, seed)`; uses the default camera layout.
pub fn generate_scenario(kind: ScenarioKind, seed: u64) -> Scenario {
    generate_scenario_with(kind, seed, &GridLayout::default())
}

pub fn generate_scenario_with(kind: ScenarioKind, seed: u64, grid: &GridLayout) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt().rotate_left(17));
    let placement = Placement {
        origin: [rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)],
        heading: rng.gen_range(-PI..PI),
    };
    let layout = loop {
        let candidate = match kind {
            ScenarioKind::Straight => straight(&mut rng),
            ScenarioKind::LeadBrake => lead_brake(&mut rng),
            ScenarioKind::Crosswalk => crosswalk(&mut rng),
            ScenarioKind::LaneChange => lane_change(&mut rng),
        };
        if expert_is_clear(&candidate) {
            break candidate;
        }
    };

    let map = base_map()
        .into_iter()
        .chain(layout.extra_map.iter().cloned())
        .map(|(kind, half_width, pts)| MapElement {
            kind,
            half_width,
            points: pts.iter().map(|&[s, l]| placement.point(s, l)).collect(),
        })
        .collect();

    let ego_history: Vec<EgoState> = (0..T_PAST)
        .map(|n| placement.state(layout.ego.local(sample_time(n))))
        .collect();
    let ego_future = (T_PAST..T_PAST + T_FUTURE)
        .map(|n| placement.state(layout.ego.local(sample_time(n))).pose())
        .collect();
    let agents: Vec<Agent> = layout
        .agents
        .iter()
        .enumerate()
        .map(|(i, (radius, motion))| Agent {
            id: i as u32 + 1,
            radius: *radius,
            track: (0..T_PAST + T_FUTURE)
                .map(|n| placement.state(motion.local(sample_time(n))))
                .collect(),
        })
        .collect();
    let detections = detect_agents(&agents, &ego_history, 0, grid)
        .expect("expert keeps clear of agents, so no agent coincides with the ego");

    Scenario {
        id: format!("{kind}-{seed:06}"),
        dt: DT,
        t_past: T_PAST,
        t_future: T_FUTURE,
        map,
        agents,
        detections,
        ego_history,
        ego_future,
    }
}

/// Scenarios cycling through every kind, seeds `seed..seed + count`.
pub fn generate_mixed(count: usize, seed: u64) -> Vec<Scenario> {
    (0..count)
        .map(|i| {
            let kind = ScenarioKind::ALL[i % ScenarioKind::ALL.len()];
            generate_scenario(kind, seed + i as u64)
        })
        .collect()
}
