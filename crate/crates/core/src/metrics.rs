//! Closed-loop metrics: traffic rules, similarity to the expert, ride
//! dynamics and goal progress, plus set-level evaluation.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composite::GridLayout;
use crate::error::{CoreError, Result};
use crate::generator::EGO_RADIUS;
use crate::geometry::{point_polyline_distance, to_ego_frame, wrap_angle, Pose};
use crate::scenario::Scenario;
use crate::sim::{run_closed_loop, Planner, SimLog};

/// Half-width of the corridor ahead of the ego searched for a lead agent.
pub const LEAD_LATERAL: f64 = 2.0;
/// Below this ego speed the time gap is undefined.
pub const MIN_GAP_SPEED: f64 = 0.1;
/// Expert final speed below which the expert is considered stopped.
pub const STOP_SPEED: f64 = 0.5;

/// `None` marks a metric that does not apply to the run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub collision_rate: f64,
    pub offroad_rate: f64,
    pub min_time_gap: Option<f64>,
    pub min_ttc: f64,
    pub lon_vel_err: f64,
    pub stop_pos_err: Option<f64>,
    pub lat_pos_err: f64,
    pub max_jerk: Option<f64>,
    pub max_accel: Option<f64>,
    pub max_steer_rate: Option<f64>,
    pub oscillation: Option<f64>,
    pub progress_l2: f64,
}

pub const METRIC_NAMES: [&str; 12] = [
    "collision_rate",
    "offroad_rate",
    "min_time_gap",
    "min_ttc",
    "lon_vel_err",
    "stop_pos_err",
    "lat_pos_err",
    "max_jerk",
    "max_accel",
    "max_steer_rate",
    "oscillation",
    "progress_l2",
];

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 12] {
        [
            Some(self.collision_rate),
            Some(self.offroad_rate),
            self.min_time_gap,
            Some(self.min_ttc),
            Some(self.lon_vel_err),
            self.stop_pos_err,
            Some(self.lat_pos_err),
            self.max_jerk,
            self.max_accel,
            self.max_steer_rate,
            self.oscillation,
            Some(self.progress_l2),
        ]
    }
}

/// Earliest `t ≥ 0` at which two discs with relative position `dp`,
/// relative velocity `dv` and combined radius `r` touch; 0 if they already
/// overlap, infinity if they never do.
pub fn time_to_collision(dp: [f64; 2], dv: [f64; 2], r: f64) -> f64 {
    let c = dp[0] * dp[0] + dp[1] * dp[1] - r * r;
    if c <= 0.0 {
        return 0.0;
    }
    let a = dv[0] * dv[0] + dv[1] * dv[1];
    let b = 2.0 * (dp[0] * dv[0] + dp[1] * dv[1]);
    if a == 0.0 || b >= 0.0 {
        return f64::INFINITY;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    // Smaller root in the cancellation-free form.
    2.0 * c / (-b + disc.sqrt())
}

fn velocity(from: &Pose, to: &Pose, dt: f64) -> [f64; 2] {
    [(to.x - from.x) / dt, (to.y - from.y) / dt]
}

/// Agent states at the instant of each log step.
fn agent_state(
    scenario: &Scenario,
    agent: usize,
    step: usize,
) -> Option<&crate::scenario::AgentState> {
    scenario.agents[agent].track.get(scenario.t_past + step)
}

pub fn collision_rate(log: &SimLog, scenario: &Scenario) -> f64 {
    if log.steps.is_empty() {
        return 0.0;
    }
    let hits = log
        .steps
        .iter()
        .enumerate()
        .filter(|(k, step)| {
            (0..scenario.agents.len()).any(|a| match agent_state(scenario, a, *k) {
                Some(s) => {
                    let d = (step.ego.x - s.x).hypot(step.ego.y - s.y);
                    d < EGO_RADIUS + scenario.agents[a].radius
                }
                None => false,
            })
        })
        .count();
    hits as f64 / log.steps.len() as f64
}

/// Off-road when the distance to the nearest road or lane centerline exceeds
/// that element's half-width (or when the map has no drivable element).
pub fn offroad_rate(log: &SimLog, scenario: &Scenario) -> f64 {
    if log.steps.is_empty() {
        return 0.0;
    }
    let off = log
        .steps
        .iter()
        .filter(|step| {
            let p = [step.ego.x, step.ego.y];
            let nearest = scenario
                .map
                .iter()
                .filter(|m| m.kind.is_drivable())
                .map(|m| {
                    (
                        point_polyline_distance(p, &m.points),
                        m.half_width.unwrap_or(0.0),
                    )
                })
                .fold(None, |best: Option<(f64, f64)>, c| match best {
                    Some(b) if b.0 <= c.0 => Some(b),
                    _ => Some(c),
                });
            match nearest {
                Some((d, hw)) => d > hw,
                None => true,
            }
        })
        .count();
    off as f64 / log.steps.len() as f64
}

/// Minimum over steps of the longitudinal gap to the nearest lead agent
/// divided by ego speed.
pub fn min_time_gap(log: &SimLog, scenario: &Scenario) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (k, step) in log.steps.iter().enumerate() {
        if step.ego.v < MIN_GAP_SPEED {
            continue;
        }
        let pose = step.ego.pose();
        let lead = (0..scenario.agents.len())
            .filter_map(|a| agent_state(scenario, a, k))
            .map(|s| to_ego_frame(&pose, [s.x, s.y]))
            .filter(|[x, y]| *x > 0.0 && y.abs() <= LEAD_LATERAL)
            .map(|[x, _]| x)
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))));
        if let Some(gap) = lead {
            let t = gap / step.ego.v;
            best = Some(best.map_or(t, |b| b.min(t)));
        }
    }
    best
}

/// Minimum over steps and agents of the constant-velocity time to collision.
/// Ego velocity is its last displacement over `dt`; agent velocity follows
/// its logged speed and heading.
pub fn min_ttc(log: &SimLog, scenario: &Scenario) -> f64 {
    let path = log.ego_path();
    let mut best = f64::INFINITY;
    for (k, step) in log.steps.iter().enumerate() {
        let ve = velocity(&path[k], &path[k + 1], log.dt);
        for (a, agent) in scenario.agents.iter().enumerate() {
            let Some(s) = agent_state(scenario, a, k) else {
                continue;
            };
            let va = [s.v * s.yaw.cos(), s.v * s.yaw.sin()];
            let dp = [s.x - step.ego.x, s.y - step.ego.y];
            let dv = [va[0] - ve[0], va[1] - ve[1]];
            best = best.min(time_to_collision(dp, dv, EGO_RADIUS + agent.radius));
        }
    }
    best
}

/// `(lon_vel_err, stop_pos_err, lat_pos_err)` against the logged expert.
pub fn human_similarity(log: &SimLog) -> (f64, Option<f64>, f64) {
    let n = log.steps.len().min(log.expert.len());
    if n == 0 {
        return (0.0, None, 0.0);
    }
    let mut lon_vel = 0.0;
    let mut lat = 0.0;
    let mut prev = log.initial.pose();
    let mut expert_speed = 0.0;
    for (step, e) in log.steps.iter().zip(&log.expert).take(n) {
        let (dx, dy) = (step.ego.x - e.x, step.ego.y - e.y);
        lat += (-e.yaw.sin() * dx + e.yaw.cos() * dy).abs();
        expert_speed = prev.distance(e) / log.dt;
        lon_vel += (step.ego.v - expert_speed).abs();
        prev = *e;
    }
    let stop = (expert_speed < STOP_SPEED)
        .then(|| log.steps[n - 1].ego.pose().distance(&log.expert[n - 1]));
    (lon_vel / n as f64, stop, lat / n as f64)
}

/// Sum of `|o_i| + |o_{i+1}|` over strict sign changes of the signed offset
/// from the chord joining the first and last points.
pub fn oscillation(points: &[Pose]) -> f64 {
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return 0.0;
    };
    let (cx, cy) = (last.x - first.x, last.y - first.y);
    let len = cx.hypot(cy);
    let (ux, uy) = if len > 0.0 {
        (cx / len, cy / len)
    } else {
        (first.yaw.cos(), first.yaw.sin())
    };
    let offsets: Vec<f64> = points
        .iter()
        .map(|p| ux * (p.y - first.y) - uy * (p.x - first.x))
        .collect();
    offsets
        .windows(2)
        .filter(|w| w[0] * w[1] < 0.0)
        .map(|w| w[0].abs() + w[1].abs())
        .sum()
}

/// `(max_jerk, max_accel, max_steer_rate, oscillation)` over the ego path
/// including its initial pose; not applicable below 4 steps.
pub fn dynamics(log: &SimLog) -> Option<(f64, f64, f64, f64)> {
    if log.steps.len() < 4 {
        return None;
    }
    let p = log.ego_path();
    let dt = log.dt;
    let norm = |x: f64, y: f64| x.hypot(y);
    let accel = p
        .windows(3)
        .map(|w| {
            norm(
                w[2].x - 2.0 * w[1].x + w[0].x,
                w[2].y - 2.0 * w[1].y + w[0].y,
            ) / (dt * dt)
        })
        .fold(0.0, f64::max);
    let jerk = p
        .windows(4)
        .map(|w| {
            norm(
                w[3].x - 3.0 * w[2].x + 3.0 * w[1].x - w[0].x,
                w[3].y - 3.0 * w[2].y + 3.0 * w[1].y - w[0].y,
            ) / (dt * dt * dt)
        })
        .fold(0.0, f64::max);
    let steer = p
        .windows(2)
        .map(|w| wrap_angle(w[1].yaw - w[0].yaw).abs() / dt)
        .fold(0.0, f64::max);
    Some((jerk, accel, steer, oscillation(&p)))
}

pub fn progress_l2(log: &SimLog) -> f64 {
    match (
        log.steps.last(),
        log.expert.get(log.steps.len().saturating_sub(1)),
    ) {
        (Some(s), Some(e)) => s.ego.pose().distance(e),
        _ => 0.0,
    }
}

pub fn compute_metrics(log: &SimLog, scenario: &Scenario) -> MetricsReport {
    let (lon_vel_err, stop_pos_err, lat_pos_err) = human_similarity(log);
    let dynamics = dynamics(log);
    MetricsReport {
        collision_rate: collision_rate(log, scenario),
        offroad_rate: offroad_rate(log, scenario),
        min_time_gap: min_time_gap(log, scenario),
        min_ttc: min_ttc(log, scenario),
        lon_vel_err,
        stop_pos_err,
        lat_pos_err,
        max_jerk: dynamics.map(|d| d.0),
        max_accel: dynamics.map(|d| d.1),
        max_steer_rate: dynamics.map(|d| d.2),
        oscillation: dynamics.map(|d| d.3),
        progress_l2: progress_l2(log),
    }
}

/// Column means over applicable entries. Infinite entries are set aside
/// unless nothing finite remains, in which case the mean is infinite.
pub fn aggregate(reports: &[MetricsReport]) -> [Option<f64>; 12] {
    let mut out = [None; 12];
    for (c, slot) in out.iter_mut().enumerate() {
        let vals: Vec<f64> = reports.iter().filter_map(|r| r.values()[c]).collect();
        let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
        *slot = if !finite.is_empty() {
            Some(finite.iter().sum::<f64>() / finite.len() as f64)
        } else if vals.contains(&f64::INFINITY) {
            Some(f64::INFINITY)
        } else {
            None
        };
    }
    out
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub ids: Vec<String>,
    pub reports: Vec<MetricsReport>,
    pub aggregate: [Option<f64>; 12],
    pub logs: Vec<SimLog>,
}

pub fn format_value(v: Option<f64>) -> String {
    match v {
        None => "NA".into(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) => format!("{x}"),
    }
}

impl Evaluation {
    pub fn header() -> String {
        format!("scenario,{}", METRIC_NAMES.join(","))
    }

    pub fn aggregate_row(&self) -> String {
        let cells: Vec<String> = self.aggregate.iter().map(|v| format_value(*v)).collect();
        format!("mean,{}", cells.join(","))
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header();
        out.push('\n');
        for (id, r) in self.ids.iter().zip(&self.reports) {
            let cells: Vec<String> = r.values().iter().map(|v| format_value(*v)).collect();
            let _ = writeln!(out, "{id},{}", cells.join(","));
        }
        out.push_str(&self.aggregate_row());
        out.push('\n');
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| CoreError::io(path, e))
    }
}

/// Closed-loop run and metrics for every scenario, in input order.
pub fn evaluate(
    scenarios: &[Scenario],
    planner: &dyn Planner,
    layout: &GridLayout,
    threads: usize,
) -> Result<Evaluation> {
    if scenarios.is_empty() {
        return Err(CoreError::Contract("empty evaluation set".into()));
    }
    let run = |s: &Scenario| -> Result<(SimLog, MetricsReport)> {
        let log =
            run_closed_loop(s, planner, layout).map_err(|e| CoreError::in_scenario(&s.id, e))?;
        let report = compute_metrics(&log, s);
        Ok((log, report))
    };
    let results: Vec<(SimLog, MetricsReport)> = if threads <= 1 {
        scenarios.iter().map(run).collect::<Result<_>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CoreError::Contract(format!("thread pool: {e}")))?
            .install(|| scenarios.par_iter().map(run).collect::<Result<_>>())?
    };
    let (logs, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Evaluation {
        ids: scenarios.iter().map(|s| s.id.clone()).collect(),
        aggregate: aggregate(&reports),
        reports,
        logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_scenario, ScenarioKind};
    use crate::scenario::{Agent, EgoState, MapElement, MapKind};
    use crate::sim::{ExpertPlanner, SimStep, StandStillPlanner};

    fn log_of(path: &[Pose], dt: f64, expert: Vec<Pose>) -> SimLog {
        let steps = path
            .windows(2)
            .map(|w| SimStep {
                ego: EgoState::new(w[1].x, w[1].y, w[1].yaw, w[0].distance(&w[1]) / dt),
                plan: vec![],
                agents: vec![],
            })
            .collect();
        SimLog {
            scenario_id: "m".into(),
            dt,
            initial: EgoState::new(path[0].x, path[0].y, path[0].yaw, 0.0),
            steps,
            map: vec![],
            expert,
            agent_radii: vec![],
        }
    }

    fn bare_scenario(agents: Vec<Agent>, map: Vec<MapElement>) -> Scenario {
        Scenario {
            id: "m".into(),
            dt: 0.5,
            t_past: 1,
            t_future: 4,
            map,
            agents,
            detections: vec![],
            ego_history: vec![EgoState::new(0.0, 0.0, 0.0, 0.0)],
            ego_future: vec![Pose::ORIGIN; 4],
        }
    }

    fn line(n: usize, step: f64, y: f64) -> Vec<Pose> {
        (0..=n)
            .map(|i| Pose::new(i as f64 * step, y, 0.0))
            .collect()
    }

    #[test]
    fn ttc_head_on_example() {
        assert!((time_to_collision([20.0, 0.0], [-10.0, 0.0], 2.0) - 1.8).abs() < 1e-12);
        assert_eq!(
            time_to_collision([20.0, 0.0], [0.0, 0.0], 2.0),
            f64::INFINITY
        );
        assert_eq!(
            time_to_collision([20.0, 0.0], [10.0, 0.0], 2.0),
            f64::INFINITY
        );
        assert_eq!(time_to_collision([1.0, 0.0], [10.0, 0.0], 2.0), 0.0);
        assert_eq!(
            time_to_collision([20.0, 5.0], [-10.0, 0.0], 2.0),
            f64::INFINITY
        );
    }

    #[test]
    fn stationary_disjoint_world() {
        let agent = Agent {
            id: 1,
            radius: 0.5,
            track: vec![EgoState::new(10.0, 10.0, 0.0, 0.0); 5],
        };
        let s = bare_scenario(vec![agent], vec![]);
        let log = log_of(&[Pose::ORIGIN; 5], 0.5, vec![Pose::ORIGIN; 4]);
        assert_eq!(collision_rate(&log, &s), 0.0);
        assert_eq!(min_ttc(&log, &s), f64::INFINITY);
    }

    #[test]
    fn lateral_offset_is_offroad() {
        let lane = MapElement {
            kind: MapKind::Lane,
            half_width: Some(2.0),
            points: vec![[-10.0, 0.0], [50.0, 0.0]],
        };
        let s = bare_scenario(vec![], vec![lane]);
        let log = log_of(&line(4, 1.0, 5.0), 0.5, line(4, 1.0, 0.0)[1..].to_vec());
        assert_eq!(offroad_rate(&log, &s), 1.0);
        let on = log_of(&line(4, 1.0, 1.0), 0.5, vec![]);
        assert_eq!(offroad_rate(&on, &s), 0.0);
    }

    #[test]
    fn similarity_examples() {
        let expert = line(4, 5.0, 0.0);
        let same = log_of(&expert, 0.5, expert[1..].to_vec());
        let (v, stop, lat) = human_similarity(&same);
        assert_eq!((v, stop, lat), (0.0, None, 0.0));

        let shifted: Vec<Pose> = expert
            .iter()
            .map(|p| Pose::new(p.x, p.y + 1.0, 0.0))
            .collect();
        let mut log = log_of(&shifted, 0.5, expert[1..].to_vec());
        log.initial = EgoState::new(0.0, 0.0, 0.0, 0.0);
        assert!((human_similarity(&log).2 - 1.0).abs() < 1e-12);

        let slow = line(4, 4.0, 0.0);
        let log = log_of(&slow, 0.5, expert[1..].to_vec());
        assert!((human_similarity(&log).0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stop_error_when_expert_stops() {
        let expert = vec![Pose::new(1.0, 0.0, 0.0); 4];
        let path = [
            Pose::ORIGIN,
            Pose::new(1.0, 0.0, 0.0),
            Pose::new(2.0, 0.0, 0.0),
            Pose::new(3.0, 0.0, 0.0),
            Pose::new(4.0, 0.0, 0.0),
        ];
        let log = log_of(&path, 0.5, expert);
        assert_eq!(human_similarity(&log).1, Some(3.0));
    }

    #[test]
    fn dynamics_examples() {
        let log = log_of(&line(6, 5.0, 0.0), 0.5, vec![]);
        assert_eq!(dynamics(&log), Some((0.0, 0.0, 0.0, 0.0)));

        let mut path = line(6, 5.0, 0.0);
        for p in &mut path[3..] {
            p.yaw = 0.1;
        }
        let (_, _, steer, _) = dynamics(&log_of(&path, 0.5, vec![])).unwrap();
        assert!((steer - 0.2).abs() < 1e-12);

        assert_eq!(dynamics(&log_of(&line(3, 1.0, 0.0), 0.5, vec![])), None);
    }

    #[test]
    fn oscillation_matches_sign_changes() {
        let pts: Vec<Pose> = (0..=20)
            .map(|i| Pose::new(i as f64, (i as f64 * 0.9).sin(), 0.0))
            .collect();
        let chord_y = |x: f64| pts[20].y * x / 20.0;
        let offs: Vec<f64> = pts.iter().map(|p| p.y - chord_y(p.x)).collect();
        let norm = (20.0f64.powi(2) + pts[20].y.powi(2)).sqrt() / 20.0;
        let mut expected = 0.0;
        for w in offs.windows(2) {
            if w[0] * w[1] < 0.0 {
                expected += (w[0].abs() + w[1].abs()) / norm;
            }
        }
        let got = oscillation(&pts);
        assert!(got > 0.0);
        assert!((got - expected).abs() < 1e-9, "{got} {expected}");
    }

    #[test]
    fn progress_examples() {
        let s = generate_scenario(ScenarioKind::Straight, 4);
        let layout = GridLayout::default();
        let log = run_closed_loop(&s, &ExpertPlanner, &layout).unwrap();
        assert_eq!(progress_l2(&log), 0.0);

        let log = run_closed_loop(&s, &StandStillPlanner, &layout).unwrap();
        let expected = s
            .current_ego()
            .pose()
            .distance(s.ego_future.last().unwrap());
        assert!((progress_l2(&log) - expected).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rules() {
        let s = generate_scenario(ScenarioKind::LeadBrake, 3);
        let layout = GridLayout::default();
        let one = evaluate(std::slice::from_ref(&s), &ExpertPlanner, &layout, 1).unwrap();
        let two = evaluate(&[s.clone(), s], &ExpertPlanner, &layout, 1).unwrap();
        assert_eq!(one.aggregate, one.reports[0].values());
        assert_eq!(one.aggregate, two.aggregate);
        assert_eq!(two.to_csv().lines().count(), 4);

        let a = MetricsReport {
            min_ttc: f64::INFINITY,
            ..Default::default()
        };
        let b = MetricsReport {
            min_ttc: 2.0,
            min_time_gap: Some(1.0),
            ..Default::default()
        };
        let agg = aggregate(&[a.clone(), b]);
        assert_eq!(agg[3], Some(2.0));
        assert_eq!(agg[2], Some(1.0));
        assert_eq!(aggregate(&[a])[3], Some(f64::INFINITY));
        assert_eq!(format_value(None), "NA");
    }
}
