//! Closed-loop replay: agents follow their logged tracks while the ego
//! re-plans every step and executes the first waypoint of each plan.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::composite::{detect_agents, GridLayout};
use crate::error::{CoreError, Result};
use crate::geometry::{pose_from_ego, Pose};
use crate::planner::{plan, Parameters};
use crate::scenario::{Agent, AgentState, EgoState, MapElement, Scenario};
use crate::trajectory::PlannedTrajectory;

pub trait Planner: Sync {
    /// Trajectory in the ego frame of the scenario's current pose.
    fn plan(&self, scenario: &Scenario) -> Result<PlannedTrajectory>;

    /// World pose the ego moves to after one step of `trajectory`.
    fn next_pose(&self, scenario: &Scenario, trajectory: &PlannedTrajectory) -> Result<Pose> {
        let first = trajectory
            .waypoints
            .first()
            .ok_or_else(|| CoreError::Contract("planner returned no waypoints".into()))?;
        Ok(pose_from_ego(&scenario.current_ego().pose(), first))
    }
}

/// The learned planner.
pub struct NetworkPlanner<'a> {
    pub params: &'a Parameters,
}

impl Planner for NetworkPlanner<'_> {
    fn plan(&self, scenario: &Scenario) -> Result<PlannedTrajectory> {
        plan(scenario, self.params)
    }
}

/// Replays the logged expert future.
pub struct ExpertPlanner;

impl Planner for ExpertPlanner {
    fn plan(&self, scenario: &Scenario) -> Result<PlannedTrajectory> {
        Ok(scenario.expert_trajectory())
    }

    fn next_pose(&self, scenario: &Scenario, _: &PlannedTrajectory) -> Result<Pose> {
        scenario
            .ego_future
            .first()
            .copied()
            .ok_or_else(|| CoreError::Contract("scenario has no expert future".into()))
    }
}

/// Always plans to stay at the current pose.
pub struct StandStillPlanner;

impl Planner for StandStillPlanner {
    fn plan(&self, scenario: &Scenario) -> Result<PlannedTrajectory> {
        Ok(PlannedTrajectory::new(
            scenario.dt,
            vec![Pose::ORIGIN; scenario.t_future],
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    /// Ego state after executing this step.
    pub ego: EgoState,
    /// Plan issued at the start of the step, world frame.
    pub plan: Vec<Pose>,
    /// Agent states at the same instant as `ego`.
    pub agents: Vec<AgentState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario_id: String,
    pub dt: f64,
    /// Ego state when the run starts.
    pub initial: EgoState,
    pub steps: Vec<SimStep>,
    pub map: Vec<MapElement>,
    pub expert: Vec<Pose>,
    pub agent_radii: Vec<f64>,
}

impl SimLog {
    /// Ego poses including the initial one.
    pub fn ego_path(&self) -> Vec<Pose> {
        std::iter::once(self.initial.pose())
            .chain(self.steps.iter().map(|s| s.ego.pose()))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| CoreError::Contract(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

fn tail_padded<T: Clone>(items: &[T], start: usize, len: usize) -> Vec<T> {
    let last = items.last().expect("non-empty").clone();
    (0..len)
        .map(|i| {
            items
                .get(start + i)
                .cloned()
                .unwrap_or_else(|| last.clone())
        })
        .collect()
}

/// Planner input at step `k`: the simulated ego history, detections
/// re-rendered from the replayed agents, and logged futures shifted by `k`
/// (held at their final value past the end of the log).
pub fn snapshot(
    scenario: &Scenario,
    history: &[EgoState],
    k: usize,
    layout: &GridLayout,
) -> Result<Scenario> {
    let window = &history[history.len() - scenario.t_past..];
    let track_len = scenario.t_past + scenario.t_future;
    let agents: Vec<Agent> = scenario
        .agents
        .iter()
        .map(|a| Agent {
            id: a.id,
            radius: a.radius,
            track: tail_padded(&a.track, k, track_len),
        })
        .collect();
    let detections = detect_agents(&agents, window, 0, layout)?;
    Ok(Scenario {
        id: scenario.id.clone(),
        dt: scenario.dt,
        t_past: scenario.t_past,
        t_future: scenario.t_future,
        map: scenario.map.clone(),
        agents,
        detections,
        ego_history: window.to_vec(),
        ego_future: tail_padded(&scenario.ego_future, k, scenario.t_future),
    })
}

/// Runs `t_future` steps of plan-then-execute.
pub fn run_closed_loop(
    scenario: &Scenario,
    planner: &dyn Planner,
    layout: &GridLayout,
) -> Result<SimLog> {
    let mut history = scenario.ego_history.clone();
    let mut steps = Vec::with_capacity(scenario.t_future);
    for k in 0..scenario.t_future {
        let at = |e| CoreError::at_step(k, e);
        let snap = snapshot(scenario, &history, k, layout).map_err(at)?;
        let trajectory = planner.plan(&snap).map_err(at)?;
        let next = planner.next_pose(&snap, &trajectory).map_err(at)?;
        let origin = snap.current_ego().pose();
        let prev = history.last().expect("history is non-empty");
        let speed = prev.pose().distance(&next) / scenario.dt;
        let ego = EgoState::new(next.x, next.y, next.yaw, speed);
        let agents = scenario
            .agents
            .iter()
            .map(|a| a.track[scenario.t_past + k])
            .collect();
        steps.push(SimStep {
            ego,
            plan: trajectory
                .waypoints
                .iter()
                .map(|w| pose_from_ego(&origin, w))
                .collect(),
            agents,
        });
        history.push(ego);
    }
    Ok(SimLog {
        scenario_id: scenario.id.clone(),
        dt: scenario.dt,
        initial: *scenario.current_ego(),
        steps,
        map: scenario.map.clone(),
        expert: scenario.ego_future.clone(),
        agent_radii: scenario.agents.iter().map(|a| a.radius).collect(),
    })
}
