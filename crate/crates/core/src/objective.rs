//! Training loss: L1 imitation plus comfort and safety hinge terms.

use serde::{Deserialize, Serialize};
use vcplan_numerics::{Array, Tape, Var};

use crate::error::{CoreError, Result};
use crate::generator::EGO_RADIUS;
use crate::geometry::to_ego_frame;
use crate::scenario::Scenario;
use crate::trajectory::PlannedTrajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_comfort: f64,
    pub lambda_safety: f64,
    pub yaw_weight: f64,
    /// Clearance below which the safety hinge activates, meters.
    pub safety_margin: f64,
    pub a_max: f64,
    pub j_max: f64,
    pub ego_radius: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_comfort: 0.1,
            lambda_safety: 0.1,
            yaw_weight: 1.0,
            safety_margin: 1.0,
            a_max: 3.0,
            j_max: 2.0,
            ego_radius: EGO_RADIUS,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("lambda_comfort", self.lambda_comfort),
            ("lambda_safety", self.lambda_safety),
            ("yaw_weight", self.yaw_weight),
            ("safety_margin", self.safety_margin),
            ("a_max", self.a_max),
            ("j_max", self.j_max),
            ("ego_radius", self.ego_radius),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return Err(CoreError::validation(name, "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Loss nodes of one scenario.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub l1: Var,
    pub comfort: Var,
    pub safety: Var,
}

/// Loss values of one scenario.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub comfort: f64,
    pub safety: f64,
}

impl LossBreakdown {
    pub fn read(tape: &Tape, nodes: &LossNodes) -> Self {
        let v = |x: Var| tape.value(x).data()[0];
        Self {
            total: v(nodes.total),
            l1: v(nodes.l1),
            comfort: v(nodes.comfort),
            safety: v(nodes.safety),
        }
    }

    pub fn add(&mut self, other: &Self) {
        self.total += other.total;
        self.l1 += other.l1;
        self.comfort += other.comfort;
        self.safety += other.safety;
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            total: self.total * c,
            l1: self.l1 * c,
            comfort: self.comfort * c,
            safety: self.safety * c,
        }
    }
}

fn check_pred(tape: &Tape, pred: Var, t: usize) -> Result<()> {
    let shape = tape.value(pred).shape();
    if shape != [t, 3] {
        return Err(CoreError::Contract(format!(
            "predicted trajectory has shape {shape:?}, expected [{t}, 3]"
        )));
    }
    Ok(())
}

/// Mean over waypoints of `|Δx| + |Δy| + yaw_weight·|wrap(Δyaw)|`.
pub fn imitation_l1_var(
    tape: &mut Tape,
    pred: Var,
    expert: &PlannedTrajectory,
    w: &LossWeights,
) -> Result<Var> {
    let t = expert.len();
    if t == 0 {
        return Err(CoreError::Contract("empty expert trajectory".into()));
    }
    check_pred(tape, pred, t)?;
    let target = tape.constant(expert.to_array());
    let diff = tape.sub(pred, target)?;
    let diff = tape.wrap_column(diff, 2)?;
    let abs = tape.abs(diff);
    let weights: Vec<f64> = (0..t).flat_map(|_| [1.0, 1.0, w.yaw_weight]).collect();
    let weights = tape.constant(Array::matrix(t, 3, weights));
    let weighted = tape.mul(abs, weights)?;
    let sum = tape.sum_all(weighted);
    Ok(tape.scale(sum, 1.0 / t as f64))
}

/// Finite-difference operator of order `k` (rows of binomial coefficients
/// with alternating sign) scaled by `1/dt^k`.
fn difference_matrix(t: usize, k: usize, dt: f64) -> Array {
    let coeffs: &[f64] = match k {
        2 => &[1.0, -2.0, 1.0],
        3 => &[-1.0, 3.0, -3.0, 1.0],
        _ => unreachable!("only second and third differences are used"),
    };
    let rows = t - k;
    let scale = dt.powi(k as i32).recip();
    let mut data = vec![0.0; rows * t];
    for r in 0..rows {
        for (j, c) in coeffs.iter().enumerate() {
            data[r * t + r + j] = c * scale;
        }
    }
    Array::matrix(rows, t, data)
}

fn squared_hinge_mean(tape: &mut Tape, x: Var, threshold: f64) -> Var {
    let a = tape.abs(x);
    let excess = tape.offset(a, -threshold);
    let h = tape.relu(excess);
    let sq = tape.mul(h, h).expect("same shape");
    tape.mean_all(sq)
}

/// `mean(relu(|a| − a_max)²) + mean(relu(|j| − j_max)²)` over both axes.
pub fn comfort_var(tape: &mut Tape, pred: Var, dt: f64, w: &LossWeights) -> Result<Var> {
    let t = tape.value(pred).rows();
    if t < 4 {
        return Err(CoreError::Contract(format!(
            "comfort loss needs at least 4 waypoints, got {t}"
        )));
    }
    let pos = tape.slice_cols(pred, 0, 2)?;
    let d2 = tape.constant(difference_matrix(t, 2, dt));
    let d3 = tape.constant(difference_matrix(t, 3, dt));
    let acc = tape.matmul(d2, pos)?;
    let jerk = tape.matmul(d3, pos)?;
    let a = squared_hinge_mean(tape, acc, w.a_max);
    let j = squared_hinge_mean(tape, jerk, w.j_max);
    Ok(tape.add(a, j)?)
}

/// Agent centers over the planning horizon in the ego frame at planning
/// time, as `(positions, radii)` with one row per `(step, agent)` pair,
/// step-major.
fn agent_futures(scenario: &Scenario, t: usize) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let origin = scenario.current_ego().pose();
    let start = scenario.current_index() + 1;
    let mut pos = Vec::with_capacity(t * scenario.agents.len());
    let mut radii = Vec::with_capacity(t * scenario.agents.len());
    for i in 0..t {
        for agent in &scenario.agents {
            let s = agent.track.get(start + i).ok_or_else(|| {
                CoreError::Contract(format!("agent {} track shorter than horizon", agent.id))
            })?;
            pos.push(to_ego_frame(&origin, [s.x, s.y]));
            radii.push(agent.radius);
        }
    }
    Ok((pos, radii))
}

/// `mean(relu(m_safe − d)²)` over steps and agents, with `d` the disc
/// clearance between the planned ego position and each replayed agent.
pub fn safety_var(tape: &mut Tape, pred: Var, scenario: &Scenario, w: &LossWeights) -> Result<Var> {
    let t = tape.value(pred).rows();
    let k = scenario.agents.len();
    if k == 0 {
        return Ok(tape.constant(Array::scalar(0.0)));
    }
    let (pos, radii) = agent_futures(scenario, t)?;
    let pred_pos = tape.slice_cols(pred, 0, 2)?;
    let rows: Vec<usize> = (0..t).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let ego = tape.gather_rows(pred_pos, &rows)?;
    let agents = tape.constant(Array::matrix(t * k, 2, pos.concat()));
    let diff = tape.sub(ego, agents)?;
    let sq = tape.mul(diff, diff)?;
    let ones = tape.constant(Array::ones(&[2, 1]));
    let dist2 = tape.matmul(sq, ones)?;
    let dist = tape.sqrt(dist2)?;
    let reach: Vec<f64> = radii.iter().map(|r| r + w.ego_radius).collect();
    let reach = tape.constant(Array::matrix(t * k, 1, reach));
    let clearance = tape.sub(dist, reach)?;
    let neg = tape.scale(clearance, -1.0);
    let short = tape.offset(neg, w.safety_margin);
    let h = tape.relu(short);
    let sq = tape.mul(h, h)?;
    Ok(tape.mean_all(sq))
}

/// `L1 + λ_comfort·comfort + λ_safety·safety` against the scenario's expert.
pub fn total_loss_var(
    tape: &mut Tape,
    pred: Var,
    scenario: &Scenario,
    w: &LossWeights,
) -> Result<LossNodes> {
    let expert = scenario.expert_trajectory();
    let l1 = imitation_l1_var(tape, pred, &expert, w)?;
    let comfort = comfort_var(tape, pred, scenario.dt, w)?;
    let safety = safety_var(tape, pred, scenario, w)?;
    let c = tape.scale(comfort, w.lambda_comfort);
    let s = tape.scale(safety, w.lambda_safety);
    let aux = tape.add(c, s)?;
    let total = tape.add(l1, aux)?;
    Ok(LossNodes {
        total,
        l1,
        comfort,
        safety,
    })
}

fn check_horizon(pred: &PlannedTrajectory, expert: &PlannedTrajectory) -> Result<()> {
    if pred.len() != expert.len() || pred.dt != expert.dt {
        return Err(CoreError::Contract(format!(
            "horizon mismatch: {} waypoints at dt {} vs {} at dt {}",
            pred.len(),
            pred.dt,
            expert.len(),
            expert.dt
        )));
    }
    Ok(())
}

pub fn imitation_l1(
    pred: &PlannedTrajectory,
    expert: &PlannedTrajectory,
    w: &LossWeights,
) -> Result<f64> {
    check_horizon(pred, expert)?;
    let mut tape = Tape::new();
    let p = tape.constant(pred.to_array());
    let l = imitation_l1_var(&mut tape, p, expert, w)?;
    Ok(tape.value(l).data()[0])
}

pub fn comfort_loss(pred: &PlannedTrajectory, w: &LossWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.to_array());
    let l = comfort_var(&mut tape, p, pred.dt, w)?;
    Ok(tape.value(l).data()[0])
}

pub fn safety_loss(pred: &PlannedTrajectory, scenario: &Scenario, w: &LossWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.to_array());
    let l = safety_var(&mut tape, p, scenario, w)?;
    Ok(tape.value(l).data()[0])
}

pub fn total_loss(
    pred: &PlannedTrajectory,
    scenario: &Scenario,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    check_horizon(pred, &scenario.expert_trajectory())?;
    let mut tape = Tape::new();
    let p = tape.constant(pred.to_array());
    let nodes = total_loss_var(&mut tape, p, scenario, w)?;
    Ok(LossBreakdown::read(&tape, &nodes))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::geometry::Pose;
    use crate::scenario::{Agent, EgoState};

    fn traj(points: &[[f64; 3]]) -> PlannedTrajectory {
        PlannedTrajectory::new(0.5, points.iter().map(|p| Pose::from(*p)).collect())
    }

    fn straight(t: usize, v: f64) -> PlannedTrajectory {
        PlannedTrajectory::new(
            0.5,
            (1..=t)
                .map(|i| Pose::new(v * 0.5 * i as f64, 0.0, 0.0))
                .collect(),
        )
    }

    fn empty_scenario(t: usize) -> Scenario {
        Scenario {
            id: "o".into(),
            dt: 0.5,
            t_past: 2,
            t_future: t,
            map: vec![],
            agents: vec![],
            detections: vec![],
            ego_history: vec![
                EgoState::new(-5.0, 0.0, 0.0, 10.0),
                EgoState::new(0.0, 0.0, 0.0, 10.0),
            ],
            ego_future: straight(t, 10.0).waypoints,
        }
    }

    #[test]
    fn l1_examples() {
        let w = LossWeights::default();
        let e = traj(&[[1.0, 2.0, 0.3]]);
        assert_eq!(imitation_l1(&e, &e, &w).unwrap(), 0.0);
        let p = traj(&[[4.0, 6.0, 0.3]]);
        assert_eq!(imitation_l1(&p, &e, &w).unwrap(), 7.0);
        let a = traj(&[[0.0, 0.0, -PI + 0.1]]);
        let b = traj(&[[0.0, 0.0, PI - 0.1]]);
        assert!((imitation_l1(&a, &b, &w).unwrap() - 0.2).abs() < 1e-12);
        let short = traj(&[[0.0; 3], [0.0; 3]]);
        assert!(matches!(
            imitation_l1(&short, &e, &w),
            Err(CoreError::Contract(_))
        ));
    }

    #[test]
    fn l1_wraps_full_turn() {
        let w = LossWeights::default();
        let a = traj(&[[0.0, 0.0, 0.5]]);
        let mut tape = Tape::new();
        let p = tape.constant(Array::matrix(1, 3, vec![0.0, 0.0, 0.5 + 2.0 * PI]));
        let l = imitation_l1_var(&mut tape, p, &a, &w).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-12);
    }

    #[test]
    fn comfort_examples() {
        let w = LossWeights::default();
        assert_eq!(comfort_loss(&straight(16, 10.0), &w).unwrap(), 0.0);
        let dt: f64 = 0.5;
        let c = dt.powi(3) * (w.j_max + 1.0);
        let p = traj(&[[0.0; 3], [0.0; 3], [0.0; 3], [c, 0.0, 0.0]]);
        // One jerk sample of j_max + 1 among two (x and y); accel stays inside.
        assert!((comfort_loss(&p, &w).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            comfort_loss(&straight(3, 1.0), &w),
            Err(CoreError::Contract(_))
        ));
    }

    #[test]
    fn safety_examples() {
        let w = LossWeights::default();
        let mut s = empty_scenario(4);
        let pred = s.expert_trajectory();
        assert_eq!(safety_loss(&pred, &s, &w).unwrap(), 0.0);
        // Agent 2 m ahead of the first waypoint only; far from the rest.
        let far = EgoState::new(500.0, 0.0, 0.0, 0.0);
        let mut track = vec![far; 6];
        track[2] = EgoState::new(pred.waypoints[0].x + 2.0, 0.0, 0.0, 0.0);
        s.agents.push(Agent {
            id: 1,
            radius: 0.5,
            track,
        });
        assert!((safety_loss(&pred, &s, &w).unwrap() - 1.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let s = empty_scenario(16);
        let pred = s.expert_trajectory();
        let w = LossWeights::default();
        assert_eq!(total_loss(&pred, &s, &w).unwrap().total, 0.0);

        let off = PlannedTrajectory::new(
            0.5,
            pred.waypoints
                .iter()
                .map(|p| Pose::new(p.x * p.x * 0.05, 0.3, 0.0))
                .collect(),
        );
        let zero = LossWeights {
            lambda_comfort: 0.0,
            lambda_safety: 0.0,
            ..w.clone()
        };
        let b = total_loss(&off, &s, &zero).unwrap();
        assert_eq!(
            b.total,
            imitation_l1(&off, &s.expert_trajectory(), &zero).unwrap()
        );

        let base = total_loss(&off, &s, &w).unwrap();
        let tripled = LossWeights {
            lambda_comfort: 0.3,
            lambda_safety: 0.3,
            ..w
        };
        let t3 = total_loss(&off, &s, &tripled).unwrap();
        assert!(base.comfort > 0.0);
        assert!(((t3.total - t3.l1) - 3.0 * (base.total - base.l1)).abs() < 1e-12);
    }

    #[test]
    fn difference_rows() {
        let d = difference_matrix(5, 3, 1.0);
        assert_eq!(d.shape(), &[2, 5]);
        assert_eq!(d.row(1), &[0.0, -1.0, 3.0, -3.0, 1.0]);
    }
}
