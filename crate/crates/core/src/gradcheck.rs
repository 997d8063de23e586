//! Central finite-difference check of the full planner loss gradient.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcplan_numerics::{Fault, Tape};

use crate::error::Result;
use crate::generator::EGO_RADIUS;
use crate::geometry::Pose;
use crate::objective::{total_loss_var, LossWeights};
use crate::planner::{build_element_batch, Net, Parameters, PlannerConfig};
use crate::scenario::{Agent, EgoState, MapElement, MapKind, Scenario};

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-12;

/// Errors are norm-wise per tensor: `‖a − n‖ / max(‖a‖, ‖n‖)` over the
/// checked entries of that tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor with the largest error.
    pub worst: String,
    /// Flat index of the largest absolute deviation inside `worst`.
    pub worst_index: usize,
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
}

/// Small deterministic scenario with two agents and two map polylines.
/// Agents pass near the ego so the safety hinge is exercised.
pub fn toy_scenario(seed: u64, t_past: usize, t_future: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 0.5;
    let v = rng.gen_range(3.0..6.0);
    let ego_history: Vec<EgoState> = (0..t_past)
        .map(|i| {
            let t = (i as f64 - (t_past - 1) as f64) * dt;
            EgoState::new(v * t, 0.0, 0.0, v)
        })
        .collect();
    let ego_future = (1..=t_future)
        .map(|i| Pose::new(v * i as f64 * dt, 0.0, 0.0))
        .collect();
    let agents = (0..2)
        .map(|k| {
            let x0 = rng.gen_range(6.0..14.0);
            let y0 = if k == 0 { 2.5 } else { -3.0 };
            let speed = rng.gen_range(0.0..2.0);
            let track = (0..t_past + t_future)
                .map(|i| {
                    let t = (i as f64 - (t_past - 1) as f64) * dt;
                    EgoState::new(x0 + speed * t, y0, 0.0, speed)
                })
                .collect();
            Agent {
                id: k as u32 + 1,
                radius: 0.5 + 0.4 * k as f64,
                track,
            }
        })
        .collect::<Vec<_>>();
    let layout = crate::composite::GridLayout::default();
    let detections = crate::composite::detect_agents(&agents, &ego_history, 0, &layout)
        .expect("toy agents never coincide with the ego");
    Scenario {
        id: format!("toy-{seed:06}"),
        dt,
        t_past,
        t_future,
        map: vec![
            MapElement {
                kind: MapKind::Lane,
                half_width: Some(1.875),
                points: vec![[-5.3, 0.2], [4.1, 0.1], [12.0, 0.6]],
            },
            MapElement {
                kind: MapKind::Sidewalk,
                half_width: None,
                points: vec![[-5.7, -4.1], [6.3, -3.9]],
            },
        ],
        agents,
        detections,
        ego_history,
        ego_future,
    }
}

/// Loss weights that keep every hinge active so each term contributes
/// gradient.
pub fn active_weights() -> LossWeights {
    LossWeights {
        lambda_comfort: 1e-5,
        lambda_safety: 1e-4,
        safety_margin: 200.0,
        ego_radius: EGO_RADIUS,
        ..LossWeights::default()
    }
}

fn loss_value(params: &Parameters, scenario: &Scenario, weights: &LossWeights) -> Result<f64> {
    let elements = build_element_batch(scenario, &params.config)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let trace = Net::new(params, &vars).forward(&mut tape, &elements)?;
    let nodes = total_loss_var(&mut tape, trace.trajectory, scenario, weights)?;
    Ok(tape.value(nodes.total).data()[0])
}

/// Compares the backward pass against central differences with step `eps`.
/// `sample` limits the check to that many entries per tensor (all when
/// `None`). `fault` corrupts the backward pass for self-tests.
pub fn check_gradients(
    params: &Parameters,
    scenario: &Scenario,
    weights: &LossWeights,
    eps: f64,
    sample_per_tensor: Option<(usize, u64)>,
    fault: Option<Fault>,
) -> Result<GradCheckReport> {
    let elements = build_element_batch(scenario, &params.config)?;
    let mut tape = Tape::new();
    tape.set_fault(fault);
    let vars = params.register(&mut tape, true);
    let trace = Net::new(params, &vars).forward(&mut tape, &elements)?;
    let nodes = total_loss_var(&mut tape, trace.trajectory, scenario, weights)?;
    tape.backward(nodes.total)?;

    let mut rng = sample_per_tensor.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: -1.0,
        worst: String::new(),
        worst_index: 0,
        per_tensor: Vec::with_capacity(vars.len()),
        checked: 0,
    };
    for (t, &var) in vars.iter().enumerate() {
        let grad = tape.grad(var);
        let n = params.tensors[t].len();
        let entries: Vec<usize> = match (&mut rng, sample_per_tensor) {
            (Some(rng), Some((k, _))) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        let (mut worst_abs, mut worst_i) = (-1.0, 0);
        for i in entries {
            let x = params.tensors[t].data()[i];
            probe.tensors[t].data_mut()[i] = x + eps;
            let up = loss_value(&probe, scenario, weights)?;
            probe.tensors[t].data_mut()[i] = x - eps;
            let down = loss_value(&probe, scenario, weights)?;
            probe.tensors[t].data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.data()[i];
            let d = (analytic - numeric).abs();
            diff2 += d * d;
            a2 += analytic * analytic;
            n2 += numeric * numeric;
            if d > worst_abs {
                worst_abs = d;
                worst_i = i;
            }
            report.checked += 1;
        }
        let rel = diff2.sqrt() / a2.sqrt().max(n2.sqrt()).max(REL_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = params.names[t].clone();
            report.worst_index = worst_i;
        }
        report.per_tensor.push((params.names[t].clone(), rel));
    }
    Ok(report)
}

/// The self-check run by the command line: tiny network, toy scenario,
/// every parameter entry.
pub fn default_gradcheck(seed: u64, fault: Option<Fault>) -> Result<GradCheckReport> {
    let config = PlannerConfig {
        init_seed: seed,
        t_future: 8,
        ..PlannerConfig::tiny()
    };
    let params = Parameters::init(&config)?;
    let scenario = toy_scenario(seed, config.t_past, config.t_future);
    check_gradients(&params, &scenario, &active_weights(), 1e-5, None, fault)
}
