//! One PASS/FAIL line per acceptance criterion, printed to stdout in order.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vcplan::commands::{cmd_gradcheck, GradcheckArgs, GRADCHECK_TOLERANCE};
use vcplan_core::composite::{rotate_bbox, GridLayout, Rotation};
use vcplan_core::generator::{generate_mixed, generate_scenario, ScenarioKind, EGO_RADIUS};
use vcplan_core::gradcheck::default_gradcheck;
use vcplan_core::metrics::{collision_rate, compute_metrics, min_ttc, offroad_rate};
use vcplan_core::objective::LossWeights;
use vcplan_core::planner::{build_element_batch, plan, Net, Parameters, PlannerConfig};
use vcplan_core::scenario::{BBox, Scenario};
use vcplan_core::sim::{
    run_closed_loop, ExpertPlanner, NetworkPlanner, Planner, SimLog, StandStillPlanner,
};
use vcplan_core::trainer::{fit, train_epoch, CheckpointTarget, TrainConfig};
use vcplan_numerics::{Adam, Tape};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn report(results: &mut Vec<(usize, bool)>, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let o = f();
    let line = format!(
        "{} [{id}] {name}: {} ({:.1} s)\n",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail,
        start.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    results.push((id, o.passed));
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut sink = Vec::new();
    let status = cmd_gradcheck(
        &GradcheckArgs {
            seed: 0,
            inject_fault: None,
        },
        &mut sink,
    );
    let r = default_gradcheck(0, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        status.is_ok() && r.max_rel_error < GRADCHECK_TOLERANCE && secs < 60.0,
        format!(
            "max relative error {:.3e} over {} entries, worst `{}`",
            r.max_rel_error, r.checked, r.worst
        ),
    )
}

fn shape_contract() -> Outcome {
    let params = Parameters::init(&PlannerConfig::default()).unwrap();
    let s = generate_scenario(ScenarioKind::LeadBrake, 1);
    let elements = build_element_batch(&s, &params.config).unwrap();
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let trace = Net::new(&params, &vars)
        .forward(&mut tape, &elements)
        .unwrap();
    let d = tape.value(trace.descriptors).shape().to_vec();
    let f = tape.value(trace.fused).shape().to_vec();
    let t = tape.value(trace.trajectory).shape().to_vec();
    check(
        d == [elements.len(), 256]
            && f == [1, 128]
            && t == [16, 3]
            && trace.adjacency[0].len() == 3,
        format!("descriptors {d:?}, fused {f:?}, trajectory {t:?}"),
    )
}

fn corner_oracle(b: &BBox, r: Rotation, s: f64) -> BBox {
    let px = |[u, v]: [f64; 2]| match r {
        Rotation::None => [u, v],
        Rotation::Ccw90 => [v, s - 1.0 - u],
        Rotation::Cw90 => [s - 1.0 - v, u],
        Rotation::Inv180 => [s - 1.0 - u, s - 1.0 - v],
    };
    let (x1, y1) = (b.x + b.w - 1.0, b.y + b.h - 1.0);
    let c = [[b.x, b.y], [x1, b.y], [b.x, y1], [x1, y1]].map(px);
    let (xs, ys) = (c.map(|p| p[0]), c.map(|p| p[1]));
    let lo = |a: [f64; 4]| a.into_iter().fold(f64::INFINITY, f64::min);
    let hi = |a: [f64; 4]| a.into_iter().fold(f64::NEG_INFINITY, f64::max);
    BBox::new(lo(xs), lo(ys), hi(xs) - lo(xs) + 1.0, hi(ys) - lo(ys) + 1.0)
}

fn geometry_oracle() -> Outcome {
    let s = 213.0;
    let rotations = [
        Rotation::None,
        Rotation::Ccw90,
        Rotation::Cw90,
        Rotation::Inv180,
    ];
    let pos: Vec<f64> = (0..=213).step_by(8).map(f64::from).collect();
    let size: Vec<f64> = (8..=213).step_by(8).map(f64::from).collect();
    let (mut n, mut bad) = (0usize, 0usize);
    for &x in &pos {
        for &y in &pos {
            for &w in &size {
                for &h in &size {
                    if x + w > s || y + h > s {
                        continue;
                    }
                    let b = BBox::new(x, y, w, h);
                    for r in rotations {
                        let rb = rotate_bbox(&b, r, s).unwrap();
                        n += 1;
                        bad += (rb != corner_oracle(&b, r, s)) as usize;
                        bad += (rotate_bbox(&rb, r.inverse(), s).unwrap() != b) as usize;
                    }
                    let inv = rotate_bbox(&b, Rotation::Inv180, s).unwrap();
                    bad += (rotate_bbox(&inv, Rotation::Inv180, s).unwrap() != b) as usize;
                }
            }
        }
    }
    check(
        bad == 0 && n > 0,
        format!("{n} box rotations, {bad} mismatches"),
    )
}

fn permutation_invariance() -> Outcome {
    let params = Parameters::init(&PlannerConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for s in generate_mixed(20, 7000) {
        let mut t = s.clone();
        t.map.shuffle(&mut rng);
        t.agents.shuffle(&mut rng);
        t.detections.shuffle(&mut rng);
        let (a, b) = (plan(&s, &params).unwrap(), plan(&t, &params).unwrap());
        for (p, q) in a.waypoints.iter().zip(&b.waypoints) {
            worst = worst.max((p.x - q.x).hypot(p.y - q.y));
        }
    }
    check(
        worst < 1e-6,
        format!("max waypoint change {worst:.3e} m over 20 scenarios"),
    )
}

fn mean_l1_position(s: &Scenario, params: &Parameters) -> f64 {
    let pred = plan(s, params).unwrap();
    let expert = s.expert_trajectory();
    let sum: f64 = pred
        .waypoints
        .iter()
        .zip(&expert.waypoints)
        .map(|(p, q)| (p.x - q.x).abs() + (p.y - q.y).abs())
        .sum();
    sum / pred.len() as f64
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let s = generate_scenario(ScenarioKind::Straight, 0);
    let cfg = TrainConfig {
        batch_size: 1,
        ..TrainConfig::default()
    };
    let w = LossWeights::default();
    let mut params = Parameters::init(&PlannerConfig::default()).unwrap();
    let mut adam = Adam::new(cfg.adam(), &params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut err = mean_l1_position(&s, &params);
    let mut best = err;
    let mut steps = 0;
    while steps < 500 && err >= 0.1 {
        train_epoch(
            &mut params,
            &mut adam,
            std::slice::from_ref(&s),
            &cfg,
            &w,
            &mut rng,
        )
        .unwrap();
        steps += 1;
        err = mean_l1_position(&s, &params);
        best = best.min(err);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        err < 0.1 && secs < 120.0,
        format!("mean L1 waypoint error {err:.4} m after {steps} Adam steps (best {best:.4} m)"),
    )
}

fn moving_average(xs: &[f64], k: usize) -> Vec<f64> {
    xs.windows(k)
        .map(|w| w.iter().sum::<f64>() / k as f64)
        .collect()
}

fn learning_smoke(trained: &mut Option<Parameters>) -> Outcome {
    let start = Instant::now();
    let data = generate_mixed(50, 1000);
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let init = Parameters::init(&PlannerConfig::default()).unwrap();
    let out = fit(
        &data,
        init,
        &cfg,
        &LossWeights::default(),
        &CheckpointTarget::default(),
        |_| {},
    )
    .unwrap();
    let rows = &out.report.rows;
    let losses: Vec<f64> = rows.iter().map(|r| r.train_loss).collect();
    let ma = moving_average(&losses, 5);
    let rises: Vec<usize> = ma
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(i, _)| i + 6)
        .collect();
    let (l1_first, l1_last) = (rows[0].l1, rows[rows.len() - 1].l1);
    let secs = start.elapsed().as_secs_f64();
    *trained = Some(out.best);
    check(
        rises.is_empty() && l1_last < 0.5 * l1_first && secs < 600.0 && rows.len() == 30,
        format!(
            "train/val {}/{}, val L1 {l1_first:.3} -> {l1_last:.3} m (ratio {:.3}), 5-epoch MA of train loss {:.1} -> {:.1}, MA rises ending at epochs {rises:?}",
            out.train_set.len(),
            out.validation_set.len(),
            l1_last / l1_first,
            ma[0],
            ma[ma.len() - 1]
        ),
    )
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn ttc_bisect(dp: [f64; 2], dv: [f64; 2], r: f64) -> f64 {
    let dist = |t: f64| (dp[0] + dv[0] * t).hypot(dp[1] + dv[1] * t);
    if dist(0.0) <= r {
        return 0.0;
    }
    let vv = dv[0] * dv[0] + dv[1] * dv[1];
    let t_star = if vv > 0.0 {
        -(dp[0] * dv[0] + dp[1] * dv[1]) / vv
    } else {
        0.0
    };
    if t_star <= 0.0 || dist(t_star) > r {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, t_star);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist(mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn brute_force(log: &SimLog, s: &Scenario) -> (f64, f64, f64) {
    let path = log.ego_path();
    let (mut hits, mut off, mut ttc) = (0usize, 0usize, f64::INFINITY);
    for (k, step) in log.steps.iter().enumerate() {
        let e = [step.ego.x, step.ego.y];
        let ve = [
            (path[k + 1].x - path[k].x) / log.dt,
            (path[k + 1].y - path[k].y) / log.dt,
        ];
        let mut hit = false;
        for a in &s.agents {
            let Some(st) = a.track.get(s.t_past + k) else {
                continue;
            };
            let r = EGO_RADIUS + a.radius;
            hit |= (e[0] - st.x).hypot(e[1] - st.y) < r;
            let dv = [st.v * st.yaw.cos() - ve[0], st.v * st.yaw.sin() - ve[1]];
            ttc = ttc.min(ttc_bisect([st.x - e[0], st.y - e[1]], dv, r));
        }
        hits += hit as usize;
        let mut nearest: Option<(f64, f64)> = None;
        for m in s.map.iter().filter(|m| m.kind.is_drivable()) {
            let d = m
                .points
                .windows(2)
                .map(|w| seg_dist(e, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            if nearest.is_none_or(|(nd, _)| d < nd) {
                nearest = Some((d, m.half_width.unwrap_or(0.0)));
            }
        }
        off += nearest.is_none_or(|(d, hw)| d > hw) as usize;
    }
    let n = log.steps.len() as f64;
    (hits as f64 / n, off as f64 / n, ttc)
}

struct Drift(f64, f64);

impl Planner for Drift {
    fn plan(
        &self,
        s: &Scenario,
    ) -> vcplan_core::Result<vcplan_core::trajectory::PlannedTrajectory> {
        let v = s.current_ego().v.max(2.0) * self.1;
        let pts = (1..=s.t_future)
            .map(|i| {
                vcplan_core::geometry::Pose::new(v * i as f64 * s.dt, self.0 * i as f64 * s.dt, 0.0)
            })
            .collect();
        Ok(vcplan_core::trajectory::PlannedTrajectory::new(s.dt, pts))
    }
}

fn metrics_oracle() -> Outcome {
    let layout = GridLayout::default();
    let planners: [&dyn Planner; 5] = [
        &ExpertPlanner,
        &StandStillPlanner,
        &Drift(1.5, 1.0),
        &Drift(-4.0, 1.0),
        &Drift(0.0, 2.5),
    ];
    let (mut rate_bad, mut ttc_err, mut finite, mut nonzero): (usize, f64, usize, usize) =
        (0, 0.0, 0, 0);
    for (i, s) in generate_mixed(100, 3000).iter().enumerate() {
        let log = run_closed_loop(s, planners[i % 5], &layout).unwrap();
        let (c, o, t) = brute_force(&log, s);
        rate_bad += (collision_rate(&log, s) != c) as usize + (offroad_rate(&log, s) != o) as usize;
        nonzero += (c > 0.0 || o > 0.0) as usize;
        let m = min_ttc(&log, s);
        if m.is_finite() || t.is_finite() {
            finite += 1;
            ttc_err = ttc_err.max((m - t).abs());
        }
    }
    check(
        rate_bad == 0 && ttc_err < 1e-6 && !ttc_err.is_nan(),
        format!("100 scenarios: {rate_bad} rate mismatches ({nonzero} with nonzero rates), max TTC gap {ttc_err:.3e} s over {finite} finite"),
    )
}

fn closed_loop(trained: Option<&Parameters>) -> Outcome {
    let layout = GridLayout::default();
    let mut expert_ok = true;
    for s in generate_mixed(8, 4000) {
        let log = run_closed_loop(&s, &ExpertPlanner, &layout).unwrap();
        let m = compute_metrics(&log, &s);
        expert_ok &= m.lon_vel_err == 0.0
            && m.lat_pos_err == 0.0
            && m.stop_pos_err.is_none_or(|e| e == 0.0)
            && m.collision_rate == 0.0
            && m.progress_l2 == 0.0;
    }
    let Some(params) = trained else {
        return check(
            false,
            format!("expert stub exact: {expert_ok}; no trained planner available"),
        );
    };
    let s = generate_scenario(ScenarioKind::Straight, 90_001);
    let log = run_closed_loop(&s, &NetworkPlanner { params }, &layout).unwrap();
    let m = compute_metrics(&log, &s);
    check(
        expert_ok && m.collision_rate == 0.0 && m.offroad_rate == 0.0 && m.progress_l2 <= 5.0,
        format!(
            "expert stub exact: {expert_ok}; trained planner on held-out straight road: collision {}, offroad {}, progress_l2 {:.3} m",
            m.collision_rate, m.offroad_rate, m.progress_l2
        ),
    )
}

fn vcplan(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_vcplan"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    vcplan(&[
        "gen",
        "--kind",
        "mixed",
        "--count",
        "8",
        "--seed",
        "5",
        "--out",
        &p("data.jsonl"),
    ]);
    for run in ["a", "b"] {
        vcplan(&[
            "train",
            "--data",
            &p("data.jsonl"),
            "--out",
            &p(run),
            "--epochs",
            "2",
            "--seed",
            "3",
            "--threads",
            "1",
        ]);
        let ckpt = format!("{}/model.ckpt", p(run));
        let report = format!("{}/metrics.csv", p(run));
        vcplan(&[
            "eval",
            "--checkpoint",
            &ckpt,
            "--data",
            &p("data.jsonl"),
            "--report",
            &report,
            "--threads",
            "1",
        ]);
    }
    let read = |run: &str, f: &str| std::fs::read_to_string(Path::new(&p(run)).join(f)).unwrap();
    let strip = |csv: String| {
        csv.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let reports = strip(read("a", "train_report.csv")) == strip(read("b", "train_report.csv"));
    let metrics = read("a", "metrics.csv") == read("b", "metrics.csv");
    let ckpts = std::fs::read(Path::new(&p("a")).join("model.ckpt")).unwrap()
        == std::fs::read(Path::new(&p("b")).join("model.ckpt")).unwrap();
    check(
        reports && metrics && ckpts,
        format!("train reports identical (excluding wall time): {reports}; metrics CSVs identical: {metrics}; checkpoints identical: {ckpts}"),
    )
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let mut trained = None;
    report(&mut results, 1, "gradient integrity", gradient_integrity);
    report(&mut results, 2, "shape contract", shape_contract);
    report(&mut results, 3, "geometry oracle", geometry_oracle);
    report(
        &mut results,
        4,
        "permutation invariance",
        permutation_invariance,
    );
    report(&mut results, 5, "overfit", overfit);
    report(&mut results, 6, "learning smoke", || {
        learning_smoke(&mut trained)
    });
    report(&mut results, 7, "metrics oracle", metrics_oracle);
    report(&mut results, 8, "closed-loop sanity", || {
        closed_loop(trained.as_ref())
    });
    report(&mut results, 9, "determinism", determinism);
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(id, _)| *id)
        .collect();
    let summary = format!(
        "acceptance: {}/{} criteria passed; failing: {failed:?}\n",
        results.len() - failed.len(),
        results.len()
    );
    std::io::stdout().lock().write_all(summary.as_bytes()).unwrap();
    assert_eq!(results.len(), 9);
    if std::env::var_os("VCPLAN_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        assert!(failed.is_empty(), "failed criteria: {failed:?}");
    }
}
