use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcplan_core::composite::GridLayout;
use vcplan_core::generator::{generate_mixed, EGO_RADIUS};
use vcplan_core::geometry::Pose;
use vcplan_core::metrics::{
    collision_rate, compute_metrics, min_ttc, offroad_rate, time_to_collision,
};
use vcplan_core::scenario::Scenario;
use vcplan_core::sim::{run_closed_loop, ExpertPlanner, Planner, SimLog, StandStillPlanner};
use vcplan_core::trajectory::PlannedTrajectory;
use vcplan_core::Result;

/// Drifts sideways at a fixed rate, optionally faster than logged, so some runs leave the road or hit agents.
struct Drift(f64, f64);

impl Planner for Drift {
    fn plan(&self, s: &Scenario) -> Result<PlannedTrajectory> {
        let v = s.current_ego().v.max(2.0) * self.1;
        let pts = (1..=s.t_future)
            .map(|i| {
                let t = i as f64 * s.dt;
                Pose::new(v * t, self.0 * t, 0.0)
            })
            .collect();
        Ok(PlannedTrajectory::new(s.dt, pts))
    }
}

/// Earliest contact time by bisection on the monotone approach interval.
fn ttc_bisect(dp: [f64; 2], dv: [f64; 2], r: f64) -> f64 {
    let dist = |t: f64| (dp[0] + dv[0] * t).hypot(dp[1] + dv[1] * t);
    if dist(0.0) <= r {
        return 0.0;
    }
    let vv = dv[0] * dv[0] + dv[1] * dv[1];
    if vv == 0.0 {
        return f64::INFINITY;
    }
    let t_star = -(dp[0] * dv[0] + dp[1] * dv[1]) / vv;
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

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn brute_collision(log: &SimLog, s: &Scenario) -> f64 {
    let mut hits = 0;
    for (k, step) in log.steps.iter().enumerate() {
        let mut hit = false;
        for a in &s.agents {
            if let Some(st) = a.track.get(s.t_past + k) {
                hit |= (step.ego.x - st.x).hypot(step.ego.y - st.y) < EGO_RADIUS + a.radius;
            }
        }
        hits += hit as usize;
    }
    hits as f64 / log.steps.len() as f64
}

fn brute_offroad(log: &SimLog, s: &Scenario) -> f64 {
    let mut off = 0;
    for step in &log.steps {
        let p = [step.ego.x, step.ego.y];
        let mut best: Option<(f64, f64)> = None;
        for m in s.map.iter().filter(|m| m.kind.is_drivable()) {
            let d = m
                .points
                .windows(2)
                .map(|w| seg_dist(p, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, m.half_width.unwrap_or(0.0)));
            }
        }
        off += best.is_none_or(|(d, hw)| d > hw) as usize;
    }
    off as f64 / log.steps.len() as f64
}

fn brute_ttc(log: &SimLog, s: &Scenario) -> f64 {
    let path = log.ego_path();
    let mut best = f64::INFINITY;
    for (k, step) in log.steps.iter().enumerate() {
        let ve = [
            (path[k + 1].x - path[k].x) / log.dt,
            (path[k + 1].y - path[k].y) / log.dt,
        ];
        for a in &s.agents {
            if let Some(st) = a.track.get(s.t_past + k) {
                let dp = [st.x - step.ego.x, st.y - step.ego.y];
                let dv = [st.v * st.yaw.cos() - ve[0], st.v * st.yaw.sin() - ve[1]];
                best = best.min(ttc_bisect(dp, dv, EGO_RADIUS + a.radius));
            }
        }
    }
    best
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() < 1e-6
}

#[test]
fn closed_form_ttc_matches_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut finite = 0;
    for i in 0..1000 {
        let dp = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)];
        let mut dv = [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)];
        if i % 2 == 0 {
            let k = rng.gen_range(0.05..1.0);
            dv = [-k * dp[0] + 0.1 * dv[0], -k * dp[1] + 0.1 * dv[1]];
        }
        let r = rng.gen_range(0.5..6.0);
        let (a, b) = (time_to_collision(dp, dv, r), ttc_bisect(dp, dv, r));
        assert!(close(a, b), "{dp:?} {dv:?} {r}: {a} vs {b}");
        finite += a.is_finite() as usize;
    }
    assert!(finite > 300, "{finite}");
}

#[test]
fn rates_and_ttc_match_brute_force() {
    let layout = GridLayout::default();
    let planners: [&dyn Planner; 5] = [
        &ExpertPlanner,
        &StandStillPlanner,
        &Drift(1.5, 1.0),
        &Drift(-4.0, 1.0),
        &Drift(0.0, 2.5),
    ];
    let (mut collided, mut offroad, mut finite) = (0, 0, 0);
    for (i, s) in generate_mixed(100, 900).iter().enumerate() {
        let log = run_closed_loop(s, planners[i % 5], &layout).unwrap();
        let (c, o, t) = (
            collision_rate(&log, s),
            offroad_rate(&log, s),
            min_ttc(&log, s),
        );
        assert_eq!(c, brute_collision(&log, s), "{}", s.id);
        assert_eq!(o, brute_offroad(&log, s), "{}", s.id);
        assert!(close(t, brute_ttc(&log, s)), "{}: {t}", s.id);
        collided += (c > 0.0) as usize;
        offroad += (o > 0.0) as usize;
        finite += t.is_finite() as usize;
    }
    assert!(
        collided > 0 && offroad > 0 && finite >= 10,
        "{collided} {offroad} {finite}"
    );
}

#[test]
fn expert_replay_is_perfect() {
    let layout = GridLayout::default();
    for s in generate_mixed(8, 31) {
        let log = run_closed_loop(&s, &ExpertPlanner, &layout).unwrap();
        let m = compute_metrics(&log, &s);
        assert_eq!(
            (m.lon_vel_err, m.lat_pos_err, m.progress_l2),
            (0.0, 0.0, 0.0),
            "{}",
            s.id
        );
        assert_eq!(m.collision_rate, 0.0);
        assert!(m.stop_pos_err.is_none_or(|e| e == 0.0));
    }
}
