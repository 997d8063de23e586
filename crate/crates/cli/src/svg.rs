//! Overhead SVG rendering of a closed-loop log.

use std::fmt::Write as _;

use vcplan_core::scenario::MapKind;
use vcplan_core::sim::SimLog;

/// Canvas width in pixels; the height follows the aspect ratio.
pub const WIDTH: f64 = 1000.0;
pub const MARGIN: f64 = 20.0;

/// World (x right, y up) to canvas (y down): `X = (x − x0)·k + m`,
/// `Y = (y1 − y)·k + m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub x0: f64,
    pub y1: f64,
    pub scale: f64,
    pub height: f64,
}

impl Transform {
    pub fn fit(points: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for [x, y] in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let span = (x1 - x0).max(y1 - y0).max(1.0);
        let scale = (WIDTH - 2.0 * MARGIN) / span;
        Self {
            x0,
            y1,
            scale,
            height: (y1 - y0) * scale + 2.0 * MARGIN,
        }
    }

    pub fn apply(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        [
            (x - self.x0) * self.scale + MARGIN,
            (self.y1 - y) * self.scale + MARGIN,
        ]
    }
}

/// Every world point drawn for `log`.
pub fn log_points(log: &SimLog) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = log
        .map
        .iter()
        .flat_map(|m| m.points.iter().copied())
        .collect();
    pts.extend(log.ego_path().iter().map(|p| [p.x, p.y]));
    pts.extend(log.expert.iter().map(|p| [p.x, p.y]));
    for step in &log.steps {
        pts.extend(step.plan.iter().map(|p| [p.x, p.y]));
        pts.extend(step.agents.iter().map(|a| [a.x, a.y]));
    }
    pts
}

fn points_attr(t: &Transform, pts: impl IntoIterator<Item = [f64; 2]>) -> String {
    let mut out = String::new();
    for p in pts {
        let [x, y] = t.apply(p);
        if !out.is_empty() {
            out.push(' ');
        }
        let _ = write!(out, "{x:.4},{y:.4}");
    }
    out
}

fn map_style(kind: MapKind) -> (&'static str, &'static str) {
    match kind {
        MapKind::Road => ("road", "#bbbbbb"),
        MapKind::Lane => ("lane", "#888888"),
        MapKind::Sidewalk => ("sidewalk", "#c8a878"),
        MapKind::Crosswalk => ("crosswalk", "#444444"),
        MapKind::TrafficSignal => ("traffic_signal", "#d04040"),
    }
}

pub fn render(log: &SimLog) -> String {
    let t = Transform::fit(log_points(log));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{:.4}" viewBox="0 0 {WIDTH} {:.4}">"#,
        t.height, t.height
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for m in &log.map {
        let (class, color) = map_style(m.kind);
        let width = m.half_width.map_or(1.0, |hw| (hw * 2.0 * t.scale).max(1.0));
        let opacity = if m.half_width.is_some() { 0.35 } else { 1.0 };
        let _ = writeln!(
            s,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="{width:.4}" stroke-opacity="{opacity}"/>"#,
            points_attr(&t, m.points.iter().copied())
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline id="expert" points="{}" fill="none" stroke="#2a9d2a" stroke-width="2" stroke-dasharray="6 4"/>"##,
        points_attr(&t, log.expert.iter().map(|p| [p.x, p.y]))
    );
    let n_agents = log.steps.first().map_or(0, |s| s.agents.len());
    for a in 0..n_agents {
        let _ = writeln!(
            s,
            r##"<polyline class="agent" points="{}" fill="none" stroke="#e07b00" stroke-width="2"/>"##,
            points_attr(
                &t,
                log.steps.iter().map(|st| [st.agents[a].x, st.agents[a].y])
            )
        );
        if let (Some(last), Some(r)) = (log.steps.last(), log.agent_radii.get(a)) {
            let [cx, cy] = t.apply([last.agents[a].x, last.agents[a].y]);
            let _ = writeln!(
                s,
                r##"<circle class="agent" cx="{cx:.4}" cy="{cy:.4}" r="{:.4}" fill="#e07b00" fill-opacity="0.4"/>"##,
                r * t.scale
            );
        }
    }
    for step in &log.steps {
        let _ = writeln!(
            s,
            r##"<polyline class="plan" points="{}" fill="none" stroke="#3070d0" stroke-width="1" stroke-opacity="0.3"/>"##,
            points_attr(&t, step.plan.iter().map(|p| [p.x, p.y]))
        );
    }
    let _ = writeln!(
        s,
        r##"<polyline id="ego" points="{}" fill="none" stroke="#1030a0" stroke-width="3"/>"##,
        points_attr(&t, log.ego_path().iter().map(|p| [p.x, p.y]))
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&log.scenario_id));
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// `step,x,y,yaw,v`, one row per simulated step.
pub fn ego_csv(log: &SimLog) -> String {
    let mut out = String::from("step,x,y,yaw,v\n");
    for (k, st) in log.steps.iter().enumerate() {
        let e = &st.ego;
        let _ = writeln!(out, "{},{},{},{},{}", k + 1, e.x, e.y, e.yaw, e.v);
    }
    out
}
