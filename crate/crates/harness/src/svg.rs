//! Time-space trajectory diagrams.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use holdlab_core::sim::{ArrivalEvent, RouteConfig};

use crate::error::{HarnessError, Result};
use crate::experiment::write_atomic;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const MARGIN: f64 = 60.0;

/// Load colors from empty to full.
const GRADIENT: [(f64, [u8; 3]); 3] = [
    (0.0, [44, 123, 182]),
    (0.5, [255, 200, 60]),
    (1.0, [215, 25, 28]),
];

/// Stroke color for a load factor in [0, 1].
pub fn load_color(load: f64) -> String {
    let x = load.clamp(0.0, 1.0);
    let k = GRADIENT
        .windows(2)
        .position(|w| x <= w[1].0)
        .unwrap_or(GRADIENT.len() - 2);
    let ((x0, c0), (x1, c1)) = (GRADIENT[k], GRADIENT[k + 1]);
    let f = (x - x0) / (x1 - x0);
    let c: Vec<u8> = (0..3)
        .map(|i| (c0[i] as f64 + f * (c1[i] as f64 - c0[i] as f64)).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Trajectory vertices of one bus: arrival and departure at each stop.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub bus: usize,
    /// (time, position, load factor leaving this vertex).
    pub points: Vec<(f64, f64, f64)>,
}

pub fn trajectories(config: &RouteConfig, events: &[ArrivalEvent]) -> Vec<Trajectory> {
    let mut by_bus: BTreeMap<usize, Vec<&ArrivalEvent>> = BTreeMap::new();
    for e in events {
        by_bus.entry(e.bus_index).or_default().push(e);
    }
    let cap = f64::from(config.capacity);
    by_bus
        .into_iter()
        .map(|(bus, mut evs)| {
            evs.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.stop.cmp(&b.stop)));
            let mut points = Vec::with_capacity(2 * evs.len());
            for e in evs {
                let x = config.stop_positions[e.stop];
                let load = f64::from(e.occupancy) / cap;
                let leave = e.departure_time.unwrap_or(e.time + e.dwell);
                points.push((e.time, x, load));
                if leave > e.time {
                    points.push((leave, x, load));
                }
            }
            Trajectory { bus, points }
        })
        .collect()
}

/// Smallest gap between consecutive bus arrivals at any stop.
pub fn min_arrival_gap(events: &[ArrivalEvent]) -> Option<f64> {
    let mut by_stop: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for e in events {
        by_stop.entry(e.stop).or_default().push(e.time);
    }
    by_stop
        .into_values()
        .flat_map(|mut t| {
            t.sort_by(f64::total_cmp);
            t.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()
        })
        .min_by(f64::total_cmp)
}

/// Renders the diagram. Output depends only on the inputs.
pub fn render_trajectories(
    config: &RouteConfig,
    events: &[ArrivalEvent],
    title: &str,
) -> Result<String> {
    if events.is_empty() {
        return Err(HarnessError::Config(
            "cannot plot an empty event log".into(),
        ));
    }
    let trajs = trajectories(config, events);
    let t_max = trajs
        .iter()
        .flat_map(|t| t.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let length = config.route_length();
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |t: f64| MARGIN + t / t_max * plot_w;
    let sy = |x: f64| HEIGHT - MARGIN - x / length * plot_h;

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        w,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(w, "<defs>");
    for t in &trajs {
        let (x0, x1) = (sx(t.points[0].0), sx(t.points[t.points.len() - 1].0));
        let _ = writeln!(
            w,
            r#"<linearGradient id="load-{}" gradientUnits="userSpaceOnUse" x1="{x0:.2}" y1="0" x2="{:.2}" y2="0">"#,
            t.bus,
            x1.max(x0 + 1e-3)
        );
        let span = (x1 - x0).max(1e-3);
        let mut prev: Option<String> = None;
        for p in &t.points {
            let off = ((sx(p.0) - x0) / span).clamp(0.0, 1.0);
            let c = load_color(p.2);
            if let Some(pc) = prev.as_ref().filter(|pc| **pc != c) {
                let _ = writeln!(w, r#"<stop offset="{off:.5}" stop-color="{pc}"/>"#);
            }
            if prev.as_ref() != Some(&c) {
                let _ = writeln!(w, r#"<stop offset="{off:.5}" stop-color="{c}"/>"#);
            }
            prev = Some(c);
        }
        let _ = writeln!(w, "</linearGradient>");
    }
    let _ = writeln!(w, "</defs>");
    // Axes with stop ticks and hourly ticks.
    let (left, bottom) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        w,
        r##"<g stroke="#444" stroke-width="1"><line x1="{left}" y1="{bottom}" x2="{:.1}" y2="{bottom}"/><line x1="{left}" y1="{MARGIN}" x2="{left}" y2="{bottom}"/></g>"##,
        WIDTH - MARGIN
    );
    let _ = writeln!(w, r##"<g stroke="#ddd" stroke-width="0.5">"##);
    for x in &config.stop_positions {
        let _ = writeln!(
            w,
            r#"<line x1="{left}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}"/>"#,
            WIDTH - MARGIN,
            y = sy(*x)
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(
        w,
        r#"<g font-family="sans-serif" font-size="11" text-anchor="middle">"#
    );
    let mut h = 0.0;
    while h <= t_max {
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.1}">{:.0} h</text>"#,
            sx(h),
            bottom + 18.0,
            h / 3600.0
        );
        h += 3600.0;
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.1}" y="{:.1}">time</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        w,
        r#"<text x="20" y="{:.1}" transform="rotate(-90 20 {:.1})">distance ({:.1} km)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        length / 1000.0
    );
    let _ = writeln!(w, "</g>");
    for t in &trajs {
        let pts: Vec<String> = t
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(
            w,
            r#"<polyline data-bus="{}" fill="none" stroke="url(#load-{})" stroke-width="1.5" points="{}"/>"#,
            t.bus,
            t.bus,
            pts.join(" ")
        );
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn emit_trajectory_svg(
    config: &RouteConfig,
    events: &[ArrivalEvent],
    title: &str,
    path: &Path,
) -> Result<()> {
    let svg = render_trajectories(config, events, title)?;
    write_atomic(path, svg.as_bytes())
}
