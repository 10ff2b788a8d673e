//! Static SVG rendering of an environment, a reference path, and an agent
//! trajectory. Output is deterministic for identical inputs.

use crate::env::{Episode, EnvironmentGraph};
use crate::types::NodeId;
use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 720.0;
const PAD: f64 = 40.0;

struct Projector {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Projector {
    fn new(env: &EnvironmentGraph) -> Self {
        let xs: Vec<f64> = env.positions.values().map(|p| p[0]).collect();
        let ys: Vec<f64> = env.positions.values().map(|p| p[1]).collect();
        let (min_x, max_x) = (
            xs.iter().cloned().fold(f64::INFINITY, f64::min),
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (min_y, max_y) = (
            ys.iter().cloned().fold(f64::INFINITY, f64::min),
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
        Self {
            min_x,
            min_y,
            scale: (W - 2.0 * PAD) / span,
        }
    }

    fn xy(&self, env: &EnvironmentGraph, n: NodeId) -> (f64, f64) {
        let p = env.positions[&n];
        (
            PAD + (p[0] - self.min_x) * self.scale,
            H - PAD - (p[1] - self.min_y) * self.scale,
        )
    }
}

fn polyline(env: &EnvironmentGraph, proj: &Projector, path: &[NodeId]) -> String {
    path.iter()
        .map(|&n| {
            let (x, y) = proj.xy(env, n);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Render the environment graph, the episode's reference path, and the
/// agent's path as layered SVG.
pub fn render_rollout(env: &EnvironmentGraph, episode: &Episode, agent_path: &[NodeId]) -> String {
    let proj = Projector::new(env);
    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    )
    .unwrap();
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    svg.push_str("<g id=\"env-edges\" stroke=\"#c8c8c8\" stroke-width=\"1\">");
    for (&a, out) in &env.nav {
        for &b in out {
            if a < b {
                let (x1, y1) = proj.xy(env, a);
                let (x2, y2) = proj.xy(env, b);
                write!(
                    svg,
                    "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\"/>"
                )
                .unwrap();
            }
        }
    }
    svg.push_str("</g>");

    write!(
        svg,
        "<g id=\"gt-path\"><polyline points=\"{}\" fill=\"none\" stroke=\"#2a6fdb\" stroke-width=\"4\" stroke-opacity=\"0.7\"/></g>",
        polyline(env, &proj, &episode.gt_path)
    )
    .unwrap();
    write!(
        svg,
        "<g id=\"agent-path\"><polyline points=\"{}\" fill=\"none\" stroke=\"#d43a3a\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/></g>",
        polyline(env, &proj, agent_path)
    )
    .unwrap();

    svg.push_str("<g id=\"env-nodes\">");
    for &n in env.positions.keys() {
        let (x, y) = proj.xy(env, n);
        let hue = (env.landmark[&n] as f64 / env.params.vocab.max(1) as f64) * 360.0;
        write!(
            svg,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"5\" fill=\"hsl({hue:.0},60%,60%)\" stroke=\"#555\"/>"
        )
        .unwrap();
        write!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"9\" fill=\"#333\">{}</text>",
            x + 6.0,
            y - 6.0,
            n.0
        )
        .unwrap();
    }
    svg.push_str("</g>");

    let (sx, sy) = proj.xy(env, episode.start);
    let (gx, gy) = proj.xy(env, episode.goal);
    write!(
        svg,
        "<g id=\"markers\"><circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"9\" fill=\"none\" stroke=\"#2a6fdb\" stroke-width=\"3\"/><circle cx=\"{gx:.2}\" cy=\"{gy:.2}\" r=\"9\" fill=\"none\" stroke=\"#1d9e4f\" stroke-width=\"3\"/></g>"
    )
    .unwrap();
    svg.push_str("</svg>");
    svg
}
