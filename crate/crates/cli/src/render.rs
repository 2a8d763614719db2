//! SVG frames from episode traces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use grasplab::env::TraceRecord;
use grasplab::math::{Pose, Vec2};
use grasplab::physics2d::{BodyKind, Contact, Shape};

use crate::config::RenderConfig;
use crate::CliError;

/// Parses a JSON-lines trace; blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord =
            serde_json::from_str(line).map_err(|e| CliError::Validation(format!("trace line {}: {e}", i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

/// Contacts drawn as force arrows: those that carried an impulse this step.
pub fn active_contacts(record: &TraceRecord) -> Vec<&Contact> {
    record.snapshot.contacts.iter().filter(|c| c.normal_impulse != 0.0 || c.tangent_impulse != 0.0).collect()
}

fn shape_svg(out: &mut String, shape: &Shape, pose: &Pose, style: &str) {
    match shape {
        Shape::Circle { radius } => {
            let _ = write!(out, r#"<circle cx="{:.5}" cy="{:.5}" r="{radius:.5}" {style}/>"#, pose.x, pose.y);
            let rim = pose.transform_point(Vec2::new(*radius, 0.0));
            let _ = write!(
                out,
                r#"<line x1="{:.5}" y1="{:.5}" x2="{:.5}" y2="{:.5}" stroke="black" stroke-width="0.001"/>"#,
                pose.x, pose.y, rim.x, rim.y
            );
        }
        Shape::Polygon { vertices } => {
            let pts: Vec<String> = vertices
                .iter()
                .map(|v| {
                    let p = pose.transform_point(*v);
                    format!("{:.5},{:.5}", p.x, p.y)
                })
                .collect();
            let _ = write!(out, r#"<polygon points="{}" {style}/>"#, pts.join(" "));
        }
        Shape::Capsule { half_length, radius } => {
            let a = pose.transform_point(Vec2::new(-half_length, 0.0));
            let b = pose.transform_point(Vec2::new(*half_length, 0.0));
            let _ = write!(
                out,
                r#"<line x1="{:.5}" y1="{:.5}" x2="{:.5}" y2="{:.5}" stroke="steelblue" stroke-opacity="0.8" stroke-width="{:.5}" stroke-linecap="round"/>"#,
                a.x,
                a.y,
                b.x,
                b.y,
                2.0 * radius
            );
        }
        Shape::Compound { parts } => {
            for p in parts {
                shape_svg(out, p, pose, style);
            }
        }
    }
}

/// One frame. World y points up; the view is centered on the first kinematic body (the palm).
/// Contact impulses are converted to forces with the step length `dt`.
pub fn render_frame(record: &TraceRecord, config: &RenderConfig, dt: f64) -> String {
    let bodies = &record.snapshot.bodies;
    let center = bodies.iter().find(|b| b.kind == BodyKind::Kinematic).map(|b| b.pose.position()).unwrap_or(Vec2::ZERO);
    let h = 0.5 * config.view_size;
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600" viewBox="{:.5} {:.5} {:.5} {:.5}">"#,
        center.x - h,
        -center.y - h,
        config.view_size,
        config.view_size
    );
    s.push_str(r#"<g transform="scale(1,-1)">"#);
    for b in bodies {
        let style = match b.kind {
            BodyKind::Kinematic => r#"fill="dimgray""#,
            _ => r#"fill="orange" fill-opacity="0.8" stroke="black" stroke-width="0.0005""#,
        };
        shape_svg(&mut s, &b.shape, &b.pose, style);
    }
    for c in active_contacts(record) {
        let force = c.impulse_on_b() * (1.0 / dt);
        let tip = c.point + force * config.force_scale;
        let _ = write!(s, r#"<circle cx="{:.5}" cy="{:.5}" r="0.0015" fill="red"/>"#, c.point.x, c.point.y);
        let _ = write!(
            s,
            r#"<line class="force" x1="{:.5}" y1="{:.5}" x2="{:.5}" y2="{:.5}" stroke="red" stroke-width="0.001"/>"#,
            c.point.x, c.point.y, tip.x, tip.y
        );
    }
    s.push_str("</g>");
    let _ = write!(
        s,
        r#"<text x="{:.5}" y="{:.5}" font-size="0.01">step {} reward {:.4} contacts {}</text>"#,
        center.x - h + 0.005,
        -center.y - h + 0.015,
        record.step,
        record.reward,
        record.n_contacts
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `frame_<step>.svg` for records `0, k, 2k, …`; returns the written paths.
pub fn render_trace(records: &[TraceRecord], config: &RenderConfig, dt: f64, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;
    let mut paths = Vec::new();
    for r in records.iter().step_by(config.every) {
        let p = out_dir.join(format!("frame_{:05}.svg", r.step));
        std::fs::write(&p, render_frame(r, config, dt)).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        paths.push(p);
    }
    Ok(paths)
}
