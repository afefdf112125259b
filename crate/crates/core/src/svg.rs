//! Static skeleton figures: one SVG per frame with the 17 joints and the
//! standard limb edges.

use std::fmt::Write;

use crate::pose::{PoseLandmarks, SKELETON_EDGES};

const JOINT_RADIUS: f64 = 4.0;
const EDGE_COLOUR: &str = "#2ca02c";

/// Joint colour by body side: left joints odd, right joints even (nose excluded).
fn joint_colour(j: usize) -> &'static str {
    match j {
        0 => "#d62728",
        j if j % 2 == 1 => "#1f77b4",
        _ => "#ff7f0e",
    }
}

pub fn render_skeleton_svg(pose: &PoseLandmarks, width: f64, height: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"  <rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    for &(a, b) in &SKELETON_EDGES {
        let [x1, y1] = pose.points[a];
        let [x2, y2] = pose.points[b];
        let _ = writeln!(
            s,
            r#"  <line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="{EDGE_COLOUR}" stroke-width="2"/>"#
        );
    }
    for (j, [x, y]) in pose.points.iter().enumerate() {
        let _ = writeln!(s, r#"  <circle cx="{x}" cy="{y}" r="{JOINT_RADIUS}" fill="{}"/>"#, joint_colour(j));
    }
    s.push_str("</svg>\n");
    s
}
