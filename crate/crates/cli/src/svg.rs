//! Animated SVG export using SMIL `<animate>` elements.
//!
//! North is up: grid y grows upwards, so rows are flipped on output.

use std::fmt::Write;

use cmp_core::{Cell, Instance, Rect, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coloring {
    ByStart,
    ByTarget,
}

const CELL: i32 = 10;

/// Hue per robot from the rank of its start or target in row-major order.
fn hues(inst: &Instance, coloring: Coloring) -> Vec<f64> {
    let key = |i: usize| {
        let r = inst.robot(i);
        let c = if coloring == Coloring::ByStart { r.start } else { r.target };
        (-c.y, c.x)
    };
    let mut order: Vec<usize> = (0..inst.len()).collect();
    order.sort_by_key(|&i| key(i));
    let mut hue = vec![0.0; inst.len()];
    for (rank, &i) in order.iter().enumerate() {
        hue[i] = 300.0 * rank as f64 / inst.len().max(1) as f64;
    }
    hue
}

pub fn render(inst: &Instance, s: &Solution, coloring: Coloring, step_ms: u64) -> String {
    let cells = inst
        .obstacles()
        .iter()
        .copied()
        .chain(s.paths.iter().flat_map(|p| p.positions.iter().copied()));
    let rect = Rect::enclosing(cells).unwrap_or(Rect::new(Cell::new(0, 0), Cell::new(0, 0))).expanded(1);
    let px = |c: Cell| ((c.x - rect.min.x) * CELL, (rect.max.y - c.y) * CELL);
    let (w, h) = (rect.width() as i32 * CELL, rect.height() as i32 * CELL);
    let m = s.makespan();
    let dur = (m as u64).max(1) * step_ms;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{w}" height="{h}" style="background:#fff">"#
    );
    let _ = writeln!(out, "<!-- {} robots, {} obstacles, makespan {m} -->", inst.len(), inst.obstacles().len());
    for &o in inst.obstacles() {
        let (x, y) = px(o);
        let _ = writeln!(out, r#"<rect class="obstacle" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="black"/>"#);
    }
    let hue = hues(inst, coloring);
    for (i, p) in s.paths.iter().enumerate() {
        let (x0, y0) = px(p.first());
        let fill = format!("hsl({:.1},80%,50%)", hue[i]);
        if m == 0 {
            let _ = writeln!(
                out,
                r#"<rect class="robot" id="r{i}" x="{x0}" y="{y0}" width="{CELL}" height="{CELL}" fill="{fill}"/>"#
            );
            continue;
        }
        let xs: Vec<String> = p.positions.iter().map(|&c| px(c).0.to_string()).collect();
        let ys: Vec<String> = p.positions.iter().map(|&c| px(c).1.to_string()).collect();
        let _ = writeln!(
            out,
            r#"<rect class="robot" id="r{i}" x="{x0}" y="{y0}" width="{CELL}" height="{CELL}" fill="{fill}">"#
        );
        for (attr, values) in [("x", xs), ("y", ys)] {
            let _ = writeln!(
                out,
                r#"  <animate attributeName="{attr}" values="{}" dur="{dur}ms" fill="freeze" repeatCount="indefinite"/>"#,
                values.join(";")
            );
        }
        let _ = writeln!(out, "</rect>");
    }
    out.push_str("</svg>\n");
    out
}
