//! SVG heatmap of seizure posteriors.

use std::fmt::Write;

use anyhow::Result;

use chmm::inference::Posteriors;
use chmm::signal::SeizureLabels;

const CELL_W: f64 = 4.0;
const CELL_H: f64 = 14.0;
const LEFT: f64 = 48.0;
const TOP: f64 = 10.0;

/// White at 0, violet at 1.
pub fn cell_fill(p: f64) -> String {
    let p = p.clamp(0.0, 1.0);
    let c = |scale: f64| (255.0 - p * scale).round() as u8;
    format!("rgb({},{},{})", c(107.0), c(255.0), c(44.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn heatmap_svg(post: &Posteriors, labels: &SeizureLabels) -> Result<String> {
    let n_frames = post.n_frames();
    let width = LEFT + CELL_W * n_frames as f64 + 10.0;
    let height = TOP + CELL_H * post.channels.len() as f64 + 24.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )?;
    writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#)?;

    // time in seconds -> x, interpolating between frame starts
    let starts = &post.frame_start_seconds;
    let step = if n_frames > 1 { starts[1] - starts[0] } else { 1.0 };
    let x_of = |t: f64| {
        let origin = starts.first().copied().unwrap_or(0.0);
        LEFT + (t - origin) / step * CELL_W
    };

    for (i, (name, row)) in post.channels.iter().zip(&post.probs).enumerate() {
        let y = TOP + CELL_H * i as f64;
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{}</text>"#,
            LEFT - 4.0,
            y + CELL_H * 0.75,
            escape(name)
        )?;
        for (t, p) in row.iter().enumerate() {
            writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{}"/>"#,
                LEFT + CELL_W * t as f64,
                cell_fill(p[1])
            )?;
        }
        for iv in &labels.intervals {
            if iv.channel.as_deref().is_some_and(|c| c != name) {
                continue;
            }
            for (class, t) in [("onset", iv.onset), ("offset", iv.offset)] {
                let x = x_of(t);
                writeln!(
                    s,
                    r#"<line class="{class}" x1="{x}" y1="{y}" x2="{x}" y2="{}" stroke="black" stroke-width="1" stroke-dasharray="3,2"/>"#,
                    y + CELL_H
                )?;
            }
        }
    }
    let axis_y = TOP + CELL_H * post.channels.len() as f64 + 14.0;
    writeln!(
        s,
        r#"<text x="{LEFT}" y="{axis_y}" font-size="10" font-family="sans-serif">{} s</text>"#,
        starts.first().copied().unwrap_or(0.0)
    )?;
    writeln!(
        s,
        r#"<text x="{}" y="{axis_y}" font-size="10" text-anchor="end" font-family="sans-serif">{} s</text>"#,
        LEFT + CELL_W * n_frames as f64,
        starts.last().copied().unwrap_or(0.0)
    )?;
    s.push_str("</svg>\n");
    Ok(s)
}

/// The plotted values as `channel,frame,start_s,p_seizure`.
pub fn raster_csv(post: &Posteriors) -> String {
    let mut out = String::from("channel,frame,start_s,p_seizure\n");
    for (name, row) in post.channels.iter().zip(&post.probs) {
        for (t, p) in row.iter().enumerate() {
            out.push_str(&format!("{name},{t},{},{}\n", post.frame_start_seconds[t], p[1]));
        }
    }
    out
}
