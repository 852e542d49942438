//! Bare-bones SVG charts.

use std::fmt::Write as _;

use anyhow::{anyhow, Result};

use bdrc::eval::EvalReport;

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

fn frame(title: &str, body: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    s.push_str(body);
    s.push_str("</svg>\n");
    s
}

/// One bar per tIoU threshold, height = mAP in [0, 1].
pub fn map_bars(report: &EvalReport) -> String {
    let n = report.thresholds.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    let plot_h = H - 2.0 * PAD;
    let mut body = String::new();
    for (i, t) in report.thresholds.iter().enumerate() {
        let h = t.map.clamp(0.0, 1.0) * plot_h;
        let x = PAD + i as f64 * slot + slot * 0.15;
        let y = H - PAD - h;
        let _ = writeln!(
            body,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="#4c78a8"/>"##,
            slot * 0.7
        );
        let cx = x + slot * 0.35;
        let _ = writeln!(body, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#, y - 4.0, t.map);
        let _ = writeln!(
            body,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#,
            H - PAD + 14.0,
            t.tiou
        );
    }
    frame(&format!("mAP per tIoU (average {:.4})", report.average_map), &body)
}

/// Polyline of total loss per epoch, scaled to the largest value.
pub fn loss_curve(totals: &[f64]) -> String {
    let max = totals.iter().copied().fold(0.0f64, f64::max);
    let span = (totals.len().max(2) - 1) as f64;
    let points: Vec<String> = totals
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = PAD + i as f64 / span * (W - 2.0 * PAD);
            let y = H - PAD - if max > 0.0 { v / max } else { 0.0 } * (H - 2.0 * PAD);
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let body = format!(
        "<polyline fill=\"none\" stroke=\"#e45756\" stroke-width=\"2\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\">{max:.4}</text>\n",
        points.join(" "),
        4.0,
        PAD
    );
    frame(&format!("total loss over {} epochs", totals.len()), &body)
}

/// Reads the `total` column of a `train` history CSV.
pub fn parse_history_totals(csv: &str) -> Result<Vec<f64>> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty history"))?;
    let col = header
        .split(',')
        .position(|h| h == "total")
        .ok_or_else(|| anyhow!("history has no `total` column"))?;
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cell = l.split(',').nth(col).ok_or_else(|| anyhow!("short row `{l}`"))?;
            cell.parse::<f64>().map_err(|e| anyhow!("bad total `{cell}`: {e}"))
        })
        .collect()
}
