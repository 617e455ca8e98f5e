//! Retention-versus-ε line plot, emitted as plain SVG text.

use std::fmt::Write;

use nke_core::eval::{AttackKind, RobustnessCurve};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

struct Series<'a> {
    label: String,
    kind: AttackKind,
    points: Vec<(f64, f64)>,
    key: (&'a str, AttackKind, usize),
}

fn group(curves: &[RobustnessCurve]) -> Vec<Series<'_>> {
    let multi_dataset = curves.windows(2).any(|w| w[0].dataset != w[1].dataset);
    let mut series: Vec<Series> = Vec::new();
    for c in curves {
        let key = (c.dataset.as_str(), c.kind, c.steps);
        let pts = c.points.iter().map(|p| (p.epsilon as f64, p.retention()));
        if let Some(s) = series.iter_mut().find(|s| s.key == key) {
            s.points.extend(pts);
            continue;
        }
        let unit = if c.kind == AttackKind::Cw { "iters" } else { "steps" };
        let mut label = format!("{}, {} {unit}", c.kind, c.steps);
        if multi_dataset {
            label = format!("{}: {label}", c.dataset);
        }
        series.push(Series {
            label,
            kind: c.kind,
            points: pts.collect(),
            key,
        });
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    series
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per `(dataset, attack, steps)` series, in order of first
/// appearance. Output depends only on the input.
pub fn render_curves_svg(curves: &[RobustnessCurve]) -> String {
    let series = group(curves);
    let max_eps = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max);
    let x_max = if max_eps > 0.0 { max_eps } else { 1.0 };
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |e: f64| LEFT + e / x_max * pw;
    let sy = |r: f64| TOP + (1.0 - r) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 800 600" width="800" height="600" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="800" height="600" fill="#ffffff"/>"##);
    let title = match curves.first() {
        Some(c) if !curves.iter().any(|o| o.dataset != c.dataset) => {
            format!("{}: retention vs epsilon", escape(&c.dataset))
        }
        _ => "retention vs epsilon".to_string(),
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="30" text-anchor="middle" font-size="16">{title}</text>"#,
        LEFT + pw / 2.0
    );

    let _ = writeln!(s, r##"<g class="axes" stroke="#000000" stroke-width="1">"##);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT:.2}" y1="{TOP:.2}" x2="{LEFT:.2}" y2="{:.2}"/>"#,
        TOP + ph
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (x, y) = (sx(f * x_max), sy(f));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}"/>"#,
            LEFT - 5.0
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="ticks" text-anchor="middle">"#);
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{:.2}</text>"#,
            sx(f * x_max),
            TOP + ph + 20.0,
            f * x_max
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{f:.1}</text>"#,
            LEFT - 8.0,
            sy(f) + 4.0
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle">epsilon (L-infinity radius)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text class="ylabel" x="20" y="{0:.2}" text-anchor="middle" transform="rotate(-90 20 {0:.2})">retention</text>"#,
        TOP + ph / 2.0
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = match ser.kind {
            AttackKind::Ascend => r#" stroke-dasharray="6 4""#,
            AttackKind::Descend => "",
            AttackKind::Cw => r#" stroke-dasharray="2 3""#,
        };
        let pts: Vec<String> = ser
            .points
            .iter()
            .map(|&(e, r)| format!("{:.2},{:.2}", sx(e), sy(r)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            pts.join(" ")
        );
    }

    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = TOP + 10.0 + 22.0 * i as f64;
        let x = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/>"#,
            x + 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 38.0,
            y + 4.0,
            escape(&ser.label)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
