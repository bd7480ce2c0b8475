//! Dependency-free SVG plots.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, axes: &Axes, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>
<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN,
        W / 2.0,
        H - 12.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
    );
    for (v, anchor) in [(axes.x.0, "start"), (axes.x.1, "end")] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{v:.2}</text>"#,
            axes.px(v),
            H - MARGIN + 14.0
        );
    }
    for v in [axes.y.0, axes.y.1] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 4.0,
            axes.py(v) + 4.0
        );
    }
}

/// Blue (low) to red (high) on `t` in `[0, 1]`.
fn heat(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    format!("rgb({},{},{})", (255.0 * t) as u8, 64, (255.0 * (1.0 - t)) as u8)
}

/// Predicted vs true scatter coloured by uncertainty, with the identity line.
pub fn scatter_svg(truth: &[f64], pred: &[f64], color: &[f64], title: &str) -> String {
    let axes = Axes::fit(
        truth.iter().chain(pred).copied(),
        truth.iter().chain(pred).copied(),
    );
    let mut out = String::new();
    frame(&mut out, &axes, title, "reference (mmHg)", "estimate (mmHg)");
    let lo = axes.x.0.max(axes.y.0);
    let hi = axes.x.1.min(axes.y.1);
    let _ = writeln!(
        out,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        axes.px(lo),
        axes.py(lo),
        axes.px(hi),
        axes.py(hi)
    );
    let (cmin, cmax) = color
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = (cmax - cmin).max(1e-12);
    for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
        let c = color.get(i).map_or(0.0, |v| (v - cmin) / range);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            axes.px(*t),
            axes.py(*p),
            heat(c)
        );
    }
    out.push_str("</svg>\n");
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot of one or more labelled series.
pub fn curve_svg(series: &[(String, Vec<(f64, f64)>)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let pts = || series.iter().flat_map(|s| s.1.iter().copied());
    let axes = Axes::fit(pts().map(|p| p.0), pts().map(|p| p.1));
    let mut out = String::new();
    frame(&mut out, &axes, title, xlabel, ylabel);
    for (k, (label, points)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", axes.px(*x), axes.py(*y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 14.0 * (k + 1) as f64,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svgs_are_well_formed_enough() {
        let s = scatter_svg(&[100.0, 120.0], &[105.0, 118.0], &[0.1, 0.5], "SBP <rppg>");
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("&lt;rppg&gt;"));
        assert_eq!(s.matches("<circle").count(), 2);
        let c = curve_svg(&[("uda".into(), vec![(0.1, 90.0), (1.0, 70.0)])], "t", "x", "y");
        assert!(c.contains("<polyline"));
        let empty = curve_svg(&[], "t", "x", "y");
        assert!(empty.ends_with("</svg>\n"));
    }
}
