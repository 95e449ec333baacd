//! Standalone SVG rendering of a waterfall chart.

use std::fmt::Write;

use retrofit_core::explain::{Sign, Waterfall};

const ROW_H: f64 = 26.0;
const LABEL_W: f64 = 260.0;
const PLOT_W: f64 = 420.0;
const MARGIN: f64 = 16.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Bars run bottom to top from the base value to f(x): the smallest
/// contribution sits just above the base line, the largest at the top.
pub fn waterfall_svg(w: &Waterfall, title: &str) -> String {
    let mut lo = w.base_value.min(w.final_value);
    let mut hi = w.base_value.max(w.final_value);
    for s in &w.steps {
        lo = lo.min(s.cumulative).min(s.cumulative - s.phi);
        hi = hi.max(s.cumulative).max(s.cumulative - s.phi);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x = |v: f64| LABEL_W + (v - lo) / (hi - lo) * PLOT_W;
    let n = w.steps.len();
    let top = MARGIN + 30.0;
    let height = top + (n as f64 + 2.0) * ROW_H + MARGIN;
    let width = LABEL_W + PLOT_W + 2.0 * MARGIN + 60.0;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="{}" font-size="14" font-weight="bold">{}</text>"#, MARGIN + 12.0, escape(title));

    // the first step drawn at the top is the last one applied
    let y_of = |k: usize| top + k as f64 * ROW_H;
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">f(x) = {:.4}</text>"#,
        LABEL_W - 8.0,
        y_of(0) + ROW_H * 0.65,
        w.final_value
    );
    let _ = writeln!(
        out,
        r#"<line x1="{0}" x2="{0}" y1="{1}" y2="{2}" stroke="dimgray" stroke-dasharray="3,3"/>"#,
        x(w.final_value),
        y_of(0),
        y_of(n + 2)
    );
    for (k, s) in w.steps.iter().rev().enumerate() {
        let y = y_of(k + 1) + 3.0;
        let start = s.cumulative - s.phi;
        let (a, b) = (x(start.min(s.cumulative)), x(start.max(s.cumulative)));
        let colour = match s.sign {
            Sign::Positive => "#d62728",
            Sign::Negative => "#1f77b4",
        };
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{} = {:.3}</text>"#,
            LABEL_W - 8.0,
            y + ROW_H * 0.55,
            escape(&s.feature),
            s.value
        );
        let _ = writeln!(
            out,
            r#"<rect x="{a:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
            (b - a).max(1.0),
            ROW_H - 6.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}">{:+.4}</text>"#,
            b + 4.0,
            y + ROW_H * 0.55,
            s.phi
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">E[f(x)] = {:.4}</text>"#,
        LABEL_W - 8.0,
        y_of(n + 1) + ROW_H * 0.65,
        w.base_value
    );
    let _ = writeln!(
        out,
        r#"<line x1="{0}" x2="{0}" y1="{1}" y2="{2}" stroke="gray"/>"#,
        x(w.base_value),
        y_of(1),
        y_of(n + 2)
    );
    out.push_str("</svg>\n");
    out
}
