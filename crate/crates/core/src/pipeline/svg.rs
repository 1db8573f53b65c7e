//! Minimal static bar charts.

use std::fmt::Write;

pub const SIGNAL: &str = "#3b6ea5";
pub const NOISE: &str = "#c0392b";
pub const NEUTRAL: &str = "#7f8c8d";

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    /// Half-length of an error whisker.
    pub err: Option<f64>,
    pub color: &'static str,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical bars with a zero line; the y range covers every bar and
/// whisker. `note` goes into a leading XML comment.
pub fn bar_chart(title: &str, y_label: &str, bars: &[Bar], note: &str) -> String {
    let (w, h) = (80.0 + 28.0 * bars.len().max(4) as f64, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 90.0);
    let lo = bars
        .iter()
        .map(|b| b.value - b.err.unwrap_or(0.0))
        .fold(0.0f64, f64::min);
    let hi = bars
        .iter()
        .map(|b| b.value + b.err.unwrap_or(0.0))
        .fold(0.0f64, f64::max)
        .max(lo + 1e-9);
    let plot_h = h - top - bottom;
    let y = |v: f64| top + (hi - v) / (hi - lo) * plot_h;
    let slot = (w - left - right) / bars.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(s, "<!-- {} -->", escape(note));
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<text transform="translate(14,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for tick in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{tick:.2}</text>"#,
            left - 6.0,
            y(tick) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
        w - right,
        y(0.0),
        y(0.0)
    );
    for (i, b) in bars.iter().enumerate() {
        let x = left + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let (y0, y1) = (y(b.value.max(0.0)), y(b.value.min(0.0)));
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y0:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
            (y1 - y0).max(0.5),
            b.color
        );
        if let Some(e) = b.err {
            let cx = x + bw / 2.0;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#,
                y(b.value + e),
                y(b.value - e)
            );
        }
        let lx = x + bw / 2.0;
        let ly = h - bottom + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{lx:.1}" y="{ly:.1}" transform="rotate(60 {lx:.1} {ly:.1})">{}</text>"#,
            escape(&b.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_bar_and_escaped_text() {
        let bars = vec![
            Bar {
                label: "a<b".into(),
                value: 0.5,
                err: Some(0.1),
                color: SIGNAL,
            },
            Bar {
                label: "c".into(),
                value: -0.2,
                err: None,
                color: NOISE,
            },
        ];
        let svg = bar_chart("t & u", "r", &bars, "digest");
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("a&lt;b") && svg.contains("t &amp; u"));
        assert!(svg.starts_with("<!-- digest -->"));
        assert_eq!(svg, bar_chart("t & u", "r", &bars, "digest"));
    }
}
