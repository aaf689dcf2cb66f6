//! Minimal self-contained SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Data range widened by 5% of its span on each side. A degenerate range is
/// widened by 5% of its magnitude, or by 0.05 around zero.
pub fn padded_range(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    let span = hi - lo;
    let pad = if span > 0.0 {
        0.05 * span
    } else if lo != 0.0 {
        0.05 * lo.abs()
    } else {
        0.05
    };
    Some((lo - pad, hi + pad))
}

fn header(out: &mut String, title: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}">"#,
        x.0, x.1, y.0, y.1
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    for (v, px) in [(y.0, y0), (y.1, y1)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            px + 4.0,
            fmt_tick(v)
        );
    }
    for (v, px) in [(x.0, x0), (x.1, x1)] {
        let _ = writeln!(
            out,
            r#"<text x="{px}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            fmt_tick(v)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn to_px(v: f64, range: (f64, f64), p0: f64, p1: f64) -> f64 {
    p0 + (v - range.0) / (range.1 - range.0) * (p1 - p0)
}

/// One polyline through `points`, axes spanning the padded data ranges.
pub fn line_chart(title: &str, points: &[(f64, f64)]) -> Option<String> {
    let xr = padded_range(points.iter().map(|p| p.0))?;
    let yr = padded_range(points.iter().map(|p| p.1))?;
    let mut out = String::new();
    header(&mut out, title, xr, yr);
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| {
            format!("{:.3},{:.3}", to_px(x, xr, MARGIN, WIDTH - MARGIN), to_px(y, yr, HEIGHT - MARGIN, MARGIN))
        })
        .collect();
    let _ =
        writeln!(out, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##, coords.join(" "));
    out.push_str("</svg>\n");
    Some(out)
}

/// Grouped bars: one group per row label, one bar per series.
pub fn bar_chart(title: &str, series: &[String], rows: &[(String, Vec<f64>)]) -> Option<String> {
    let yr = padded_range(rows.iter().flat_map(|r| r.1.iter().copied()).chain([0.0]))?;
    let groups = rows.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, title, (0.0, groups), yr);
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];
    let slot = (WIDTH - 2.0 * MARGIN) / groups;
    let bar = slot * 0.8 / series.len().max(1) as f64;
    let base = to_px(0.0, yr, HEIGHT - MARGIN, MARGIN);
    for (g, (label, vals)) in rows.iter().enumerate() {
        let gx = MARGIN + g as f64 * slot + slot * 0.1;
        for (k, v) in vals.iter().enumerate() {
            let top = to_px(*v, yr, HEIGHT - MARGIN, MARGIN);
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"><title>{} {} = {v}</title></rect>"#,
                gx + k as f64 * bar,
                top.min(base),
                bar,
                (base - top).abs(),
                palette[k % palette.len()],
                escape(label),
                escape(series.get(k).map_or("", String::as_str))
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{}</text>"#,
            gx + slot * 0.4,
            HEIGHT - MARGIN + 30.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(svg: &str, name: &str) -> f64 {
        let key = format!("{name}=\"");
        let start = svg.find(&key).unwrap() + key.len();
        let end = start + svg[start..].find('"').unwrap();
        svg[start..end].parse().unwrap()
    }

    #[test]
    fn padded_ranges() {
        assert_eq!(padded_range([0.0, 10.0]), Some((-0.5, 10.5)));
        assert_eq!(padded_range([2.0]), Some((1.9, 2.1)));
        assert_eq!(padded_range([0.0, 0.0]), Some((-0.05, 0.05)));
        assert_eq!(padded_range(std::iter::empty()), None);
    }

    #[test]
    fn line_chart_parse_back() {
        let svg = line_chart("loss", &[(0.0, 3.0), (4.0, 1.0)]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(attr(&svg, "data-x-min"), -0.2);
        assert_eq!(attr(&svg, "data-x-max"), 4.2);
        assert_eq!(attr(&svg, "data-y-min"), 0.9);
        assert_eq!(attr(&svg, "data-y-max"), 3.1);
    }
}
