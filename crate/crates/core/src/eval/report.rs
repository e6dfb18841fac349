//! CSV tables and static SVG plots.

use std::fmt::Write as _;

use super::metrics::MetricsReport;
use super::travel::TravelBin;

pub fn metrics_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsReport)>) -> String {
    let mut s = String::from("method,AP,ATE,ASE,AOE\n");
    for (name, m) in rows {
        let _ = writeln!(s, "{name},{:.4},{:.4},{:.4},{:.4}", m.ap, m.ate, m.ase, m.aoe);
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

pub fn travel_csv(bins: &[TravelBin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,median,q25,q75,hist_count_LQ\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{},{},{},{}", b.lo, b.hi, opt(b.median), opt(b.q25), opt(b.q75), b.hist_lq);
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        PAD + (W - 2.0 * PAD) * v / self.x_max
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (H - 2.0 * PAD) * v / self.y_max
    }

    fn axes(&self, s: &mut String, title: &str, x_label: &str, y_label: &str) {
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
        let _ = writeln!(
            s,
            r#"<path d="M{PAD},{} L{PAD},{} L{},{}" stroke="black" fill="none"/>"#,
            PAD,
            H - PAD,
            W - PAD,
            H - PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{x_label}</text>"#,
            W / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{y_label}</text>"#,
            H / 2.0,
            H / 2.0
        );
        for i in 0..=4 {
            let (xv, yv) = (self.x_max * i as f64 / 4.0, self.y_max * i as f64 / 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{xv:.2}</text>"#,
                self.x(xv),
                H - PAD + 14.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{yv:.2}</text>"#,
                PAD - 4.0,
                self.y(yv) + 3.0
            );
        }
    }
}

fn svg(body: &str) -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n{body}</svg>\n")
}

/// Median location error per travel-length bin with an interquartile band,
/// one series per `(label, bins, color)`.
pub fn travel_svg(series: &[(&str, &[TravelBin], &str)]) -> String {
    let x_max = series.iter().flat_map(|(_, b, _)| b.iter().map(|b| b.hi)).fold(1.0, f64::max);
    let y_max = series.iter().flat_map(|(_, b, _)| b.iter().filter_map(|b| b.q75)).fold(0.1, f64::max) * 1.1;
    let f = Frame { x_max, y_max };
    let mut s = String::new();
    f.axes(&mut s, "Location error vs. query travel length", "travel length (m)", "location error (m)");
    for (k, (label, bins, color)) in series.iter().enumerate() {
        let mut path = String::new();
        for b in bins.iter() {
            let (Some(m), Some(lo), Some(hi)) = (b.median, b.q25, b.q75) else { continue };
            let cx = f.x((b.lo + b.hi) / 2.0);
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="{color}" stroke-opacity="0.5"/>"#,
                f.y(lo),
                f.y(hi)
            );
            let _ = write!(path, "{}{cx:.1},{:.1} ", if path.is_empty() { "M" } else { "L" }, f.y(m));
        }
        if !path.is_empty() {
            let _ = writeln!(s, r#"<path d="{path}" stroke="{color}" fill="none" stroke-width="2"/>"#);
        }
        let ly = 40.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-size="12" fill="{color}">{label}</text>"#, W - PAD - 120.0);
    }
    svg(&s)
}

/// Histogram of LQ travel lengths.
pub fn histogram_svg(bins: &[TravelBin]) -> String {
    let x_max = bins.iter().map(|b| b.hi).fold(1.0, f64::max);
    let y_max = bins.iter().map(|b| b.hist_lq as f64).fold(1.0, f64::max) * 1.1;
    let f = Frame { x_max, y_max };
    let mut s = String::new();
    f.axes(&mut s, "Latest-anchor travel lengths", "travel length (m)", "count");
    for b in bins {
        let (x0, x1) = (f.x(b.lo), f.x(b.hi));
        let y = f.y(b.hist_lq as f64);
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="steelblue"/>"#,
            x1 - x0 - 1.0,
            f.y(0.0) - y
        );
    }
    svg(&s)
}

/// Interpolated precision/recall curves of one report.
pub fn pr_svg(report: &MetricsReport) -> String {
    let f = Frame { x_max: 1.0, y_max: 1.0 };
    let mut s = String::new();
    f.axes(&mut s, "Precision / recall", "recall", "precision");
    let colors = ["#d62728", "#ff7f0e", "#2ca02c", "#1f77b4"];
    for (k, c) in report.curves.iter().enumerate() {
        let color = colors[k % colors.len()];
        let n = c.interpolated.len().saturating_sub(1).max(1) as f64;
        let pts: Vec<String> = c
            .interpolated
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.1},{:.1}", f.x(i as f64 / n), f.y(*p)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{} m: AP {:.3}</text>"#,
            W - PAD - 120.0,
            40.0 + 16.0 * k as f64,
            c.threshold,
            c.ap
        );
    }
    svg(&s)
}
