//! Minimal SVG charts: per-class AUC radar and training loss curve.

use std::f64::consts::PI;
use std::fmt::Write;

use autous_core::train_eval::RadarData;
use autous_core::train_eval::LossPoint;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Radial scale runs from 0 at the centre to 1 at the rim. Missing AUC
/// values are drawn at the centre.
pub fn radar_svg(data: &RadarData, title: &str) -> String {
    let (size, cx, cy, r) = (520.0, 260.0, 270.0, 180.0);
    let n = data.axes.len().max(1);
    let angle = |i: usize| -PI / 2.0 + 2.0 * PI * i as f64 / n as f64;
    let at = |i: usize, v: f64| (cx + r * v * angle(i).cos(), cy + r * v * angle(i).sin());

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{h}" viewBox="0 0 {size} {h}" font-family="sans-serif">"#,
        h = size + 40.0 + 18.0 * data.series.len() as f64
    );
    let _ = writeln!(s, r#"<text x="{cx}" y="30" text-anchor="middle" font-size="16">{}</text>"#, escape(title));
    for ring in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let pts: Vec<String> = (0..n).map(|i| at(i, ring)).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="none" stroke="#ccc"/>"##, pts.join(" "));
    }
    for (i, axis) in data.axes.iter().enumerate() {
        let (x, y) = at(i, 1.0);
        let (lx, ly) = at(i, 1.12);
        let _ = writeln!(s, r##"<line x1="{cx}" y1="{cy}" x2="{x:.2}" y2="{y:.2}" stroke="#999"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" font-size="12">{}</text>"#,
            escape(axis)
        );
    }
    for (k, series) in data.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = (0..n)
            .map(|i| at(i, series.auc.get(i).and_then(|v| v.value()).unwrap_or(0.0).clamp(0.0, 1.0)))
            .map(|(x, y)| format!("{x:.2},{y:.2}"))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon class="series" points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = size + 20.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="20" y="{}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(s, r#"<text x="38" y="{ly}" font-size="12">{}</text>"#, escape(&series.variant));
    }
    s.push_str("</svg>\n");
    s
}

pub fn loss_curve_svg(curve: &[LossPoint], title: &str) -> String {
    let (w, h, pad) = (640.0, 360.0, 50.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<polyline points="{pad},{pad} {pad},{y0} {x1},{y0}" fill="none" stroke="#333"/>"##,
        y0 = h - pad,
        x1 = w - pad
    );
    let finite: Vec<&LossPoint> = curve.iter().filter(|p| p.loss.is_finite()).collect();
    if !finite.is_empty() {
        let smax = finite.iter().map(|p| p.step).max().unwrap_or(0).max(1) as f64;
        let lmax = finite.iter().map(|p| p.loss).fold(f64::MIN, f64::max);
        let lmin = finite.iter().map(|p| p.loss).fold(f64::MAX, f64::min).min(0.0);
        let span = (lmax - lmin).max(1e-12);
        let pts: Vec<String> = finite
            .iter()
            .map(|p| {
                let x = pad + (w - 2.0 * pad) * p.step as f64 / smax;
                let y = h - pad - (h - 2.0 * pad) * (p.loss - lmin) / span;
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(s, r##"<polyline class="loss" points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{lmax:.3}</text>"#, pad - 4.0, pad + 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{lmin:.3}</text>"#, pad - 4.0, h - pad);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">step {}</text>"#, w - pad, h - pad + 16.0, smax);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use autous_core::train_eval::{RadarSeries, RadarValue};

    #[test]
    fn radar_has_one_polygon_per_series() {
        let data = RadarData {
            axes: vec!["Benign".into(), "Malignant".into(), "A<B".into()],
            series: vec![
                RadarSeries {
                    variant: "full".into(),
                    auc: vec![RadarValue::Auc(0.9), RadarValue::Auc(0.8), RadarValue::Missing("n/a".into())],
                },
                RadarSeries {
                    variant: "no_fast".into(),
                    auc: vec![RadarValue::Auc(0.7); 3],
                },
            ],
        };
        let svg = radar_svg(&data, "AUC");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("class=\"series\"").count(), 2);
        assert!(svg.contains("A&lt;B"));
    }

    #[test]
    fn loss_curve_skips_non_finite() {
        let curve: Vec<LossPoint> = (0..5)
            .map(|i| LossPoint {
                step: i,
                epoch: 0,
                loss: if i == 2 { f64::NAN } else { 1.0 / (i + 1) as f64 },
            })
            .collect();
        let svg = loss_curve_svg(&curve, "loss");
        let line = svg.lines().find(|l| l.contains("class=\"loss\"")).unwrap();
        assert_eq!(line.split("points=\"").nth(1).unwrap().split('"').next().unwrap().split(' ').count(), 4);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_curve_is_still_valid_svg() {
        let svg = loss_curve_svg(&[], "x");
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
