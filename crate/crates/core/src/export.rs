//! Static SVG plots and run manifests.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bootstrap::BandPoint;
use crate::error::Result;
use crate::roc::RocCurve;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn px(x: f64) -> f64 {
    MARGIN + x * (SIZE - 2.0 * MARGIN)
}

fn py(y: f64) -> f64 {
    SIZE - MARGIN - y * (SIZE - 2.0 * MARGIN)
}

fn polyline(points: impl Iterator<Item = (f64, f64)>) -> String {
    points
        .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Unit-square plot of one or more labelled curves with the chance
/// diagonal and an optional shaded band.
pub fn render_svg(curves: &[(String, &RocCurve)], band: Option<&[BandPoint]>) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {SIZE} {SIZE}" width="{SIZE}" height="{SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let (lo, hi) = (px(0.0), px(1.0));
    let _ = writeln!(
        svg,
        r#"<rect x="{lo}" y="{lo}" width="{w}" height="{w}" fill="none" stroke="black"/>"#,
        w = hi - lo
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{t}</text>"#,
            px(t),
            py(0.0) + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{t}</text>"#,
            px(0.0) - 6.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    if let Some(band) = band.filter(|b| !b.is_empty()) {
        let upper = band.iter().map(|p| (p.x, p.upper));
        let lower = band.iter().rev().map(|p| (p.x, p.lower));
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            polyline(upper.chain(lower)),
            PALETTE[0]
        );
    }
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            polyline(curve.points.iter().copied())
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{color}">{}</text>"#,
            px(0.55),
            py(0.05) - 16.0 * (curves.len() - 1 - i) as f64,
            escape(label)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">FPR-like</text>"#,
        px(0.5),
        SIZE - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.2})">TPR-like</text>"#,
        py(0.5),
        py(0.5)
    );
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub options: serde_json::Value,
    pub version: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub results: serde_json::Value,
}

/// RFC 3339 timestamp; `SOURCE_DATE_EPOCH` overrides the clock so that
/// reruns can produce identical manifests.
pub fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    fixed
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<String>, options: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            inputs,
            options,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
            results: serde_json::Value::Null,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
