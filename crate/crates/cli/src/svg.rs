//! A tiny SVG writer: panels, polylines, arrows and labels.

use std::fmt::Write;

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

/// Maps data coordinates into a pixel rectangle (y grows upward).
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Frame {
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
        let px = self.x0 + (x - self.x_range.0) / span(self.x_range) * self.width;
        let py = self.y0 + self.height - (y - self.y_range.0) / span(self.y_range) * self.height;
        (px, py)
    }
}

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Svg {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn frame(&mut self, frame: &Frame, title: &str) {
        let _ = writeln!(
            self.body,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999"/>"##,
            frame.x0, frame.y0, frame.width, frame.height
        );
        self.text(frame.x0 + 4.0, frame.y0 - 6.0, title, 12.0);
    }

    pub fn text(&mut self, x: f64, y: f64, label: &str, size: f64) {
        let escaped = label.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}">{escaped}</text>"#
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str) {
        if points.len() < 2 {
            return;
        }
        let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    /// Arrow from `(x, y)` to `(x + dx, y + dy)` in pixels.
    pub fn arrow(&mut self, x: f64, y: f64, dx: f64, dy: f64, color: &str) {
        let (x1, y1) = (x + dx, y + dy);
        let len = (dx * dx + dy * dy).sqrt();
        if len == 0.0 {
            return;
        }
        let (ux, uy) = (dx / len, dy / len);
        let head = (len * 0.35).min(4.0);
        let (hx, hy) = (x1 - ux * head, y1 - uy * head);
        let (px, py) = (-uy * head * 0.5, ux * head * 0.5);
        let _ = writeln!(
            self.body,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="{color}"/><polygon points="{x1:.2},{y1:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}"/>"#,
            hx + px,
            hy + py,
            hx - px,
            hy - py
        );
    }

    pub fn dot(&mut self, x: f64, y: f64, color: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{color}"/>"#);
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}
