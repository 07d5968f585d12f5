//! SVG 1.1 drawings of limbs and atoms. Depth grows downward; the horizontal
//! axis shows the first horizontal coordinate.

use std::fmt::Write;

#[derive(Debug, Clone, Copy)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
}

pub struct Polyline {
    /// `(x, y)` in data coordinates.
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub width: f64,
}

pub struct Dot {
    pub x: f64,
    pub y: f64,
    pub mass: f64,
    pub color: String,
}

#[derive(Default)]
pub struct Scene {
    pub polylines: Vec<Polyline>,
    pub dots: Vec<Dot>,
}

/// Stable color for an index tuple (FNV-1a hash mapped to a hue).
pub fn tuple_color(tuple: &[usize]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &i in tuple {
        for b in (i as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("hsl({},65%,40%)", h % 360)
}

impl Scene {
    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let pts = self.polylines.iter().flat_map(|p| p.points.iter().copied()).chain(self.dots.iter().map(|d| (d.x, d.y)));
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for (x, y) in pts {
            b = Some(match b {
                None => (x, x, y, y),
                Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
            });
        }
        b
    }

    pub fn to_svg(&self, canvas: Canvas) -> String {
        let (mut x0, mut x1, mut y0, mut y1) = self.bounds().unwrap_or((0.0, 1.0, 0.0, 1.0));
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let sx = (canvas.width - 2.0 * canvas.margin) / (x1 - x0);
        let sy = (canvas.height - 2.0 * canvas.margin) / (y1 - y0);
        let px = |x: f64| canvas.margin + (x - x0) * sx;
        // SVG's y axis already points down, matching depth
        let py = |y: f64| canvas.margin + (y - y0) * sy;
        let max_mass = self.dots.iter().map(|d| d.mass).fold(0.0, f64::max);

        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
            canvas.width, canvas.height, canvas.width, canvas.height
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r##"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#999" stroke-dasharray="4 3"/>"##,
            canvas.margin,
            py(0.0f64.max(y0)),
            canvas.width - canvas.margin,
            py(0.0f64.max(y0))
        );
        for p in &self.polylines {
            let pts: Vec<String> = p.points.iter().map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{:.2}" stroke-linecap="round"/>"#,
                pts.join(" "),
                p.color,
                p.width
            );
        }
        for d in &self.dots {
            let r = if max_mass > 0.0 { 1.5 + 6.0 * (d.mass / max_mass).sqrt() } else { 2.0 };
            let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="{r:.2}" fill="{}" fill-opacity="0.7"/>"#, px(d.x), py(d.y), d.color);
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_points_down() {
        let scene = Scene {
            polylines: vec![Polyline { points: vec![(0.0, 0.0), (0.0, 1.0)], color: "black".into(), width: 1.0 }],
            dots: vec![],
        };
        let svg = scene.to_svg(Canvas { width: 100.0, height: 100.0, margin: 10.0 });
        assert!(svg.contains(r#"points="50.000,10.000 50.000,90.000""#), "{svg}");
        assert_eq!(tuple_color(&[1, 2]), tuple_color(&[1, 2]));
        assert_ne!(tuple_color(&[1, 2]), tuple_color(&[2, 1]));
    }
}
