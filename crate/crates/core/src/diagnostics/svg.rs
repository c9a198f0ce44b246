//! Minimal SVG 1.1 writer with fixed two-decimal coordinates.

use std::fmt::Write;

/// Heat scale from low (blue) to high (red).
pub const HEAT_STOPS: [(u8, u8, u8); 7] = [
    (0x31, 0x36, 0x95),
    (0x45, 0x75, 0xb4),
    (0x74, 0xad, 0xd1),
    (0xff, 0xff, 0xbf),
    (0xfd, 0xae, 0x61),
    (0xf4, 0x6d, 0x43),
    (0xa5, 0x00, 0x26),
];

const CATEGORICAL: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn fmt2(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn hex(r: u8, g: u8, b: u8) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Color of `t` in `[0, 1]` on the heat scale; out-of-range values clamp.
pub fn heat_color(t: f64) -> String {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * (HEAT_STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(HEAT_STOPS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (HEAT_STOPS[i], HEAT_STOPS[i + 1]);
    let mix = |p: u8, q: u8| (p as f64 + (q as f64 - p as f64) * f).round() as u8;
    hex(mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Hue progression red -> yellow -> green -> blue for `t` in `[0, 1]`.
pub fn progression_hue(t: f64) -> f64 {
    240.0 * t.clamp(0.0, 1.0)
}

pub fn progression_color(t: f64) -> String {
    let h = progression_hue(t) / 60.0;
    let c = 0.9;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        _ => (x, 0.0, c),
    };
    let to = |v: f64| (v * 255.0).round() as u8;
    hex(to(r), to(g), to(b))
}

pub fn category_color(i: usize) -> &'static str {
    CATEGORICAL[i % CATEGORICAL.len()]
}

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    pub fn raw(&mut self, s: &str) {
        self.body.push_str(s);
        self.body.push('\n');
    }

    pub fn open_group(&mut self, class: &str, label: Option<&str>) {
        match label {
            Some(l) => self.raw(&format!(r#"<g class="{}" data-label="{}">"#, escape(class), escape(l))),
            None => self.raw(&format!(r#"<g class="{}">"#, escape(class))),
        }
    }

    pub fn close_group(&mut self) {
        self.raw("</g>");
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let mut s = String::new();
        let _ = write!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            fmt2(x),
            fmt2(y),
            fmt2(w),
            fmt2(h),
            fill
        );
        self.raw(&s);
    }

    pub fn outline(&mut self, x: f64, y: f64, w: f64, h: f64, stroke: &str) {
        self.raw(&format!(
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{}"/>"#,
            fmt2(x),
            fmt2(y),
            fmt2(w),
            fmt2(h),
            stroke
        ));
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        self.raw(&format!(
            r#"<circle cx="{}" cy="{}" r="{}" fill="{}"/>"#,
            fmt2(cx),
            fmt2(cy),
            fmt2(r),
            fill
        ));
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        self.raw(&format!(
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}"/>"#,
            fmt2(x1),
            fmt2(y1),
            fmt2(x2),
            fmt2(y2),
            stroke
        ));
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{},{}", fmt2(*x), fmt2(*y))).collect();
        self.raw(&format!(
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
            pts.join(" "),
            stroke,
            fmt2(width)
        ));
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, text: &str) {
        self.raw(&format!(
            r#"<text x="{}" y="{}" font-size="{}" text-anchor="{}">{}</text>"#,
            fmt2(x),
            fmt2(y),
            fmt2(size),
            anchor,
            escape(text)
        ));
    }

    pub fn finish(self) -> String {
        format!(
            concat!(
                "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
                "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n",
                "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
                "{body}</svg>\n"
            ),
            w = fmt2(self.width),
            h = fmt2(self.height),
            body = self.body
        )
    }
}
