//! Small PNG chart renderer: line charts for loss/accuracy curves and
//! grouped bar charts for model comparisons. Text uses an embedded 5×7
//! bitmap font, so no system font stack is required.

use std::path::Path;

pub type Color = [u8; 3];

pub const TRAIN_COLOR: Color = [31, 119, 180]; // blue
pub const TEST_COLOR: Color = [255, 127, 14]; // orange
pub const BAR_COLORS: [Color; 3] = [[31, 119, 180], [255, 127, 14], [44, 160, 44]];
const AXIS: Color = [80, 80, 80];
const GRID: Color = [225, 225, 225];
const TEXT: Color = [40, 40, 40];

pub struct Series<'a> {
    pub label: &'a str,
    pub color: Color,
    pub values: &'a [f64],
}

struct Canvas {
    w: usize,
    h: usize,
    pixels: Vec<u8>, // rgb
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            pixels: vec![255; w * h * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: Color) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = (y as usize * self.w + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.set(x, y, c);
            }
        }
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// A thicker polyline segment: the base line plus a one-pixel offset.
    fn fat_line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Color) {
        self.line(x0, y0, x1, y1, c);
        self.line(x0, y0 + 1, x1, y1 + 1, c);
    }

    fn text(&mut self, x: i64, y: i64, s: &str, c: Color) {
        let mut cx = x;
        for ch in s.chars() {
            let glyph = glyph(ch.to_ascii_uppercase());
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        self.set(cx + col as i64, y + row as i64, c);
                    }
                }
            }
            cx += 6;
        }
    }

    fn save(&self, path: &Path) -> std::io::Result<()> {
        let img = image::RgbImage::from_raw(self.w as u32, self.h as u32, self.pixels.clone())
            .expect("canvas buffer size");
        img.save(path)
            .map_err(|e| std::io::Error::other(e.to_string()))
    }
}

fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        '%' => [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03],
        '/' => [0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0x00; 7],
    }
}

const W: usize = 640;
const H: usize = 480;
const ML: i64 = 64; // margins
const MR: i64 = 20;
const MT: i64 = 32;
const MB: i64 = 44;

fn nice_label(v: f64, range: f64) -> String {
    if range < 0.2 {
        format!("{v:.3}")
    } else if range < 20.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.0}")
    }
}

/// Line chart over integer x positions starting at `x_start`.
pub fn line_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    series: &[Series<'_>],
    x_start: usize,
) -> std::io::Result<()> {
    assert!(!series.is_empty() && series.iter().all(|s| !s.values.is_empty()));
    let mut canvas = Canvas::new(W, H);
    let n = series.iter().map(|s| s.values.len()).max().unwrap();
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !(y_max - y_min).is_normal() {
        y_min -= 0.5;
        y_max += 0.5;
    } else {
        let pad = (y_max - y_min) * 0.08;
        y_min -= pad;
        y_max += pad;
    }
    let (px0, px1) = (ML, W as i64 - MR);
    let (py0, py1) = (MT, H as i64 - MB);
    let x_of = |i: usize| -> i64 {
        if n == 1 {
            (px0 + px1) / 2
        } else {
            px0 + ((px1 - px0) as f64 * i as f64 / (n - 1) as f64).round() as i64
        }
    };
    let y_of = |v: f64| -> i64 { py1 - ((py1 - py0) as f64 * (v - y_min) / (y_max - y_min)).round() as i64 };

    // Gridlines and y tick labels.
    for t in 0..=4 {
        let v = y_min + (y_max - y_min) * f64::from(t) / 4.0;
        let y = y_of(v);
        canvas.line(px0, y, px1, y, GRID);
        canvas.text(6, y - 3, &nice_label(v, y_max - y_min), TEXT);
    }
    // X ticks at integer positions.
    let step = (n / 8).max(1);
    for i in (0..n).step_by(step) {
        let x = x_of(i);
        canvas.line(x, py1, x, py1 + 4, AXIS);
        canvas.text(x - 6, py1 + 8, &format!("{}", x_start + i), TEXT);
    }
    // Axes.
    canvas.line(px0, py0, px0, py1, AXIS);
    canvas.line(px0, py1, px1, py1, AXIS);
    canvas.text(ML, 10, title, TEXT);
    canvas.text(6, MT - 14, y_label, TEXT);
    canvas.text((px0 + px1) / 2 - 15, H as i64 - 14, "EPOCH", TEXT);

    // Series plus legend.
    for (k, s) in series.iter().enumerate() {
        for i in 1..s.values.len() {
            canvas.fat_line(
                x_of(i - 1),
                y_of(s.values[i - 1]),
                x_of(i),
                y_of(s.values[i]),
                s.color,
            );
        }
        if s.values.len() == 1 {
            let (x, y) = (x_of(0), y_of(s.values[0]));
            canvas.fill_rect(x - 2, y - 2, x + 2, y + 2, s.color);
        }
        let ly = py0 + 8 + 14 * k as i64;
        canvas.fill_rect(px1 - 110, ly, px1 - 98, ly + 8, s.color);
        canvas.text(px1 - 92, ly + 1, s.label, TEXT);
    }
    canvas.save(path)
}

/// Grouped bar chart: one cluster per group, one bar per series entry.
pub fn bar_chart(
    path: &Path,
    title: &str,
    group_names: &[String],
    series_labels: &[&str],
    values: &[Vec<f64>], // values[group][series]
) -> std::io::Result<()> {
    assert_eq!(group_names.len(), values.len());
    let mut canvas = Canvas::new(W, H);
    let (px0, px1) = (ML, W as i64 - MR);
    let (py0, py1) = (MT, H as i64 - MB);
    let y_max = values
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-9)
        * 1.1;
    let y_of = |v: f64| -> i64 { py1 - ((py1 - py0) as f64 * v / y_max).round() as i64 };
    for t in 0..=4 {
        let v = y_max * f64::from(t) / 4.0;
        let y = y_of(v);
        canvas.line(px0, y, px1, y, GRID);
        canvas.text(6, y - 3, &nice_label(v, y_max), TEXT);
    }
    canvas.line(px0, py0, px0, py1, AXIS);
    canvas.line(px0, py1, px1, py1, AXIS);
    canvas.text(ML, 10, title, TEXT);

    let groups = group_names.len() as i64;
    let cluster_w = (px1 - px0) / groups.max(1);
    let bars = series_labels.len() as i64;
    let bar_w = ((cluster_w - 16) / bars.max(1)).max(2);
    for (g, row) in values.iter().enumerate() {
        let cx0 = px0 + cluster_w * g as i64 + 8;
        for (s, &v) in row.iter().enumerate() {
            let color = BAR_COLORS[s % BAR_COLORS.len()];
            let x0 = cx0 + bar_w * s as i64;
            canvas.fill_rect(x0, y_of(v), x0 + bar_w - 2, py1 - 1, color);
        }
        let name: String = group_names[g].chars().take(14).collect();
        canvas.text(cx0, py1 + 8, &name, TEXT);
    }
    for (s, label) in series_labels.iter().enumerate() {
        let ly = py0 + 8 + 14 * s as i64;
        canvas.fill_rect(px1 - 130, ly, px1 - 118, ly + 8, BAR_COLORS[s % BAR_COLORS.len()]);
        canvas.text(px1 - 112, ly + 1, label, TEXT);
    }
    canvas.save(path)
}
