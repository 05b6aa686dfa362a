//! Minimal raster line chart with axes, grid and legend.

use image::{Rgb, RgbImage};

use super::font::{draw_text, put, text_width, GLYPH_HEIGHT};

pub struct Series<'a> {
    pub name: &'a str,
    pub color: Rgb<u8>,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub width: u32,
    pub height: u32,
}

const MARGIN_LEFT: i64 = 70;
const MARGIN_RIGHT: i64 = 20;
const MARGIN_TOP: i64 = 40;
const MARGIN_BOTTOM: i64 = 55;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const Y_TICKS: usize = 5;

impl Chart<'_> {
    /// Renders all series sharing one pair of axes. The x range spans the
    /// data; the y range starts at 0 and covers at least `[0, 1]`.
    pub fn render(&self, series: &[Series<'_>]) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, BACKGROUND);
        let points = series.iter().flat_map(|s| s.points.iter());
        let (mut x_min, mut x_max, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY, 1.0f64);
        for &(x, y) in points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            if y.is_finite() {
                y_max = y_max.max(y);
            }
        }
        if !x_min.is_finite() {
            (x_min, x_max) = (0.0, 1.0);
        }
        if x_max - x_min < 1e-12 {
            (x_min, x_max) = (x_min - 1.0, x_max + 1.0);
        }
        let y_max = nice_ceiling(y_max);

        let (left, top) = (MARGIN_LEFT, MARGIN_TOP);
        let right = self.width as i64 - MARGIN_RIGHT;
        let bottom = self.height as i64 - MARGIN_BOTTOM;
        let to_px = |x: f64, y: f64| -> (i64, i64) {
            let px = left as f64 + (x - x_min) / (x_max - x_min) * (right - left) as f64;
            let py = bottom as f64 - y.clamp(0.0, y_max) / y_max * (bottom - top) as f64;
            (px.round() as i64, py.round() as i64)
        };

        for i in 0..=Y_TICKS {
            let value = y_max * i as f64 / Y_TICKS as f64;
            let (_, py) = to_px(x_min, value);
            line(&mut img, (left, py), (right, py), GRID, 1);
            let label = format!("{value:.2}");
            draw_text(&mut img, left - 8 - text_width(&label, 1) as i64, py - 3, &label, 1, INK);
        }
        for tick in x_ticks(x_min, x_max) {
            let (px, _) = to_px(tick as f64, 0.0);
            line(&mut img, (px, bottom), (px, bottom + 4), INK, 1);
            let label = format!("{tick}");
            draw_text(&mut img, px - text_width(&label, 1) as i64 / 2, bottom + 8, &label, 1, INK);
        }
        line(&mut img, (left, top), (left, bottom), INK, 1);
        line(&mut img, (left, bottom), (right, bottom), INK, 1);

        for s in series {
            let px: Vec<_> = s.points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| to_px(x, y)).collect();
            for pair in px.windows(2) {
                line(&mut img, pair[0], pair[1], s.color, 2);
            }
            for &(x, y) in &px {
                for dy in -2..=2 {
                    for dx in -2..=2 {
                        put(&mut img, x + dx, y + dy, s.color);
                    }
                }
            }
        }

        let center = |w: u32| (self.width as i64 - w as i64) / 2;
        draw_text(&mut img, center(text_width(self.title, 2)), 12, self.title, 2, INK);
        draw_text(&mut img, center(text_width(self.x_label, 1)), bottom + 26, self.x_label, 1, INK);
        draw_text(&mut img, 6, top - 16, self.y_label, 1, INK);

        let legend_x = right - 10 - series.iter().map(|s| text_width(s.name, 1)).max().unwrap_or(0) as i64 - 22;
        for (i, s) in series.iter().enumerate() {
            let y = top + 8 + i as i64 * (GLYPH_HEIGHT as i64 + 6);
            line(&mut img, (legend_x, y + 3), (legend_x + 16, y + 3), s.color, 2);
            draw_text(&mut img, legend_x + 22, y, s.name, 1, INK);
        }
        img
    }
}

/// Smallest of 1, 2 or 5 times a power of ten that is `>= v`.
fn nice_ceiling(v: f64) -> f64 {
    let exp = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * exp)
        .find(|c| *c >= v - 1e-12)
        .unwrap_or(10.0 * exp)
}

/// Integer-valued ticks, at most about ten of them.
fn x_ticks(min: f64, max: f64) -> Vec<i64> {
    let span = (max - min).max(1.0);
    let step = nice_ceiling(span / 10.0).max(1.0) as i64;
    let first = (min / step as f64).ceil() as i64 * step;
    (0..)
        .map(|i| first + i * step)
        .take_while(|t| (*t as f64) <= max + 1e-9)
        .collect()
}

/// Bresenham line with a square pen of side `thickness`.
pub fn line(img: &mut RgbImage, from: (i64, i64), to: (i64, i64), color: Rgb<u8>, thickness: i64) {
    let (mut x, mut y) = from;
    let (dx, dy) = ((to.0 - x).abs(), -(to.1 - y).abs());
    let (sx, sy) = (if x < to.0 { 1 } else { -1 }, if y < to.1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        for ox in 0..thickness {
            for oy in 0..thickness {
                put(img, x + ox - thickness / 2, y + oy - thickness / 2, color);
            }
        }
        if (x, y) == to {
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
