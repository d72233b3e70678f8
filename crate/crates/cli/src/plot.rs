//! A small deterministic rasteriser for curves with confidence bands.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use rotmatch::geometry::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    /// Points sorted by x.
    pub points: Vec<(f64, f64)>,
    /// Half-width of the band around each point, if any.
    pub band: Option<Vec<f64>>,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.12, 0.47, 0.71],
    [0.84, 0.15, 0.16],
    [0.17, 0.63, 0.17],
    [1.00, 0.50, 0.05],
    [0.58, 0.40, 0.74],
    [0.55, 0.34, 0.29],
];

// 3×5 glyphs, one row per nibble, most significant bit on the left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 3, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        _ => return None,
    })
}

struct Canvas {
    img: Image,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        let mut img = Image::new(w, h, 3);
        img.data.iter_mut().for_each(|v| *v = 1.0);
        Self { img }
    }

    fn blend(&mut self, x: i64, y: i64, color: [f64; 3], alpha: f64) {
        if x < 0 || y < 0 || x >= self.img.width as i64 || y >= self.img.height as i64 {
            return;
        }
        let px = self.img.pixel_mut(x as usize, y as usize);
        for c in 0..3 {
            px[c] = px[c] * (1.0 - alpha) + color[c] * alpha;
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [f64; 3], thick: i64) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = ((x0 + t * (x1 - x0)).round() as i64, (y0 + t * (y1 - y0)).round() as i64);
            for dx in 0..thick {
                for dy in 0..thick {
                    self.blend(x + dx - thick / 2, y + dy - thick / 2, color, 1.0);
                }
            }
        }
    }

    fn text(&mut self, s: &str, x: i64, y: i64, scale: i64) {
        let mut cx = x;
        for ch in s.chars() {
            if let Some(g) = glyph(ch) {
                for (r, bits) in g.iter().enumerate() {
                    for b in 0..3 {
                        if bits >> (2 - b) & 1 == 1 {
                            for sy in 0..scale {
                                for sx in 0..scale {
                                    self.blend(cx + b * scale + sx, y + r as i64 * scale + sy, [0.0; 3], 1.0);
                                }
                            }
                        }
                    }
                }
            }
            cx += 4 * scale;
        }
    }
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Draws every series on shared axes: y spans `[0, 100]`, x the union of
/// the data. Bands are blended at 25% opacity beneath the lines.
pub fn render(series: &[Series], width: usize, height: usize) -> Result<Image> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        bail!("nothing to plot");
    }
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (mut x_lo, mut x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if x_hi - x_lo < 1e-12 {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    let (y_lo, y_hi) = (0.0, 100.0);
    let (left, right, top, bottom) = (40.0, 12.0, 12.0, 28.0);
    let (w, h) = (width as f64, height as f64);
    if w <= left + right || h <= top + bottom {
        bail!("plot of {width}x{height} is too small");
    }
    let px = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * (w - left - right);
    let py = |y: f64| h - bottom - (y.clamp(y_lo, y_hi) - y_lo) / (y_hi - y_lo) * (h - top - bottom);

    let mut c = Canvas::new(width, height);
    for k in 0..=4 {
        let y = 25.0 * k as f64;
        c.line((left, py(y)), (w - right, py(y)), [0.88; 3], 1);
        let label = fmt_tick(y);
        c.text(&label, 4, py(y).round() as i64 - 5, 2);
    }
    let x_ticks = 4;
    for k in 0..=x_ticks {
        let x = x_lo + (x_hi - x_lo) * k as f64 / x_ticks as f64;
        c.line((px(x), h - bottom), (px(x), h - bottom + 4.0), [0.0; 3], 1);
        let label = fmt_tick(x);
        let tw = label.len() as i64 * 8;
        c.text(&label, px(x).round() as i64 - tw / 2, (h - bottom + 8.0) as i64, 2);
    }
    c.line((left, top), (left, h - bottom), [0.0; 3], 1);
    c.line((left, h - bottom), (w - right, h - bottom), [0.0; 3], 1);

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(band) = &s.band {
            for seg in s.points.windows(2).zip(band.windows(2)) {
                let ((a, b), (ba, bb)) = ((seg.0[0], seg.0[1]), (seg.1[0], seg.1[1]));
                let (x0, x1) = (px(a.0).round() as i64, px(b.0).round() as i64);
                for x in x0..=x1 {
                    let t = if x1 > x0 { (x - x0) as f64 / (x1 - x0) as f64 } else { 0.0 };
                    let y = a.1 + t * (b.1 - a.1);
                    let half = ba + t * (bb - ba);
                    let (ya, yb) = (py(y + half).round() as i64, py(y - half).round() as i64);
                    for yy in ya..=yb {
                        c.blend(x, yy, color, 0.25);
                    }
                }
            }
        }
        for seg in s.points.windows(2) {
            c.line((px(seg[0].0), py(seg[0].1)), (px(seg[1].0), py(seg[1].1)), color, 2);
        }
        if s.points.len() == 1 {
            let p = s.points[0];
            c.line((px(p.0), py(p.1)), (px(p.0), py(p.1)), color, 4);
        }
    }
    Ok(c.img)
}

/// Curves from a sweep CSV. The x column is `stop_layer` or `angle`, the y
/// column `mean_auc20` or `auc20`, the band `ci95` when present; rows are
/// grouped by `regime` and `protocol`.
pub fn series_from_csv(text: &str) -> Result<Vec<Series>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().context("CSV header")?.clone();
    let col = |names: &[&str]| names.iter().find_map(|n| headers.iter().position(|h| h == *n));
    let x = col(&["stop_layer", "angle"]).context("CSV has neither stop_layer nor angle")?;
    let y = col(&["mean_auc20", "auc20"]).context("CSV has neither mean_auc20 nor auc20")?;
    let ci = col(&["ci95"]);
    let groups: Vec<usize> = ["regime", "protocol"].iter().filter_map(|n| headers.iter().position(|h| h == *n)).collect();
    let mut by_label: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().with_context(|| format!("bad number {:?} in column {}", &rec[i], &headers[i]))
        };
        let label = groups.iter().map(|&g| &rec[g]).collect::<Vec<_>>().join(" ");
        let band = ci.map(num).transpose()?.unwrap_or(0.0);
        by_label.entry(label).or_default().push((num(x)?, num(y)?, band));
    }
    Ok(by_label
        .into_iter()
        .map(|(label, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label,
                points: pts.iter().map(|p| (p.0, p.1)).collect(),
                band: ci.map(|_| pts.iter().map(|p| p.2).collect()),
            }
        })
        .collect())
}
