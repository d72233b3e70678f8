//! Dense descriptor renderings: the top three principal components of the
//! descriptors on a grid, shown as RGB.

use anyhow::{bail, Result};
use nalgebra::{DMatrix, Vector2};
use rotmatch::geometry::{rotate_image_quarter, Image};
use rotmatch::tensor::Tensor;

/// Cell centres of a `cols × rows` grid of `cell`-pixel squares, row-major.
pub fn grid(width: usize, height: usize, cell: usize) -> Result<(Vec<Vector2<f64>>, usize, usize)> {
    if cell == 0 || width % cell != 0 || height % cell != 0 {
        bail!("image {width}x{height} is not a whole number of {cell}-pixel cells");
    }
    let (cols, rows) = (width / cell, height / cell);
    let c = cell as f64;
    let pts = (0..rows)
        .flat_map(|r| (0..cols).map(move |k| Vector2::new((k as f64 + 0.5) * c, (r as f64 + 0.5) * c)))
        .collect();
    Ok((pts, cols, rows))
}

/// Rank-3 linear map fitted on one descriptor set, with per-channel
/// min-max scaling into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// Three orthonormal rows of length `d`.
    pub rows: Vec<Vec<f64>>,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Projection {
    pub fn fit(desc: &Tensor) -> Result<Self> {
        let (n, d) = (desc.shape()[0], desc.shape()[1]);
        if n == 0 || d < 3 {
            bail!("need at least one descriptor of dimension ≥ 3, got {n}x{d}");
        }
        let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| desc.data()[i * d + j]).sum::<f64>() / n as f64).collect();
        // Padding with zero rows keeps the full right basis when n < d.
        let mut centered = DMatrix::zeros(n.max(d), d);
        for i in 0..n {
            for j in 0..d {
                centered[(i, j)] = desc.data()[i * d + j] - mean[j];
            }
        }
        let svd = centered.svd(false, true);
        let v_t = svd.v_t.expect("requested V");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
        let rows = order[..3].iter().map(|&k| v_t.row(k).iter().copied().collect()).collect();
        let mut p = Self {
            mean,
            rows,
            lo: [0.0; 3],
            hi: [0.0; 3],
        };
        let comps = p.components(desc);
        for c in 0..3 {
            p.lo[c] = comps.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
            p.hi[c] = comps.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(p)
    }

    pub fn components(&self, desc: &Tensor) -> Vec<[f64; 3]> {
        let d = self.mean.len();
        desc.data()
            .chunks(d)
            .map(|x| {
                std::array::from_fn(|c| {
                    self.rows[c].iter().zip(x).zip(&self.mean).map(|((r, v), m)| r * (v - m)).sum()
                })
            })
            .collect()
    }

    /// One pixel per descriptor; values outside the fitted range are clamped
    /// and a degenerate channel renders at mid grey.
    pub fn render(&self, desc: &Tensor, cols: usize, rows: usize) -> Image {
        let mut img = Image::new(cols, rows, 3);
        for (k, v) in self.components(desc).iter().enumerate() {
            let px = img.pixel_mut(k % cols, k / cols);
            for c in 0..3 {
                let span = self.hi[c] - self.lo[c];
                px[c] = if span > 1e-12 { ((v[c] - self.lo[c]) / span).clamp(0.0, 1.0) } else { 0.5 };
            }
        }
        img
    }
}

/// Mean Euclidean RGB distance between two equally sized renderings.
pub fn mean_rgb_distance(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        bail!("renderings differ in size");
    }
    let n = (a.width * a.height).max(1) as f64;
    Ok(a
        .data
        .chunks(a.channels)
        .zip(b.data.chunks(b.channels))
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n)
}

pub struct DescriptorViz {
    pub upright: Image,
    pub rotated: Image,
    pub projection: Projection,
    /// Distance between the rotated rendering and the upright rendering
    /// turned by the same angle; zero for a rotation-invariant descriptor.
    pub discrepancy: f64,
}

/// Renders `describe` on a grid over `image` and over the image turned by
/// `turns` quarter turns, both through the projection fitted upright.
pub fn visualize<F>(describe: F, image: &Image, turns: usize, cell: usize) -> Result<DescriptorViz>
where
    F: Fn(&Image, &[Vector2<f64>]) -> Result<Tensor>,
{
    let (pts, cols, rows) = grid(image.width, image.height, cell)?;
    let up_desc = describe(image, &pts)?;
    let projection = Projection::fit(&up_desc)?;
    let upright = projection.render(&up_desc, cols, rows);

    let turned = rotate_image_quarter(image, turns);
    let (pts_r, cols_r, rows_r) = grid(turned.width, turned.height, cell)?;
    let rot_desc = describe(&turned, &pts_r)?;
    let rotated = projection.render(&rot_desc, cols_r, rows_r);
    let discrepancy = mean_rgb_distance(&rotated, &rotate_image_quarter(&upright, turns))?;
    Ok(DescriptorViz {
        upright,
        rotated,
        projection,
        discrepancy,
    })
}

/// Quarter turns for an angle in degrees; other angles are rejected.
pub fn quarter_turns(angle_deg: f64) -> Result<usize> {
    let t = angle_deg / 90.0;
    if (t - t.round()).abs() > 1e-9 {
        bail!("descriptor renderings support multiples of 90°, got {angle_deg}");
    }
    Ok(t.round().rem_euclid(4.0) as usize)
}
