//! Deterministic hand-crafted multi-scale features.
//!
//! Every cell of a stride-`s` grid gets a unit-normalized appearance
//! descriptor:
//!
//! | channels | content |
//! |----------|---------|
//! | 0..3   | mean RGB, centered at 0.5 |
//! | 3..6   | per-channel RGB standard deviation |
//! | 6..14  | gradient-magnitude histogram of non-flat pixels (fraction of the cell per bin) |
//! | 14..18 | quadrant luminance minus cell luminance |
//! | 18..20 | normalized `(x, y)` cell position in `[-1, 1]` |
//!
//! Each group is scaled by its [`FeatureConfig`] weight before the whole
//! vector is normalized.

use crate::config::{EngineConfig, FeatureConfig};
use crate::error::{Error, Result};
use crate::tensor::{sample_into, SamplePoint, Tensor};
use crate::video::{Frame, IdMask, LabelGrid, ScribbleMap};

pub const DESCRIPTOR_DIM: usize = 20;
pub const LOW_STRIDE: usize = 4;
pub const MID_STRIDE: usize = 8;
pub const HIGH_STRIDE: usize = 16;

/// Lower bin edges of the gradient histogram. Flatter pixels are not
/// counted, so flat regions carry no texture signal at all.
const GRAD_EDGES: [f32; 8] = [0.01, 0.02, 0.04, 0.07, 0.1, 0.15, 0.25, 0.4];

pub fn grid_extent(pixels: usize, stride: usize) -> usize {
    pixels.div_ceil(stride)
}

/// One level of a pyramid. `desc` is `(h·w)×D`, `ids` is `(h·w)×(M+1)`
/// (zero columns on levels that carry no identity channels).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub desc: Tensor,
    pub ids: Tensor,
}

impl FeatureMap {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Confidence mass of a cell's identity channels; zero means unlabeled.
    pub fn mass(&self, cell: usize) -> f32 {
        self.ids.row(cell).iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub frame: usize,
    pub low: FeatureMap,
    pub mid: FeatureMap,
    pub high: FeatureMap,
}

struct PixelStats {
    height: usize,
    width: usize,
    lum: Vec<f32>,
    grad: Vec<f32>,
}

impl PixelStats {
    fn new(frame: &Frame) -> Self {
        let (h, w) = (frame.height, frame.width);
        let lum: Vec<f32> = frame
            .rgb
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        let mut grad = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(w - 1);
                let yu = y.saturating_sub(1);
                let yd = (y + 1).min(h - 1);
                let gx = (lum[y * w + xr] - lum[y * w + xl]) * 0.5;
                let gy = (lum[yd * w + x] - lum[yu * w + x]) * 0.5;
                grad[y * w + x] = (gx * gx + gy * gy).sqrt();
            }
        }
        PixelStats {
            height: h,
            width: w,
            lum,
            grad,
        }
    }
}

fn grad_bin(g: f32) -> Option<usize> {
    GRAD_EDGES.iter().rposition(|&e| g >= e)
}

pub(crate) fn normalize(v: &mut [f32]) {
    let n: f64 = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

fn descriptors_with(frame: &Frame, stats: &PixelStats, stride: usize, cfg: &FeatureConfig) -> Tensor {
    let (h, w) = (stats.height, stats.width);
    let gh = grid_extent(h, stride);
    let gw = grid_extent(w, stride);
    let mut data = vec![0.0f32; gh * gw * DESCRIPTOR_DIM];
    for cy in 0..gh {
        for cx in 0..gw {
            let (y0, y1) = (cy * stride, ((cy + 1) * stride).min(h));
            let (x0, x1) = (cx * stride, ((cx + 1) * stride).min(w));
            let (ym, xm) = ((y0 + y1) / 2, (x0 + x1) / 2);
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            let mut sum = [0.0f64; 3];
            let mut sq = [0.0f64; 3];
            let mut hist = [0.0f64; 8];
            let mut quad = [0.0f64; 4];
            let mut quad_n = [0.0f64; 4];
            let mut lum_sum = 0.0f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = frame.pixel(y, x);
                    for c in 0..3 {
                        sum[c] += p[c] as f64;
                        sq[c] += (p[c] as f64).powi(2);
                    }
                    let i = y * w + x;
                    if let Some(b) = grad_bin(stats.grad[i]) {
                        hist[b] += 1.0;
                    }
                    let q = usize::from(y >= ym && y1 - y0 > 1) * 2 + usize::from(x >= xm && x1 - x0 > 1);
                    quad[q] += stats.lum[i] as f64;
                    quad_n[q] += 1.0;
                    lum_sum += stats.lum[i] as f64;
                }
            }
            let d = &mut data[(cy * gw + cx) * DESCRIPTOR_DIM..][..DESCRIPTOR_DIM];
            let lum_mean = lum_sum / n;
            for c in 0..3 {
                let mean = sum[c] / n;
                let var = (sq[c] / n - mean * mean).max(0.0);
                d[c] = ((mean - 0.5) * cfg.color_weight as f64) as f32;
                d[3 + c] = (var.sqrt() * cfg.spread_weight as f64) as f32;
            }
            for b in 0..8 {
                d[6 + b] = (hist[b] / n * cfg.gradient_weight as f64) as f32;
            }
            for q in 0..4 {
                let qm = if quad_n[q] > 0.0 { quad[q] / quad_n[q] } else { lum_mean };
                d[14 + q] = ((qm - lum_mean) * cfg.quadrant_weight as f64) as f32;
            }
            d[18] = (((cx as f32 + 0.5) / gw as f32 * 2.0 - 1.0) * cfg.position_weight) as f32;
            d[19] = (((cy as f32 + 0.5) / gh as f32 * 2.0 - 1.0) * cfg.position_weight) as f32;
            normalize(d);
        }
    }
    Tensor::new(vec![gh * gw, DESCRIPTOR_DIM], data).expect("descriptor extents")
}

/// Unit-normalized appearance descriptors on a stride-`stride` grid,
/// shaped `(ceil(H/s)·ceil(W/s))×D`.
pub fn cell_descriptors(frame: &Frame, stride: usize, cfg: &FeatureConfig) -> Tensor {
    descriptors_with(frame, &PixelStats::new(frame), stride, cfg)
}

/// Picks one label for a cell from per-pixel labels: majority wins;
/// background wins any tie it takes part in; otherwise the tied label seen
/// first in raster order wins. The last rule does not depend on the id
/// values, which keeps pooling equivariant under object relabeling.
fn majority(labels: impl Iterator<Item = u8>, counts: &mut [u32], first: &mut [usize]) -> Option<u8> {
    counts.iter_mut().for_each(|c| *c = 0);
    first.iter_mut().for_each(|f| *f = usize::MAX);
    let mut any = false;
    for (pos, l) in labels.enumerate() {
        let l = l as usize;
        counts[l] += 1;
        if first[l] == usize::MAX {
            first[l] = pos;
        }
        any = true;
    }
    if !any {
        return None;
    }
    let best = *counts.iter().max().expect("non-empty");
    if counts[0] == best {
        return Some(0);
    }
    (1..counts.len())
        .filter(|&k| counts[k] == best)
        .min_by_key(|&k| first[k])
        .map(|k| k as u8)
}

fn cell_pixels(cy: usize, cx: usize, stride: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y0, y1) = (cy * stride, ((cy + 1) * stride).min(h));
    let (x0, x1) = (cx * stride, ((cx + 1) * stride).min(w));
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| y * w + x))
}

/// Identity channels pooled to a stride-`stride` grid.
///
/// A cell containing any scribbled pixel takes the pooled scribble label at
/// `scribble_conf`; otherwise it takes the pooled previous-mask label at
/// `prev_conf`; otherwise it stays unlabeled (all-zero).
pub fn pool_identity(
    scribble: Option<&ScribbleMap>,
    prev: Option<&IdMask>,
    height: usize,
    width: usize,
    stride: usize,
    num_objects: usize,
    scribble_conf: f32,
    prev_conf: f32,
) -> Result<Tensor> {
    let c = num_objects + 1;
    if let Some(s) = scribble {
        if s.height != height || s.width != width {
            return Err(Error::invalid("scribble map size differs from frame"));
        }
        if s.labels.iter().any(|&l| l != crate::video::UNLABELED && l as usize > num_objects) {
            return Err(Error::invalid("scribble label exceeds object count"));
        }
    }
    if let Some(p) = prev {
        if p.height != height || p.width != width {
            return Err(Error::invalid("previous mask size differs from frame"));
        }
        p.check_capacity(num_objects)?;
    }
    let gh = grid_extent(height, stride);
    let gw = grid_extent(width, stride);
    let mut data = vec![0.0f32; gh * gw * c];
    let mut counts = vec![0u32; c];
    let mut first = vec![0usize; c];
    for cy in 0..gh {
        for cx in 0..gw {
            let cell = cy * gw + cx;
            let from_scribble = scribble.and_then(|s| {
                majority(
                    cell_pixels(cy, cx, stride, height, width).filter_map(|i| s.label(i)),
                    &mut counts,
                    &mut first,
                )
            });
            let picked = match from_scribble {
                Some(l) => Some((l, scribble_conf)),
                None => prev.and_then(|p| {
                    majority(
                        cell_pixels(cy, cx, stride, height, width).map(|i| p.labels[i]),
                        &mut counts,
                        &mut first,
                    )
                    .map(|l| (l, prev_conf))
                }),
            };
            if let Some((l, conf)) = picked {
                data[cell * c + l as usize] = conf;
            }
        }
    }
    Tensor::new(vec![gh * gw, c], data)
}

/// One-hot (unit confidence) identity values of a full mask on a grid.
pub fn pool_mask(mask: &IdMask, stride: usize, num_objects: usize) -> Result<Tensor> {
    pool_identity(None, Some(mask), mask.height, mask.width, stride, num_objects, 1.0, 1.0)
}

/// Scales each labeled cell's identity row by how well the pixels carrying
/// its label represent the cell's colour, so a cell that only grazes a
/// scribble or a mask edge speaks with less confidence.
pub(crate) fn temper_by_colour(
    ids: &mut Tensor,
    frame: &Frame,
    scribble: &ScribbleMap,
    prev: Option<&IdMask>,
    stride: usize,
    sigma: f32,
) {
    let (h, w) = (frame.height, frame.width);
    let gw = grid_extent(w, stride);
    let c = ids.cols();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let data = ids.data_mut();
    for (cell, row) in data.chunks_mut(c).enumerate() {
        let Some(label) = row.iter().position(|&v| v > 0.0) else {
            continue;
        };
        let pixels: Vec<usize> = cell_pixels(cell / gw, cell % gw, stride, h, w).collect();
        let scribbled = pixels.iter().any(|&i| scribble.label(i).is_some());
        let carries = |i: usize| {
            if scribbled {
                scribble.label(i) == Some(label as u8)
            } else {
                prev.is_some_and(|p| p.labels[i] as usize == label)
            }
        };
        let mut all = [0.0f32; 3];
        let mut own = [0.0f32; 3];
        let mut n_own = 0.0f32;
        for &i in &pixels {
            let p = frame.pixel(i / w, i % w);
            let mine = carries(i);
            for k in 0..3 {
                all[k] += p[k];
                if mine {
                    own[k] += p[k];
                }
            }
            n_own += f32::from(u8::from(mine));
        }
        let n = pixels.len() as f32;
        let d2: f32 = (0..3).map(|k| (own[k] / n_own - all[k] / n).powi(2)).sum();
        let s = (-d2 * inv).exp();
        row.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn extract_feature_pyramid(
    frame: &Frame,
    scribble: &ScribbleMap,
    prev_mask: Option<&IdMask>,
    num_objects: usize,
    cfg: &EngineConfig,
) -> Result<FeaturePyramid> {
    let (h, w) = (frame.height, frame.width);
    if scribble.height != h || scribble.width != w {
        return Err(Error::invalid("scribble/frame size mismatch"));
    }
    let stats = PixelStats::new(frame);
    let level = |stride: usize, with_ids: bool| -> Result<FeatureMap> {
        let desc = descriptors_with(frame, &stats, stride, &cfg.features);
        let ids = if with_ids {
            pool_identity(
                Some(scribble),
                prev_mask,
                h,
                w,
                stride,
                num_objects,
                cfg.scribble_confidence,
                cfg.prev_mask_confidence,
            )?
        } else {
            Tensor::zeros(vec![desc.rows(), 0])
        };
        Ok(FeatureMap {
            height: grid_extent(h, stride),
            width: grid_extent(w, stride),
            stride,
            desc,
            ids,
        })
    };
    Ok(FeaturePyramid {
        frame: frame.index,
        low: level(LOW_STRIDE, true)?,
        mid: level(MID_STRIDE, true)?,
        high: level(HIGH_STRIDE, false)?,
    })
}

/// Bilinear resampling of a cell grid onto a finer grid, aligning cell
/// centers. `ratio` is the source stride divided by the target stride.
pub fn upsample(src: &[f32], sh: usize, sw: usize, c: usize, ratio: usize, oh: usize, ow: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; oh * ow * c];
    let r = ratio as f32;
    for y in 0..oh {
        let sy = (y as f32 + 0.5) / r - 0.5;
        for x in 0..ow {
            let sx = (x as f32 + 0.5) / r - 0.5;
            let o = &mut out[(y * ow + x) * c..(y * ow + x + 1) * c];
            sample_into(src, sh, sw, c, SamplePoint::new(sx, sy), o);
        }
    }
    out
}

/// Joint-bilateral upsampling weights from a stride-`stride` cell grid to
/// full resolution. Each pixel mixes the 3×3 cells around its own cell,
/// weighted by a spatial Gaussian (one cell wide) and by how close the
/// pixel's colour is to each cell's mean colour, so label edges follow
/// colour edges inside a cell. Cells of mixed colour (straddling an edge)
/// are trusted less. The weights depend on the frame only, so every channel
/// is resampled independently.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleGuide {
    pub height: usize,
    pub width: usize,
    taps: Vec<[(u32, f32); 9]>,
}

/// Mean colour and colour variance of every stride-`stride` cell.
fn cell_colours(frame: &Frame, stride: usize) -> (Vec<[f32; 3]>, Vec<f32>) {
    let (h, w) = (frame.height, frame.width);
    let (gh, gw) = (grid_extent(h, stride), grid_extent(w, stride));
    let mut means = vec![[0.0f32; 3]; gh * gw];
    let mut vars = vec![0.0f32; gh * gw];
    for (cell, m) in means.iter_mut().enumerate() {
        let mut n = 0.0f32;
        let mut sq = 0.0f32;
        for i in cell_pixels(cell / gw, cell % gw, stride, h, w) {
            let p = frame.pixel(i / w, i % w);
            for c in 0..3 {
                m[c] += p[c];
                sq += p[c] * p[c];
            }
            n += 1.0;
        }
        m.iter_mut().for_each(|v| *v /= n);
        vars[cell] = (sq / n - m.iter().map(|v| v * v).sum::<f32>()).max(0.0);
    }
    (means, vars)
}

impl UpsampleGuide {
    /// Guide from the stride-`stride` grid to pixels.
    pub fn new(frame: &Frame, stride: usize, sigma: f32) -> Self {
        Self::between(frame, stride, 1, sigma)
    }

    /// Guide from the stride-`coarse` grid to the stride-`fine` grid; fine
    /// cells are matched by their mean colour.
    pub fn between(frame: &Frame, coarse: usize, fine: usize, sigma: f32) -> Self {
        let (gh, gw) = (grid_extent(frame.height, coarse), grid_extent(frame.width, coarse));
        let (h, w) = (grid_extent(frame.height, fine), grid_extent(frame.width, fine));
        let inv_range = 1.0 / (2.0 * sigma * sigma);
        let (means, vars) = cell_colours(frame, coarse);
        let trust: Vec<f32> = vars.iter().map(|v| (-v * inv_range).exp()).collect();
        let (fine_means, _) = cell_colours(frame, fine);
        let s = (coarse / fine) as f32;
        let ratio = coarse / fine;
        let mut taps = vec![[(0u32, 0.0f32); 9]; h * w];
        for (i, t) in taps.iter_mut().enumerate() {
            let (y, x) = (i / w, i % w);
            let p = fine_means[i];
            let (fy, fx) = ((y as f32 + 0.5) / s - 0.5, (x as f32 + 0.5) / s - 0.5);
            let (cy, cx) = (y / ratio, x / ratio);
            let mut total = 0.0f32;
            let mut k = 0;
            for ny in cy.saturating_sub(1)..(cy + 2).min(gh) {
                for nx in cx.saturating_sub(1)..(cx + 2).min(gw) {
                    let cell = ny * gw + nx;
                    let d2 = (ny as f32 - fy).powi(2) + (nx as f32 - fx).powi(2);
                    let c2: f32 = (0..3).map(|c| (p[c] - means[cell][c]).powi(2)).sum();
                    let wgt = (-0.5 * d2).exp() * trust[cell] * ((-c2 * inv_range).exp() + 1e-6);
                    t[k] = (cell as u32, wgt);
                    total += wgt;
                    k += 1;
                }
            }
            if total > 0.0 {
                t[..k].iter_mut().for_each(|(_, v)| *v /= total);
            }
        }
        UpsampleGuide { height: h, width: w, taps }
    }

    pub const TAPS: usize = 9;

    /// Resamples a `cells×c` grid to `(height·width)×c`.
    pub fn apply(&self, src: &[f32], c: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; self.height * self.width * c];
        for (o, t) in out.chunks_mut(c).zip(&self.taps) {
            for &(cell, wgt) in t {
                if wgt == 0.0 {
                    continue;
                }
                let s = &src[cell as usize * c..(cell as usize + 1) * c];
                for (a, &v) in o.iter_mut().zip(s) {
                    *a += wgt * v;
                }
            }
        }
        out
    }
}

/// Average-pools a `h×w×c` grid by 2 (partial edge cells average what they
/// cover).
pub fn pool2(src: &[f32], h: usize, w: usize, c: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0f32; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            let o = &mut out[(y * ow + x) * c..(y * ow + x + 1) * c];
            let mut n = 0.0;
            for sy in 2 * y..(2 * y + 2).min(h) {
                for sx in 2 * x..(2 * x + 2).min(w) {
                    n += 1.0;
                    for (a, &v) in o.iter_mut().zip(&src[(sy * w + sx) * c..(sy * w + sx + 1) * c]) {
                        *a += v;
                    }
                }
            }
            o.iter_mut().for_each(|a| *a /= n);
        }
    }
    (out, oh, ow)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{rasterize_strokes, ScribbleStroke};

    fn frame(h: usize, w: usize) -> Frame {
        let rgb = (0..h * w * 3).map(|i| ((i * 37) % 255) as f32 / 255.0).collect();
        Frame::new(0, h, w, rgb).unwrap()
    }

    #[test]
    fn pyramid_extents() {
        let f = frame(64, 64);
        let s = ScribbleMap::unlabeled(0, 1, 64, 64);
        let p = extract_feature_pyramid(&f, &s, None, 3, &EngineConfig::default()).unwrap();
        assert_eq!((p.low.height, p.low.width), (16, 16));
        assert_eq!((p.mid.height, p.mid.width), (8, 8));
        assert_eq!((p.high.height, p.high.width), (4, 4));
        assert_eq!(p.mid.ids.cols(), 4);
        assert_eq!(p.high.ids.cols(), 0);
        let f2 = frame(30, 50);
        let p2 = extract_feature_pyramid(&f2, &ScribbleMap::unlabeled(0, 1, 30, 50), None, 1, &EngineConfig::default())
            .unwrap();
        assert_eq!((p2.low.height, p2.low.width), (8, 13));
        assert_eq!((p2.high.height, p2.high.width), (2, 4));
    }

    #[test]
    fn descriptors_unit_norm() {
        let d = cell_descriptors(&frame(20, 20), 4, &FeatureConfig::default());
        for r in 0..d.rows() {
            let n: f32 = d.row(r).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn one_scribbled_pixel_labels_one_mid_cell() {
        let f = frame(64, 64);
        let s = rasterize_strokes(&[ScribbleStroke::new(2, 0.0, vec![[21.0, 37.0], [21.0, 37.0]])], 64, 64, 0, 1)
            .unwrap();
        let p = extract_feature_pyramid(&f, &s, None, 3, &EngineConfig::default()).unwrap();
        // oracle: the covering mid cell is (37/8, 21/8) = (4, 2)
        for cell in 0..p.mid.cells() {
            let row = p.mid.ids.row(cell);
            if cell == 4 * 8 + 2 {
                assert_eq!(row, &[0.0, 0.0, 1.0, 0.0]);
            } else {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn pyramid_is_deterministic() {
        let f = frame(40, 40);
        let s = ScribbleMap::unlabeled(0, 1, 40, 40);
        let cfg = EngineConfig::default();
        let a = extract_feature_pyramid(&f, &s, None, 2, &cfg).unwrap();
        let b = extract_feature_pyramid(&f, &s, None, 2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_mismatch_rejected() {
        let f = frame(16, 16);
        let s = ScribbleMap::unlabeled(0, 1, 8, 16);
        assert!(extract_feature_pyramid(&f, &s, None, 2, &EngineConfig::default()).is_err());
    }

    #[test]
    fn majority_rules() {
        let mut counts = vec![0; 4];
        let mut first = vec![0; 4];
        assert_eq!(majority([3, 1, 1, 3].into_iter(), &mut counts, &mut first), Some(3));
        assert_eq!(majority([1, 0, 1, 0].into_iter(), &mut counts, &mut first), Some(0));
        assert_eq!(majority([2, 2, 1].into_iter(), &mut counts, &mut first), Some(2));
        assert_eq!(majority(std::iter::empty(), &mut counts, &mut first), None);
    }

    #[test]
    fn scribble_overrides_prev_mask_in_cell() {
        let mut prev = IdMask::background(0, 1, 4, 4);
        prev.labels.iter_mut().for_each(|l| *l = 1);
        let s = rasterize_strokes(&[ScribbleStroke::new(2, 0.0, vec![[0.0, 0.0], [0.0, 0.0]])], 4, 4, 0, 2).unwrap();
        let t = pool_identity(Some(&s), Some(&prev), 4, 4, 4, 2, 1.0, 0.5).unwrap();
        assert_eq!(t.row(0), &[0.0, 0.0, 1.0]);
        let t = pool_identity(None, Some(&prev), 4, 4, 4, 2, 1.0, 0.5).unwrap();
        assert_eq!(t.row(0), &[0.0, 0.5, 0.0]);
    }

    #[test]
    fn upsample_constant_and_identity() {
        let src = vec![2.5f32; 3 * 3 * 2];
        let up = upsample(&src, 3, 3, 2, 4, 12, 12);
        assert!(up.iter().all(|&v| (v - 2.5).abs() < 1e-6));
        let src: Vec<f32> = (0..9).map(|v| v as f32).collect();
        assert_eq!(upsample(&src, 3, 3, 1, 1, 3, 3), src);
    }
}
