//! Region similarity J and boundary accuracy F.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::video::IdMask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid("binary mask length does not match extents"));
        }
        Ok(BinaryMask { height, width, data })
    }

    pub fn from_id(mask: &IdMask, id: u8) -> Self {
        BinaryMask {
            height: mask.height,
            width: mask.width,
            data: mask.binary(id),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn get(&self, y: isize, x: isize) -> Option<bool> {
        if y < 0 || x < 0 || y >= self.height as isize || x >= self.width as isize {
            None
        } else {
            Some(self.data[y as usize * self.width + x as usize])
        }
    }

    /// Mask minus its 3×3 erosion. Outside the image counts as foreground,
    /// so the image border itself is not a boundary.
    pub fn boundary(&self) -> BinaryMask {
        let mut out = vec![false; self.data.len()];
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                if self.get(y, x) != Some(true) {
                    continue;
                }
                let eroded = (-1..=1).all(|dy| (-1..=1).all(|dx| self.get(y + dy, x + dx).unwrap_or(true)));
                out[y as usize * self.width + x as usize] = !eroded;
            }
        }
        BinaryMask {
            height: self.height,
            width: self.width,
            data: out,
        }
    }
}

fn same_extents(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::invalid(format!(
            "mask extents differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// `|a ∩ b| / |a ∪ b|`, 1 when both are empty.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    same_extents(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// 0.8% of the image diagonal, rounded up.
pub fn default_tolerance(height: usize, width: usize) -> f64 {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil()
}

/// `a` dilated by a Euclidean disk of radius `tol`.
fn dilate(a: &BinaryMask, tol: f64) -> Vec<bool> {
    let r = tol.floor() as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= tol * tol)
        .collect();
    let mut out = vec![false; a.data.len()];
    for y in 0..a.height as isize {
        for x in 0..a.width as isize {
            if a.get(y, x) != Some(true) {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (yy, xx) = (y + dy, x + dx);
                if a.get(yy, xx).is_some() {
                    out[yy as usize * a.width + xx as usize] = true;
                }
            }
        }
    }
    out
}

fn matched_fraction(from: &BinaryMask, to_dilated: &[bool]) -> (usize, usize) {
    let total = from.count();
    let hit = from.data.iter().zip(to_dilated).filter(|(&f, &t)| f && t).count();
    (hit, total)
}

/// Boundary F-measure with pixel tolerance `tol`.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> Result<f64> {
    same_extents(pred, gt)?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::invalid("boundary tolerance must be finite and non-negative"));
    }
    let pb = pred.boundary();
    let gb = gt.boundary();
    let (np, ng) = (pb.count(), gb.count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let (p_hit, _) = matched_fraction(&pb, &dilate(&gb, tol));
    let (g_hit, _) = matched_fraction(&gb, &dilate(&pb, tol));
    let precision = p_hit as f64 / np as f64;
    let recall = g_hit as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectScore {
    pub frame: usize,
    pub object: u8,
    pub j: f64,
    pub f: f64,
}

/// J and F for objects `1..=num_objects` of one frame.
pub fn score_frame(pred: &IdMask, gt: &IdMask, num_objects: usize) -> Result<Vec<ObjectScore>> {
    let tol = default_tolerance(gt.height, gt.width);
    (1..=num_objects as u8)
        .map(|k| {
            let p = BinaryMask::from_id(pred, k);
            let g = BinaryMask::from_id(gt, k);
            Ok(ObjectScore {
                frame: gt.frame,
                object: k,
                j: jaccard(&p, &g)?,
                f: boundary_f(&p, &g, tol)?,
            })
        })
        .collect()
}

pub fn score_video(pred: &[IdMask], gt: &[IdMask], num_objects: usize) -> Result<Vec<Vec<ObjectScore>>> {
    if pred.len() != gt.len() {
        return Err(Error::invalid("prediction and ground truth differ in frame count"));
    }
    pred.par_iter()
        .zip(gt)
        .map(|(p, g)| score_frame(p, g, num_objects))
        .collect()
}

fn frame_jf(scores: &[ObjectScore]) -> f64 {
    if scores.is_empty() {
        return 1.0;
    }
    scores.iter().map(|s| (s.j + s.f) / 2.0).sum::<f64>() / scores.len() as f64
}

/// The `count` frames with the lowest mean J&F, ascending by score, ties to
/// the smaller index.
pub fn select_worst_frames(
    masks: &[IdMask],
    gt: &[IdMask],
    num_objects: usize,
    exclude: &[usize],
    count: usize,
) -> Result<Vec<usize>> {
    let scores = score_video(masks, gt, num_objects)?;
    let mut eligible: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(t, _)| !exclude.contains(t))
        .map(|(t, s)| (frame_jf(s), t))
        .collect();
    if eligible.len() < count || count == 0 {
        return Err(Error::invalid(format!(
            "need {count} eligible frames, have {}",
            eligible.len()
        )));
    }
    eligible.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(eligible.into_iter().take(count).map(|(_, t)| t).collect())
}

pub fn select_worst_frame(masks: &[IdMask], gt: &[IdMask], num_objects: usize, exclude: &[usize]) -> Result<usize> {
    Ok(select_worst_frames(masks, gt, num_objects, exclude, 1)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        let mut d = vec![false; h * w];
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                d[y * w + x] = true;
            }
        }
        BinaryMask::new(h, w, d).unwrap()
    }

    #[test]
    fn jaccard_examples() {
        let a = square(30, 30, 5, 5, 10);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &square(30, 30, 18, 18, 10)).unwrap(), 0.0);
        let shifted = square(30, 30, 5, 10, 10);
        assert!((jaccard(&a, &shifted).unwrap() - 50.0 / 150.0).abs() < 1e-12);
        let empty = BinaryMask::new(30, 30, vec![false; 900]).unwrap();
        assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);
        assert!(jaccard(&a, &square(31, 30, 0, 0, 1)).is_err());
    }

    #[test]
    fn boundary_examples() {
        let a = square(60, 60, 5, 5, 10);
        assert_eq!(boundary_f(&a, &a, 2.0).unwrap(), 1.0);
        assert_eq!(boundary_f(&a, &square(60, 60, 5, 35, 10), 2.0).unwrap(), 0.0);
        assert_eq!(boundary_f(&a, &square(60, 60, 5, 6, 10), 1.0).unwrap(), 1.0);
        assert!(boundary_f(&a, &square(60, 60, 5, 6, 10), 0.0).unwrap() < 1.0);
    }

    #[test]
    fn boundary_ignores_image_edge() {
        let full = BinaryMask::new(4, 4, vec![true; 16]).unwrap();
        assert_eq!(full.boundary().count(), 0);
        assert_eq!(boundary_f(&full, &full, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn worst_frame_rules() {
        let gt: Vec<IdMask> = (0..3)
            .map(|t| IdMask::new(t, 0, 2, 2, vec![1, 0, 0, 0]).unwrap())
            .collect();
        let mut pred = gt.clone();
        assert_eq!(select_worst_frame(&pred, &gt, 1, &[]).unwrap(), 0);
        assert_eq!(select_worst_frame(&pred, &gt, 1, &[0]).unwrap(), 1);
        pred[2].labels = vec![0, 0, 0, 1];
        assert_eq!(select_worst_frame(&pred, &gt, 1, &[]).unwrap(), 2);
        assert!(select_worst_frame(&pred, &gt, 1, &[0, 1, 2]).is_err());
    }
}
