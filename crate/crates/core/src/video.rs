//! Raster and session data model: frames, ID masks, scribbles and rounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default object capacity; mirrors a decoder batch of ten objects.
pub const DEFAULT_CAPACITY: usize = 10;

/// Sentinel for a pixel nobody scribbled. Distinct from background (0).
pub const UNLABELED: u8 = u8::MAX;

/// Default stroke half-width in pixels.
pub const DEFAULT_STROKE_RADIUS: f32 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub height: usize,
    pub width: usize,
    /// `H×W×3`, row-major, values in `[0,1]`.
    pub rgb: Vec<f32>,
}

impl Frame {
    pub fn new(index: usize, height: usize, width: usize, rgb: Vec<f32>) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "frame {index}: expected {} rgb values, got {}",
                height * width * 3,
                rgb.len()
            )));
        }
        if rgb.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("frame {index}: rgb outside [0,1]")));
        }
        Ok(Frame {
            index,
            height,
            width,
            rgb,
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Anything that assigns an optional object id to each pixel.
pub trait LabelGrid {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    /// `None` means "no information" (unlabeled).
    fn label(&self, idx: usize) -> Option<u8>;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IdMask {
    pub frame: usize,
    pub round: usize,
    pub height: usize,
    pub width: usize,
    /// 0 = background, 1..=M = objects.
    pub labels: Vec<u8>,
}

impl IdMask {
    pub fn background(frame: usize, round: usize, height: usize, width: usize) -> Self {
        IdMask {
            frame,
            round,
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn new(frame: usize, round: usize, height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid("mask label count does not match extents"));
        }
        Ok(IdMask {
            frame,
            round,
            height,
            width,
            labels,
        })
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Binary mask of one object id.
    pub fn binary(&self, id: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == id).collect()
    }

    pub fn check_capacity(&self, num_objects: usize) -> Result<()> {
        let max = self.max_label() as usize;
        if max > num_objects {
            return Err(Error::invalid(format!(
                "mask of frame {} carries label {max} > {num_objects} objects",
                self.frame
            )));
        }
        Ok(())
    }
}

impl LabelGrid for IdMask {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn label(&self, idx: usize) -> Option<u8> {
        Some(self.labels[idx])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScribbleStroke {
    /// 0 marks a background-correction stroke.
    pub object_id: u8,
    #[serde(default = "default_radius")]
    pub radius: f32,
    /// `[x, y]` pixel coordinates.
    pub points: Vec<[f32; 2]>,
}

fn default_radius() -> f32 {
    DEFAULT_STROKE_RADIUS
}

impl ScribbleStroke {
    pub fn new(object_id: u8, radius: f32, points: Vec<[f32; 2]>) -> Self {
        ScribbleStroke {
            object_id,
            radius,
            points,
        }
    }

    pub fn length(&self) -> f32 {
        self.points
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }
}

/// Per-frame scribble document as exchanged on the wire and on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScribbleDoc {
    pub frame: usize,
    pub strokes: Vec<ScribbleStroke>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScribbleMap {
    pub frame: usize,
    pub round: usize,
    pub height: usize,
    pub width: usize,
    /// Object id per pixel or [`UNLABELED`].
    pub labels: Vec<u8>,
}

impl ScribbleMap {
    pub fn unlabeled(frame: usize, round: usize, height: usize, width: usize) -> Self {
        ScribbleMap {
            frame,
            round,
            height,
            width,
            labels: vec![UNLABELED; height * width],
        }
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled_count() == 0
    }
}

impl LabelGrid for ScribbleMap {
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn label(&self, idx: usize) -> Option<u8> {
        let l = self.labels[idx];
        (l != UNLABELED).then_some(l)
    }
}

fn segment_dist2(px: f32, py: f32, a: [f32; 2], b: [f32; 2]) -> f32 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    (px - cx).powi(2) + (py - cy).powi(2)
}

/// Validates a stroke against the raster extents.
pub fn check_stroke(stroke: &ScribbleStroke, height: usize, width: usize) -> Result<()> {
    if stroke.points.len() < 2 {
        return Err(Error::invalid("a stroke needs at least two points"));
    }
    if !(stroke.radius >= 0.0 && stroke.radius.is_finite()) {
        return Err(Error::invalid("stroke radius must be finite and non-negative"));
    }
    for p in &stroke.points {
        let in_x = p[0] >= 0.0 && p[0] <= (width as f32 - 1.0);
        let in_y = p[1] >= 0.0 && p[1] <= (height as f32 - 1.0);
        if !(in_x && in_y) {
            return Err(Error::invalid(format!(
                "stroke point ({}, {}) outside {width}x{height}",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

/// Pixel indices within `radius` (Euclidean) of the stroke polyline.
pub fn stroke_pixels(stroke: &ScribbleStroke, height: usize, width: usize) -> Vec<usize> {
    let r = stroke.radius;
    let r2 = r * r + 1e-6;
    let (mut x0, mut y0, mut x1, mut y1) = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
    for p in &stroke.points {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let xa = (x0 - r).floor().max(0.0) as usize;
    let ya = (y0 - r).floor().max(0.0) as usize;
    let xb = ((x1 + r).ceil() as usize).min(width - 1);
    let yb = ((y1 + r).ceil() as usize).min(height - 1);
    let mut out = Vec::new();
    for y in ya..=yb {
        for x in xa..=xb {
            let (px, py) = (x as f32, y as f32);
            let hit = stroke
                .points
                .windows(2)
                .any(|w| segment_dist2(px, py, w[0], w[1]) <= r2);
            if hit {
                out.push(y * width + x);
            }
        }
    }
    out
}

/// Rasterizes strokes in order; later strokes overwrite earlier ones.
pub fn rasterize_strokes(
    strokes: &[ScribbleStroke],
    height: usize,
    width: usize,
    frame: usize,
    round: usize,
) -> Result<ScribbleMap> {
    let mut map = ScribbleMap::unlabeled(frame, round, height, width);
    for s in strokes {
        check_stroke(s, height, width)?;
        if s.object_id == UNLABELED {
            return Err(Error::invalid("object id 255 is reserved"));
        }
        for idx in stroke_pixels(s, height, width) {
            map.labels[idx] = s.object_id;
        }
    }
    Ok(map)
}

/// Bijection on object ids `1..=M`; background stays fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    /// `map[k]` is the image of id `k`; `map[0] == 0`.
    map: Vec<u8>,
}

impl Permutation {
    pub fn identity(num_objects: usize) -> Self {
        Permutation {
            map: (0..=num_objects as u8).collect(),
        }
    }

    /// `images[k-1]` is the image of object `k`.
    pub fn new(images: &[u8]) -> Result<Self> {
        let m = images.len();
        let mut seen = vec![false; m + 1];
        for &v in images {
            let v = v as usize;
            if v == 0 || v > m || seen[v] {
                return Err(Error::invalid("relabel map is not a bijection on 1..=M"));
            }
            seen[v] = true;
        }
        let mut map = Vec::with_capacity(m + 1);
        map.push(0);
        map.extend_from_slice(images);
        Ok(Permutation { map })
    }

    pub fn num_objects(&self) -> usize {
        self.map.len() - 1
    }

    pub fn apply(&self, id: u8) -> u8 {
        self.map.get(id as usize).copied().unwrap_or(id)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u8; self.map.len()];
        for (k, &v) in self.map.iter().enumerate() {
            inv[v as usize] = k as u8;
        }
        Permutation { map: inv }
    }
}

pub fn relabel(mask: &IdMask, perm: &Permutation) -> Result<IdMask> {
    mask.check_capacity(perm.num_objects())?;
    let mut out = mask.clone();
    out.labels.iter_mut().for_each(|l| *l = perm.apply(*l));
    Ok(out)
}

pub fn relabel_strokes(strokes: &[ScribbleStroke], perm: &Permutation) -> Vec<ScribbleStroke> {
    strokes
        .iter()
        .map(|s| ScribbleStroke {
            object_id: perm.apply(s.object_id),
            ..s.clone()
        })
        .collect()
}

/// Wall-clock spent per pipeline stage of one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub interaction_ms: f64,
    pub propagation_ms: f64,
    pub repropagation_ms: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.interaction_ms + self.propagation_ms + self.repropagation_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Sorted, distinct, non-empty.
    pub interacted: Vec<usize>,
    pub strokes: BTreeMap<usize, Vec<ScribbleStroke>>,
    pub scribbles: BTreeMap<usize, ScribbleMap>,
    /// AFI outputs for the interacted frames.
    pub afi_masks: BTreeMap<usize, IdMask>,
    /// One mask per video frame once propagation completes.
    pub masks: Vec<IdMask>,
    pub wall_ms: StageTimes,
}

impl RoundRecord {
    pub fn is_complete(&self, num_frames: usize) -> bool {
        self.masks.len() == num_frames
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub video: Vec<Frame>,
    pub num_objects: usize,
    pub rounds: Vec<RoundRecord>,
    /// 1-based index of the round currently open for interaction.
    pub current_round: usize,
}

impl SessionState {
    pub fn new(video: Vec<Frame>, num_objects: usize, capacity: usize) -> Result<Self> {
        if num_objects > capacity {
            return Err(Error::Capacity {
                requested: num_objects,
                capacity,
            });
        }
        validate_video(&video)?;
        Ok(SessionState {
            video,
            num_objects,
            rounds: Vec::new(),
            current_round: 1,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.video.len()
    }

    pub fn extents(&self) -> (usize, usize) {
        self.video
            .first()
            .map_or((0, 0), |f| (f.height, f.width))
    }

    /// Latest complete per-frame masks, if any round has finished.
    pub fn latest_masks(&self) -> Option<&[IdMask]> {
        self.rounds
            .iter()
            .rev()
            .find(|r| r.is_complete(self.video.len()))
            .map(|r| r.masks.as_slice())
    }

    pub fn round(&self, round: usize) -> Option<&RoundRecord> {
        self.rounds.iter().find(|r| r.round == round)
    }
}

pub fn validate_video(video: &[Frame]) -> Result<()> {
    let Some(first) = video.first() else {
        return Err(Error::Format("video has no frames".into()));
    };
    if first.height == 0 || first.width == 0 {
        return Err(Error::Format("frames have zero extent".into()));
    }
    for (i, f) in video.iter().enumerate() {
        if f.height != first.height || f.width != first.width {
            return Err(Error::Format(format!(
                "frame {i} is {}x{}, expected {}x{}",
                f.width, f.height, first.width, first.height
            )));
        }
        if f.index != i {
            return Err(Error::Format(format!("frame {i} carries index {}", f.index)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_strokes_leave_map_unlabeled() {
        let m = rasterize_strokes(&[], 8, 8, 0, 1).unwrap();
        assert!(m.labels.iter().all(|&l| l == UNLABELED));
    }

    #[test]
    fn horizontal_radius_zero_stroke() {
        let s = ScribbleStroke::new(1, 0.0, vec![[2.0, 3.0], [6.0, 3.0]]);
        let m = rasterize_strokes(&[s], 8, 8, 0, 1).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let on = y == 3 && (2..=6).contains(&x);
                assert_eq!(m.labels[y * 8 + x] == 1, on, "({x},{y})");
            }
        }
    }

    #[test]
    fn later_stroke_wins() {
        let a = ScribbleStroke::new(1, 1.0, vec![[0.0, 4.0], [7.0, 4.0]]);
        let b = ScribbleStroke::new(2, 1.0, vec![[4.0, 0.0], [4.0, 7.0]]);
        let m = rasterize_strokes(&[a, b], 8, 8, 0, 1).unwrap();
        assert_eq!(m.labels[4 * 8 + 4], 2);
        assert_eq!(m.labels[4 * 8 + 1], 1);
    }

    #[test]
    fn stroke_validation() {
        let out = ScribbleStroke::new(1, 1.0, vec![[0.0, 0.0], [9.0, 0.0]]);
        assert!(rasterize_strokes(&[out], 8, 8, 0, 1).is_err());
        let short = ScribbleStroke::new(1, 1.0, vec![[0.0, 0.0]]);
        assert!(rasterize_strokes(&[short], 8, 8, 0, 1).is_err());
    }

    #[test]
    fn relabel_cases() {
        let mask = IdMask::new(0, 1, 1, 4, vec![0, 1, 3, 2]).unwrap();
        assert_eq!(relabel(&mask, &Permutation::identity(3)).unwrap(), mask);
        let swap = Permutation::new(&[2, 1, 3]).unwrap();
        let twice = relabel(&relabel(&mask, &swap).unwrap(), &swap).unwrap();
        assert_eq!(twice, mask);
        let p13 = Permutation::new(&[3, 2, 1]).unwrap();
        assert_eq!(relabel(&mask, &p13).unwrap().labels, vec![0, 3, 1, 2]);
        assert!(Permutation::new(&[1, 1, 3]).is_err());
        assert!(Permutation::new(&[0, 2]).is_err());
    }

    #[test]
    fn capacity_enforced() {
        let f = Frame::new(0, 2, 2, vec![0.0; 12]).unwrap();
        assert!(matches!(
            SessionState::new(vec![f], 11, DEFAULT_CAPACITY),
            Err(Error::Capacity { .. })
        ));
    }
}
