//! Simulated user: scribbles the worst frames from ground truth, round
//! after round, through the same session API a person would drive.

use std::collections::{BinaryHeap, VecDeque};
use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::session::Session;
use crate::synth::Scene;
use crate::video::{stroke_pixels, IdMask, ScribbleDoc, ScribbleStroke, StageTimes, DEFAULT_STROKE_RADIUS};

use super::metrics::{select_worst_frames, ObjectScore};

/// Wall-clock budget per round.
pub const ROUND_BUDGET_MS: f64 = 60_000.0;
/// Spacing of polyline samples along a stroke.
pub const SAMPLE_SPACING: usize = 2;
pub const DEFAULT_MIN_LEN: f32 = 8.0;

/// Largest 8-connected component of `region`; ties go to the component
/// met first in raster order.
pub fn largest_component(region: &[bool], height: usize, width: usize) -> Vec<usize> {
    let mut seen = vec![false; region.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..region.len() {
        if !region[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (y, x) = ((p / width) as isize, (p % width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= height as isize || xx >= width as isize {
                        continue;
                    }
                    let q = yy as usize * width + xx as usize;
                    if region[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best.sort_unstable();
    best
}

/// Euclidean distance from each component pixel to the nearest pixel
/// outside it (the image border counts as outside).
fn interior_distance(comp: &[usize], height: usize, width: usize) -> Vec<f32> {
    let mut inside = vec![false; height * width];
    for &p in comp {
        inside[p] = true;
    }
    let mut outside: Vec<(f32, f32)> = Vec::new();
    for &p in comp {
        let (y, x) = ((p / width) as isize, (p % width) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (yy, xx) = (y + dy, x + dx);
                let out_of_image = yy < 0 || xx < 0 || yy >= height as isize || xx >= width as isize;
                if out_of_image || !inside[yy as usize * width + xx as usize] {
                    outside.push((yy as f32, xx as f32));
                }
            }
        }
    }
    outside.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    outside.dedup();
    let mut dist = vec![0.0f32; height * width];
    for &p in comp {
        let (y, x) = ((p / width) as f32, (p % width) as f32);
        dist[p] = outside
            .iter()
            .map(|&(oy, ox)| ((oy - y).powi(2) + (ox - x).powi(2)).sqrt())
            .fold(f32::INFINITY, f32::min);
    }
    dist
}

/// Cheapest paths from `src` over `allowed`, stepping 8-connected; stepping
/// onto a pixel costs more the further it sits below the ridge height.
fn ridge_dijkstra(src: usize, allowed: &[bool], dist: &[f32], ridge: f32, width: usize) -> (Vec<f64>, Vec<usize>) {
    let n = allowed.len();
    let height = n / width;
    let mut cost = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    cost[src] = 0.0;
    heap.push(Reverse((OrdF64(0.0), src)));
    while let Some(Reverse((OrdF64(c), p))) = heap.pop() {
        if c > cost[p] {
            continue;
        }
        let (y, x) = ((p / width) as isize, (p % width) as isize);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (yy, xx) = (y + dy, x + dx);
                if (dy == 0 && dx == 0) || yy < 0 || xx < 0 || yy >= height as isize || xx >= width as isize {
                    continue;
                }
                let q = yy as usize * width + xx as usize;
                if !allowed[q] {
                    continue;
                }
                let step = if dy != 0 && dx != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                let nc = c + step * (1.0 + 4.0 * (ridge - dist[q]).max(0.0) as f64);
                if nc < cost[q] {
                    cost[q] = nc;
                    prev[q] = p;
                    heap.push(Reverse((OrdF64(nc), q)));
                }
            }
        }
    }
    (cost, prev)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Pixel index of the maximum; ties to the smallest index.
fn farthest(cost: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in cost.iter().enumerate() {
        if c.is_finite() && (!cost[best].is_finite() || c > cost[best]) {
            best = i;
        }
    }
    best
}

/// A stroke along the distance ridge of one connected region, kept far
/// enough from the region edge that its rasterization stays inside.
pub fn ridge_stroke(comp: &[usize], height: usize, width: usize, object_id: u8, min_len: f32) -> Option<ScribbleStroke> {
    if comp.is_empty() {
        return None;
    }
    let dist = interior_distance(comp, height, width);
    let top = comp.iter().map(|&p| dist[p]).fold(0.0f32, f32::max);
    // a pixel at interior distance d keeps a disk of radius r inside for
    // r < d; segments between samples two steps apart stray up to ~1.5 px
    let radius = (top - 2.6).clamp(0.0, DEFAULT_STROKE_RADIUS);
    let floor = radius + 1.6;
    let mut allowed = vec![false; height * width];
    for &p in comp {
        allowed[p] = dist[p] >= floor.min(top);
    }
    let seed = *comp
        .iter()
        .filter(|&&p| allowed[p])
        .max_by(|&&a, &&b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))?;
    let (cost, _) = ridge_dijkstra(seed, &allowed, &dist, top, width);
    let a = farthest(&cost);
    let (cost, prev) = ridge_dijkstra(a, &allowed, &dist, top, width);
    let b = farthest(&cost);
    let mut path = vec![b];
    while *path.last().expect("non-empty") != a {
        path.push(prev[*path.last().expect("non-empty")]);
    }
    let mut pts: Vec<[f32; 2]> = path
        .iter()
        .step_by(SAMPLE_SPACING)
        .map(|&p| [(p % width) as f32, (p / width) as f32])
        .collect();
    let last = [(a % width) as f32, (a / width) as f32];
    if pts.last() != Some(&last) {
        pts.push(last);
    }
    if pts.len() == 1 {
        pts.push(pts[0]);
    }
    let mut stroke = ScribbleStroke::new(object_id, radius, pts);
    let _ = min_len; // the geodesic diameter is already the longest ridge path available
    let mut inside = vec![false; height * width];
    for &p in comp {
        inside[p] = true;
    }
    // shrink until contained; radius 0 on pixel centres always is
    while !stroke_pixels(&stroke, height, width).iter().all(|&p| inside[p]) {
        if stroke.radius == 0.0 {
            let full: Vec<[f32; 2]> = path.iter().map(|&p| [(p % width) as f32, (p / width) as f32]).collect();
            stroke.points = if full.len() == 1 { vec![full[0], full[0]] } else { full };
            break;
        }
        stroke.radius = (stroke.radius - 0.5).max(0.0);
    }
    Some(stroke)
}

/// Corrective strokes for one frame: per object, one stroke in its largest
/// missed region; plus one background stroke in the largest false-positive
/// region. A perfect prediction yields no strokes.
pub fn generate_robot_scribbles(pred: &IdMask, gt: &IdMask, min_len: f32) -> Result<Vec<ScribbleStroke>> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::invalid("prediction and ground truth extents differ"));
    }
    let (h, w) = (gt.height, gt.width);
    let max_id = gt.max_label().max(pred.max_label());
    let mut strokes = Vec::new();
    for k in 1..=max_id {
        let fn_region: Vec<bool> = gt.labels.iter().zip(&pred.labels).map(|(&g, &p)| g == k && p != k).collect();
        let comp = largest_component(&fn_region, h, w);
        if let Some(s) = ridge_stroke(&comp, h, w, k, min_len) {
            strokes.push(s);
        }
    }
    let fp: Vec<bool> = gt.labels.iter().zip(&pred.labels).map(|(&g, &p)| g == 0 && p != 0).collect();
    let comp = largest_component(&fp, h, w);
    if let Some(s) = ridge_stroke(&comp, h, w, 0, min_len) {
        strokes.push(s);
    }
    Ok(strokes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub interacted: Vec<usize>,
    pub scores: Vec<ObjectScore>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub mean_jf: f64,
    pub wall_ms: StageTimes,
    pub over_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene: String,
    pub frames_per_round: usize,
    pub rounds: Vec<RoundReport>,
}

pub const METRIC_CSV_HEADER: &str = "scene,round,frame,object,interacted,j,f";

impl MetricReport {
    pub fn final_round(&self) -> &RoundReport {
        self.rounds.last().expect("at least one round")
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rounds {
            for s in &r.scores {
                let inter = r.interacted.contains(&s.frame) as u8;
                out.push_str(&format!(
                    "{},{},{},{},{},{:.6},{:.6}\n",
                    self.scene, r.round, s.frame, s.object, inter, s.j, s.f
                ));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{METRIC_CSV_HEADER}\n{}", self.csv_rows())
    }
}

fn summarize(round: usize, interacted: Vec<usize>, scores: Vec<Vec<ObjectScore>>, wall_ms: StageTimes) -> RoundReport {
    let flat: Vec<ObjectScore> = scores.into_iter().flatten().collect();
    let counted: Vec<&ObjectScore> = flat.iter().filter(|s| !interacted.contains(&s.frame)).collect();
    let n = counted.len().max(1) as f64;
    let mean_j = if counted.is_empty() { 1.0 } else { counted.iter().map(|s| s.j).sum::<f64>() / n };
    let mean_f = if counted.is_empty() { 1.0 } else { counted.iter().map(|s| s.f).sum::<f64>() / n };
    RoundReport {
        round,
        interacted,
        scores: flat,
        mean_j,
        mean_f,
        mean_jf: (mean_j + mean_f) / 2.0,
        over_budget: wall_ms.total() > ROUND_BUDGET_MS,
        wall_ms,
    }
}

/// Runs `rounds` robot rounds of `frames_per_round` frames each.
pub fn run_robot_session(scene: &Scene, frames_per_round: usize, rounds: usize, cfg: &EngineConfig) -> Result<MetricReport> {
    let nf = scene.frames.len();
    if frames_per_round == 0 || rounds == 0 {
        return Err(Error::invalid("frames per round and rounds must be at least 1"));
    }
    if frames_per_round > nf {
        return Err(Error::invalid(format!(
            "{frames_per_round} frames per round exceeds the {nf}-frame video"
        )));
    }
    let m = scene.num_objects();
    let mut session = Session::new(scene.frames.clone(), m, cfg.clone())?.with_ground_truth(scene.gt.clone())?;
    let (h, w) = (scene.config.height, scene.config.width);
    let mut reports = Vec::with_capacity(rounds);
    for r in 1..=rounds {
        let pred: Vec<IdMask> = match session.masks(None) {
            Some(ms) => ms.to_vec(),
            None => (0..nf).map(|t| IdMask::background(t, 0, h, w)).collect(),
        };
        let mut picked = select_worst_frames(&pred, &scene.gt, m, &[], nf)?;
        let mut docs = Vec::new();
        for t in picked.drain(..) {
            let strokes = generate_robot_scribbles(&pred[t], &scene.gt[t], DEFAULT_MIN_LEN)?;
            if !strokes.is_empty() {
                docs.push(ScribbleDoc { frame: t, strokes });
            }
            if docs.len() == frames_per_round {
                break;
            }
        }
        if docs.is_empty() {
            // nothing left to correct; keep the last result
            let last = reports.last().cloned().ok_or_else(|| Error::invalid("nothing to scribble"))?;
            reports.push(RoundReport { round: r, ..last });
            continue;
        }
        docs.sort_by_key(|d| d.frame);
        session.submit_scribbles(r, &docs)?;
        session.commit(&mut |_| {})?;
        let rec = session.propagate(&mut |_| {})?;
        let (interacted, wall) = (rec.interacted.clone(), rec.wall_ms.clone());
        let scores = super::metrics::score_video(&rec.masks.clone(), &scene.gt, m)?;
        reports.push(summarize(r, interacted, scores, wall));
    }
    Ok(MetricReport {
        scene: scene.config.name.clone(),
        frames_per_round,
        rounds: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_mask(h: usize, w: usize, cy: f32, cx: f32, r: f32, id: u8) -> IdMask {
        let labels = (0..h * w)
            .map(|p| {
                let (y, x) = ((p / w) as f32, (p % w) as f32);
                if (y - cy).powi(2) + (x - cx).powi(2) <= r * r { id } else { 0 }
            })
            .collect();
        IdMask::new(0, 0, h, w, labels).unwrap()
    }

    #[test]
    fn perfect_prediction_gives_nothing() {
        let gt = disk_mask(32, 32, 15.0, 15.0, 8.0, 1);
        assert!(generate_robot_scribbles(&gt, &gt, 8.0).unwrap().is_empty());
    }

    #[test]
    fn half_missing_object() {
        let gt = disk_mask(40, 40, 20.0, 20.0, 12.0, 2);
        let mut pred = gt.clone();
        for p in 0..pred.labels.len() {
            if p % 40 >= 20 {
                pred.labels[p] = 0;
            }
        }
        let strokes = generate_robot_scribbles(&pred, &gt, 8.0).unwrap();
        assert_eq!(strokes.len(), 1);
        assert_eq!(strokes[0].object_id, 2);
        for p in stroke_pixels(&strokes[0], 40, 40) {
            assert!(gt.labels[p] == 2 && pred.labels[p] != 2);
        }
        assert!(strokes[0].length() >= 8.0);
    }

    #[test]
    fn false_positive_blob() {
        let gt = IdMask::background(0, 0, 32, 32);
        let pred = disk_mask(32, 32, 10.0, 12.0, 5.0, 1);
        let strokes = generate_robot_scribbles(&pred, &gt, 8.0).unwrap();
        assert_eq!(strokes.len(), 1);
        assert_eq!(strokes[0].object_id, 0);
        for p in stroke_pixels(&strokes[0], 32, 32) {
            assert!(pred.labels[p] == 1);
        }
    }

    #[test]
    fn thin_regions_stay_inside() {
        let mut gt = IdMask::background(0, 0, 16, 16);
        for x in 2..14 {
            gt.labels[5 * 16 + x] = 1;
        }
        gt.labels[9 * 16 + 9] = 1;
        let pred = IdMask::background(0, 0, 16, 16);
        let s = generate_robot_scribbles(&pred, &gt, 8.0).unwrap();
        assert_eq!(s.len(), 1);
        for p in stroke_pixels(&s[0], 16, 16) {
            assert_eq!(gt.labels[p], 1);
        }
    }

    #[test]
    fn component_tie_goes_first() {
        let mut region = vec![false; 25];
        region[0] = true;
        region[24] = true;
        assert_eq!(largest_component(&region, 5, 5), vec![0]);
    }
}
