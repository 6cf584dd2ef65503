//! Independent reference computations and case generators shared by the
//! integration tests. Nothing here calls into the code it checks.

#![allow(dead_code)]

use ivos_core::eval::{generate_robot_scribbles, DEFAULT_MIN_LEN};
use ivos_core::rng::SeededRng;
use ivos_core::synth::{generate_scene, random_scene, Scene};
use ivos_core::{IdMask, Permutation, ScribbleStroke};

/// Owner of frame `t` by brute force: nearest interacted frame, ties to the
/// smaller index. `None` for interacted frames.
pub fn nearest_interacted(interacted: &[usize], t: usize) -> Option<usize> {
    if interacted.contains(&t) {
        return None;
    }
    interacted.iter().copied().min_by_key(|&s| (s.abs_diff(t), s))
}

/// Row-major boolean mask.
#[derive(Debug, Clone)]
pub struct Bits {
    pub h: usize,
    pub w: usize,
    pub v: Vec<bool>,
}

pub fn oracle_jaccard(a: &Bits, b: &Bits) -> f64 {
    let inter = a.v.iter().zip(&b.v).filter(|(x, y)| **x && **y).count();
    let union = a.v.iter().zip(&b.v).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Foreground pixels with at least one background pixel among their
/// in-image 8-neighbours.
pub fn oracle_boundary(a: &Bits) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..a.h as i64 {
        for x in 0..a.w as i64 {
            if !a.v[(y as usize) * a.w + x as usize] {
                continue;
            }
            let mut edge = false;
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < a.h && (xx as usize) < a.w && !a.v[yy as usize * a.w + xx as usize] {
                        edge = true;
                    }
                }
            }
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

fn matched(from: &[(i64, i64)], to: &[(i64, i64)], tol: f64) -> usize {
    from.iter()
        .filter(|(y, x)| {
            to.iter()
                .any(|(v, u)| (((y - v) * (y - v) + (x - u) * (x - u)) as f64).sqrt() <= tol)
        })
        .count()
}

pub fn oracle_boundary_f(a: &Bits, b: &Bits, tol: f64) -> f64 {
    let (pa, pb) = (oracle_boundary(a), oracle_boundary(b));
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let precision = matched(&pa, &pb, tol) as f64 / pa.len() as f64;
    let recall = matched(&pb, &pa, tol) as f64 / pb.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn random_bits(rng: &mut SeededRng, h: usize, w: usize) -> Bits {
    let mut v = vec![false; h * w];
    match rng.below(5) {
        0 => {}
        1 => v.iter_mut().for_each(|b| *b = true),
        2 => {
            let p = rng.uniform(0.1, 0.9);
            v.iter_mut().for_each(|b| *b = rng.next_f64() < p);
        }
        3 => {
            let (y0, x0) = (rng.below(h as u64) as usize, rng.below(w as u64) as usize);
            let (y1, x1) = (y0 + rng.below((h - y0) as u64) as usize, x0 + rng.below((w - x0) as u64) as usize);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    v[y * w + x] = true;
                }
            }
        }
        _ => {
            let (cy, cx) = (rng.uniform(0.0, h as f64), rng.uniform(0.0, w as f64));
            let r = rng.uniform(1.0, (h.max(w) as f64) / 2.0);
            for y in 0..h {
                for x in 0..w {
                    let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                    v[y * w + x] = d <= r;
                }
            }
        }
    }
    Bits { h, w, v }
}

/// Seeded fixture set of mask pairs up to 32×32: empties, full masks,
/// noise, rectangles and disks, plus pairs that differ by a few flips.
pub fn metric_fixture_pairs(count: usize) -> Vec<(Bits, Bits)> {
    let mut rng = SeededRng::new(0xf1c5);
    (0..count)
        .map(|i| {
            let h = 1 + rng.below(32) as usize;
            let w = 1 + rng.below(32) as usize;
            let a = random_bits(&mut rng, h, w);
            let b = if i % 3 == 0 {
                let mut b = a.clone();
                for _ in 0..1 + rng.below(6) {
                    let p = rng.below((h * w) as u64) as usize;
                    b.v[p] = !b.v[p];
                }
                b
            } else {
                random_bits(&mut rng, h, w)
            };
            (a, b)
        })
        .collect()
}

/// Small random scene with `m` objects for equivariance-style cases.
pub fn small_scene(seed: u64, m: usize, frames: usize) -> Scene {
    generate_scene(&random_scene(&format!("case{seed}"), seed, m, frames, 48, 48)).expect("valid scene")
}

pub fn random_permutation(rng: &mut SeededRng, m: usize) -> Permutation {
    let mut ids: Vec<u8> = (1..=m as u8).collect();
    rng.shuffle(&mut ids);
    Permutation::new(&ids).expect("bijection")
}

/// Robot strokes correcting `pred` towards `gt`.
pub fn strokes_for(pred: &IdMask, gt: &IdMask) -> Vec<ScribbleStroke> {
    generate_robot_scribbles(pred, gt, DEFAULT_MIN_LEN).expect("same extents")
}

/// A degraded copy of `gt`: a band of rows is cleared to background and a
/// block is given to another object.
pub fn degrade(gt: &IdMask, rng: &mut SeededRng, m: usize) -> IdMask {
    let mut out = gt.clone();
    let (h, w) = (gt.height, gt.width);
    let y0 = rng.below(h as u64) as usize;
    for y in y0..(y0 + h / 6).min(h) {
        for x in 0..w {
            out.labels[y * w + x] = 0;
        }
    }
    if m > 0 {
        let id = 1 + rng.below(m as u64) as u8;
        let (by, bx) = (rng.below((h / 2) as u64) as usize, rng.below((w / 2) as u64) as usize);
        for y in by..by + h / 5 {
            for x in bx..bx + w / 5 {
                out.labels[y * w + x] = id;
            }
        }
    }
    out
}

/// Nearest-neighbour readout from the first frame's ground truth: each
/// stride-4 cell of frame 0 is a key holding its mean colour and its
/// majority label; every pixel of a later frame takes the label of the
/// nearest key colour (ties to the earlier cell). Returns mean J over the
/// objects of frames `1..`.
pub fn nn_oracle_mean_j(scene: &Scene) -> f64 {
    let (h, w) = (scene.config.height, scene.config.width);
    let m = scene.num_objects();
    let f0 = &scene.frames[0];
    let g0 = &scene.gt[0];
    let mut keys: Vec<([f32; 3], u8)> = Vec::new();
    for cy in (0..h).step_by(4) {
        for cx in (0..w).step_by(4) {
            let mut sum = [0.0f32; 3];
            let mut votes = vec![0usize; m + 1];
            let mut n = 0.0;
            for y in cy..(cy + 4).min(h) {
                for x in cx..(cx + 4).min(w) {
                    let p = f0.pixel(y, x);
                    for c in 0..3 {
                        sum[c] += p[c];
                    }
                    n += 1.0;
                    votes[g0.at(y, x) as usize] += 1;
                }
            }
            let best = (0..=m).max_by_key(|&k| (votes[k], std::cmp::Reverse(k))).unwrap();
            keys.push(([sum[0] / n, sum[1] / n, sum[2] / n], best as u8));
        }
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in 1..scene.frames.len() {
        let f = &scene.frames[t];
        let mut pred = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = f.pixel(y, x);
                let mut best = (f32::INFINITY, 0u8);
                for (c, l) in &keys {
                    let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    if d < best.0 {
                        best = (d, *l);
                    }
                }
                pred[y * w + x] = best.1;
            }
        }
        for k in 1..=m as u8 {
            let a = Bits { h, w, v: pred.iter().map(|&l| l == k).collect() };
            let b = Bits { h, w, v: scene.gt[t].labels.iter().map(|&l| l == k).collect() };
            total += oracle_jaccard(&a, &b);
            count += 1;
        }
    }
    total / count as f64
}
