//! Decode cost as the object count grows, concurrent versus per-object.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::ledger::elapsed_ms;
use crate::propagation::{decode_frame, decode_frame_per_object, update_memory, MemoryEntry, QueryKeys, RoundMemory};
use crate::synth::Scene;
use crate::video::IdMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub objects: usize,
    pub concurrent_ms: f64,
    pub per_object_ms: f64,
    pub concurrent_macs: u64,
    pub per_object_macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub scene: String,
    pub frames: usize,
    pub trials: usize,
    pub rows: Vec<BenchRow>,
}

pub const BENCH_CSV_HEADER: &str = "objects,concurrent_ms,per_object_ms,concurrent_macs,per_object_macs";

impl BenchReport {
    pub fn row(&self, objects: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.objects == objects)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{},{}\n",
                r.objects, r.concurrent_ms, r.per_object_ms, r.concurrent_macs, r.per_object_macs
            ));
        }
        out
    }
}

/// Keeps objects `1..=n`; when `n` exceeds the scene's objects, extra ids
/// are carved out of the background in vertical bands so every channel
/// carries real evidence.
pub fn restrict_objects(mask: &IdMask, scene_objects: usize, n: usize) -> IdMask {
    let mut out = mask.clone();
    let extra = n.saturating_sub(scene_objects);
    for (p, l) in out.labels.iter_mut().enumerate() {
        if *l as usize > n {
            *l = 0;
        }
        if *l == 0 && extra > 0 {
            let band = (p % mask.width) * (extra + 1) / mask.width;
            if band > 0 {
                *l = (scene_objects + band) as u8;
            }
        }
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Memory over `memory_frames`, query every other frame; both decoders see
/// identical inputs. Returns `(memory, queries)` for `n` objects.
pub fn bench_inputs(scene: &Scene, n: usize, memory_frames: &[usize], cfg: &EngineConfig) -> Result<(RoundMemory, Vec<QueryKeys>)> {
    let m = scene.num_objects();
    let entries = memory_frames
        .iter()
        .map(|&t| {
            let mask = restrict_objects(&scene.gt[t], m, n);
            MemoryEntry::encode(&scene.frames[t], &mask, 1, n, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let memory = update_memory(&RoundMemory::empty(n), 1, entries, cfg.memory_cap)?;
    let queries = scene
        .frames
        .iter()
        .filter(|f| !memory_frames.contains(&f.index))
        .map(|f| QueryKeys::from_frame(f, cfg))
        .collect();
    Ok((memory, queries))
}

/// Median wall time and MACs of decoding all query frames, for each object
/// count in `objects`. One warm-up trial per count is discarded.
pub fn benchmark_object_scaling(
    scene: &Scene,
    objects: &[usize],
    trials: usize,
    cfg: &EngineConfig,
) -> Result<BenchReport> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    // counts past the session capacity are allowed here: the batch step
    // above `decoder_batch` is part of what is measured
    if objects.iter().any(|&n| n == 0 || n > 254) {
        return Err(Error::invalid("object counts must be in 1..=254"));
    }
    let nf = scene.frames.len();
    let memory_frames = if nf > 1 { vec![0, nf / 2] } else { vec![0] };
    let mut rows = Vec::new();
    for &n in objects {
        let (memory, queries) = bench_inputs(scene, n, &memory_frames, cfg)?;
        let run = |per_object: bool| -> Result<(f64, u64)> {
            let t0 = Instant::now();
            let mut macs = 0;
            for q in &queries {
                let d = if per_object {
                    decode_frame_per_object(&memory, None, q, 1, cfg)?
                } else {
                    decode_frame(&memory, None, q, 1, cfg)?
                };
                macs += d.macs;
            }
            Ok((elapsed_ms(t0), macs))
        };
        run(false)?;
        run(true)?;
        let (mut conc, mut per) = (Vec::new(), Vec::new());
        let (mut conc_macs, mut per_macs) = (0, 0);
        // interleave so drift hits both paths alike
        for _ in 0..trials {
            let (ms, macs) = run(false)?;
            conc.push(ms);
            conc_macs = macs;
            let (ms, macs) = run(true)?;
            per.push(ms);
            per_macs = macs;
        }
        rows.push(BenchRow {
            objects: n,
            concurrent_ms: median(conc),
            per_object_ms: median(per),
            concurrent_macs: conc_macs,
            per_object_macs: per_macs,
        });
    }
    Ok(BenchReport {
        scene: scene.config.name.clone(),
        frames: nf,
        trials,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{benchmark_recipe, generate_scene};

    #[test]
    fn restriction_keeps_low_ids() {
        let m = IdMask::new(0, 0, 1, 4, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(restrict_objects(&m, 3, 2).labels, vec![0, 1, 2, 0]);
        let wide = IdMask::new(0, 0, 1, 4, vec![0, 0, 0, 0]).unwrap();
        assert_eq!(restrict_objects(&wide, 3, 4).labels, vec![0, 0, 4, 4]);
    }

    #[test]
    fn per_object_macs_scale_linearly() {
        let mut cfg = benchmark_recipe();
        cfg.num_frames = 3;
        let scene = generate_scene(&cfg).unwrap();
        let r = benchmark_object_scaling(&scene, &[1, 2, 3], 1, &EngineConfig::default()).unwrap();
        let one = r.row(1).unwrap().per_object_macs;
        assert_eq!(r.row(3).unwrap().per_object_macs, 3 * one);
        assert!(r.row(3).unwrap().concurrent_macs < 2 * r.row(1).unwrap().concurrent_macs);
        assert!(r.to_csv().starts_with(BENCH_CSV_HEADER));
    }
}
