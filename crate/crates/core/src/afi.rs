//! Across-frame interaction: turns scribbles, previous masks and RGB of the
//! interacted frames into one multi-object mask per interacted frame.
//!
//! Mid-level (stride-8) features go through across-frame attention: a
//! within-frame deformable stage over a fixed star of sample points, then
//! joint multi-head attention over the tokens of all interacted frames,
//! which is how a scribble on one frame reaches the others. Low and high
//! levels feed the frame enhancer. The mask head fuses both readouts with
//! the previous-round mask.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::features::{
    extract_feature_pyramid, normalize, pool2, temper_by_colour, upsample, FeatureMap, FeaturePyramid, UpsampleGuide, DESCRIPTOR_DIM, LOW_STRIDE,
    MID_STRIDE,
};
use crate::id::{id_decode, IdLogits};
use crate::ledger::{elapsed_ms, OpLedger};
use crate::rng::SeededRng;
use crate::tensor::{attend, sample_into, softmax_in_place, SamplePoint, Tensor};
use crate::video::{Frame, IdMask, ScribbleMap, UNLABELED};

/// Fixed deformable sampling offsets in cells: the four axial neighbours at
/// distance 1 and the four diagonals at distance 2.
pub const STAR_OFFSETS: [(f32, f32); 8] = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (2.0, 2.0),
    (-2.0, 2.0),
    (2.0, -2.0),
    (-2.0, -2.0),
];

pub const DILATIONS: [usize; 3] = [1, 2, 4];

const ENHANCER_SALT: u64 = 0x656e_6861_6e63_6572;

#[derive(Debug, Clone, PartialEq)]
pub struct AcrossFrameEmbedding {
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    /// `(h·w)×D` fused descriptors.
    pub desc: Tensor,
    /// `(h·w)×(M+1)` identity readout; sums to one per cell.
    pub ids: Tensor,
}

/// Converts a raw `[ids.., mass]` readout into identity scores.
///
/// The id channels are divided by the read mass so that only labeled tokens
/// vote. Below `floor` the vote fades linearly; with `fill_background` the
/// missing share goes to channel 0, otherwise it is dropped.
fn settle(raw: &[f32], floor: f32, fill_background: bool, out: &mut [f32]) {
    let c = out.len();
    let mass = raw[c];
    let s = (mass / floor).min(1.0);
    if mass > 0.0 {
        for (o, &v) in out.iter_mut().zip(&raw[..c]) {
            *o = s * v / mass;
        }
    } else {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    if fill_background {
        out[0] += 1.0 - s.max(0.0);
    }
}

/// Appends a mass column (row sum of the identity channels).
fn with_mass(ids: &Tensor) -> Tensor {
    let c = ids.cols();
    let mut data = Vec::with_capacity(ids.rows() * (c + 1));
    for r in 0..ids.rows() {
        let row = ids.row(r);
        data.extend_from_slice(row);
        data.push(row.iter().sum());
    }
    Tensor::new(vec![ids.rows(), c + 1], data).expect("finite ids")
}

/// Within-frame deformable attention over [`STAR_OFFSETS`]; each cell adds
/// the softmax-weighted mean of its sampled neighbours and is renormalized.
pub fn deformable_self_attention(map: &FeatureMap, temperature: f32) -> (Tensor, u64) {
    let (h, w, d) = (map.height, map.width, map.desc.cols());
    let src = map.desc.data();
    let mut out = vec![0.0f32; h * w * d];
    out.par_chunks_mut(d).enumerate().for_each(|(cell, o)| {
        let (cy, cx) = ((cell / w) as f32, (cell % w) as f32);
        let q = &src[cell * d..(cell + 1) * d];
        let mut samples = vec![0.0f32; STAR_OFFSETS.len() * d];
        let mut logits = [0.0f32; STAR_OFFSETS.len()];
        for (k, &(dx, dy)) in STAR_OFFSETS.iter().enumerate() {
            let s = &mut samples[k * d..(k + 1) * d];
            sample_into(src, h, w, d, SamplePoint::new(cx + dx, cy + dy), s);
            let dot: f64 = q.iter().zip(s.iter()).map(|(&a, &b)| a as f64 * b as f64).sum();
            logits[k] = (dot / temperature as f64) as f32;
        }
        softmax_in_place(&mut logits);
        let mut acc: Vec<f64> = q.iter().map(|&v| v as f64).collect();
        for (k, &wk) in logits.iter().enumerate() {
            for (a, &v) in acc.iter_mut().zip(&samples[k * d..(k + 1) * d]) {
                *a += wk as f64 * v as f64;
            }
        }
        for (oi, a) in o.iter_mut().zip(acc) {
            *oi = a as f32;
        }
        normalize(o);
    });
    let k = STAR_OFFSETS.len() as u64;
    let macs = (h * w) as u64 * k * (4 * d as u64 + 2 * d as u64);
    (Tensor::new(vec![h * w, d], out).expect("finite"), macs)
}

/// Across-frame attention over the mid-level maps of all interacted frames.
///
/// Stage 1 runs [`deformable_self_attention`] per frame. Stage 2 forms one
/// token set from every cell of every frame (`Q = K = V`, no cross-frame
/// positional encoding) and runs multi-head attention; identity channels
/// and their mass ride along as a payload read with head-averaged weights.
/// When the token count exceeds `cfg.token_cap`, keys and values are
/// average-pooled by 2 per frame until they fit; queries stay at full
/// resolution so outputs keep the input extents.
pub fn across_frame_attention(mids: &[FeatureMap], cfg: &EngineConfig) -> Result<(Vec<AcrossFrameEmbedding>, u64)> {
    let Some(first) = mids.first() else {
        return Err(Error::invalid("across_frame_attention needs at least one frame"));
    };
    let (h, w, c) = (first.height, first.width, first.ids.cols());
    if mids
        .iter()
        .any(|m| m.height != h || m.width != w || m.ids.cols() != c || m.desc.cols() != DESCRIPTOR_DIM)
    {
        return Err(Error::invalid("mid-level maps must share extents and channels"));
    }
    let d = DESCRIPTOR_DIM;
    let stage1: Vec<(Tensor, u64)> = mids
        .par_iter()
        .map(|m| deformable_self_attention(m, cfg.temperature))
        .collect();
    let mut macs: u64 = stage1.iter().map(|s| s.1).sum();

    let mut queries = Vec::with_capacity(mids.len() * h * w * d);
    for (t, _) in &stage1 {
        queries.extend_from_slice(t.data());
    }
    let queries = Tensor::new(vec![mids.len() * h * w, d], queries)?;

    // keys/values: [desc | ids | mass], pooled per frame while over the cap
    let kw = d + c + 1;
    let mut per_frame: Vec<Vec<f32>> = stage1
        .iter()
        .zip(mids)
        .map(|((desc, _), m)| {
            let payload = with_mass(&m.ids);
            let mut v = Vec::with_capacity(h * w * kw);
            for r in 0..h * w {
                v.extend_from_slice(desc.row(r));
                v.extend_from_slice(payload.row(r));
            }
            v
        })
        .collect();
    let (mut kh, mut kwid) = (h, w);
    while mids.len() * kh * kwid > cfg.token_cap && (kh > 1 || kwid > 1) {
        let mut dims = (kh, kwid);
        for v in per_frame.iter_mut() {
            let (p, ph, pw) = pool2(v, kh, kwid, kw);
            *v = p;
            dims = (ph, pw);
        }
        (kh, kwid) = dims;
    }
    let nk = mids.len() * kh * kwid;
    let mut keys = Vec::with_capacity(nk * d);
    let mut payload = Vec::with_capacity(nk * (c + 1));
    for v in &per_frame {
        for row in v.chunks(kw) {
            keys.extend_from_slice(&row[..d]);
            payload.extend_from_slice(&row[d..]);
        }
    }
    let keys = Tensor::new(vec![nk, d], keys)?;
    let payload = Tensor::new(vec![nk, c + 1], payload)?;

    let att = attend(&queries, &keys, Some(&keys), Some(&payload), cfg.heads, cfg.temperature)?;
    macs += att.macs;
    let desc_out = att.values.expect("values");
    let raw = att.payload.expect("payload");

    let n = h * w;
    let out = mids
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let desc = Tensor::new(vec![n, d], desc_out.data()[t * n * d..(t + 1) * n * d].to_vec())?;
            let mut ids = vec![0.0f32; n * c];
            for cell in 0..n {
                settle(
                    raw.row(t * n + cell),
                    cfg.evidence_floor,
                    true,
                    &mut ids[cell * c..(cell + 1) * c],
                );
            }
            Ok(AcrossFrameEmbedding {
                frame: t,
                height: m.height,
                width: m.width,
                desc,
                ids: Tensor::new(vec![n, c], ids)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, macs))
}

/// The ASPP stand-in: the input followed by 3×3 average pooling at each of
/// [`DILATIONS`] (taps at `{-d, 0, d}²`, in-bounds taps only), concatenated
/// channel-wise into `4c` channels.
pub fn multi_dilation_pool(src: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let oc = c * (1 + DILATIONS.len());
    let mut out = vec![0.0f32; h * w * oc];
    out.par_chunks_mut(oc).enumerate().for_each(|(cell, o)| {
        let (y, x) = ((cell / w) as isize, (cell % w) as isize);
        o[..c].copy_from_slice(&src[cell * c..(cell + 1) * c]);
        for (di, &dil) in DILATIONS.iter().enumerate() {
            let dst = &mut o[(di + 1) * c..(di + 2) * c];
            let mut n = 0.0f32;
            for dy in [-1isize, 0, 1] {
                for dx in [-1isize, 0, 1] {
                    let (sy, sx) = (y + dy * dil as isize, x + dx * dil as isize);
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    n += 1.0;
                    let s = (sy as usize * w + sx as usize) * c;
                    for (a, &v) in dst.iter_mut().zip(&src[s..s + c]) {
                        *a += v;
                    }
                }
            }
            dst.iter_mut().for_each(|a| *a /= n);
        }
    });
    out
}

/// Current-frame embedding at stride 4.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedFrame {
    pub height: usize,
    pub width: usize,
    /// `(h·w)×enhancer_dim`, unit-normalized per cell.
    pub embed: Tensor,
    /// Identity channels of the low level, passed through untouched.
    pub ids: Tensor,
}

fn enhancer_weights(in_dim: usize, out_dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = SeededRng::derive(seed, ENHANCER_SALT ^ ((in_dim as u64) << 32 | out_dim as u64));
    let bound = (3.0 / in_dim as f64).sqrt();
    (0..in_dim * out_dim).map(|_| rng.uniform(-bound, bound) as f32).collect()
}

/// High level upsampled to the low level and concatenated with it, then
/// [`multi_dilation_pool`], then a fixed seeded position-wise linear map with
/// ReLU to `cfg.enhancer_dim` channels. Identity channels bypass all of it.
pub fn frame_enhancer(low: &FeatureMap, high: &FeatureMap, cfg: &EngineConfig) -> Result<(EnhancedFrame, u64)> {
    let ratio = high.stride / low.stride.max(1);
    if ratio == 0
        || high.stride % low.stride != 0
        || low.height.div_ceil(ratio) != high.height
        || low.width.div_ceil(ratio) != high.width
    {
        return Err(Error::invalid("frame_enhancer: low/high extents are inconsistent"));
    }
    let (h, w) = (low.height, low.width);
    let (dl, dh) = (low.desc.cols(), high.desc.cols());
    let up = upsample(high.desc.data(), high.height, high.width, dh, ratio, h, w);
    let cat_c = dl + dh;
    let mut cat = Vec::with_capacity(h * w * cat_c);
    for cell in 0..h * w {
        cat.extend_from_slice(low.desc.row(cell));
        cat.extend(up[cell * dh..(cell + 1) * dh].iter().map(|v| v * cfg.enhancer.context));
    }
    let mut pooled = multi_dilation_pool(&cat, h, w, cat_c);
    for cell in pooled.chunks_mut(cat_c * (1 + DILATIONS.len())) {
        for (block, &bw) in cell.chunks_mut(cat_c).zip(&cfg.enhancer.branches) {
            block.iter_mut().for_each(|v| *v *= bw);
        }
    }
    let in_dim = cat_c * (1 + DILATIONS.len());
    let out_dim = cfg.enhancer_dim;
    let weights = enhancer_weights(in_dim, out_dim, cfg.seed);
    let mut embed = vec![0.0f32; h * w * out_dim];
    embed.par_chunks_mut(out_dim).enumerate().for_each(|(cell, o)| {
        let x = &pooled[cell * in_dim..(cell + 1) * in_dim];
        for (j, oj) in o.iter_mut().enumerate() {
            let row = &weights[j * in_dim..(j + 1) * in_dim];
            let v: f64 = row.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum();
            *oj = v.max(0.0) as f32;
        }
        normalize(o);
    });
    let macs = (h * w * in_dim * out_dim) as u64;
    Ok((
        EnhancedFrame {
            height: h,
            width: w,
            embed: Tensor::new(vec![h * w, out_dim], embed)?,
            ids: low.ids.clone(),
        },
        macs,
    ))
}

/// Readout of the frame's own identity evidence through its enhancer
/// embedding. Every cell is a key; unlabeled cells carry no mass, so cells
/// that mostly resemble unlabeled ones fade to background. All-zero when
/// the frame has no labels.
pub fn local_readout(enh: &EnhancedFrame, cfg: &EngineConfig) -> Result<(Vec<f32>, u64)> {
    let c = enh.ids.cols();
    let n = enh.height * enh.width;
    if enh.ids.data().iter().all(|&v| v == 0.0) {
        return Ok((vec![0.0; n * c], 0));
    }
    let payload = with_mass(&enh.ids);
    let att = attend(&enh.embed, &enh.embed, None, Some(&payload), 1, cfg.temperature)?;
    let raw = att.payload.expect("payload");
    let mut out = vec![0.0f32; n * c];
    for cell in 0..n {
        settle(raw.row(cell), cfg.evidence_floor, true, &mut out[cell * c..(cell + 1) * c]);
    }
    Ok((out, att.macs))
}

pub struct AfiInput<'a> {
    pub frame: &'a Frame,
    pub scribble: &'a ScribbleMap,
    pub prev_mask: Option<&'a IdMask>,
}

/// Masks for all interacted frames of one round.
///
/// Per frame, stride-4 scores are `α·across + β·local`, upsampled to full
/// resolution, plus `γ·onehot(prev_mask)`; decoded by argmax. Scribbled
/// pixels always keep their scribbled id. With `cfg.guide_sigma > 0` the
/// upsampling is edge-aware (as in the decoder) and labeled cells whose
/// colour is poorly represented by their labeled pixels count as weaker
/// evidence in both readouts.
pub fn afi_masks(
    inputs: &[AfiInput<'_>],
    num_objects: usize,
    round: usize,
    cfg: &EngineConfig,
    ledger: &mut OpLedger,
) -> Result<Vec<IdMask>> {
    let Some(first) = inputs.first() else {
        return Err(Error::invalid("afi_masks needs at least one interacted frame"));
    };
    let (h, w) = (first.frame.height, first.frame.width);
    for inp in inputs {
        if inp.frame.height != h || inp.frame.width != w {
            return Err(Error::invalid("interacted frames differ in size"));
        }
        if inp.prev_mask.is_some_and(|p| p.height != h || p.width != w) {
            return Err(Error::invalid("previous mask size differs from frame"));
        }
    }
    let any_evidence = inputs.iter().any(|i| i.prev_mask.is_some() || !i.scribble.is_empty());
    if !any_evidence {
        return Err(Error::EmptyEvidence);
    }
    let c = num_objects + 1;

    let t0 = Instant::now();
    let pyramids: Vec<FeaturePyramid> = inputs
        .par_iter()
        .map(|i| extract_feature_pyramid(i.frame, i.scribble, i.prev_mask, num_objects, cfg))
        .collect::<Result<_>>()?;
    let mut pyramids = pyramids;
    if cfg.guide_sigma > 0.0 {
        for (p, i) in pyramids.iter_mut().zip(inputs) {
            for map in [&mut p.low, &mut p.mid] {
                temper_by_colour(&mut map.ids, i.frame, i.scribble, i.prev_mask, map.stride, cfg.guide_sigma);
            }
        }
    }
    ledger.record("afi.encoder", 0, elapsed_ms(t0));

    let mids: Vec<FeatureMap> = pyramids.iter().map(|p| p.mid.clone()).collect();
    let t0 = Instant::now();
    let (across, afa_macs) = across_frame_attention(&mids, cfg)?;
    ledger.record("afi.across_frame_attention", afa_macs, elapsed_ms(t0));

    let mut masks = Vec::with_capacity(inputs.len());
    for ((inp, pyr), emb) in inputs.iter().zip(&pyramids).zip(&across) {
        let t0 = Instant::now();
        let (enh, enh_macs) = frame_enhancer(&pyr.low, &pyr.high, cfg)?;
        ledger.record("afi.frame_enhancer", enh_macs, elapsed_ms(t0));

        let t0 = Instant::now();
        let (local, local_macs) = local_readout(&enh, cfg)?;
        let (lh, lw) = (pyr.low.height, pyr.low.width);
        let guided = cfg.guide_sigma > 0.0;
        let across_up = if guided {
            UpsampleGuide::between(inp.frame, MID_STRIDE, LOW_STRIDE, cfg.guide_sigma).apply(emb.ids.data(), c)
        } else {
            upsample(emb.ids.data(), emb.height, emb.width, c, MID_STRIDE / LOW_STRIDE, lh, lw)
        };
        let fa = cfg.fusion.alpha;
        let fb = cfg.fusion.beta;
        let fused: Vec<f32> = across_up.iter().zip(&local).map(|(&a, &l)| fa * a + fb * l).collect();
        let (mut full, taps) = if guided {
            let guide = UpsampleGuide::new(inp.frame, LOW_STRIDE, cfg.guide_sigma);
            (guide.apply(&fused, c), UpsampleGuide::TAPS)
        } else {
            (upsample(&fused, lh, lw, c, LOW_STRIDE, h, w), 4)
        };
        if let Some(prev) = inp.prev_mask {
            for (px, &l) in prev.labels.iter().enumerate() {
                full[px * c + l as usize] += cfg.fusion.gamma;
            }
        }
        let logits = IdLogits {
            height: h,
            width: w,
            channels: c,
            data: full,
        };
        let mut mask = id_decode(&logits, inp.frame.index, round)?;
        for (m, &s) in mask.labels.iter_mut().zip(&inp.scribble.labels) {
            if s != UNLABELED {
                *m = s;
            }
        }
        let head_macs = local_macs + (lh * lw * c * if guided { UpsampleGuide::TAPS } else { 4 }) as u64 + (h * w * c * taps) as u64;
        ledger.record("afi.mask_head", head_macs, elapsed_ms(t0));
        masks.push(mask);
    }
    Ok(masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settle_rules() {
        let mut out = [0.0; 3];
        settle(&[0.0, 0.5, 0.0, 0.5], 0.05, true, &mut out);
        assert_eq!(out, [0.0, 1.0, 0.0]);
        settle(&[0.0, 0.0, 0.0, 0.0], 0.05, true, &mut out);
        assert_eq!(out, [1.0, 0.0, 0.0]);
        settle(&[0.0, 0.0, 0.0, 0.0], 0.05, false, &mut out);
        assert_eq!(out, [0.0, 0.0, 0.0]);
        settle(&[0.0, 0.0, 0.01, 0.01], 0.05, true, &mut out);
        assert!((out[0] - 0.8).abs() < 1e-6 && (out[2] - 0.2).abs() < 1e-6);
    }

    #[test]
    fn dilation_pool_constant() {
        let src = vec![0.7f32; 9 * 7 * 2];
        let out = multi_dilation_pool(&src, 9, 7, 2);
        assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn star_has_eight_points() {
        assert_eq!(STAR_OFFSETS.len(), 8);
        let dists: Vec<f32> = STAR_OFFSETS.iter().map(|(x, y)| x.abs().max(y.abs())).collect();
        assert!(dists.iter().all(|&d| d == 1.0 || d == 2.0));
    }
}
