//! Dense row-major `f32` arrays and the numeric kernels every attention
//! stage is built on: row softmax, bilinear sampling and scaled dot-product
//! multi-head attention.
//!
//! Per-head Q/K/V projections are identities; heads partition the channel
//! dimension. Dot products and row sums accumulate in `f64`.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::invalid(format!(
                "tensor shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Stacks equally sized rows into an `R×C` matrix.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Views any tensor as a matrix whose rows are the last axis.
    pub fn rows(&self) -> usize {
        match self.shape.last() {
            Some(&0) | None => 0,
            Some(&c) => self.data.len() / c,
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Fractional pixel coordinate, origin top-left. Stored unclamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub x: f32,
    pub y: f32,
}

impl SamplePoint {
    pub fn new(x: f32, y: f32) -> Self {
        SamplePoint { x, y }
    }
}

pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::invalid("softmax_rows expects a 2-D tensor"));
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax_rows: non-finite logits"));
    }
    let mut out = logits.clone();
    let cols = out.cols();
    if cols > 0 {
        out.data_mut()
            .chunks_mut(cols)
            .for_each(softmax_in_place);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        let e = (*v - max).exp();
        *v = e;
        sum += e as f64;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v = (*v as f64 * inv) as f32;
    }
}

/// Bilinear interpolation of an `H×W×C` map at `p`, with `p` clamped into
/// the texel grid.
pub fn bilinear_sample(map: &Tensor, p: SamplePoint) -> Result<Vec<f32>> {
    let &[h, w, c] = map.shape() else {
        return Err(Error::invalid("bilinear_sample expects an H×W×C map"));
    };
    if h == 0 || w == 0 {
        return Err(Error::invalid("bilinear_sample on an empty map"));
    }
    let mut out = vec![0.0; c];
    sample_into(map.data(), h, w, c, p, &mut out);
    Ok(out)
}

pub(crate) fn sample_into(data: &[f32], h: usize, w: usize, c: usize, p: SamplePoint, out: &mut [f32]) {
    let x = p.x.clamp(0.0, (w - 1) as f32);
    let y = p.y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let taps = [
        ((y0, x0), (1.0 - fx) * (1.0 - fy)),
        ((y0, x1), fx * (1.0 - fy)),
        ((y1, x0), (1.0 - fx) * fy),
        ((y1, x1), fx * fy),
    ];
    out.iter_mut().for_each(|v| *v = 0.0);
    for ((ty, tx), wt) in taps {
        if wt == 0.0 {
            continue;
        }
        let base = (ty * w + tx) * c;
        for (o, v) in out.iter_mut().zip(&data[base..base + c]) {
            *o += wt * v;
        }
    }
}

/// Result of an attention pass together with its multiply-accumulate count.
#[derive(Debug, Clone)]
pub struct Attended {
    /// Per-head attention output over the value tensor, when one was given.
    pub values: Option<Tensor>,
    /// Payload read out with head-averaged weights, when one was given.
    pub payload: Option<Tensor>,
    pub macs: u64,
}

/// Scaled dot-product multi-head attention: `logits = q·k / temperature`
/// per head, row softmax, weighted sum of the head's value slice.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    temperature: f32,
) -> Result<Tensor> {
    let out = attend(q, k, Some(v), None, heads, temperature)?;
    Ok(out.values.expect("values requested"))
}

/// Reads `payload` rows (`Nk×P`, any P) with weights averaged over heads.
/// With `heads == 1` this is plain attention readout.
pub fn attention_readout(
    q: &Tensor,
    k: &Tensor,
    payload: &Tensor,
    heads: usize,
    temperature: f32,
) -> Result<Attended> {
    attend(q, k, None, Some(payload), heads, temperature)
}

/// Shared attention driver. `v` (when present) is split across heads;
/// `payload` (when present) is read with the mean of the per-head weights,
/// so every payload row is a convex combination of payload rows.
pub fn attend(
    q: &Tensor,
    k: &Tensor,
    v: Option<&Tensor>,
    payload: Option<&Tensor>,
    heads: usize,
    temperature: f32,
) -> Result<Attended> {
    let nq = q.rows();
    let nk = k.rows();
    let dk = q.cols();
    if nk == 0 {
        return Err(Error::EmptyMemory);
    }
    if heads == 0 || dk % heads != 0 {
        return Err(Error::invalid(format!(
            "key width {dk} not divisible by {heads} heads"
        )));
    }
    if k.cols() != dk {
        return Err(Error::invalid("query/key widths differ"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if let Some(v) = v {
        if v.rows() != nk || v.cols() % heads != 0 {
            return Err(Error::invalid("value rows must match keys and split across heads"));
        }
    }
    if let Some(p) = payload {
        if p.rows() != nk {
            return Err(Error::invalid("payload rows must match keys"));
        }
    }
    for t in [Some(q), Some(k), v, payload].into_iter().flatten() {
        if t.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("attention input contains non-finite values"));
        }
    }

    let hd = dk / heads;
    let inv_t = 1.0 / temperature as f64;
    let dv = v.map_or(0, Tensor::cols);
    let hv = dv / heads;
    let dp = payload.map_or(0, Tensor::cols);
    let keys = k.data();

    let width = dv + dp;
    let mut combined = vec![0.0f32; nq * width];

    let row_job = |i: usize, out_row: &mut [f32]| {
        let (v_row, p_row) = out_row.split_at_mut(dv);
        let qi = q.row(i);
        let mut weights = vec![0.0f32; heads * nk];
        for h in 0..heads {
            let qh = &qi[h * hd..(h + 1) * hd];
            let wh = &mut weights[h * nk..(h + 1) * nk];
            for (j, w) in wh.iter_mut().enumerate() {
                let kj = &keys[j * dk + h * hd..j * dk + (h + 1) * hd];
                let dot: f64 = qh.iter().zip(kj).map(|(&a, &b)| a as f64 * b as f64).sum();
                *w = (dot * inv_t) as f32;
            }
            softmax_in_place(wh);
        }
        if let Some(v) = v {
            let vd = v.data();
            for h in 0..heads {
                let wh = &weights[h * nk..(h + 1) * nk];
                let mut acc = vec![0.0f64; hv];
                for (j, &w) in wh.iter().enumerate() {
                    let vj = &vd[j * dv + h * hv..j * dv + (h + 1) * hv];
                    for (a, &x) in acc.iter_mut().zip(vj) {
                        *a += w as f64 * x as f64;
                    }
                }
                for (o, a) in v_row[h * hv..(h + 1) * hv].iter_mut().zip(acc) {
                    *o = a as f32;
                }
            }
        }
        if let Some(p) = payload {
            let pd = p.data();
            let mut acc = vec![0.0f64; dp];
            let inv_h = 1.0 / heads as f64;
            for j in 0..nk {
                let mut w = 0.0f64;
                for h in 0..heads {
                    w += weights[h * nk + j] as f64;
                }
                w *= inv_h;
                for (a, &x) in acc.iter_mut().zip(&pd[j * dp..(j + 1) * dp]) {
                    *a += w * x as f64;
                }
            }
            for (o, a) in p_row.iter_mut().zip(acc) {
                *o = a as f32;
            }
        }
    };

    // Rows are independent, so the parallel split is bit-identical to a
    // serial run.
    if width > 0 {
        combined
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| row_job(i, row));
    }
    let mut v_out = Vec::with_capacity(nq * dv);
    let mut p_out = Vec::with_capacity(nq * dp);
    if width > 0 {
        for row in combined.chunks(width) {
            v_out.extend_from_slice(&row[..dv]);
            p_out.extend_from_slice(&row[dv..]);
        }
    }

    let macs = (nq * nk) as u64 * (dk + dv + dp) as u64;
    Ok(Attended {
        values: v.map(|_| Tensor {
            shape: vec![nq, dv],
            data: v_out,
        }),
        payload: payload.map(|_| Tensor {
            shape: vec![nq, dp],
            data: p_out,
        }),
        macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f32]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_symmetric_and_saturating() {
        let s = softmax_rows(&t2(&[&[0.0, 0.0], &[1000.0, 0.0]])).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.row(1)[0] - 1.0).abs() < 1e-6);
        assert!(s.row(1)[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax_rows(&t2(&[&[1.0, 2.0, 3.0]])).unwrap();
        let b = softmax_rows(&t2(&[&[11.0, 12.0, 13.0]])).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let t = Tensor {
            shape: vec![1, 2],
            data: vec![f32::NAN, 0.0],
        };
        assert!(matches!(softmax_rows(&t), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bilinear_cases() {
        let map = Tensor::new(vec![3, 3, 1], (0..9).map(|v| v as f32).collect()).unwrap();
        assert_eq!(bilinear_sample(&map, SamplePoint::new(1.0, 1.0)).unwrap(), vec![4.0]);
        let ab = Tensor::new(vec![1, 2, 1], vec![2.0, 6.0]).unwrap();
        assert_eq!(bilinear_sample(&ab, SamplePoint::new(0.5, 0.0)).unwrap(), vec![4.0]);
        assert_eq!(bilinear_sample(&ab, SamplePoint::new(-0.7, 0.0)).unwrap(), vec![2.0]);
        let empty = Tensor::zeros(vec![0, 2, 1]);
        assert!(bilinear_sample(&empty, SamplePoint::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn single_token_attention_returns_value() {
        let q = t2(&[&[0.3, -0.2]]);
        let k = t2(&[&[1.0, 0.5]]);
        let v = t2(&[&[7.0, -3.0]]);
        let out = multi_head_attention(&q, &k, &v, 2, 0.05).unwrap();
        assert_eq!(out.data(), &[7.0, -3.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = t2(&[&[0.1, 0.9, -0.4, 0.2]]);
        let row: &[f32] = &[0.5, 0.5, 0.5, 0.5];
        let k = t2(&[row; 3]);
        let v = t2(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], &[0.0, -1.0, 2.0, 9.0]]);
        let out = multi_head_attention(&q, &k, &v, 2, 0.05).unwrap();
        // dense hand-computed mean of the value rows
        let mean = [2.0, 7.0 / 3.0, 4.0, 7.0];
        for (o, m) in out.data().iter().zip(mean) {
            assert!((o - m).abs() < 1e-5);
        }
    }

    #[test]
    fn attention_errors() {
        let q = t2(&[&[1.0, 0.0, 0.0]]);
        let k = Tensor::zeros(vec![0, 3]);
        let v = Tensor::zeros(vec![0, 3]);
        assert!(matches!(
            multi_head_attention(&q, &k, &v, 1, 0.1),
            Err(Error::EmptyMemory)
        ));
        let k = t2(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(
            multi_head_attention(&q, &k, &k, 2, 0.1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(multi_head_attention(&q, &k, &k, 1, 0.0).is_err());
    }

    #[test]
    fn readout_counts_macs() {
        let q = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let k = t2(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let p = t2(&[&[1.0], &[0.0], &[0.5]]);
        let r = attention_readout(&q, &k, &p, 1, 0.1).unwrap();
        assert_eq!(r.macs, 2 * 3 * (2 + 1));
        assert!(r.values.is_none());
        assert_eq!(r.payload.unwrap().shape(), &[2, 1]);
    }
}
