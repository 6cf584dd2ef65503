//! Inputs shared by the criterion benches.

use ivos_core::rng::SeededRng;
use ivos_core::Tensor;

/// `rows × cols` tensor of uniform values in `[-1, 1)`, unit-normalized per
/// row when `normalize` is set.
pub fn random_tensor(rng: &mut SeededRng, rows: usize, cols: usize, normalize: bool) -> Tensor {
    let mut data: Vec<f32> = (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
    if normalize {
        for row in data.chunks_mut(cols) {
            let n = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    Tensor::new(vec![rows, cols], data).expect("finite values")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_unit_length() {
        let t = random_tensor(&mut SeededRng::new(1), 4, 20, true);
        for r in 0..4 {
            let n: f32 = t.row(r).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }
}
