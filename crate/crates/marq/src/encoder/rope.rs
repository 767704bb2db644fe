//! Rotary position transform with explicit positions.
//!
//! Column pair `i` of each row is rotated by `position * theta_i` with
//! `theta_i = base^(-2i / dims)`. Attention scores between rotated queries
//! and keys then depend only on relative position.

use crate::autodiff::Tensor;

/// Rotate each row of `mat` (`rows x even dims`) by its position's angles.
pub fn rope_rotate(mat: &Tensor, positions: &[f64], base: f64) -> Tensor {
    assert!(mat.cols % 2 == 0, "rope needs even dims");
    assert_eq!(mat.rows, positions.len(), "one position per row");
    let pairs = mat.cols / 2;
    let mut out = Tensor::zeros(mat.rows, mat.cols);
    for (r, &pos) in positions.iter().enumerate() {
        let row = mat.row(r);
        for i in 0..pairs {
            let theta = base.powf(-2.0 * i as f64 / mat.cols as f64);
            let (sin, cos) = (pos * theta).sin_cos();
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            out.row_mut(r)[2 * i] = a * cos - b * sin;
            out.row_mut(r)[2 * i + 1] = a * sin + b * cos;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_row(dims: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::stream_raw(seed);
        Tensor::from_vec(1, dims, (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn position_zero_is_identity() {
        let x = random_row(8, 1);
        let rotated = rope_rotate(&x, &[0.0], 10000.0);
        assert_eq!(rotated.data, x.data);
    }

    #[test]
    fn rotation_preserves_row_norms() {
        let x = random_row(16, 2);
        let rotated = rope_rotate(&x, &[37.0], 10000.0);
        let n0: f64 = x.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let n1: f64 = rotated.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n0 - n1).abs() < 1e-12);
    }

    #[test]
    fn scores_depend_only_on_relative_position() {
        let mut rng = crate::rng::stream_raw(3);
        for trial in 0..100u64 {
            let q = random_row(16, 100 + trial);
            let k = random_row(16, 200 + trial);
            let m = rng.gen_range(0.0..64.0f64).floor();
            let n = rng.gen_range(0.0..64.0f64).floor();
            let s = rng.gen_range(0.0..64.0f64).floor();
            let base = dot(&rope_rotate(&q, &[m], 10000.0), &rope_rotate(&k, &[n], 10000.0));
            let shifted =
                dot(&rope_rotate(&q, &[m + s], 10000.0), &rope_rotate(&k, &[n + s], 10000.0));
            let denom = base.abs().max(shifted.abs()).max(1e-12);
            assert!(
                (base - shifted).abs() / denom < 1e-5,
                "trial {trial}: {base} vs {shifted}"
            );
        }
    }

    #[test]
    fn agrees_with_the_tape_rope_for_sequential_positions() {
        use crate::autodiff::Graph;
        let mut rng = crate::rng::stream_raw(9);
        let data: Vec<f64> = (0..5 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(5, 8, data);
        let positions: Vec<f64> = (0..5).map(|p| p as f64).collect();
        let direct = rope_rotate(&x, &positions, 10000.0);
        let g = Graph::new();
        let v = g.leaf(x);
        let taped = g.value(g.rope(v, 10000.0));
        for (a, b) in direct.data.iter().zip(&taped.data) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
