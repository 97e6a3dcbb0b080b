use super::{expect_rank, LayerGrads, Tensor};
use crate::error::{Error, Result};

fn pooled_shape(input: &Tensor) -> Result<[usize; 4]> {
    expect_rank("maxpool3d", input, 4)?;
    let s = input.shape();
    if s[1..].iter().any(|e| e % 2 != 0) {
        return Err(Error::shape(
            "maxpool3d",
            format!("spatial extents must be divisible by 2, got {s:?}"),
        ));
    }
    Ok([s[0], s[1] / 2, s[2] / 2, s[3] / 2])
}

/// For each output voxel, the input linear index of its window maximum.
/// Windows are scanned in increasing linear order with a strict comparison,
/// so ties resolve to the lowest index.
fn argmax_indices(input: &Tensor, out: [usize; 4]) -> Vec<usize> {
    let [c, d, h, w] = out;
    let (ih, iw) = (h * 2, w * 2);
    let id = d * 2;
    let x = input.data();
    let mut idx = Vec::with_capacity(c * d * h * w);
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                for xo in 0..w {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = ((ch * id + 2 * z + dz) * ih + 2 * y + dy) * iw + 2 * xo + dx;
                                if best == usize::MAX || x[i] > best_v {
                                    best = i;
                                    best_v = x[i];
                                }
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
    }
    idx
}

/// Max over disjoint 2×2×2 windows.
pub fn maxpool3d_forward(input: &Tensor) -> Result<Tensor> {
    let out = pooled_shape(input)?;
    let data = argmax_indices(input, out)
        .into_iter()
        .map(|i| input.data()[i])
        .collect();
    Tensor::from_vec(&out, data)
}

/// Routes each output gradient to the argmax voxel of its window.
pub fn maxpool3d_backward(input: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    let out = pooled_shape(input)?;
    if d_output.shape() != out {
        return Err(Error::shape(
            "maxpool3d_backward",
            format!("d_output shape {:?}, expected {out:?}", d_output.shape()),
        ));
    }
    let mut d_input = Tensor::zeros(input.shape());
    for (i, g) in argmax_indices(input, out).into_iter().zip(d_output.data()) {
        d_input.data_mut()[i] += g;
    }
    Ok(LayerGrads {
        d_input,
        d_params: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numcore::gradcheck::{dot, max_rel_err, numeric_grad};

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_input_routes_to_first_voxel() {
        let input = Tensor::filled(&[1, 2, 2, 4], 3.0);
        let out = maxpool3d_forward(&input).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 2]);
        assert!(out.data().iter().all(|&v| v == 3.0));
        let g = maxpool3d_backward(&input, &Tensor::filled(&[1, 1, 1, 2], 1.0)).unwrap();
        let hot: Vec<usize> = (0..16).filter(|&i| g.d_input.data()[i] != 0.0).collect();
        assert_eq!(hot, vec![0, 2]);
    }

    #[test]
    fn forward_matches_nested_loop_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let shape = [
                rng.random_range(1..=3),
                2 * rng.random_range(1..=3),
                2 * rng.random_range(1..=3),
                2 * rng.random_range(1..=3),
            ];
            let input = random(&shape, &mut rng);
            let out = maxpool3d_forward(&input).unwrap();
            let [c, d, h, w] = shape;
            for ch in 0..c {
                for z in 0..d / 2 {
                    for y in 0..h / 2 {
                        for x in 0..w / 2 {
                            let mut m = f64::NEG_INFINITY;
                            for i in 0..8 {
                                let (zz, yy, xx) = (2 * z + i / 4, 2 * y + (i / 2) % 2, 2 * x + i % 2);
                                m = m.max(input.data()[((ch * d + zz) * h + yy) * w + xx]);
                            }
                            let o = out.data()[((ch * d / 2 + z) * h / 2 + y) * w / 2 + x];
                            assert_eq!(o, m);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let shape = [rng.random_range(1..=2), 2, 4, 2];
            // random continuous values: ties have probability zero and the
            // gap to the runner-up dwarfs the probe step
            let input = random(&shape, &mut rng);
            let out_shape = [shape[0], 1, 2, 1];
            let n = out_shape.iter().product();
            let proj: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d_out = Tensor::from_vec(&out_shape, proj.clone()).unwrap();
            let g = maxpool3d_backward(&input, &d_out).unwrap();
            let num = numeric_grad(&input, |x| dot(&maxpool3d_forward(x).unwrap(), &proj));
            assert!(max_rel_err(g.d_input.data(), &num, 1e-9) <= 1e-6);
        }
    }

    #[test]
    fn odd_extent_is_rejected() {
        assert!(maxpool3d_forward(&Tensor::zeros(&[1, 2, 3, 2])).is_err());
        assert!(maxpool3d_backward(&Tensor::zeros(&[1, 2, 2, 2]), &Tensor::zeros(&[1, 2, 1, 1])).is_err());
    }
}
