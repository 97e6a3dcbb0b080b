use super::{expect_rank, LayerGrads, Tensor};
use crate::error::{Error, Result};

/// Vectors shorter than this cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    if input.shape() != d_output.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), d_output.shape()),
        ));
    }
    let mut d_input = d_output.clone();
    for (g, &x) in d_input.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(LayerGrads {
        d_input,
        d_params: Vec::new(),
    })
}

fn dense_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    expect_rank("dense", input, 1)?;
    expect_rank("dense", weights, 2)?;
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n {
        return Err(Error::shape(
            "dense",
            format!("weights {:?} applied to input of length {}", weights.shape(), input.len()),
        ));
    }
    Ok((m, n))
}

/// `W·x + b` for `x: [n]`, `W: [m, n]`, `b: [m]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims(input, weights)?;
    if bias.shape() != [m] {
        return Err(Error::shape(
            "dense",
            format!("bias shape {:?}, expected [{m}]", bias.shape()),
        ));
    }
    let out = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(input.data()).map(|(w, x)| w * x).sum::<f64>())
        .collect();
    Tensor::from_vec(&[m], out)
}

/// `d_params = [d_weights, d_bias]`.
pub fn dense_backward(input: &Tensor, weights: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    let (m, n) = dense_dims(input, weights)?;
    if d_output.shape() != [m] {
        return Err(Error::shape(
            "dense_backward",
            format!("d_output shape {:?}, expected [{m}]", d_output.shape()),
        ));
    }
    let mut d_input = vec![0.0; n];
    let mut d_w = vec![0.0; m * n];
    for ((row, d_row), &g) in weights
        .data()
        .chunks_exact(n)
        .zip(d_w.chunks_exact_mut(n))
        .zip(d_output.data())
    {
        for ((di, w), (dw, x)) in d_input
            .iter_mut()
            .zip(row)
            .zip(d_row.iter_mut().zip(input.data()))
        {
            *di += w * g;
            *dw = g * x;
        }
    }
    Ok(LayerGrads {
        d_input: Tensor::from_vec(&[n], d_input)?,
        d_params: vec![Tensor::from_vec(&[m, n], d_w)?, d_output.clone()],
    })
}

fn checked_norm(v: &Tensor) -> Result<f64> {
    expect_rank("l2_normalize", v, 1)?;
    let norm = v.norm();
    if norm < MIN_NORM {
        return Err(Error::invalid(
            "l2_normalize input",
            format!("vector norm {norm:e} is below {MIN_NORM:e}"),
        ));
    }
    Ok(norm)
}

pub fn l2_normalize_forward(v: &Tensor) -> Result<Tensor> {
    let norm = checked_norm(v)?;
    let mut out = v.clone();
    for x in out.data_mut() {
        *x /= norm;
    }
    Ok(out)
}

/// `(I/‖v‖ − v vᵀ/‖v‖³)·d_out`.
pub fn l2_normalize_backward(v: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    let norm = checked_norm(v)?;
    if d_output.shape() != v.shape() {
        return Err(Error::shape(
            "l2_normalize_backward",
            format!("{:?} vs {:?}", v.shape(), d_output.shape()),
        ));
    }
    let vd: f64 = v.data().iter().zip(d_output.data()).map(|(a, b)| a * b).sum();
    let n3 = norm * norm * norm;
    let d_input = v
        .data()
        .iter()
        .zip(d_output.data())
        .map(|(x, g)| g / norm - x * vd / n3)
        .collect();
    Ok(LayerGrads {
        d_input: Tensor::from_vec(v.shape(), d_input)?,
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
    fn relu_kills_negatives() {
        let x = Tensor::from_vec(&[3], vec![-1.0, -0.5, -3.0]).unwrap();
        assert!(relu_forward(&x).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&x, &Tensor::filled(&[3], 1.0)).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_three_four_five() {
        let v = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let z = l2_normalize_forward(&v).unwrap();
        assert_eq!(z.data(), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_rejects_zero() {
        let v = Tensor::zeros(&[4]);
        assert!(l2_normalize_forward(&v).is_err());
        assert!(l2_normalize_backward(&v, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn dense_rejects_bad_shapes() {
        let x = Tensor::zeros(&[3]);
        assert!(dense_forward(&x, &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[2])).is_err());
        assert!(dense_forward(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])).is_err());
        assert!(dense_backward(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn finite_difference_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..20 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=5);
            let x = random(&[n], &mut rng);
            let w = random(&[m, n], &mut rng);
            let b = random(&[m], &mut rng);
            let proj: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = Tensor::from_vec(&[m], proj.clone()).unwrap();
            let g = dense_backward(&x, &w, &d).unwrap();
            let nx = numeric_grad(&x, |t| dot(&dense_forward(t, &w, &b).unwrap(), &proj));
            let nw = numeric_grad(&w, |t| dot(&dense_forward(&x, t, &b).unwrap(), &proj));
            let nb = numeric_grad(&b, |t| dot(&dense_forward(&x, &w, t).unwrap(), &proj));
            assert!(max_rel_err(g.d_input.data(), &nx, 1e-9) <= 1e-6);
            assert!(max_rel_err(g.d_params[0].data(), &nw, 1e-9) <= 1e-6);
            assert!(max_rel_err(g.d_params[1].data(), &nb, 1e-9) <= 1e-6);

            // keep relu probes away from the kink
            let r = Tensor::from_vec(
                &[n],
                (0..n)
                    .map(|_| {
                        let v: f64 = rng.random_range(0.01..1.0);
                        if rng.random_bool(0.5) { v } else { -v }
                    })
                    .collect(),
            )
            .unwrap();
            let pr: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gr = relu_backward(&r, &Tensor::from_vec(&[n], pr.clone()).unwrap()).unwrap();
            let nr = numeric_grad(&r, |t| dot(&relu_forward(t), &pr));
            assert!(max_rel_err(gr.d_input.data(), &nr, 1e-9) <= 1e-6);

            let v = random(&[n.max(2)], &mut rng);
            let pv: Vec<f64> = (0..v.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gv = l2_normalize_backward(&v, &Tensor::from_vec(v.shape(), pv.clone()).unwrap()).unwrap();
            let nv = numeric_grad(&v, |t| dot(&l2_normalize_forward(t).unwrap(), &pv));
            assert!(max_rel_err(gv.d_input.data(), &nv, 1e-9) <= 1e-6);
        }
    }
}
