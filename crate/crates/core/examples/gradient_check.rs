//! Compares analytic gradients of the layers and the contrastive loss with
//! central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synclass::ntxent::{loss, split_pairing, NTXentConfig};
use synclass::numcore::{conv3d_backward, conv3d_forward, dense_backward, dense_forward, Tensor};

const EPS: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn numeric(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut p = x.clone();
    (0..x.len())
        .map(|i| {
            let o = p.data()[i];
            p.data_mut()[i] = o + EPS;
            let hi = f(&p);
            p.data_mut()[i] = o - EPS;
            let lo = f(&p);
            p.data_mut()[i] = o;
            (hi - lo) / (2.0 * EPS)
        })
        .collect()
}

fn worst(a: &[f64], n: &[f64]) -> f64 {
    a.iter().zip(n).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-9)).fold(0.0, f64::max)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dot = |t: &Tensor, w: &Tensor| t.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>();

    let (x, w, b) = (random(&[2, 4, 4, 4], &mut rng), random(&[3, 2, 3, 3, 3], &mut rng), random(&[3], &mut rng));
    let up = random(&[3, 4, 4, 4], &mut rng);
    let g = conv3d_backward(&x, &w, &up)?;
    let n = numeric(&w, |v| dot(&conv3d_forward(&x, v, &b).unwrap(), &up));
    println!("conv3d weights: max rel err {:.2e}", worst(g.d_params[0].data(), &n));

    let (x, w, b) = (random(&[6], &mut rng), random(&[4, 6], &mut rng), random(&[4], &mut rng));
    let up = random(&[4], &mut rng);
    let g = dense_backward(&x, &w, &up)?;
    let n = numeric(&x, |v| dot(&dense_forward(v, &w, &b).unwrap(), &up));
    println!("dense input:    max rel err {:.2e}", worst(g.d_input.data(), &n));

    // the loss only accepts unit rows, so move along a tangent direction and
    // project back onto the sphere
    let rows = 6;
    let normalize = |t: &Tensor| {
        let mut t = t.clone();
        for r in t.data_mut().chunks_mut(3) {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v /= norm);
        }
        t
    };
    let z = normalize(&random(&[rows, 3], &mut rng));
    let mut dir = random(&[rows, 3], &mut rng);
    for (d, r) in dir.data_mut().chunks_mut(3).zip(z.data().chunks(3)) {
        let along: f64 = d.iter().zip(r).map(|(a, b)| a * b).sum();
        d.iter_mut().zip(r).for_each(|(a, b)| *a -= along * b);
    }
    let partner = split_pairing(rows / 2);
    let cfg = NTXentConfig::default();
    let (value, grad) = loss(&z, &partner, &cfg)?;
    let at = |s: f64| {
        let mut p = z.clone();
        p.data_mut().iter_mut().zip(dir.data()).for_each(|(a, b)| *a += s * b);
        loss(&normalize(&p), &partner, &cfg).unwrap().0
    };
    let analytic = dot(&grad, &dir);
    let numeric = (at(EPS) - at(-EPS)) / (2.0 * EPS);
    println!("NT-Xent loss {value:.6}: directional derivative {analytic:.10} vs numeric {numeric:.10}");
    Ok(())
}
