//! Stride-1, same-padding 3D convolution lowered to matrix products.
//!
//! The input `[C, D, H, W]` is unfolded into a `[C·k³, voxels]` column matrix
//! (one row per kernel tap) and multiplied by the `[C_out, C·k³]` weight
//! matrix. Backward runs the two transposed products and folds the column
//! gradient back onto the input. The unfolding is done a few z-planes at a
//! time so the column block stays cache-resident.

use matrixmultiply::dgemm;

use super::{expect_rank, LayerGrads, Tensor};
use crate::error::{Error, Result};

/// Upper bound on column-block elements per slab.
const SLAB_ELEMS: usize = 1 << 15;

struct Geometry {
    c_in: usize,
    c_out: usize,
    d: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Geometry {
    fn check(input: &Tensor, weights: &Tensor) -> Result<Self> {
        expect_rank("conv3d", input, 4)?;
        expect_rank("conv3d", weights, 5)?;
        let [c_in, d, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
        let ws = weights.shape();
        let (c_out, k) = (ws[0], ws[2]);
        if ws[1] != c_in {
            return Err(Error::shape(
                "conv3d",
                format!("weights expect {} input channels, input has {c_in}", ws[1]),
            ));
        }
        if ws[3] != k || ws[4] != k {
            return Err(Error::shape("conv3d", format!("kernel must be cubic, got {ws:?}")));
        }
        if k % 2 == 0 {
            return Err(Error::shape("conv3d", format!("kernel side must be odd, got {k}")));
        }
        Ok(Geometry {
            c_in,
            c_out,
            d,
            h,
            w,
            k,
        })
    }

    fn taps(&self) -> usize {
        self.c_in * self.k * self.k * self.k
    }

    fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Output z-ranges processed together.
    fn slabs(&self) -> impl Iterator<Item = (usize, usize)> {
        let planes = (SLAB_ELEMS / (self.taps() * self.plane()).max(1)).max(1);
        let d = self.d;
        (0..d).step_by(planes).map(move |z0| (z0, (z0 + planes).min(d)))
    }

    /// Visits every contiguous run of the column block for output planes
    /// `z0..z1` that maps onto in-bounds input voxels as
    /// `(column_offset, input_offset, len)`. Everything not visited is padding.
    fn for_each_span(&self, z0: usize, z1: usize, mut f: impl FnMut(usize, usize, usize)) {
        let p = (self.k / 2) as isize;
        let (d, h, w) = (self.d as isize, self.h as isize, self.w as isize);
        let cols = (z1 - z0) * self.plane();
        let mut row = 0;
        for c in 0..self.c_in {
            for dz in 0..self.k as isize {
                for dy in 0..self.k as isize {
                    for dx in 0..self.k as isize {
                        let (oz, oy, ox) = (dz - p, dy - p, dx - p);
                        let x_lo = (-ox).max(0);
                        let x_hi = (w - ox).min(w);
                        if x_lo < x_hi {
                            for z in z0 as isize..z1 as isize {
                                let sz = z + oz;
                                if sz < 0 || sz >= d {
                                    continue;
                                }
                                for y in 0..h {
                                    let sy = y + oy;
                                    if sy < 0 || sy >= h {
                                        continue;
                                    }
                                    let dst = row * cols + (((z - z0 as isize) * h + y) * w) as usize;
                                    let src = ((c as isize * d + sz) * h + sy) * w;
                                    f(dst + x_lo as usize, (src + x_lo + ox) as usize, (x_hi - x_lo) as usize);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f64], z0: usize, z1: usize, cols: &mut Vec<f64>) {
        cols.clear();
        cols.resize(self.taps() * (z1 - z0) * self.plane(), 0.0);
        self.for_each_span(z0, z1, |dst, src, n| {
            cols[dst..dst + n].copy_from_slice(&input[src..src + n]);
        });
    }

    fn col2im_add(&self, cols: &[f64], z0: usize, z1: usize, out: &mut [f64]) {
        self.for_each_span(z0, z1, |dst, src, n| {
            for (o, c) in out[src..src + n].iter_mut().zip(&cols[dst..dst + n]) {
                *o += c;
            }
        });
    }
}

/// `out[o,z,y,x] = bias[o] + Σ w[o,c,dz,dy,dx]·in[c,z+dz-p,y+dy-p,x+dx-p]`,
/// zero outside the input, `p = (k-1)/2`.
pub fn conv3d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = Geometry::check(input, weights)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::shape(
            "conv3d",
            format!("bias shape {:?}, expected [{}]", bias.shape(), g.c_out),
        ));
    }
    let (m, k, n) = (g.c_out, g.taps(), g.voxels());
    let mut out = vec![0.0; m * n];
    for (row, b) in out.chunks_exact_mut(n).zip(bias.data()) {
        row.fill(*b);
    }
    let mut cols = Vec::new();
    for (z0, z1) in g.slabs() {
        g.im2col(input.data(), z0, z1, &mut cols);
        let nc = (z1 - z0) * g.plane();
        // out[:, slab] += w[m,k] · cols[k,nc]
        unsafe {
            dgemm(
                m,
                k,
                nc,
                1.0,
                weights.data().as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                nc as isize,
                1,
                1.0,
                out.as_mut_ptr().add(z0 * g.plane()),
                n as isize,
                1,
            );
        }
    }
    Tensor::from_vec(&[g.c_out, g.d, g.h, g.w], out)
}

/// Gradients of [`conv3d_forward`]; `d_params = [d_weights, d_bias]`.
pub fn conv3d_backward(input: &Tensor, weights: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
    let g = Geometry::check(input, weights)?;
    if d_output.shape() != [g.c_out, g.d, g.h, g.w] {
        return Err(Error::shape(
            "conv3d_backward",
            format!(
                "d_output shape {:?}, expected {:?}",
                d_output.shape(),
                [g.c_out, g.d, g.h, g.w]
            ),
        ));
    }
    let (m, k, n) = (g.c_out, g.taps(), g.voxels());
    let mut d_w = vec![0.0; m * k];
    let mut d_in = vec![0.0; g.c_in * n];
    let mut cols = Vec::new();
    let mut d_cols = Vec::new();
    for (z0, z1) in g.slabs() {
        g.im2col(input.data(), z0, z1, &mut cols);
        let nc = (z1 - z0) * g.plane();
        let d_out = unsafe { d_output.data().as_ptr().add(z0 * g.plane()) };
        d_cols.clear();
        d_cols.resize(k * nc, 0.0);
        unsafe {
            // d_w[m,k] += d_out[m,nc] · colsᵀ[nc,k]
            dgemm(
                m,
                nc,
                k,
                1.0,
                d_out,
                n as isize,
                1,
                cols.as_ptr(),
                1,
                nc as isize,
                1.0,
                d_w.as_mut_ptr(),
                k as isize,
                1,
            );
            // d_cols[k,nc] = wᵀ[k,m] · d_out[m,nc]
            dgemm(
                k,
                m,
                nc,
                1.0,
                weights.data().as_ptr(),
                1,
                k as isize,
                d_out,
                n as isize,
                1,
                0.0,
                d_cols.as_mut_ptr(),
                nc as isize,
                1,
            );
        }
        g.col2im_add(&d_cols, z0, z1, &mut d_in);
    }
    let d_b = d_output
        .data()
        .chunks_exact(n)
        .map(|row| row.iter().sum())
        .collect();

    Ok(LayerGrads {
        d_input: Tensor::from_vec(input.shape(), d_in)?,
        d_params: vec![
            Tensor::from_vec(weights.shape(), d_w)?,
            Tensor::from_vec(&[g.c_out], d_b)?,
        ],
    })
}
