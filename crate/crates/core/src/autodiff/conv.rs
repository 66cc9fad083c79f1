//! Non-overlapping convolution (`stride == kernel`) and its adjoint.
//!
//! With disjoint blocks, unfolding the input into a `[C * prod(P), blocks]`
//! column matrix is a pure permutation, so both directions reduce to one
//! matrix product plus a gather or scatter.

use super::{gemm, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{strides, Tensor};

/// `perm[d * nb + b]` is the flat offset in `[C, S...]` of column-row `d`
/// (channel, in-patch position) and block `b`.
fn block_permutation(shape: &[usize], patch: &[usize]) -> Vec<usize> {
    let c = shape[0];
    let spatial = &shape[1..];
    let blocks: Vec<usize> = spatial.iter().zip(patch).map(|(s, p)| s / p).collect();
    let nb: usize = blocks.iter().product();
    let np: usize = patch.iter().product();
    let st = strides(shape);
    let nd = spatial.len();
    let mut perm = vec![0; c * np * nb];
    let mut pidx = vec![0; nd];
    let mut bidx = vec![0; nd];
    for ch in 0..c {
        for p in 0..np {
            unravel(p, patch, &mut pidx);
            for b in 0..nb {
                unravel(b, &blocks, &mut bidx);
                let mut off = ch * st[0];
                for ax in 0..nd {
                    off += (bidx[ax] * patch[ax] + pidx[ax]) * st[ax + 1];
                }
                perm[(ch * np + p) * nb + b] = off;
            }
        }
    }
    perm
}

fn unravel(mut i: usize, shape: &[usize], out: &mut [usize]) {
    for ax in (0..shape.len()).rev() {
        out[ax] = i % shape[ax];
        i /= shape[ax];
    }
}

fn check_blocks(op: &'static str, spatial: &[usize], patch: &[usize]) -> Result<()> {
    if spatial.len() != patch.len() {
        return Err(Error::shape(
            op,
            format!("{} spatial axes but patch {patch:?}", spatial.len()),
        ));
    }
    for (s, p) in spatial.iter().zip(patch) {
        if *p == 0 || s % p != 0 {
            return Err(Error::shape(
                op,
                format!("extent {s} not divisible by patch {p} (spatial {spatial:?})"),
            ));
        }
    }
    Ok(())
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::shape(
            op,
            format!("bias shape {:?}, expected [{channels}]", b.shape()),
        )),
        _ => Ok(()),
    }
}

pub(super) fn conv_adjoint(x: &Tensor, k: &Tensor, patch: &[usize], g: &Tensor) -> Vec<Tensor> {
    let c_out = k.shape()[0];
    let d = k.len() / c_out;
    let nb = g.len() / c_out;
    let perm = block_permutation(x.shape(), patch);
    let cols: Vec<f64> = perm.iter().map(|&o| x.data()[o]).collect();
    // dK = dOut . cols^T
    let mut dk = Tensor::zeros(k.shape());
    gemm(c_out, nb, d, g.data(), false, &cols, true, 0.0, dk.data_mut());
    // dcols = K^T . dOut
    let mut dcols = vec![0.0; d * nb];
    gemm(d, c_out, nb, k.data(), true, g.data(), false, 0.0, &mut dcols);
    let mut dx = Tensor::zeros(x.shape());
    for (j, &o) in perm.iter().enumerate() {
        dx.data_mut()[o] = dcols[j];
    }
    let db: Vec<f64> = g.data().chunks_exact(nb).map(|r| r.iter().sum()).collect();
    vec![dx, dk, Tensor::new(vec![c_out], db).unwrap()]
}

pub(super) fn deconv_adjoint(x: &Tensor, k: &Tensor, patch: &[usize], g: &Tensor) -> Vec<Tensor> {
    let c_in = x.shape()[0];
    let c_out = k.shape()[1];
    let nb = x.len() / c_in;
    let d = k.len() / c_in;
    let perm = block_permutation(g.shape(), patch);
    let dcols: Vec<f64> = perm.iter().map(|&o| g.data()[o]).collect();
    // dx = K[c_in, d] . dcols[d, nb]
    let mut dx = Tensor::zeros(x.shape());
    gemm(c_in, d, nb, k.data(), false, &dcols, false, 0.0, dx.data_mut());
    // dK = x[c_in, nb] . dcols^T
    let mut dk = Tensor::zeros(k.shape());
    gemm(c_in, nb, d, x.data(), false, &dcols, true, 0.0, dk.data_mut());
    let per = g.len() / c_out;
    let db: Vec<f64> = g.data().chunks_exact(per).map(|r| r.iter().sum()).collect();
    vec![dx, dk, Tensor::new(vec![c_out], db).unwrap()]
}

impl Graph<'_> {
    /// Non-overlapping convolution with stride equal to the kernel extent.
    ///
    /// `x: [C_in, S...]`, `kernel: [C_out, C_in, P...]`, `bias: [C_out]`,
    /// output `[C_out, S/P...]`.
    pub fn conv_nd(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        if tk.ndim() != tx.ndim() + 1 || tk.shape()[1] != tx.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "conv_nd",
                lhs: tx.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let patch = tk.shape()[2..].to_vec();
        check_blocks("conv_nd", &tx.shape()[1..], &patch)?;
        let c_out = tk.shape()[0];
        check_bias("conv_nd", bias.map(|b| self.value(b)), c_out)?;
        let perm = block_permutation(tx.shape(), &patch);
        let d = tk.len() / c_out;
        let nb = perm.len() / d;
        let cols: Vec<f64> = perm.iter().map(|&o| tx.data()[o]).collect();
        let mut out = vec![0.0; c_out * nb];
        gemm(c_out, d, nb, tk.data(), false, &cols, false, 0.0, &mut out);
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(nb).zip(self.value(b).data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut shape = vec![c_out];
        shape.extend(tx.shape()[1..].iter().zip(&patch).map(|(s, p)| s / p));
        let v = Tensor::new(shape, out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(v, Op::Conv { x, kernel, bias, patch }, &inputs))
    }

    /// Transposed counterpart of [`Graph::conv_nd`]: every input location
    /// scatters `kernel * value` into its own output block.
    ///
    /// `x: [C_in, B...]`, `kernel: [C_in, C_out, P...]`, `bias: [C_out]`,
    /// output `[C_out, B*P...]`.
    pub fn deconv_nd(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        if tk.ndim() != tx.ndim() + 1 || tk.shape()[0] != tx.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "deconv_nd",
                lhs: tx.shape().to_vec(),
                rhs: tk.shape().to_vec(),
            });
        }
        let patch = tk.shape()[2..].to_vec();
        let c_in = tx.shape()[0];
        let c_out = tk.shape()[1];
        check_bias("deconv_nd", bias.map(|b| self.value(b)), c_out)?;
        let mut shape = vec![c_out];
        shape.extend(tx.shape()[1..].iter().zip(&patch).map(|(b, p)| b * p));
        let nb = tx.len() / c_in;
        let d = tk.len() / c_in;
        // cols[d, nb] = K^T[d, c_in] . x[c_in, nb]
        let mut cols = vec![0.0; d * nb];
        gemm(d, c_in, nb, tk.data(), true, tx.data(), false, 0.0, &mut cols);
        let perm = block_permutation(&shape, &patch);
        let mut out = vec![0.0; cols.len()];
        for (j, &o) in perm.iter().enumerate() {
            out[o] = cols[j];
        }
        if let Some(b) = bias {
            let per = out.len() / c_out;
            for (row, &bv) in out.chunks_exact_mut(per).zip(self.value(b).data()) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let v = Tensor::new(shape, out)?;
        let mut inputs = vec![x, kernel];
        inputs.extend(bias);
        Ok(self.push(v, Op::Deconv { x, kernel, bias, patch }, &inputs))
    }
}
