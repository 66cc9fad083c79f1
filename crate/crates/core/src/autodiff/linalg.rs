use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// `C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C`, row-major buffers,
/// transposes expressed through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every element addressed by the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct BatchPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    a_off: Vec<usize>,
    b_off: Vec<usize>,
}

fn plan(a: &[usize], b: &[usize]) -> Result<BatchPlan> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(mismatch());
    }
    let (ab, bb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
    let batch = tensor::broadcast_shape(ab, bb).ok_or_else(mismatch)?;
    let mut a_off = Vec::new();
    let mut b_off = Vec::new();
    if batch.is_empty() {
        a_off.push(0);
        b_off.push(0);
    } else {
        tensor::for_each_offset(&batch, &tensor::broadcast_strides(ab, &batch), |o| {
            a_off.push(o * m * k)
        });
        tensor::for_each_offset(&batch, &tensor::broadcast_strides(bb, &batch), |o| {
            b_off.push(o * k * n)
        });
    }
    let mut out_shape = batch;
    out_shape.extend([m, n]);
    Ok(BatchPlan {
        m,
        k,
        n,
        out_shape,
        a_off,
        b_off,
    })
}

pub(super) fn matmul_adjoint(a: &Tensor, b: &Tensor, g: &Tensor, need_a: bool, need_b: bool) -> [Option<Tensor>; 2] {
    let p = plan(a.shape(), b.shape()).expect("matmul plan validated in forward");
    let (m, k, n) = (p.m, p.k, p.n);
    let mut da = need_a.then(|| Tensor::zeros(a.shape()));
    let mut db = need_b.then(|| Tensor::zeros(b.shape()));
    for (bi, (&ao, &bo)) in p.a_off.iter().zip(&p.b_off).enumerate() {
        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
        if let Some(da) = da.as_mut() {
            // dA = dC . B^T
            let bs = &b.data()[bo..bo + k * n];
            gemm(m, n, k, gs, false, bs, true, 1.0, &mut da.data_mut()[ao..ao + m * k]);
        }
        if let Some(db) = db.as_mut() {
            // dB = A^T . dC
            let as_ = &a.data()[ao..ao + m * k];
            gemm(k, m, n, as_, true, gs, false, 1.0, &mut db.data_mut()[bo..bo + k * n]);
        }
    }
    [da, db]
}

impl Graph<'_> {
    /// Batched matrix product `[.., m, k] x [.., k, n] -> [.., m, n]` with
    /// broadcasting over leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let p = plan(ta.shape(), tb.shape())?;
        let (m, k, n) = (p.m, p.k, p.n);
        let mut out = vec![0.0; p.a_off.len() * m * n];
        for (bi, (&ao, &bo)) in p.a_off.iter().zip(&p.b_off).enumerate() {
            gemm(
                m,
                k,
                n,
                &ta.data()[ao..ao + m * k],
                false,
                &tb.data()[bo..bo + k * n],
                false,
                0.0,
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let v = Tensor::new(p.out_shape, out)?;
        Ok(self.push(v, Op::Matmul(a, b), &[a, b]))
    }

    /// `x . w + bias` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }
}
