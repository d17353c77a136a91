use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Real, Tensor};

pub fn linear_forward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, d) = input.dims2()?;
    let (wd, m) = weight.dims2()?;
    if wd != d {
        return Err(Error::dim(format!("linear: input width {d} does not match weight rows {wd}")));
    }
    if let Some(b) = bias {
        if b.shape() != [m] {
            return Err(Error::dim(format!("linear: bias shape {:?}, expected [{m}]", b.shape())));
        }
    }
    let mut out = vec![T::zero(); n * m];
    gemm(false, false, n, m, d, input.data(), weight.data(), &mut out, false);
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(m) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

impl<T: Real> Tape<T> {
    /// `input [N, D] x weight [D, M] + bias [M]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = linear_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }
}

pub(super) fn linear_backward<T: Real>(
    input: Var,
    weight: Var,
    bias: Option<Var>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad: &[T],
    needs: impl Fn(Var) -> bool,
) -> Result<Vec<(Var, Vec<T>)>> {
    let (n, d) = x.dims2()?;
    let m = w.shape()[1];
    let mut out = Vec::with_capacity(3);
    if needs(input) {
        let mut dx = vec![T::zero(); n * d];
        gemm(false, true, n, d, m, grad, w.data(), &mut dx, false);
        out.push((input, dx));
    }
    if needs(weight) {
        let mut dw = vec![T::zero(); d * m];
        gemm(true, false, d, m, n, x.data(), grad, &mut dw, false);
        out.push((weight, dw));
    }
    if let Some(b) = bias.filter(|b| needs(*b)) {
        let mut db = vec![T::zero(); m];
        for row in grad.chunks_exact(m) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        out.push((b, db));
    }
    Ok(out)
}
