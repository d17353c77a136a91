use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!("add: shapes {:?} and {:?} differ", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!("mul: shapes {:?} and {:?} differ", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|v| v * k);
        self.push(out, Op::Scale(a, k))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Concatenates `[N, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let (n, _, h, w) = self.value(*first).dims4()?;
        let mut total_c = 0;
        for p in parts {
            let (pn, pc, ph, pw) = self.value(*p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(format!(
                    "concat: part {:?} does not match batch/spatial extents ({n}, {h}, {w})",
                    self.shape(*p)
                )));
            }
            total_c += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for s in 0..n {
            for p in parts {
                let v = self.value(*p);
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let out = Tensor::new(vec![n, total_c, h, w], data)?;
        Ok(self.push(out, Op::ConcatChannels(parts.to_vec())))
    }
}

pub(super) fn add_backward<T: Real>(a: Var, b: Var, grad: &[T], needs: impl Fn(Var) -> bool) -> Vec<(Var, Vec<T>)> {
    let mut out = Vec::with_capacity(2);
    if needs(a) {
        out.push((a, grad.to_vec()));
    }
    if needs(b) {
        out.push((b, grad.to_vec()));
    }
    out
}

pub(super) fn mul_backward<T: Real>(
    a: Var,
    b: Var,
    va: &Tensor<T>,
    vb: &Tensor<T>,
    grad: &[T],
    needs: impl Fn(Var) -> bool,
) -> Vec<(Var, Vec<T>)> {
    let mut out = Vec::with_capacity(2);
    if needs(a) {
        out.push((a, grad.iter().zip(vb.data()).map(|(&g, &y)| g * y).collect()));
    }
    if needs(b) {
        out.push((b, grad.iter().zip(va.data()).map(|(&g, &x)| g * x).collect()));
    }
    out
}

pub(super) fn concat_backward<T: Real>(parts: &[Var], shapes: &[&[usize]], grad: &[T], needs: impl Fn(Var) -> bool) -> Vec<(Var, Vec<T>)> {
    let n = shapes[0][0];
    let plane = shapes[0][2] * shapes[0][3];
    let total_c: usize = shapes.iter().map(|s| s[1]).sum();
    let mut offset = 0;
    let mut out = Vec::with_capacity(parts.len());
    for (part, shape) in parts.iter().zip(shapes) {
        let c = shape[1];
        if needs(*part) {
            let mut g = Vec::with_capacity(n * c * plane);
            for s in 0..n {
                let start = (s * total_c + offset) * plane;
                g.extend_from_slice(&grad[start..start + c * plane]);
            }
            out.push((*part, g));
        }
        offset += c;
    }
    out
}
