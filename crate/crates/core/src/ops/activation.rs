use rand::Rng;

use crate::autograd::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::{Real, Tensor};

impl<T: Real> Tape<T> {
    /// `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Row-wise softmax of an `[N, K]` tensor, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_forward(self.value(a))?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    /// Inverted dropout with drop probability `p`. Eval mode and `p == 0`
    /// return the input unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = T::lit(1.0 / (1.0 - p));
        let n = self.value(a).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep_scale })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { input: a, mask }))
    }
}

pub fn softmax_forward<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = input.dims2()?;
    let mut data = vec![T::zero(); n * k];
    for (row, out) in input.data().chunks_exact(k).zip(data.chunks_exact_mut(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (o, &x) in out.iter_mut().zip(row) {
            *o = (x - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }
    Tensor::new(vec![n, k], data)
}

pub(super) fn relu_backward<T: Real>(input: &Tensor<T>, grad: &[T]) -> Vec<T> {
    input
        .data()
        .iter()
        .zip(grad)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

pub(super) fn softmax_backward<T: Real>(out: &Tensor<T>, grad: &[T]) -> Vec<T> {
    let k = out.shape()[1];
    let mut dx = vec![T::zero(); out.numel()];
    for ((y, g), d) in out.data().chunks_exact(k).zip(grad.chunks_exact(k)).zip(dx.chunks_exact_mut(k)) {
        let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
        for ((d, &yi), &gi) in d.iter_mut().zip(y).zip(g) {
            *d = yi * (gi - dot);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(vec![5], |i| -1.0 - i as f64), true);
        let y = tape.relu(x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_and_overflow() {
        let uniform = softmax_forward(&Tensor::<f64>::zeros(vec![1, 22])).unwrap();
        assert!(uniform.data().iter().all(|&p| (p - 1.0 / 22.0).abs() < 1e-15));
        let big = softmax_forward(&Tensor::<f64>::new(vec![1, 2], vec![1000.0, 0.0]).unwrap()).unwrap();
        assert!(big.is_finite());
        assert!((big.data()[0] - 1.0).abs() < 1e-12);
        assert!(big.data()[1] < 1e-300);
    }

    #[test]
    fn dropout_p_zero_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(vec![10], |i| i as f64), true);
        assert_eq!(tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, Mode::Eval, &mut rng).unwrap(), x);
    }

    #[test]
    fn dropout_rejects_p_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![4]), true);
        assert!(matches!(tape.dropout(x, 1.0, Mode::Train, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::<f64>::new();
        let input = Tensor::from_fn(vec![10_000], |i| 1.0 + (i % 7) as f64 * 0.1);
        let in_mean = input.sum() / 10_000.0;
        let x = tape.leaf(input, true);
        let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let out = tape.value(y);
        let survived = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / 10_000.0;
        assert!((survived - 0.5).abs() <= 0.02, "surviving fraction {survived}");
        let out_mean = out.sum() / 10_000.0;
        assert!((out_mean - in_mean).abs() / in_mean < 0.05, "mean {out_mean} vs {in_mean}");
    }
}
