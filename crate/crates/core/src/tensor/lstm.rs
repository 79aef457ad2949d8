//! LSTM cell built from tape primitives.
//!
//! Gate weights are stacked in the order input, forget, output, candidate:
//! `wx` is `4H×I`, `wh` is `4H×H`, `b` has `4H` entries.

use super::tape::{Tape, Var};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

impl<T: Scalar> Tape<'_, T> {
    /// One cell step: `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`. Returns `(h', c')`.
    pub fn lstm_step(&mut self, x: Var, h: Var, c: Var, w: LstmVars) -> Result<(Var, Var)> {
        let hidden = self.value(h).len();
        if self.value(c).len() != hidden || self.value(w.b).len() != 4 * hidden {
            return Err(Error::shape(
                "lstm_step",
                format!(
                    "hidden {hidden}, cell {}, bias {}",
                    self.value(c).len(),
                    self.value(w.b).len()
                ),
            ));
        }
        let zx = self.matvec(w.wx, x)?;
        let zh = self.matvec(w.wh, h)?;
        let z = self.add(zx, zh)?;
        let z = self.add(z, w.b)?;
        let gate = |tape: &mut Self, k: usize| tape.slice(z, k * hidden, hidden);
        let i = gate(self, 0)?;
        let i = self.sigmoid(i);
        let f = gate(self, 1)?;
        let f = self.sigmoid(f);
        let o = gate(self, 2)?;
        let o = self.sigmoid(o);
        let g = gate(self, 3)?;
        let g = self.tanh(g);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_next = self.add(fc, ig)?;
        let tc = self.tanh(c_next);
        let h_next = self.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Gradients, ParamStore, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn store(i: usize, h: usize, fill: impl FnMut(usize) -> f64 + Copy) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("wx", Tensor::from_fn(&[4 * h, i], fill)).unwrap();
        p.insert("wh", Tensor::from_fn(&[4 * h, h], fill)).unwrap();
        p.insert("b", Tensor::from_fn(&[4 * h], fill)).unwrap();
        p
    }

    fn vars(tape: &mut Tape<'_, f64>) -> LstmVars {
        let p = tape.params();
        LstmVars {
            wx: tape.param(p.id("wx").unwrap()),
            wh: tape.param(p.id("wh").unwrap()),
            b: tape.param(p.id("b").unwrap()),
        }
    }

    fn step(p: &ParamStore<f64>, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new(p);
        let w = vars(&mut tape);
        let x = tape.constant(Tensor::vector(x.to_vec()));
        let h = tape.constant(Tensor::vector(h.to_vec()));
        let c = tape.constant(Tensor::vector(c.to_vec()));
        let (h, c) = tape.lstm_step(x, h, c, w).unwrap();
        (tape.value(h).data().to_vec(), tape.value(c).data().to_vec())
    }

    #[test]
    fn zero_params_zero_state() {
        let p = store(2, 1, |_| 0.0);
        let (h, c) = step(&p, &[0.3, -1.0], &[0.0], &[0.0]);
        assert_eq!((h, c), (vec![0.0], vec![0.0]));
    }

    #[test]
    fn zero_params_halve_cell() {
        let p = store(2, 1, |_| 0.0);
        let (_, c) = step(&p, &[0.3, -1.0], &[0.0], &[2.0]);
        assert_eq!(c, vec![1.0]);
    }

    #[test]
    fn outputs_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let scale = rng.gen_range(0.1..20.0);
            let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
            let vals: Vec<f64> = (0..200).map(|_| r.gen_range(-scale..scale)).collect();
            let p = store(3, 4, |k| vals[k % vals.len()]);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (h, c) = step(&p, &x, &h, &c);
            assert!(c.iter().all(|v| v.is_finite()));
            assert!(h.iter().all(|v| v.is_finite() && v.abs() < 1.0));
        }
    }

    #[test]
    fn two_steps_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let mut p = store(3, 2, |k| vals[(k * 7) % vals.len()]);
        let report = grad_check(&mut p, 1e-5, |p, grads: Option<&mut Gradients<f64>>| {
            let mut tape = Tape::new(p);
            let w = vars(&mut tape);
            let zero = tape.constant(Tensor::zeros(&[2]));
            let x1 = tape.constant(Tensor::vector(vec![0.5, -0.2, 0.9]));
            let x2 = tape.constant(Tensor::vector(vec![-0.4, 0.1, 0.3]));
            let (h, c) = tape.lstm_step(x1, zero, zero, w)?;
            let (h, _) = tape.lstm_step(x2, h, c, w)?;
            let target = tape.constant(Tensor::vector(vec![1.0, -2.0]));
            let loss = tape.dot(h, target)?;
            if let Some(g) = grads {
                tape.backward(loss, g)?;
            }
            Ok(tape.value(loss).data()[0])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }
}
