use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update. `grads[i]` belongs to parameter `i`; `None` leaves that
    /// parameter and its moments untouched. A non-finite gradient aborts the
    /// step before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::protocol(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, grad) in params.ids().zip(grads) {
            if let Some(g) = grad {
                if g.shape() != params.get(id).shape() {
                    return Err(Error::protocol(format!(
                        "gradient shape {:?} does not match parameter {}",
                        g.shape(),
                        params.name(id)
                    )));
                }
                if !g.all_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite gradient for parameter {}",
                        params.name(id)
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(self.learning_rate);
        let eps = T::lit(self.epsilon);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let id = ParamId(i);
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for (((pv, mv), vv), gv) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *mv = b1 * *mv + (one - b1) * *gv;
                *vv = b2 * *vv + (one - b2) * *gv * *gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_vec(&[1], vec![value]));
        s
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = single(0.5);
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &[Some(Tensor::zeros(&[1]))]).unwrap();
        assert_eq!(p.get(p.find("w").unwrap()).item(), 0.5);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(0.0);
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &[Some(Tensor::from_vec(&[1], vec![1.0]))]).unwrap();
        // m_hat = 1, v_hat = 1 => delta = -lr / (1 + eps)
        let delta = p.get(p.find("w").unwrap()).item();
        assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_does_not_blow_up() {
        let mut p = single(0.0);
        let mut adam = AdamState::new(&p, 1e-3);
        let g = [Some(Tensor::from_vec(&[1], vec![0.7]))];
        adam.step(&mut p, &g).unwrap();
        let d1 = p.get(p.find("w").unwrap()).item();
        adam.step(&mut p, &g).unwrap();
        let d2 = p.get(p.find("w").unwrap()).item() - d1;
        assert!(d2.abs() <= d1.abs() * 1.01);
    }

    #[test]
    fn nan_gradient_aborts_step() {
        let mut p = single(0.25);
        let mut adam = AdamState::new(&p, 1e-3);
        let err = adam.step(&mut p, &[Some(Tensor::from_vec(&[1], vec![f64::NAN]))]);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(adam.step, 0);
        assert_eq!(p.get(p.find("w").unwrap()).item(), 0.25);
    }
}
