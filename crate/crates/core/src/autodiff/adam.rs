use super::{ParamGrads, ParamStore};

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    pub learning_rate: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f32) -> Self {
        let zeros: Vec<Vec<f32>> = store.values().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, param) in store.values_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &gv), mv), vv) in param.data.iter_mut().zip(&g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *p -= self.learning_rate * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::default();
        store.add("w", Tensor::from_vec([1, 1, 1, 2], vec![1.0, -1.0]));
        let mut adam = Adam::new(&store, 0.1);
        let grads = vec![Some(Tensor::from_vec([1, 1, 1, 2], vec![3.0, -0.5]))];
        adam.step(&mut store, &grads);
        let w = &store.values()[0].data;
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        store.add("w", Tensor::from_vec([1, 1, 1, 1], vec![5.0]));
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let w = store.values()[0].data[0];
            adam.step(&mut store, &vec![Some(Tensor::from_vec([1, 1, 1, 1], vec![2.0 * (w - 2.0)]))]);
        }
        assert!((store.values()[0].data[0] - 2.0).abs() < 1e-2);
    }
}
