use super::tensor::{flatten, ParamSet};

/// Adam with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> f64 {
        let g = flatten(grads);
        if self.m.len() != g.len() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
            self.t = 0;
        }
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let k = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.lr * b2t.sqrt() / b1t;
        let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut off = 0;
        params.visit_mut(&mut |_, t| {
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let j = off + i;
                let gi = g[j] * k;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gi;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gi * gi;
                *p -= step * m[j] / (v[j].sqrt() + eps * b2t.sqrt());
            }
            off += t.len();
        });
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::tensor::Tensor;

    struct P(Tensor);
    impl ParamSet for P {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("p", &self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("p", &mut self.0)
        }
    }

    #[test]
    fn first_step_moves_by_lr_in_sign_direction() {
        let mut p = P(Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let g = P(Tensor::from_vec(&[2], vec![0.3, -2.0]).unwrap());
        let mut opt = Adam::new(0.01);
        opt.step(&mut p, &g);
        assert!((p.0.data()[0] - 0.99).abs() < 1e-6);
        assert!((p.0.data()[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic_and_clips() {
        let mut p = P(Tensor::from_vec(&[3], vec![3.0, -2.0, 100.0]).unwrap());
        let mut opt = Adam::new(0.1);
        let mut first = 0.0;
        for i in 0..3000 {
            let g = P(Tensor::from_vec(&[3], p.0.data().iter().map(|x| 2.0 * x).collect()).unwrap());
            let n = opt.step(&mut p, &g);
            if i == 0 {
                first = n;
            }
        }
        assert!(first > 5.0);
        assert!(p.0.data().iter().all(|x| x.abs() < 1e-2), "{:?}", p.0.data());
    }
}
