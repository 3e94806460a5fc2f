//! Luong attention with the bilinear ("general") score `qᵀ W_a h_j`,
//! followed by the attentional state `tanh(W_att [ctx; q])`.

use super::ops::{add_outer, axpy, dot, matvec, matvec_add, matvec_t_add, softmax};
use super::tensor::{ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    /// `[d_q, d_h]`
    pub w_a: Tensor,
    /// `[d_s, d_h + d_q]`
    pub w_att: Tensor,
}

/// Forward values of one decoder step.
#[derive(Debug, Clone)]
pub struct AttentionStep {
    /// `W_aᵀ q`
    u: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    /// `tanh(W_att [ctx; q])`
    pub state: Vec<f64>,
}

/// Context vector and weights for one query over `keys` (`[n, d_h]`).
pub fn luong_attention(w_a: &Tensor, query: &[f64], keys: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (dq, dh) = (w_a.rows(), w_a.cols());
    if query.len() != dq || !keys.len().is_multiple_of(dh) {
        return Err(Error::Shape {
            context: "attention",
            expected: vec![dq, dh],
            actual: vec![query.len(), keys.len()],
        });
    }
    if keys.is_empty() {
        return Err(Error::Empty("encoder states"));
    }
    let mut u = vec![0.0; dh];
    matvec_t_add(w_a.data(), query, &mut u);
    let (ctx, w) = attend(&u, keys);
    Ok((ctx, w))
}

fn attend(u: &[f64], keys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dh = u.len();
    let mut w: Vec<f64> = keys.chunks_exact(dh).map(|k| dot(u, k)).collect();
    softmax(&mut w);
    let mut ctx = vec![0.0; dh];
    for (a, k) in w.iter().zip(keys.chunks_exact(dh)) {
        axpy(*a, k, &mut ctx);
    }
    (ctx, w)
}

impl Attention {
    pub fn zeros(d_q: usize, d_h: usize, d_s: usize) -> Self {
        Self {
            w_a: Tensor::zeros(&[d_q, d_h]),
            w_att: Tensor::zeros(&[d_s, d_h + d_q]),
        }
    }

    pub fn state_size(&self) -> usize {
        self.w_att.rows()
    }

    pub fn forward(&self, query: &[f64], keys: &[f64]) -> Result<AttentionStep> {
        let dh = self.w_a.cols();
        if keys.is_empty() {
            return Err(Error::Empty("encoder states"));
        }
        if query.len() != self.w_a.rows() || !keys.len().is_multiple_of(dh) {
            return Err(Error::Shape {
                context: "attention",
                expected: vec![self.w_a.rows(), dh],
                actual: vec![query.len(), keys.len()],
            });
        }
        let mut u = vec![0.0; dh];
        matvec_t_add(self.w_a.data(), query, &mut u);
        let (context, weights) = attend(&u, keys);
        let mut cat = context.clone();
        cat.extend_from_slice(query);
        let mut state = vec![0.0; self.w_att.rows()];
        matvec(self.w_att.data(), cat.len(), &cat, &mut state);
        state.iter_mut().for_each(|s| *s = s.tanh());
        Ok(AttentionStep {
            u,
            weights,
            context,
            state,
        })
    }

    /// Accumulates parameter gradients and returns `dq`; key gradients are
    /// added into `d_keys`.
    pub fn backward(
        &self,
        step: &AttentionStep,
        query: &[f64],
        keys: &[f64],
        d_state: &[f64],
        grad: &mut Attention,
        d_keys: &mut [f64],
    ) -> Vec<f64> {
        let dh = self.w_a.cols();
        let dpre: Vec<f64> = d_state.iter().zip(&step.state).map(|(d, s)| d * (1.0 - s * s)).collect();
        let mut cat = step.context.clone();
        cat.extend_from_slice(query);
        add_outer(grad.w_att.data_mut(), &dpre, &cat);
        let mut dcat = vec![0.0; cat.len()];
        matvec_t_add(self.w_att.data(), &dpre, &mut dcat);
        let (dctx, dq_direct) = dcat.split_at(dh);
        let mut dq = dq_direct.to_vec();

        // context = Σ a_j h_j
        let da: Vec<f64> = keys.chunks_exact(dh).map(|k| dot(dctx, k)).collect();
        let mean = dot(&da, &step.weights);
        let mut du = vec![0.0; dh];
        for (j, (k, dk)) in keys.chunks_exact(dh).zip(d_keys.chunks_exact_mut(dh)).enumerate() {
            let a = step.weights[j];
            axpy(a, dctx, dk);
            let ds = a * (da[j] - mean);
            if ds != 0.0 {
                axpy(ds, k, &mut du);
                axpy(ds, &step.u, dk);
            }
        }
        // u = W_aᵀ q
        add_outer(grad.w_a.data_mut(), query, &du);
        matvec_add(self.w_a.data(), dh, &du, &mut dq);
        dq
    }
}

impl ParamSet for Attention {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("w_a", &self.w_a);
        f("w_att", &self.w_att);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w_a", &mut self.w_a);
        f("w_att", &mut self.w_att);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::gradcheck::{grad_check, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64) -> Attention {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Attention::zeros(4, 4, 5);
        a.visit_mut(&mut |_, t| *t = Tensor::uniform(t.shape(), 0.7, &mut rng));
        a
    }

    #[test]
    fn single_state_gets_all_weight() {
        let a = random(1);
        let h = [0.1, -0.4, 0.3, 0.8];
        let (ctx, w) = luong_attention(&a.w_a, &[0.5, 0.5, -1.0, 0.2], &h).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(ctx, h.to_vec());
    }

    #[test]
    fn identical_states_get_uniform_weights() {
        let a = random(2);
        let h: Vec<f64> = [0.1, -0.4, 0.3, 0.8].repeat(5);
        let (_, w) = luong_attention(&a.w_a, &[0.5, 0.5, -1.0, 0.2], &h).unwrap();
        assert!(w.iter().all(|x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn empty_keys_rejected() {
        let a = random(3);
        assert!(matches!(luong_attention(&a.w_a, &[0.0; 4], &[]), Err(Error::Empty(_))));
        assert!(a.forward(&[0.0; 4], &[]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut a = random(4);
        let q = [0.3, -0.2, 0.9, 0.1];
        let keys: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin()).collect();
        let proj = [0.4, -1.0, 0.2, 0.7, -0.3];
        let loss = |a: &Attention| Ok(dot(&a.forward(&q, &keys)?.state, &proj));
        let step = a.forward(&q, &keys).unwrap();
        let mut grad = a.clone();
        grad.zero();
        let mut dk = vec![0.0; keys.len()];
        let dq = a.backward(&step, &q, &keys, &proj, &mut grad, &mut dk);
        let report = grad_check(&mut a, &grad, loss, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        let eps = 1e-6;
        let num = |f: &dyn Fn(f64) -> f64| (f(eps) - f(-eps)) / (2.0 * eps);
        for i in 0..q.len() {
            let n = num(&|e| {
                let mut qq = q;
                qq[i] += e;
                dot(&a.forward(&qq, &keys).unwrap().state, &proj)
            });
            assert!((n - dq[i]).abs() < 1e-7);
        }
        for i in 0..keys.len() {
            let n = num(&|e| {
                let mut kk = keys.clone();
                kk[i] += e;
                dot(&a.forward(&q, &kk).unwrap().state, &proj)
            });
            assert!((n - dk[i]).abs() < 1e-7);
        }
    }
}
