//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{flatten, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor; larger tensors are sampled.
    pub max_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_per_tensor: 64,
            floor: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` around
/// `params`. Parameters are restored before returning.
pub fn grad_check<P, F>(params: &mut P, analytic: &P, mut loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    P: ParamSet,
    F: FnMut(&P) -> Result<f64>,
{
    let names = params.tensor_names();
    let mut sizes = Vec::new();
    params.visit(&mut |_, t| sizes.push(t.len()));
    let grads = flatten(analytic);
    if grads.len() != sizes.iter().sum::<usize>() {
        return Err(Error::InvalidArgument("gradient layout differs from parameters".into()));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        passed: true,
    };
    let mut offset = 0;
    for (ti, &n) in sizes.iter().enumerate() {
        let coords: Vec<usize> = if n <= opts.max_per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for idx in coords {
            let orig = get(params, ti, idx);
            set(params, ti, idx, orig + opts.epsilon);
            let lp = loss(params)?;
            set(params, ti, idx, orig - opts.epsilon);
            let lm = loss(params)?;
            set(params, ti, idx, orig);
            if !lp.is_finite() || !lm.is_finite() {
                return Err(Error::NonFinite("loss".into()));
            }
            let num = (lp - lm) / (2.0 * opts.epsilon);
            let ana = grads[offset + idx];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(opts.floor);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((names[ti].clone(), idx));
            }
            report.checked += 1;
        }
        offset += n;
    }
    report.passed = report.max_rel_error < opts.tolerance;
    Ok(report)
}

fn get<P: ParamSet>(p: &P, ti: usize, idx: usize) -> f64 {
    let mut i = 0;
    let mut out = 0.0;
    p.visit(&mut |_, t| {
        if i == ti {
            out = t.data()[idx];
        }
        i += 1;
    });
    out
}

fn set<P: ParamSet>(p: &mut P, ti: usize, idx: usize, v: f64) {
    let mut i = 0;
    p.visit_mut(&mut |_, t| {
        if i == ti {
            t.data_mut()[idx] = v;
        }
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::tensor::Tensor;

    struct Vector(Tensor);
    impl ParamSet for Vector {
        fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("x", &self.0)
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("x", &mut self.0)
        }
    }

    fn sq(p: &Vector) -> Result<f64> {
        Ok(p.0.data().iter().map(|v| v * v).sum())
    }

    #[test]
    fn quadratic_matches_exactly() {
        let x = Tensor::from_vec(&[4], vec![0.5, -1.5, 2.0, 3.25]).unwrap();
        let g = Vector(Tensor::from_vec(&[4], x.data().iter().map(|v| 2.0 * v).collect()).unwrap());
        let mut p = Vector(x.clone());
        let r = grad_check(&mut p, &g, sq, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert!(r.passed);
        assert_eq!(p.0, x);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let x = Tensor::from_vec(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let g = Vector(Tensor::from_vec(&[3], vec![1.0, -3.0, 4.1]).unwrap());
        let r = grad_check(&mut Vector(x), &g, sq, &GradCheckOptions::default()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst, Some(("x".into(), 2)));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut p = Vector(Tensor::zeros(&[2]));
        let g = Vector(Tensor::zeros(&[2]));
        let r = grad_check(&mut p, &g, |_| Ok(f64::NAN), &GradCheckOptions::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
