//! Optimizers: Adam (bias-corrected) and plain SGD.
//!
//! Both apply one update to every parameter named in the gradient map and
//! error with [`NnError::MisalignedGrads`] if a gradient does not line up
//! with the parameter set (unknown name, shape mismatch, or a gradient for a
//! non-trainable parameter). Parameters without a gradient entry are left
//! untouched.

use super::{GradMap, NnError, ParamSet, Scalar, Tensor};

/// Which optimizer a training config selects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Adam => write!(f, "adam"),
            OptimizerKind::Sgd => write!(f, "sgd"),
        }
    }
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Defaults matching the training setup: beta1 0.9, beta2 0.999, eps 1e-7.
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-7 }
    }
}

fn check_aligned<T: Scalar>(params: &ParamSet<T>, grads: &GradMap<T>) -> Result<(), NnError> {
    for (name, g) in grads {
        let entry = params
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| NnError::MisalignedGrads(format!("gradient for unknown parameter {name}")))?;
        if !entry.trainable {
            return Err(NnError::MisalignedGrads(format!("gradient for non-trainable parameter {name}")));
        }
        if entry.tensor.shape() != g.shape() {
            return Err(NnError::MisalignedGrads(format!(
                "gradient shape {:?} for parameter {name} of shape {:?}",
                g.shape(),
                entry.tensor.shape()
            )));
        }
    }
    Ok(())
}

/// One bias-corrected Adam step; increments the parameter set's step counter.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &GradMap<T>, cfg: &AdamConfig) -> Result<(), NnError> {
    check_aligned(params, grads)?;
    params.step += 1;
    let t = params.step as i32;
    let b1 = T::from_f(cfg.beta1);
    let b2 = T::from_f(cfg.beta2);
    let lr = T::from_f(cfg.lr);
    let eps = T::from_f(cfg.eps);
    let one = T::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    for (name, g) in grads {
        let entry = params.entry_mut(name)?;
        if entry.m.is_none() {
            entry.m = Some(Tensor::zeros(g.shape()));
            entry.v = Some(Tensor::zeros(g.shape()));
        }
        let m = entry.m.as_mut().unwrap().data_mut();
        let v = entry.v.as_mut().unwrap().data_mut();
        let w = entry.tensor.data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] = w[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One plain SGD step `w ← w − lr·g`; increments the step counter.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, grads: &GradMap<T>, lr: f64) -> Result<(), NnError> {
    check_aligned(params, grads)?;
    params.step += 1;
    let lr = T::from_f(lr);
    for (name, g) in grads {
        let entry = params.entry_mut(name)?;
        for (w, &gi) in entry.tensor.data_mut().iter_mut().zip(g.data()) {
            *w = *w - lr * gi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(w0: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w".into(), Tensor::from_vec(&[1], vec![w0]).unwrap(), true);
        p
    }

    fn grad_of(v: f64) -> GradMap<f64> {
        let mut g = GradMap::new();
        g.insert("w".into(), Tensor::from_vec(&[1], vec![v]).unwrap());
        g
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        for g in [3.0, -0.02, 17.5] {
            let mut p = scalar_params(1.0);
            adam_step(&mut p, &grad_of(g), &AdamConfig::with_lr(0.1)).unwrap();
            let w = p.get("w").unwrap().data()[0];
            // first bias-corrected step ≈ −lr·sign(g)
            assert!((w - (1.0 - 0.1 * g.signum())).abs() < 1e-4, "g={g}, w={w}");
        }
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = scalar_params(0.75);
        adam_step(&mut p, &grad_of(0.0), &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.75);
        sgd_step(&mut p, &grad_of(0.0), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.75);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // oracle: run the published scalar recursion independently, then
        // check our implementation tracks it step for step
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-7);
        let (mut w_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut p = scalar_params(1.0);
        let cfg = AdamConfig::with_lr(lr);
        for t in 1..=100 {
            let g_ref = 2.0 * w_ref;
            m = b1 * m + (1.0 - b1) * g_ref;
            v = b2 * v + (1.0 - b2) * g_ref * g_ref;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            w_ref -= lr * mhat / (vhat.sqrt() + eps);

            let g = 2.0 * p.get("w").unwrap().data()[0];
            adam_step(&mut p, &grad_of(g), &cfg).unwrap();
            let w = p.get("w").unwrap().data()[0];
            assert!((w - w_ref).abs() < 1e-12, "step {t}: {w} vs {w_ref}");
        }
        assert!(w_ref.abs() < 0.1, "converged to {w_ref}");
        assert_eq!(p.step_count(), 100);
    }

    #[test]
    fn sgd_hand_example_and_direction() {
        let mut p = scalar_params(1.0);
        sgd_step(&mut p, &grad_of(1.0), 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.9).abs() < 1e-12);
        // same descent direction as adam on a convex scalar
        let mut pa = scalar_params(1.0);
        adam_step(&mut pa, &grad_of(2.0), &AdamConfig::with_lr(0.1)).unwrap();
        assert!(pa.get("w").unwrap().data()[0] < 1.0);
    }

    #[test]
    fn misaligned_grads_error() {
        let mut p = scalar_params(1.0);
        let mut g = GradMap::new();
        g.insert("nope".into(), Tensor::from_vec(&[1], vec![1.0]).unwrap());
        assert!(matches!(adam_step(&mut p, &g, &AdamConfig::with_lr(0.1)), Err(NnError::MisalignedGrads(_))));
        let mut g2 = GradMap::new();
        g2.insert("w".into(), Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap());
        assert!(matches!(sgd_step(&mut p, &g2, 0.1), Err(NnError::MisalignedGrads(_))));
        // non-trainable params reject gradients
        let mut p2 = ParamSet::<f64>::new();
        p2.insert("s.bn.rmean".into(), Tensor::zeros(&[1]), false);
        let mut g3 = GradMap::new();
        g3.insert("s.bn.rmean".into(), Tensor::zeros(&[1]));
        assert!(matches!(adam_step(&mut p2, &g3, &AdamConfig::with_lr(0.1)), Err(NnError::MisalignedGrads(_))));
    }
}
