use super::mlp::{ClassifierState, Params};
use crate::error::{Error, Result};

/// Moves the teacher toward the student: `teacher = decay * teacher + (1 - decay) * student`.
pub fn ema_update(state: &mut ClassifierState, decay: f64) {
    state.teacher.zip_apply(&state.student, |t, s| decay * t + (1.0 - decay) * s);
}

/// Plain gradient step `params -= lr * (grads + weight_decay * params)`.
///
/// `batch` only labels the error when a gradient is not finite; the
/// parameters are left untouched in that case.
pub fn sgd_step(params: &mut Params, grads: &Params, lr: f64, weight_decay: f64, batch: usize) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Training { batch });
    }
    params.zip_apply(grads, |p, g| p - lr * (g + weight_decay * p));
    Ok(())
}

/// Heavy-ball SGD. With zero momentum it is exactly [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Params>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    /// Forgets accumulated momentum.
    pub fn reset(&mut self) {
        self.velocity = None;
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, batch: usize) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_step(params, grads, self.lr, self.weight_decay, batch);
        }
        if !grads.all_finite() {
            return Err(Error::Training { batch });
        }
        let mut direction = grads.clone();
        direction.zip_apply(params, |g, p| g + self.weight_decay * p);
        let velocity = match self.velocity.take() {
            Some(mut v) => {
                v.zip_apply(&direction, |v, d| self.momentum * v + d);
                v
            }
            None => direction,
        };
        params.zip_apply(&velocity, |p, v| p - self.lr * v);
        self.velocity = Some(velocity);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mlp::{Architecture, Dense};
    use ndarray::{array, Array1, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state() -> ClassifierState {
        let arch = Architecture::new(3, vec![4], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let student = Params::he_init(&arch, &mut rng);
        let teacher = Params::he_init(&arch, &mut rng);
        ClassifierState::from_parts(student, teacher).unwrap()
    }

    #[test]
    fn zero_decay_copies_student() {
        let mut s = state();
        ema_update(&mut s, 0.0);
        assert_eq!(s.teacher, s.student);
    }

    #[test]
    fn ema_matches_formula_exactly() {
        let mut s = state();
        let old = s.teacher.clone();
        ema_update(&mut s, 0.9);
        let mut expected = old;
        expected.zip_apply(&s.student, |t, st| 0.9 * t + (1.0 - 0.9) * st);
        assert_eq!(s.teacher.max_abs_diff(&expected), 0.0);
        assert_eq!(s.teacher.architecture(), s.student.architecture());
    }

    #[test]
    fn ema_converges_geometrically() {
        let mut s = state();
        let gap0 = s.teacher.max_abs_diff(&s.student);
        for k in 1..=50 {
            ema_update(&mut s, 0.99);
            let gap = s.teacher.max_abs_diff(&s.student);
            let expected = gap0 * 0.99f64.powi(k);
            assert!((gap - expected).abs() <= 1e-12 * gap0.max(1.0), "{k}: {gap} vs {expected}");
        }
    }

    fn scalar(v: f64) -> Params {
        Params {
            layers: vec![Dense {
                weight: array![[v]],
                bias: Array1::zeros(1),
            }],
        }
    }

    #[test]
    fn zero_gradient_is_identity_without_decay() {
        let mut p = state().student;
        let before = p.clone();
        let zero = Params::zeros(&p.architecture());
        sgd_step(&mut p, &zero, 0.1, 0.0, 0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut p = state().student;
        let before = p.clone();
        let zero = Params::zeros(&p.architecture());
        sgd_step(&mut p, &zero, 0.5, 0.1, 0).unwrap();
        for (a, b) in p.iter().zip(before.iter()) {
            assert!((a - b * (1.0 - 0.5 * 0.1)).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn quadratic_trajectory_matches_closed_form() {
        // loss = a/2 (w - w*)^2, so w_k - w* = (1 - lr a)^k (w_0 - w*).
        let (a, target, lr, w0) = (3.0, 1.5, 0.1, -2.0);
        let mut p = scalar(w0);
        for k in 1..=30 {
            let w = p.layers[0].weight[[0, 0]];
            sgd_step(&mut p, &scalar(a * (w - target)), lr, 0.0, k).unwrap();
            let expected = target + (1.0f64 - lr * a).powi(k as i32) * (w0 - target);
            assert!((p.layers[0].weight[[0, 0]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_batch() {
        let mut p = scalar(1.0);
        let err = sgd_step(&mut p, &scalar(f64::NAN), 0.1, 0.0, 17).unwrap_err();
        assert!(matches!(err, Error::Training { batch: 17 }));
        assert_eq!(p, scalar(1.0));
        let mut opt = Sgd::new(0.1, 0.9, 0.0);
        assert!(matches!(opt.step(&mut p, &scalar(f64::INFINITY), 3), Err(Error::Training { batch: 3 })));
    }

    #[test]
    fn momentum_zero_equals_plain_step() {
        let mut a = state().student;
        let mut b = a.clone();
        let g = state().teacher;
        let mut opt = Sgd::new(0.05, 0.0, 0.01);
        opt.step(&mut a, &g, 0).unwrap();
        sgd_step(&mut b, &g, 0.05, 0.01, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn momentum_accumulates_and_resets() {
        let mut p = scalar(0.0);
        let mut opt = Sgd::new(1.0, 0.5, 0.0);
        opt.step(&mut p, &scalar(1.0), 0).unwrap();
        opt.step(&mut p, &scalar(1.0), 1).unwrap();
        // Velocities 1 then 1.5.
        assert_eq!(p.layers[0].weight, Array2::from_elem((1, 1), -2.5));
        opt.reset();
        opt.step(&mut p, &scalar(1.0), 2).unwrap();
        assert_eq!(p.layers[0].weight, Array2::from_elem((1, 1), -3.5));
    }
}
