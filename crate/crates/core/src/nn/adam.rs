use serde::{Deserialize, Serialize};

/// Adam with bias-corrected moments. One `Adam` drives any number of
/// parameter tensors, each owning its own [`Moments`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self::with_betas(learning_rate, 0.9, 0.999)
    }

    pub fn with_betas(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon: 1e-8,
            step: 0,
        }
    }

    /// Advances the shared step counter; call once per optimisation step,
    /// before the `update`s of that step.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&self, param: &mut [f64], grad: &[f64], moments: &mut Moments) {
        debug_assert!(self.step > 0, "tick() before update()");
        debug_assert_eq!(param.len(), grad.len());
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in param
            .iter_mut()
            .zip(grad)
            .zip(moments.m.iter_mut())
            .zip(moments.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first step is lr·sign(g)
        let mut adam = Adam::new(0.01);
        let mut p = vec![1.0, -1.0];
        let mut mom = Moments::zeros(2);
        adam.tick();
        adam.update(&mut p, &[3.0, -0.2], &mut mom);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn minimises_quadratic() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![5.0];
        let mut mom = Moments::zeros(1);
        for _ in 0..500 {
            adam.tick();
            let g = [2.0 * (p[0] - 2.0)];
            adam.update(&mut p, &g, &mut mom);
        }
        assert!((p[0] - 2.0).abs() < 1e-2, "{}", p[0]);
    }
}
