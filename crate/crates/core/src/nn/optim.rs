use super::Scalar;

/// SGD with classical momentum. Velocity buffers are allocated lazily on
/// the first step and keyed by parameter position.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate: T::of(learning_rate),
            momentum: T::of(momentum),
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(self.velocity.iter_mut()) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi;
                *pi -= self.learning_rate * *vi;
            }
        }
    }
}

/// Adam over a single flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], learning_rate: T) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Cosine-annealed learning rate for step `step` of `total` (0-based),
/// decaying from `base` towards zero.
pub fn cosine_annealing(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_annealing(0.1, 0, 100), 0.1);
        assert!((cosine_annealing(0.1, 50, 100) - 0.05).abs() < 1e-12);
        assert!(cosine_annealing(0.1, 99, 100) < 1e-4);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::<f64>::new(2, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.3, -4.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut sgd = Sgd::<f64>::new(0.1, 0.9);
        let mut p = vec![0.0];
        sgd.step(vec![&mut p], vec![&[1.0]]);
        sgd.step(vec![&mut p], vec![&[1.0]]);
        assert!((p[0] + 0.29).abs() < 1e-12);
    }
}
