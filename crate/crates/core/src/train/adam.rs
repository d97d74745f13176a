use crate::hashgrid::GridGradient;
use crate::real::Real;

/// Adaptive-moment optimizer constants and step counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-15,
            step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<R>,
    pub v: Vec<R>,
}

impl<R: Real> AdamState<R> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![R::zero(); len],
            v: vec![R::zero(); len],
        }
    }
}

struct Coefficients<R> {
    b1: R,
    b2: R,
    c1: R,
    c2: R,
    lr: R,
    eps: R,
}

impl Adam {
    /// Advances the shared step counter; call once per optimizer step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    fn coefficients<R: Real>(&self, lr: f64) -> Coefficients<R> {
        let t = self.step.max(1) as i32;
        Coefficients {
            b1: R::c(self.beta1),
            b2: R::c(self.beta2),
            c1: R::c(1.0 - self.beta1.powi(t)),
            c2: R::c(1.0 - self.beta2.powi(t)),
            lr: R::c(lr),
            eps: R::c(self.epsilon),
        }
    }

    #[inline]
    fn update<R: Real>(k: &Coefficients<R>, p: &mut R, g: R, m: &mut R, v: &mut R) {
        *m = k.b1 * *m + (R::one() - k.b1) * g;
        *v = k.b2 * *v + (R::one() - k.b2) * g * g;
        let mh = *m / k.c1;
        let vh = *v / k.c2;
        *p -= k.lr * mh / (vh.sqrt() + k.eps);
    }

    pub fn dense<R: Real>(&self, params: &mut [R], grads: &[R], state: &mut AdamState<R>, lr: f64) {
        let k = self.coefficients(lr);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            Self::update(&k, p, *g, m, v);
        }
    }

    /// Updates only the grid entries touched this step, using the
    /// collision-averaged gradient.
    pub fn sparse_grid<R: Real>(&self, params: &mut [R], grad: &GridGradient<R>, state: &mut AdamState<R>, lr: f64) {
        let k = self.coefficients(lr);
        for level in grad.levels() {
            for (entry, count, sums) in level.iter_touched() {
                let f = sums.len();
                let div = R::from_u32(count).expect("count fits");
                for (j, s) in sums.iter().enumerate() {
                    let i = entry * f + j;
                    Self::update(&k, &mut params[i], *s / div, &mut state.m[i], &mut state.v[i]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut a = Adam::default();
        a.begin_step();
        let mut p = vec![1.0f64, -2.0];
        let mut s = AdamState::new(2);
        a.dense(&mut p, &[0.5, -3.0], &mut s, 0.1);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut a = Adam::default();
        a.begin_step();
        let mut p = vec![0.25f32; 3];
        let mut s = AdamState::new(3);
        a.dense(&mut p, &[1.0, -1.0, 0.0], &mut s, 0.0);
        assert_eq!(p, vec![0.25; 3]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut a = Adam::default();
        let mut p = vec![3.0f64];
        let mut s = AdamState::new(1);
        for i in 0..2000 {
            a.begin_step();
            let g = 2.0 * (p[0] - 1.0);
            a.dense(&mut p, &[g], &mut s, 0.05 * (1.0 - i as f64 / 2000.0));
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }
}
