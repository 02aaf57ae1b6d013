//! Adam with bias correction over a flat parameter vector.

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    /// Drops the moments of removed items; `stride` values per item.
    pub fn retain(&mut self, keep: &[bool], stride: usize) {
        assert_eq!(keep.len() * stride, self.m.len());
        let filter = |v: &mut Vec<f64>| {
            let mut out = Vec::with_capacity(v.len());
            for (k, chunk) in v.chunks(stride).enumerate() {
                if keep[k] {
                    out.extend_from_slice(chunk);
                }
            }
            *v = out;
        };
        filter(&mut self.m);
        filter(&mut self.v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = Adam::new(2, 0.1, 1e-15);
        let mut p = vec![1.0, -1.0];
        a.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut a = Adam::new(3, 0.1, 1e-8);
        let mut p = vec![0.5, 1.5, -2.0];
        for _ in 0..10 {
            a.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![0.5, 1.5, -2.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut a = Adam::new(1, 0.05, 1e-8);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 1.0);
            a.step(&mut p, &[g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn retain_keeps_matching_moments() {
        let mut a = Adam::new(6, 0.1, 1e-8);
        let mut p = vec![0.0; 6];
        a.step(&mut p, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        a.retain(&[true, false, true], 2);
        assert_eq!(a.len(), 4);
        assert!((a.m[2] - 0.3).abs() < 1e-12);
    }
}
