use crate::tape::Mat;

/// Adam with decoupled weight decay: each step first shrinks parameters by
/// `lr * weight_decay`, then applies the bias-corrected moment update.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, params: &[Mat]) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                p.data[i] *= 1.0 - self.lr * self.weight_decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g.data[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g.data[i] * g.data[i];
                p.data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}
