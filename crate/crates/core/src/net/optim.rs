use indexmap::IndexMap;

use super::model::Senet;
use super::tensor::Element;

/// Adam with decoupled weight decay. Moments are kept in f64 keyed by
/// parameter name; decay applies only to parameters flagged for it
/// (conv/linear weights, not biases or batchnorm affines).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Apply one update using the gradients currently stored in the network.
    pub fn step<T: Element>(&mut self, net: &mut Senet<T>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (lr, b1, b2, eps, wd) = (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
        let (m_map, v_map) = (&mut self.m, &mut self.v);
        net.visit_params(&mut |name, data, grad, decay| {
            let m = m_map.entry(name.clone()).or_insert_with(|| vec![0.0; data.len()]);
            let v = v_map.entry(name).or_insert_with(|| vec![0.0; data.len()]);
            for i in 0..data.len() {
                let g = grad[i].to64();
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let mut w = data[i].to64();
                w -= lr * m_hat / (v_hat.sqrt() + eps);
                if decay {
                    w -= lr * wd * w;
                }
                data[i] = T::from64(w);
            }
        });
    }

    /// Deterministic iteration over (name, first moment, second moment).
    pub fn moments(&self) -> impl Iterator<Item = (&String, &Vec<f64>, &Vec<f64>)> {
        self.m
            .iter()
            .map(move |(k, m)| (k, m, self.v.get(k).expect("m/v keys in sync")))
    }

    pub fn set_moments(&mut self, name: &str, m: Vec<f64>, v: Vec<f64>) {
        assert_eq!(m.len(), v.len());
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
    }
}
