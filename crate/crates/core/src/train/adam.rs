use serde::{Deserialize, Serialize};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Bias-corrected Adam. Moment buffers are matched to parameters by the
/// order in which [`Adam::step`] receives them, so callers must present
/// parameters in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Completed steps.
    pub t: u64,
    moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// One update over every `(parameter, gradient)` pair.
    pub fn step<'a, I>(&mut self, pairs: I)
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        self.t += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (k, (param, grad)) in pairs.into_iter().enumerate() {
            assert_eq!(param.len(), grad.len(), "parameter and gradient lengths differ");
            if self.moments.len() <= k {
                self.moments.push(Moments::default());
            }
            let st = &mut self.moments[k];
            if st.m.is_empty() {
                st.m = vec![0.0; param.len()];
                st.v = vec![0.0; param.len()];
            }
            for i in 0..param.len() {
                let g = grad[i];
                st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
                st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
                let m_hat = st.m[i] / c1;
                let v_hat = st.v[i] / c2;
                param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// First and second moments for the `k`-th parameter, once it has been stepped.
    pub fn moments(&self, k: usize) -> Option<(&[f64], &[f64])> {
        self.moments.get(k).map(|s| (s.m.as_slice(), s.v.as_slice()))
    }
}
