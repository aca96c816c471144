use super::Real;
use crate::error::{Error, Result};

/// Adam hyper-parameters. The default is the training recipe used
/// throughout the crate: `lr = 5e-3`, `beta1 = 0.5`, `beta2 = 0.999`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0 && in_unit(self.beta1) && in_unit(self.beta2) && self.epsilon > 0.0)
        {
            return Err(Error::Parameter(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// Per-parameter first/second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

/// Diagnostics from a single update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub step: u64,
    /// Every supplied gradient was exactly zero.
    pub all_zero_grads: bool,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            first_moment: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        })
    }

    /// Applies one bias-corrected Adam update. `grads[i]` is `None` when no
    /// backward pass has populated parameter `i`, which is an error.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Option<&[T]>]) -> Result<StepInfo> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::dim(format!(
                "adam: state tracks {} parameters, got {} values and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let Some(g) = g else {
                return Err(Error::State(format!(
                    "adam step before backward: parameter {i} has no gradient"
                )));
            };
            if p.len() != self.first_moment[i].len() || g.len() != p.len() {
                return Err(Error::dim(format!("adam: parameter {i} changed size")));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let one = T::one();
        let corr1 = T::lit(1.0 - c.beta1.powi(t));
        let corr2 = T::lit(1.0 - c.beta2.powi(t));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);
        let mut all_zero = true;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let g = g.expect("checked above");
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                let gj = g[j];
                if gj != T::zero() {
                    all_zero = false;
                }
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if all_zero && cfg!(debug_assertions) {
            eprintln!("warning: adam step {} received all-zero gradients", self.step_count);
        }
        Ok(StepInfo {
            step: self.step_count,
            all_zero_grads: all_zero,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = v_hat = g after bias correction, so the step is lr * g/(|g|+eps).
        let mut st = AdamState::<f64>::new(AdamConfig::default(), &[1]).unwrap();
        let mut w = [1.0];
        st.step(&mut [&mut w], &[Some(&[1.0])]).unwrap();
        assert!((w[0] - 0.995).abs() < 1e-9, "{}", w[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut st = AdamState::<f32>::new(AdamConfig::default(), &[3]).unwrap();
        let mut w = [0.3f32, -1.0, 2.0];
        let info = st.step(&mut [&mut w], &[Some(&[0.0; 3])]).unwrap();
        assert_eq!(w, [0.3, -1.0, 2.0]);
        assert!(info.all_zero_grads);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut st = AdamState::<f32>::new(AdamConfig::default(), &[1]).unwrap();
        let mut w = [0.0f32];
        assert!(matches!(st.step(&mut [&mut w], &[None]), Err(Error::State(_))));
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn identical_inputs_update_bitwise_identically() {
        let grads = [0.3f32, -0.7, 1e-3, 4.0];
        let mut a = [1.0f32, 2.0, 3.0, 4.0];
        let mut b = a;
        let mut sa = AdamState::<f32>::new(AdamConfig::default(), &[4]).unwrap();
        let mut sb = sa.clone();
        for _ in 0..5 {
            sa.step(&mut [&mut a], &[Some(&grads)]).unwrap();
            sb.step(&mut [&mut b], &[Some(&grads)]).unwrap();
        }
        assert_eq!(a.map(f32::to_bits), b.map(f32::to_bits));
    }

    #[test]
    fn moments_start_at_zero() {
        let st = AdamState::<f64>::new(AdamConfig::default(), &[2, 5]).unwrap();
        assert_eq!(st.step_count, 0);
        assert!(st.first_moment.iter().chain(&st.second_moment).flatten().all(|&v| v == 0.0));
        let total: usize = st.first_moment.iter().map(Vec::len).sum();
        assert_eq!(total, 7);
    }
}
