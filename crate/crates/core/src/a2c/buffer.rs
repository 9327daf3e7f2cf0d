/// Synchronous rollout storage, step-major: entry `(t, e)` lives at
/// `t * n_envs + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub n_steps: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value credited after a terminal step (zero unless the trainer treats
    /// the terminal state as absorbing).
    pub terminal_values: Vec<f64>,
    /// `V(s_{t+n})` for each environment.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, n_steps: usize) -> Self {
        let n = n_envs * n_steps;
        Self {
            n_envs,
            n_steps,
            observations: vec![Vec::new(); n],
            actions: vec![0; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            terminal_values: vec![0.0; n],
            bootstrap: vec![0.0; n_envs],
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, step: usize, env: usize) -> usize {
        step * self.n_envs + env
    }
}

/// n-step discounted returns, `R_t = r_t + γ R_{t+1}` seeded with the
/// bootstrap value; at a done step the recursion restarts from
/// `r_t + terminal_value_t`.
pub fn compute_returns(buffer: &RolloutBuffer, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; buffer.len()];
    for e in 0..buffer.n_envs {
        let mut ret = buffer.bootstrap[e];
        for t in (0..buffer.n_steps).rev() {
            let i = buffer.index(t, e);
            ret = if buffer.dones[i] {
                buffer.rewards[i] + buffer.terminal_values[i]
            } else {
                buffer.rewards[i] + gamma * ret
            };
            out[i] = ret;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ones(dones: [bool; 3]) -> RolloutBuffer {
        let mut b = RolloutBuffer::new(1, 3);
        b.rewards = vec![1.0; 3];
        b.dones = dones.to_vec();
        b
    }

    #[test]
    fn zero_discount_returns_rewards() {
        let mut b = ones([false; 3]);
        b.rewards = vec![0.5, -1.0, 2.0];
        b.bootstrap = vec![10.0];
        assert_eq!(compute_returns(&b, 0.0), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn hand_recursion() {
        let r = compute_returns(&ones([false; 3]), 0.9);
        for (a, b) in r.iter().zip([2.71, 1.9, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn done_on_first_step_resets() {
        let r = compute_returns(&ones([true, false, false]), 0.9);
        for (a, b) in r.iter().zip([1.0, 1.9, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn all_done_equals_rewards() {
        let mut b = ones([true; 3]);
        b.rewards = vec![0.3, 0.7, 0.1];
        b.bootstrap = vec![5.0];
        assert_eq!(compute_returns(&b, 0.99), b.rewards);
    }

    #[test]
    fn environments_are_independent() {
        let mut b = RolloutBuffer::new(2, 2);
        b.rewards = vec![1.0, 0.0, 1.0, 0.0];
        b.bootstrap = vec![1.0, 2.0];
        b.dones = vec![false, false, false, true];
        let r = compute_returns(&b, 0.5);
        // env 0: R1 = 1 + 0.5, R0 = 1 + 0.75; env 1: R1 = 0 (done), R0 = 0
        assert_eq!(r, vec![1.75, 0.0, 1.5, 0.0]);
    }
}
