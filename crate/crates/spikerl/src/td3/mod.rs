//! Twin Delayed DDPG on the spiking actor: twin critics, target
//! networks, a uniform replay ring, delayed policy updates and target
//! policy smoothing.

mod critic;
mod trainer;

pub use critic::{Affine, CriticGrads, CriticNet, CriticTape};
pub use trainer::{GradSynchronizer, StepOutcome, SyncScheme, Td3Trainer};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Elem;

/// TD3 hyperparameters. The noise fields are relative to the per-dimension
/// action bound: the exploration std is `exploration_noise * bound`, the
/// smoothing std `policy_noise * bound` clipped at `noise_clip * bound`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub exploration_noise: f64,
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Environment steps driven by uniform random actions before training.
    pub warmup_steps: usize,
    pub replay_capacity: usize,
    pub critic_hidden: Vec<usize>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Td3Config {
            gamma: 0.99,
            tau: 0.005,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            exploration_noise: 0.1,
            batch_size: 128,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            warmup_steps: 1000,
            replay_capacity: 100_000,
            critic_hidden: vec![256, 256],
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        if self.policy_noise < 0.0 || self.noise_clip < 0.0 || self.exploration_noise < 0.0 {
            return Err(Error::Config("noise parameters must be >= 0".into()));
        }
        if self.policy_delay == 0 {
            return Err(Error::Config("policy_delay must be >= 1".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Config(
                "replay capacity must cover at least one batch".into(),
            ));
        }
        Ok(())
    }
}

/// One environment transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; once full, pushes overwrite the oldest
/// entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            data: Vec::new(),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.data[idx]
    }

    /// Draw `n` indices uniformly with replacement, or `None` when fewer
    /// than `n` transitions are stored.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        if self.data.len() < n {
            return None;
        }
        Some((0..n).map(|_| rng.gen_range(0..self.data.len())).collect())
    }
}

/// A training batch in row-major layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub batch: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub next_states: Vec<f32>,
    /// 1.0 where the transition terminated, else 0.0.
    pub done: Vec<f32>,
}

impl Batch {
    pub fn gather(replay: &ReplayBuffer, indices: &[usize]) -> Batch {
        let n = indices.len();
        let (obs_dim, act_dim) = indices
            .first()
            .map(|&i| (replay.get(i).state.len(), replay.get(i).action.len()))
            .unwrap_or((0, 0));
        let mut b = Batch {
            batch: n,
            states: Vec::with_capacity(n * obs_dim),
            actions: Vec::with_capacity(n * act_dim),
            rewards: Vec::with_capacity(n),
            next_states: Vec::with_capacity(n * obs_dim),
            done: Vec::with_capacity(n),
        };
        for &i in indices {
            let t = replay.get(i);
            b.states.extend_from_slice(&t.state);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_states.extend_from_slice(&t.next_state);
            b.done.push(if t.done { 1.0 } else { 0.0 });
        }
        b
    }
}

/// theta' <- tau * theta + (1 - tau) * theta', elementwise.
pub fn soft_update<T: Elem>(target: &mut [T], source: &[T], tau: f64) -> Result<()> {
    if target.len() != source.len() {
        return Err(Error::Shape(format!(
            "soft_update lengths {} vs {}",
            target.len(),
            source.len()
        )));
    }
    let tau = T::from_f64(tau);
    let keep = T::one() - tau;
    for (t, &s) in target.iter_mut().zip(source.iter()) {
        *t = tau * s + keep * *t;
    }
    Ok(())
}

/// Adam over an ordered list of parameter tensors. First/second moment
/// buffers are kept per tensor; `t` advances once per step call.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Elem> Adam<T> {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// Apply one update. `mask`, when given, freezes tensors whose entry
    /// is false (they are treated as absent from the optimizer).
    pub fn step(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer built for {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let c1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        for i in 0..params.len() {
            if let Some(mask) = mask {
                if !mask[i] {
                    continue;
                }
            }
            let p = &mut params[i];
            let g = grads[i];
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Shape(format!("tensor {i} size mismatch in Adam")));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                p[k] = p[k] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(v: f32) -> Transition {
        Transition {
            state: vec![v],
            action: vec![v],
            reward: v,
            next_state: vec![v + 1.0],
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2);
        buf.push(transition(1.0));
        buf.push(transition(2.0));
        buf.push(transition(3.0));
        assert_eq!(buf.len(), 2);
        let values: Vec<f32> = (0..2).map(|i| buf.get(i).reward).collect();
        assert!(values.contains(&2.0) && values.contains(&3.0));
    }

    #[test]
    fn sampling_is_seeded() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..16 {
            buf.push(transition(i as f32));
        }
        let a = buf
            .sample_indices(8, &mut ChaCha8Rng::seed_from_u64(33))
            .unwrap();
        let b = buf
            .sample_indices(8, &mut ChaCha8Rng::seed_from_u64(33))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_requires_enough_entries() {
        let mut buf = ReplayBuffer::new(16);
        buf.push(transition(0.0));
        assert!(buf
            .sample_indices(2, &mut ChaCha8Rng::seed_from_u64(0))
            .is_none());
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10 {
            buf.push(transition(i as f32));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut freq = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for idx in buf.sample_indices(10, &mut rng).unwrap() {
                freq[idx] += 1;
            }
        }
        let expected = draws as f64 / 10.0;
        for (i, &f) in freq.iter().enumerate() {
            let dev = (f as f64 - expected).abs() / expected;
            assert!(dev < 0.05, "slot {i}: {f} vs {expected}");
        }
    }

    #[test]
    fn soft_update_cases() {
        let mut target = vec![0.0f64; 3];
        soft_update(&mut target, &[1.0, 1.0, 1.0], 0.005).unwrap();
        assert!(target.iter().all(|&t| (t - 0.005).abs() < 1e-15));

        let mut target = vec![0.0f64, 5.0];
        soft_update(&mut target, &[2.0, -3.0], 1.0).unwrap();
        assert_eq!(target, vec![2.0, -3.0]);

        let source = vec![0.7f64, -0.2];
        let mut target = source.clone();
        soft_update(&mut target, &source, 0.37).unwrap();
        for (t, s) in target.iter().zip(source.iter()) {
            assert!((t - s).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_update_converges_geometrically() {
        let source = vec![1.0f64];
        let mut target = vec![0.0f64];
        let tau = 0.1;
        let mut dist = 1.0f64;
        for _ in 0..20 {
            soft_update(&mut target, &source, tau).unwrap();
            let new_dist = (source[0] - target[0]).abs();
            assert!((new_dist - dist * (1.0 - tau)).abs() < 1e-12);
            dist = new_dist;
        }
    }

    #[test]
    fn adam_zero_lr_leaves_params() {
        let mut adam: Adam<f32> = Adam::new(0.0, &[2]);
        let mut p = vec![1.5f32, -0.5];
        let before: Vec<u32> = p.iter().map(|x| x.to_bits()).collect();
        adam.step(&mut [&mut p], &[&[0.3, -0.7]], None).unwrap();
        let after: Vec<u32> = p.iter().map(|x| x.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut adam: Adam<f64> = Adam::new(0.05, &[1]);
        let mut p = vec![3.0f64];
        for _ in 0..500 {
            let g = vec![2.0 * p[0]];
            adam.step(&mut [&mut p], &[&g], None).unwrap();
        }
        assert!(p[0].abs() < 0.05, "p = {}", p[0]);
    }

    #[test]
    fn adam_mask_freezes_tensors() {
        let mut adam: Adam<f64> = Adam::new(0.1, &[1, 1]);
        let mut a = vec![1.0f64];
        let mut b = vec![1.0f64];
        adam.step(
            &mut [&mut a, &mut b],
            &[&[1.0], &[1.0]],
            Some(&[false, true]),
        )
        .unwrap();
        assert_eq!(a, vec![1.0]);
        assert_ne!(b, vec![1.0]);
    }
}
