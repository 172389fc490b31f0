//! The TD3 training state machine.
//!
//! Owns the spiking policy, twin critics, their targets, the replay ring
//! and the optimizers. All randomness (exploration, smoothing noise,
//! replay sampling) is drawn from one seeded stream, so a full training
//! run is reproducible from its seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::amp::{AmpConfig, GradScaler};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::snn::{ActorGrads, SnnConfig, SpikingActor};
use crate::tensor::{io, round_f32, NumFormat, Tensor};

use super::{
    soft_update, Adam, Batch, CriticGrads, CriticNet, ReplayBuffer, Td3Config, Transition,
};
use rand::SeedableRng;

/// How gradients are synchronized in data-parallel training: one explicit
/// averaging call per model update, or a hook invoked as each backward
/// pass produces its gradients. Both must be numerically identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncScheme {
    ExplicitAverage,
    BackwardHook,
}

/// Callback that replaces every gradient with its group-wide average.
pub trait GradSynchronizer {
    fn scheme(&self) -> SyncScheme;
    fn average(&mut self, grads: &mut [&mut [f32]]) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// Replay does not hold a full batch yet; nothing was mutated.
    NotReady,
    Stepped {
        critic_loss: f32,
        actor_loss: Option<f32>,
        /// True when a non-finite gradient made the scaler skip updates.
        skipped: bool,
    },
}

struct AmpState {
    format: NumFormat,
    scaler: GradScaler,
    work_actor: SpikingActor<f32>,
    work_actor_target: SpikingActor<f32>,
    work_critics: [CriticNet<f32>; 2],
    work_critic_targets: [CriticNet<f32>; 2],
}

pub struct Td3Trainer {
    pub cfg: Td3Config,
    pub actor: SpikingActor<f32>,
    pub actor_target: SpikingActor<f32>,
    pub critics: [CriticNet<f32>; 2],
    pub critic_targets: [CriticNet<f32>; 2],
    pub replay: ReplayBuffer,
    bound: Vec<f32>,
    train_encoder: bool,
    rng: ChaCha8Rng,
    adam_actor: Adam<f32>,
    adam_critics: [Adam<f32>; 2],
    train_steps: u64,
    amp: Option<AmpState>,
}

impl Td3Trainer {
    pub fn new(
        env: &EnvSpec,
        snn: &SnnConfig,
        cfg: Td3Config,
        amp: &AmpConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = SpikingActor::new(
            snn,
            env.obs_dim,
            env.action_dim,
            &env.action_bound,
            &env.obs_range,
            &mut rng,
        )?;
        let critic_in = env.obs_dim + env.action_dim;
        let critics = [
            CriticNet::new(critic_in, &cfg.critic_hidden, &mut rng)?,
            CriticNet::new(critic_in, &cfg.critic_hidden, &mut rng)?,
        ];
        let actor_target = actor.clone();
        let critic_targets = critics.clone();

        let actor_sizes: Vec<usize> = actor.param_slices().iter().map(|s| s.len()).collect();
        let critic_sizes: Vec<usize> = critics[0].param_slices().iter().map(|s| s.len()).collect();
        let adam_actor = Adam::new(cfg.lr_actor, &actor_sizes);
        let adam_critics = [
            Adam::new(cfg.lr_critic, &critic_sizes),
            Adam::new(cfg.lr_critic, &critic_sizes),
        ];

        let policy = amp.cast_policy()?;
        let amp_state = match policy.compute_format {
            Some(format) => Some(AmpState {
                format,
                scaler: GradScaler::new(amp.init_scale, amp.growth_interval)?,
                work_actor: actor.rounded(format),
                work_actor_target: actor_target.rounded(format),
                work_critics: [critics[0].rounded(format), critics[1].rounded(format)],
                work_critic_targets: [
                    critic_targets[0].rounded(format),
                    critic_targets[1].rounded(format),
                ],
            }),
            None => None,
        };

        Ok(Td3Trainer {
            replay: ReplayBuffer::new(cfg.replay_capacity),
            cfg,
            actor,
            actor_target,
            critics,
            critic_targets,
            bound: env.action_bound.clone(),
            train_encoder: snn.train_encoder,
            rng,
            adam_actor,
            adam_critics,
            train_steps: 0,
            amp: amp_state,
        })
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn loss_scale(&self) -> f64 {
        self.amp.as_ref().map(|a| a.scaler.scale()).unwrap_or(1.0)
    }

    fn compute_format(&self) -> Option<NumFormat> {
        self.amp.as_ref().map(|a| a.format)
    }

    /// Policy action for `s`; with `explore`, seeded Gaussian noise of
    /// std `exploration_noise * bound` is added before clipping.
    pub fn select_action(&mut self, s: &[f32], explore: bool) -> Result<Vec<f32>> {
        let (mut action, _) = self.actor.forward(s)?;
        if explore && self.cfg.exploration_noise > 0.0 {
            let noise: Vec<f32> = self
                .bound
                .iter()
                .map(|&b| {
                    let n = Normal::new(0.0, self.cfg.exploration_noise * b as f64)
                        .expect("std is finite and non-negative");
                    n.sample(&mut self.rng) as f32
                })
                .collect();
            apply_noise_and_clip(&mut action, &noise, &self.bound);
        } else {
            apply_noise_and_clip(&mut action, &[], &self.bound);
        }
        Ok(action)
    }

    /// Uniform random action, used during warmup.
    pub fn random_action(&mut self) -> Vec<f32> {
        self.bound
            .iter()
            .map(|&b| self.rng.gen_range(-b..=b))
            .collect()
    }

    pub fn push_transition(&mut self, t: Transition) {
        self.replay.push(t);
    }

    /// Smoothed bootstrap targets:
    /// y = r + gamma * (1 - done) * min(Q1', Q2')(s', clip(pi'(s') + eps)).
    pub fn compute_target(&mut self, batch: &Batch) -> Result<Vec<f32>> {
        let b = batch.batch;
        let fmt = self.compute_format();
        let act_dim = self.bound.len();
        let mut next_actions = {
            let net = match &self.amp {
                Some(a) => &a.work_actor_target,
                None => &self.actor_target,
            };
            net.forward_batch(&batch.next_states, b, fmt)?.0
        };
        if self.cfg.policy_noise > 0.0 {
            for row in 0..b {
                for (j, &bound) in self.bound.iter().enumerate() {
                    let std = self.cfg.policy_noise * bound as f64;
                    let clip = (self.cfg.noise_clip * bound as f64) as f32;
                    let eps = Normal::new(0.0, std)
                        .expect("std is finite and non-negative")
                        .sample(&mut self.rng) as f32;
                    let eps = eps.clamp(-clip, clip);
                    let a = &mut next_actions[row * act_dim + j];
                    *a = (*a + eps).clamp(-bound, bound);
                }
            }
        }
        let obs_dim = batch.next_states.len() / b;
        let input = concat_rows(&batch.next_states, obs_dim, &next_actions, act_dim, b);
        let (q1, _) = self.critic_target_net(0).forward_batch(&input, b, fmt)?;
        let (q2, _) = self.critic_target_net(1).forward_batch(&input, b, fmt)?;
        let gamma = self.cfg.gamma as f32;
        Ok((0..b)
            .map(|i| batch.rewards[i] + gamma * (1.0 - batch.done[i]) * q1[i].min(q2[i]))
            .collect())
    }

    fn critic_net(&self, i: usize) -> &CriticNet<f32> {
        match &self.amp {
            Some(a) => &a.work_critics[i],
            None => &self.critics[i],
        }
    }

    fn critic_target_net(&self, i: usize) -> &CriticNet<f32> {
        match &self.amp {
            Some(a) => &a.work_critic_targets[i],
            None => &self.critic_targets[i],
        }
    }

    fn actor_net(&self) -> &SpikingActor<f32> {
        match &self.amp {
            Some(a) => &a.work_actor,
            None => &self.actor,
        }
    }

    /// One TD3 iteration on a batch sampled from the replay buffer.
    pub fn train_step(&mut self, sync: Option<&mut dyn GradSynchronizer>) -> Result<StepOutcome> {
        if self.replay.len() < self.cfg.batch_size {
            return Ok(StepOutcome::NotReady);
        }
        let indices = self
            .replay
            .sample_indices(self.cfg.batch_size, &mut self.rng)
            .expect("length checked above");
        self.train_on_indices(&indices, sync)
    }

    /// One TD3 iteration on explicitly chosen replay indices. Exposed so
    /// data-parallel equivalence harnesses can partition a shared index
    /// stream.
    pub fn train_on_indices(
        &mut self,
        indices: &[usize],
        sync: Option<&mut dyn GradSynchronizer>,
    ) -> Result<StepOutcome> {
        let batch = Batch::gather(&self.replay, indices);
        self.train_on_batch(&batch, sync)
    }

    pub fn train_on_batch(
        &mut self,
        batch: &Batch,
        mut sync: Option<&mut dyn GradSynchronizer>,
    ) -> Result<StepOutcome> {
        let b = batch.batch;
        if b == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        self.train_steps += 1;
        let fmt = self.compute_format();
        let scale = self.loss_scale() as f32;
        let obs_dim = batch.states.len() / b;
        let act_dim = self.bound.len();

        let y = self.compute_target(batch)?;
        let input = concat_rows(&batch.states, obs_dim, &batch.actions, act_dim, b);

        // Critic phase: both critics against the shared targets.
        let mut critic_loss = 0.0f64;
        let mut critic_grads: Vec<CriticGrads<f32>> = Vec::with_capacity(2);
        let k = 2.0f32 / b as f32 * scale;
        for i in 0..2 {
            let (q, tape) = self.critic_net(i).forward_batch(&input, b, fmt)?;
            let mut loss = 0.0f64;
            let dq: Vec<f32> = q
                .iter()
                .zip(y.iter())
                .map(|(&qv, &yv)| {
                    let diff = qv - yv;
                    loss += (diff as f64) * (diff as f64);
                    diff * k
                })
                .collect();
            critic_loss += loss / b as f64;
            let (mut grads, _) = self.critic_net(i).backward(&tape, &dq)?;
            round_grads(&mut grads.slices_mut(), fmt);
            if let Some(s) = sync.as_deref_mut() {
                if s.scheme() == SyncScheme::BackwardHook {
                    s.average(&mut grads.slices_mut())?;
                }
            }
            critic_grads.push(grads);
        }
        if let Some(s) = sync.as_deref_mut() {
            if s.scheme() == SyncScheme::ExplicitAverage {
                let (left, right) = critic_grads.split_at_mut(1);
                let mut all = left[0].slices_mut();
                all.extend(right[0].slices_mut());
                s.average(&mut all)?;
            }
        }
        let critic_inf = match &self.amp {
            Some(a) => {
                let (left, right) = critic_grads.split_at_mut(1);
                let mut all = left[0].slices_mut();
                all.extend(right[0].slices_mut());
                a.scaler.unscale_and_check(&mut all)
            }
            None => false,
        };
        if !critic_inf {
            for i in 0..2 {
                self.adam_critics[i].step(
                    &mut self.critics[i].param_slices_mut(),
                    &critic_grads[i].slices(),
                    None,
                )?;
            }
            if let Some(a) = &mut self.amp {
                a.work_critics = [
                    self.critics[0].rounded(a.format),
                    self.critics[1].rounded(a.format),
                ];
            }
        }

        // Delayed actor phase.
        let mut actor_loss = None;
        let mut actor_inf = false;
        if self.train_steps % self.cfg.policy_delay == 0 {
            let (pi, actor_tape) = self.actor_net().forward_batch(&batch.states, b, fmt)?;
            let input_pi = concat_rows(&batch.states, obs_dim, &pi, act_dim, b);
            let (q1, critic_tape) = self.critic_net(0).forward_batch(&input_pi, b, fmt)?;
            actor_loss = Some(-(q1.iter().map(|&q| q as f64).sum::<f64>() / b as f64) as f32);
            let dq = vec![-scale / b as f32; b];
            let (_, dinput) = self.critic_net(0).backward(&critic_tape, &dq)?;
            let grad_action: Vec<f32> = (0..b)
                .flat_map(|row| {
                    dinput[row * (obs_dim + act_dim) + obs_dim..(row + 1) * (obs_dim + act_dim)]
                        .iter()
                        .copied()
                        .collect::<Vec<f32>>()
                })
                .collect();
            let mut agrads: ActorGrads<f32> =
                self.actor_net().backward(&actor_tape, &grad_action)?;
            round_grads(&mut agrads.slices_mut(), fmt);
            if let Some(s) = sync.as_deref_mut() {
                s.average(&mut agrads.slices_mut())?;
            }
            actor_inf = match &self.amp {
                Some(a) => a.scaler.unscale_and_check(&mut agrads.slices_mut()),
                None => false,
            };
            if !actor_inf {
                let mask = self.encoder_mask();
                self.adam_actor.step(
                    &mut self.actor.param_slices_mut(),
                    &agrads.slices(),
                    Some(&mask),
                )?;
                self.actor.enc.clamp_sigma();
                self.soft_update_targets()?;
                if let Some(a) = &mut self.amp {
                    a.work_actor = self.actor.rounded(a.format);
                    a.work_actor_target = self.actor_target.rounded(a.format);
                    a.work_critic_targets = [
                        self.critic_targets[0].rounded(a.format),
                        self.critic_targets[1].rounded(a.format),
                    ];
                }
            }
        }

        if let Some(a) = &mut self.amp {
            a.scaler.update(critic_inf || actor_inf);
        }
        Ok(StepOutcome::Stepped {
            critic_loss: critic_loss as f32,
            actor_loss,
            skipped: critic_inf || actor_inf,
        })
    }

    fn encoder_mask(&self) -> Vec<bool> {
        let n = self.actor.param_slices().len();
        let mut mask = vec![true; n];
        if !self.train_encoder {
            mask[0] = false; // means
            mask[1] = false; // widths
        }
        mask
    }

    fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        for (t, s) in self
            .actor_target
            .param_slices_mut()
            .into_iter()
            .zip(self.actor.param_slices())
        {
            soft_update(t, s, tau)?;
        }
        for i in 0..2 {
            for (t, s) in self.critic_targets[i]
                .param_slices_mut()
                .into_iter()
                .zip(self.critics[i].param_slices())
            {
                soft_update(t, s, tau)?;
            }
        }
        Ok(())
    }

    /// Every parameter tensor of every network, in a fixed order, for
    /// broadcast and hashing.
    pub fn all_param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = self.actor.param_slices_mut();
        out.extend(self.actor_target.param_slices_mut());
        let [c1, c2] = &mut self.critics;
        out.extend(c1.param_slices_mut());
        out.extend(c2.param_slices_mut());
        let [t1, t2] = &mut self.critic_targets;
        out.extend(t1.param_slices_mut());
        out.extend(t2.param_slices_mut());
        out
    }

    /// Re-derive the low-precision working copies after an external
    /// parameter change (checkpoint load or broadcast).
    pub fn refresh_working_copies(&mut self) {
        if let Some(a) = &mut self.amp {
            a.work_actor = self.actor.rounded(a.format);
            a.work_actor_target = self.actor_target.rounded(a.format);
            a.work_critics = [
                self.critics[0].rounded(a.format),
                self.critics[1].rounded(a.format),
            ];
            a.work_critic_targets = [
                self.critic_targets[0].rounded(a.format),
                self.critic_targets[1].rounded(a.format),
            ];
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .actor
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("actor.{n}"), t))
            .collect();
        out.extend(
            self.actor_target
                .named_tensors()
                .into_iter()
                .map(|(n, t)| (format!("actor_target.{n}"), t)),
        );
        out.extend(self.critics[0].named_tensors("critic1"));
        out.extend(self.critics[1].named_tensors("critic2"));
        out.extend(self.critic_targets[0].named_tensors("critic1_target"));
        out.extend(self.critic_targets[1].named_tensors("critic2_target"));
        out
    }

    pub fn param_hash(&self) -> String {
        io::hash_tensors(&self.named_tensors()).expect("f32 parameters always encode")
    }
}

/// Add per-dimension noise (empty slice for none) and clip to the bound.
pub(crate) fn apply_noise_and_clip(action: &mut [f32], noise: &[f32], bound: &[f32]) {
    for (j, a) in action.iter_mut().enumerate() {
        if let Some(&n) = noise.get(j) {
            *a += n;
        }
        *a = a.clamp(-bound[j], bound[j]);
    }
}

/// Row-wise concatenation of two row-major matrices.
pub(crate) fn concat_rows(a: &[f32], da: usize, b: &[f32], db: usize, rows: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * (da + db));
    for r in 0..rows {
        out.extend_from_slice(&a[r * da..(r + 1) * da]);
        out.extend_from_slice(&b[r * db..(r + 1) * db]);
    }
    out
}

fn round_grads(grads: &mut [&mut [f32]], fmt: Option<NumFormat>) {
    if let Some(f) = fmt {
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v = round_f32(*v, f);
            }
        }
    }
}
