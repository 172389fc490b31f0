//! Shared helpers for the integration suites. Not every test target
//! uses every helper.
#![allow(dead_code)]

pub mod autodiff;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikerl::envs::EnvSpec;
use spikerl::snn::{SnnConfig, SpikingActor};
use spikerl::td3::{Td3Trainer, Transition};

/// Relative difference against the larger magnitude, floored to avoid
/// dividing by ~0 when both sides vanish.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(floor);
    (a - b).abs() / denom
}

/// Small randomized actor for the gradient oracles: obs_dim <= 3,
/// populations of 4, one hidden layer of 8, at most 5 timesteps.
pub fn random_small_actor(seed: u64) -> (SpikingActor<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs_dim = rng.gen_range(1..=3);
    let action_dim = rng.gen_range(1..=2);
    let t_steps = rng.gen_range(1..=5);
    let cfg = SnnConfig {
        pop_enc: 4,
        pop_dec: 4,
        hidden: vec![8],
        t_steps,
        ..SnnConfig::default()
    };
    let bound: Vec<f32> = (0..action_dim).map(|_| rng.gen_range(0.5..2.0)).collect();
    let ranges: Vec<(f32, f32)> = (0..obs_dim).map(|_| (-1.0, 1.0)).collect();
    let mut actor: SpikingActor<f64> =
        SpikingActor::new(&cfg, obs_dim, action_dim, &bound, &ranges, &mut rng).unwrap();
    // Stir the encoder so gradients reach mu and sigma through
    // off-center Gaussians.
    for m in actor.enc.mu.iter_mut() {
        *m += rng.gen_range(-0.2..0.2);
    }
    for s in actor.enc.sigma.iter_mut() {
        *s *= rng.gen_range(0.6..1.4);
    }
    let obs: Vec<f64> = (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (actor, obs)
}

/// The shared tiny task definition used by the distributed suites.
pub fn tiny_env_spec() -> EnvSpec {
    EnvSpec {
        obs_dim: 2,
        action_dim: 1,
        action_bound: vec![1.0],
        max_episode_steps: 50,
        obs_range: vec![(-1.0, 1.0), (-1.0, 1.0)],
    }
}

pub fn tiny_snn() -> SnnConfig {
    SnnConfig {
        pop_enc: 3,
        pop_dec: 3,
        hidden: vec![8],
        t_steps: 3,
        ..SnnConfig::default()
    }
}

/// Fill a trainer's replay buffer with a fixed transition set so every
/// rank (and the single-process reference) sees identical data.
pub fn fill_shared_replay(trainer: &mut Td3Trainer, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        trainer.push_transition(Transition {
            state: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            action: vec![rng.gen_range(-1.0..1.0)],
            reward: rng.gen_range(-1.0..0.0),
            next_state: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            done: false,
        });
    }
}
