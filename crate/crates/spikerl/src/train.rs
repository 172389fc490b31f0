//! The end-to-end training loop: seeded environment interaction, warmup
//! with random actions, one TD3 iteration per environment step, periodic
//! evaluation, optional gradient synchronization across ranks, and energy
//! metering around the whole run.

use crate::artifact::{EpochRecord, RunArtifact, ARTIFACT_VERSION};
use crate::config::RunConfig;
use crate::dist::{broadcast_params, DdpSync, ProcessGroup};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::green::meter::{auto_meter, ConstantPowerMeter, MeasuredRun, Meter, RaplMeter};
use crate::td3::{SyncScheme, Td3Trainer, Transition};

/// splitmix64, used to derive independent seeds per rank and purpose.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub struct TrainOutput {
    pub artifact: RunArtifact,
    pub trainer: Td3Trainer,
}

/// Deterministic evaluation: `episodes` rollouts with fixed per-episode
/// seeds, no exploration noise. Returns the mean return.
pub fn evaluate(
    trainer: &mut Td3Trainer,
    env_name: &str,
    master_seed: u64,
    eval_round: u64,
    episodes: usize,
) -> Result<f64> {
    let mut env = make_env(env_name, 0)?;
    let mut total = 0.0f64;
    for k in 0..episodes {
        let mut obs = env.reset(Some(mix_seed(
            master_seed,
            50_000 + eval_round * 1000 + k as u64,
        )));
        loop {
            let action = trainer.select_action(&obs, false)?;
            let (next, reward, done) = env.step(&action);
            total += reward as f64;
            obs = next;
            if done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

fn build_meter(cfg: &RunConfig) -> (Option<Box<dyn Meter>>, String, Option<String>) {
    match cfg.meter.kind.as_str() {
        "off" => (None, "off".into(), None),
        "rapl" => match RaplMeter::discover() {
            Ok(m) => {
                let d = m.describe();
                (Some(Box::new(m)), d, None)
            }
            Err(e) => (None, "rapl".into(), Some(format!("power-unknown: {e}"))),
        },
        "constant_power" => {
            let m = ConstantPowerMeter::new(cfg.meter.watts);
            let d = m.describe();
            (Some(Box::new(m)), d, None)
        }
        _ => {
            let (m, warning) = auto_meter(cfg.meter.watts);
            if let Some(w) = &warning {
                eprintln!("warning: {w}");
            }
            let d = m.describe();
            (Some(m), d, warning)
        }
    }
}

/// Run seeded training for one rank. With a process group, parameters are
/// broadcast from rank 0 first and gradients are averaged every step, so
/// all ranks hold identical parameters throughout.
pub fn run_training(cfg: &RunConfig, mut group: Option<&mut ProcessGroup>) -> Result<TrainOutput> {
    cfg.validate()?;
    let (rank, world) = match &group {
        Some(g) => (g.rank(), g.world_size()),
        None => (0, 1),
    };
    let scheme = if cfg.dist.scheme == "b" {
        SyncScheme::BackwardHook
    } else {
        SyncScheme::ExplicitAverage
    };

    let mut env = make_env(&cfg.env, mix_seed(cfg.seed, 1000 + rank as u64))?;
    let spec = env.spec().clone();
    let mut trainer = Td3Trainer::new(
        &spec,
        &cfg.snn,
        cfg.td3.clone(),
        &cfg.amp,
        mix_seed(cfg.seed, rank as u64),
    )?;

    if let Some(g) = group.as_deref_mut() {
        broadcast_params(g, &mut trainer.all_param_slices_mut(), 0)?;
        trainer.refresh_working_copies();
    }

    let initial_eval = evaluate(&mut trainer, &cfg.env, cfg.seed, 0, cfg.eval_episodes)?;

    let (meter, meter_desc, meter_note) = build_meter(cfg);
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);

    let mut run_loop =
        |trainer: &mut Td3Trainer, group: &mut Option<&mut ProcessGroup>| -> Result<()> {
            let mut obs = env.reset(None);
            let mut env_steps: usize = 0;
            for epoch in 1..=cfg.epochs {
                for _ in 0..cfg.steps_per_epoch {
                    let action = if env_steps < cfg.td3.warmup_steps {
                        trainer.random_action()
                    } else {
                        trainer.select_action(&obs, true)?
                    };
                    let (next_obs, reward, done) = env.step(&action);
                    // Episodes here end only at the time limit, which is a
                    // truncation, not a terminal state: keep bootstrapping.
                    trainer.push_transition(Transition {
                        state: obs,
                        action,
                        reward,
                        next_state: next_obs.clone(),
                        done: false,
                    });
                    obs = if done { env.reset(None) } else { next_obs };
                    env_steps += 1;
                    if env_steps > cfg.td3.warmup_steps {
                        match group.as_deref_mut() {
                            Some(g) => {
                                let mut sync = DdpSync { group: g, scheme };
                                trainer.train_step(Some(&mut sync))?;
                            }
                            None => {
                                trainer.train_step(None)?;
                            }
                        }
                    }
                }
                let local = evaluate(trainer, &cfg.env, cfg.seed, epoch as u64, cfg.eval_episodes)?;
                let mean = match group.as_deref_mut() {
                    Some(g) => g.reduce_scalar_to_root(local)?.0,
                    None => local,
                };
                epochs.push(EpochRecord {
                    epoch,
                    mean_test_reward: mean,
                });
            }
            Ok(())
        };

    let (wall_time_s, energy_kwh, avg_power_kw, note) = match meter {
        Some(mut m) => {
            let (measured, result): (MeasuredRun, Result<()>) =
                crate::green::meter::measure_run(m.as_mut(), cfg.effective_label(), || {
                    run_loop(&mut trainer, &mut group)
                })?;
            result?;
            (
                measured.wall_time_s,
                measured.energy_kwh,
                measured.avg_power_kw,
                measured.meter_note.or(meter_note),
            )
        }
        None => {
            let start = std::time::Instant::now();
            run_loop(&mut trainer, &mut group)?;
            (start.elapsed().as_secs_f64(), None, None, meter_note)
        }
    };

    let artifact = RunArtifact {
        artifact_version: ARTIFACT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        label: cfg.effective_label(),
        seed: cfg.seed,
        rank,
        world_size: world,
        config: cfg.clone(),
        initial_eval_reward: initial_eval,
        epochs,
        param_hash: trainer.param_hash(),
        wall_time_s,
        energy_kwh,
        avg_power_kw,
        meter: meter_desc,
        meter_note: note,
    };
    Ok(TrainOutput { artifact, trainer })
}

/// Training entry point handling the distributed backends. Loopback
/// spawns one trainer thread per rank inside this process and returns
/// rank 0's artifact; tcp joins the mesh described by the config.
pub fn train_with_backend(cfg: &RunConfig) -> Result<TrainOutput> {
    match (cfg.dist.backend.as_str(), cfg.dist.world_size) {
        (_, 0 | 1) | ("none", _) => run_training(cfg, None),
        ("loopback", world) => {
            let mut groups = ProcessGroup::loopback(world);
            let rank0 = groups.remove(0);
            let mut handles = Vec::new();
            for (i, mut g) in groups.into_iter().enumerate() {
                let rank = i + 1;
                let mut rank_cfg = cfg.clone();
                rank_cfg.dist.rank = rank;
                handles.push(std::thread::spawn(move || {
                    run_training(&rank_cfg, Some(&mut g))
                }));
            }
            let mut rank0_group = rank0;
            let mut cfg0 = cfg.clone();
            cfg0.dist.rank = 0;
            let out = run_training(&cfg0, Some(&mut rank0_group));
            let mut failures = Vec::new();
            for (i, h) in handles.into_iter().enumerate() {
                match h.join() {
                    Ok(Ok(rank_out)) => {
                        if let Some(base) = &cfg.out {
                            let log = format!("{base}.rank{}.log", i + 1);
                            let _ = std::fs::write(
                                &log,
                                format!(
                                    "rank {} reward trace: {:?}\nparam hash: {}\n",
                                    i + 1,
                                    rank_out.artifact.reward_trace(),
                                    rank_out.artifact.param_hash
                                ),
                            );
                        }
                    }
                    Ok(Err(e)) => failures.push(format!("rank {}: {e}", i + 1)),
                    Err(_) => failures.push(format!("rank {} panicked", i + 1)),
                }
            }
            if !failures.is_empty() {
                return Err(Error::Init(failures.join("; ")));
            }
            out
        }
        ("tcp", world) => {
            let timeout = std::time::Duration::from_secs_f64(cfg.dist.timeout_s.max(1.0));
            let mut g = ProcessGroup::init_tcp(cfg.dist.rank, world, &cfg.dist.peers, timeout)?;
            run_training(cfg, Some(&mut g))
        }
        (other, _) => Err(Error::Config(format!("unknown dist backend '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.env = "pointmass".into();
        cfg.epochs = 2;
        cfg.steps_per_epoch = 120;
        cfg.eval_episodes = 2;
        cfg.snn.pop_enc = 4;
        cfg.snn.pop_dec = 4;
        cfg.snn.hidden = vec![16];
        cfg.snn.t_steps = 3;
        cfg.td3.batch_size = 16;
        cfg.td3.warmup_steps = 60;
        cfg.td3.replay_capacity = 1000;
        cfg.td3.critic_hidden = vec![16];
        cfg.meter.kind = "constant_power".into();
        cfg
    }

    #[test]
    fn single_rank_training_is_reproducible() {
        let cfg = fast_cfg();
        let a = run_training(&cfg, None).unwrap();
        let b = run_training(&cfg, None).unwrap();
        assert_eq!(a.artifact.reward_trace(), b.artifact.reward_trace());
        assert_eq!(a.artifact.param_hash, b.artifact.param_hash);
        assert_eq!(a.artifact.epochs.len(), 2);
    }

    #[test]
    fn loopback_two_ranks_agree_on_parameters() {
        let mut cfg = fast_cfg();
        cfg.dist.backend = "loopback".into();
        cfg.dist.world_size = 2;
        let out = train_with_backend(&cfg).unwrap();
        assert_eq!(out.artifact.world_size, 2);
        // Rerun reproduces the trace bitwise.
        let out2 = train_with_backend(&cfg).unwrap();
        assert_eq!(out.artifact.reward_trace(), out2.artifact.reward_trace());
        assert_eq!(out.artifact.param_hash, out2.artifact.param_hash);
    }

    #[test]
    fn seed_mixing_separates_streams() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(1, 0), mix_seed(2, 0));
        assert_eq!(mix_seed(42, 7), mix_seed(42, 7));
    }
}
