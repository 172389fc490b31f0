//! Subcommand implementations behind the `spikerl` binary: train, eval,
//! benchmark, report and launch. Exit codes are stable for scripting:
//! 0 success, 1 runtime failure, 2 configuration/usage error.

use std::path::{Path, PathBuf};
use std::process::Command as ProcessCommand;

use crate::artifact::RunArtifact;
use crate::config::{load_config, RunConfig};
use crate::dist::free_local_ports;
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::green::{
    carbon_report, classify_zone, display_2dp, gps_up, percent_reduction, CarbonFactors, GpsUp,
};
use crate::td3::Td3Trainer;
use crate::tensor::io as tensor_io;
use crate::train::{evaluate, train_with_backend};

/// Parse `--key value` / `--key=value` pairs.
pub fn parse_pairs(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key, got '{arg}'")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else {
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("--{key} is missing a value")))?;
            out.push((key.to_string(), value.clone()));
            i += 2;
        }
    }
    Ok(out)
}

fn take_pair(pairs: &mut Vec<(String, String)>, key: &str) -> Option<String> {
    let idx = pairs.iter().position(|(k, _)| k == key)?;
    Some(pairs.remove(idx).1)
}

fn config_from_args(args: &[String]) -> Result<RunConfig> {
    let mut pairs = parse_pairs(args)?;
    let config_path = take_pair(&mut pairs, "config").map(PathBuf::from);
    load_config(config_path.as_deref(), &pairs)
}

/// `train`: run seeded training per the merged config, write the run
/// artifact (rank 0) and optionally the actor checkpoint.
pub fn cmd_train(args: &[String]) -> Result<()> {
    let cfg = config_from_args(args)?;
    let out = train_with_backend(&cfg)?;
    let artifact = &out.artifact;
    for e in &artifact.epochs {
        println!(
            "epoch {:>3}  mean test reward {:>12.3}",
            e.epoch, e.mean_test_reward
        );
    }
    println!(
        "run '{}' seed {} finished in {:.2} s (initial eval {:.3}, param hash {})",
        artifact.label,
        artifact.seed,
        artifact.wall_time_s,
        artifact.initial_eval_reward,
        &artifact.param_hash[..16.min(artifact.param_hash.len())]
    );
    if let Some(e) = artifact.energy_kwh {
        println!(
            "energy {:.6} kWh, avg power {:.4} kW ({})",
            e,
            artifact.avg_power_kw.unwrap_or(0.0),
            artifact.meter
        );
    } else if let Some(note) = &artifact.meter_note {
        println!("{note}");
    }
    if artifact.rank == 0 {
        if let Some(path) = &cfg.out {
            artifact.save(Path::new(path))?;
            println!("artifact written to {path}");
        }
        if let Some(path) = &cfg.save_actor {
            let mut file = std::fs::File::create(path)?;
            tensor_io::write_container(&mut file, &out.trainer.actor.named_tensors())?;
            println!("actor checkpoint written to {path}");
        }
    } else if let Some(base) = &cfg.out {
        // Non-root ranks leave a rank-suffixed log next to the artifact.
        let log = format!("{base}.rank{}.log", artifact.rank);
        std::fs::write(
            &log,
            format!(
                "rank {} reward trace: {:?}\nparam hash: {}\n",
                artifact.rank,
                artifact.reward_trace(),
                artifact.param_hash
            ),
        )?;
        println!("rank log written to {log}");
    }
    Ok(())
}

/// `eval`: roll out a saved actor checkpoint without exploration noise.
pub fn cmd_eval(args: &[String]) -> Result<()> {
    let mut pairs = parse_pairs(args)?;
    let actor_path = take_pair(&mut pairs, "actor")
        .ok_or_else(|| Error::Config("eval requires --actor <checkpoint>".into()))?;
    let episodes: usize = match take_pair(&mut pairs, "episodes") {
        Some(v) => v
            .parse()
            .map_err(|e| Error::Config(format!("--episodes: {e}")))?,
        None => 10,
    };
    let config_path = take_pair(&mut pairs, "config").map(PathBuf::from);
    let cfg = load_config(config_path.as_deref(), &pairs)?;

    let env = make_env(&cfg.env, 0)?;
    let mut trainer = Td3Trainer::new(env.spec(), &cfg.snn, cfg.td3.clone(), &cfg.amp, cfg.seed)?;
    let mut file = std::fs::File::open(&actor_path)
        .map_err(|e| Error::Config(format!("{actor_path}: {e}")))?;
    let tensors = tensor_io::read_container(&mut file)?;
    trainer.actor.load_tensors(&tensors)?;
    trainer.refresh_working_copies();

    let mean = evaluate(&mut trainer, &cfg.env, cfg.seed, 0, episodes)?;
    println!(
        "eval '{}' over {episodes} episodes: mean return {mean:.3}",
        cfg.env
    );
    Ok(())
}

fn metrics_of(path: &str) -> Result<(RunArtifact, crate::green::RunMetrics)> {
    let artifact = RunArtifact::load(Path::new(path))?;
    let metrics = artifact.metrics().ok_or_else(|| {
        Error::Config(format!(
            "{path}: artifact has no energy metrics; re-run with a meter enabled"
        ))
    })?;
    Ok((artifact, metrics))
}

/// `benchmark`: GPS-UP table row for a candidate artifact over a
/// baseline artifact, plus quadrant CSV/SVG artifacts.
pub fn cmd_benchmark(args: &[String]) -> Result<()> {
    let mut pairs = parse_pairs(args)?;
    let baseline = take_pair(&mut pairs, "baseline")
        .ok_or_else(|| Error::Config("benchmark requires --baseline <artifact>".into()))?;
    let candidate = take_pair(&mut pairs, "candidate")
        .ok_or_else(|| Error::Config("benchmark requires --candidate <artifact>".into()))?;
    let out_csv = take_pair(&mut pairs, "out-csv");
    let out_svg = take_pair(&mut pairs, "out-svg");
    if !pairs.is_empty() {
        return Err(Error::Config(format!(
            "unknown benchmark flag --{}",
            pairs[0].0
        )));
    }
    let (_, base) = metrics_of(&baseline)?;
    let (_, cand) = metrics_of(&candidate)?;
    let g = gps_up(&base, &cand)?;
    print_gps_row(&base.label, &cand.label, &g);
    let points = vec![(format!("{} over {}", cand.label, base.label), g)];
    write_quadrant_files(&points, out_csv.as_deref(), out_svg.as_deref())?;
    Ok(())
}

pub(crate) fn print_gps_row(base_label: &str, cand_label: &str, g: &GpsUp) {
    println!(
        "{} over {}: {} {} {}  [{}]",
        cand_label,
        base_label,
        display_2dp(g.speedup),
        display_2dp(g.powerup),
        display_2dp(g.greenup),
        classify_zone(g)
    );
}

pub(crate) fn write_quadrant_files(
    points: &[(String, GpsUp)],
    out_csv: Option<&str>,
    out_svg: Option<&str>,
) -> Result<()> {
    if let Some(path) = out_csv {
        let file = std::fs::File::create(path)?;
        crate::green::quadrant::write_csv(points, file)?;
        println!("quadrant CSV written to {path}");
    }
    if let Some(path) = out_svg {
        let file = std::fs::File::create(path)?;
        crate::green::quadrant::write_svg(points, file)?;
        println!("quadrant SVG written to {path}");
    }
    Ok(())
}

/// `report`: carbon report for one artifact, or reductions between two.
pub fn cmd_report(args: &[String]) -> Result<()> {
    let mut pairs = parse_pairs(args)?;
    let run = take_pair(&mut pairs, "run")
        .ok_or_else(|| Error::Config("report requires --run <artifact>".into()))?;
    let baseline = take_pair(&mut pairs, "baseline");
    let mut factors = CarbonFactors::default();
    if let Some(f) = take_pair(&mut pairs, "factor") {
        factors.emission_kg_per_kwh = f
            .parse()
            .map_err(|e| Error::Config(format!("--factor: {e}")))?;
    }
    let out = take_pair(&mut pairs, "out");
    if !pairs.is_empty() {
        return Err(Error::Config(format!(
            "unknown report flag --{}",
            pairs[0].0
        )));
    }
    factors.validate()?;

    let (artifact, metrics) = metrics_of(&run)?;
    let report = carbon_report(metrics.energy_kwh, &factors)?;
    print_carbon(&artifact.label, &report);
    if let Some(base_path) = baseline {
        let (base_artifact, base_metrics) = metrics_of(&base_path)?;
        let base_report = carbon_report(base_metrics.energy_kwh, &factors)?;
        print_carbon(&base_artifact.label, &base_report);
        let reduction = percent_reduction(&base_report, &report)?;
        println!(
            "reduction of '{}' vs '{}': {}% energy and carbon (same factor applies to every line item)",
            artifact.label,
            base_artifact.label,
            display_2dp(reduction)
        );
    }
    if let Some(path) = out {
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        println!("carbon report written to {path}");
    }
    Ok(())
}

fn print_carbon(label: &str, r: &crate::green::CarbonReport) {
    println!(
        "run '{}': {:.4} kWh -> {:.4} kg CO2 (factor {} kg/kWh)",
        label, r.energy_kwh, r.emissions_kg, r.factors.emission_kg_per_kwh
    );
    println!(
        "  = {:.2} miles driven ({} kg/mile), {:.4} household-weeks ({} kg/week), {:.1} TV hours ({} kg/hour)",
        r.miles_driven,
        r.factors.kg_per_mile,
        r.household_weeks,
        r.factors.kg_per_household_week,
        r.tv_hours,
        r.factors.kg_per_tv_hour
    );
}

/// `launch`: spawn one local `train` process per rank with the rank,
/// world size and peer list passed through `SPIKERL_*` variables.
pub fn cmd_launch(args: &[String]) -> Result<()> {
    let mut pairs = parse_pairs(args)?;
    let world: usize = take_pair(&mut pairs, "world")
        .ok_or_else(|| Error::Config("launch requires --world <n>".into()))?
        .parse()
        .map_err(|e| Error::Config(format!("--world: {e}")))?;
    if world == 0 {
        return Err(Error::Config("--world must be >= 1".into()));
    }
    let port_base: Option<u16> = match take_pair(&mut pairs, "port-base") {
        Some(v) => Some(
            v.parse()
                .map_err(|e| Error::Config(format!("--port-base: {e}")))?,
        ),
        None => None,
    };
    let peers: Vec<String> = match port_base {
        Some(base) => (0..world)
            .map(|r| format!("127.0.0.1:{}", base as usize + r))
            .collect(),
        None => free_local_ports(world)?,
    };

    let exe = std::env::current_exe()?;
    let mut children = Vec::new();
    for rank in 0..world {
        let mut cmd = ProcessCommand::new(&exe);
        cmd.arg("train");
        for (k, v) in &pairs {
            cmd.arg(format!("--{k}")).arg(v);
        }
        cmd.arg("--dist.backend").arg("tcp");
        cmd.env("SPIKERL_RANK", rank.to_string())
            .env("SPIKERL_WORLD", world.to_string())
            .env("SPIKERL_PEERS", peers.join(","));
        children.push((
            rank,
            cmd.spawn()
                .map_err(|e| Error::Init(format!("spawning rank {rank}: {e}")))?,
        ));
    }
    let mut worst = 0;
    for (rank, mut child) in children {
        let status = child
            .wait()
            .map_err(|e| Error::Init(format!("waiting for rank {rank}: {e}")))?;
        let code = status.code().unwrap_or(1);
        if code != 0 {
            eprintln!("rank {rank} exited with code {code}");
            worst = worst.max(code);
        }
    }
    if worst != 0 {
        return Err(Error::Init(format!(
            "distributed run failed (exit {worst})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsing() {
        let args: Vec<String> = ["--env", "pendulum", "--td3.gamma=0.98", "--seed", "3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pairs = parse_pairs(&args).unwrap();
        assert_eq!(pairs[0], ("env".into(), "pendulum".into()));
        assert_eq!(pairs[1], ("td3.gamma".into(), "0.98".into()));
        assert_eq!(pairs[2], ("seed".into(), "3".into()));
    }

    #[test]
    fn dangling_flag_is_an_error() {
        let args = vec!["--seed".to_string()];
        assert!(parse_pairs(&args).is_err());
        let args = vec!["seed".to_string(), "3".to_string()];
        assert!(parse_pairs(&args).is_err());
    }
}
