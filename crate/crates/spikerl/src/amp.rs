//! Mixed-precision training policy: per-op-class format selection,
//! FP32 master weights with a low-precision working copy, and a dynamic
//! gradient scaler with skip-on-overflow semantics.
//!
//! Low-precision execution is emulated: allowlisted op classes (matmul
//! and affine outputs) are rounded into the compute format while
//! accumulation stays FP32, and blocklisted ops (reductions, losses,
//! squashing nonlinearities, LIF voltage/current updates) always run in
//! FP32. Rounding neuron state would flip threshold crossings, which is
//! why the LIF state is blocklisted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{round_f32, NumFormat};

/// Mixed-precision configuration as it appears in run configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmpConfig {
    pub enabled: bool,
    /// "bf16", "fp16" or "off".
    pub format: String,
    pub init_scale: f64,
    pub growth_interval: u64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        AmpConfig {
            enabled: false,
            format: "bf16".into(),
            init_scale: GradScaler::DEFAULT_INIT_SCALE,
            growth_interval: GradScaler::DEFAULT_GROWTH_INTERVAL,
        }
    }
}

impl AmpConfig {
    /// Effective policy: disabled when `enabled` is false or the format
    /// is "off".
    pub fn cast_policy(&self) -> Result<CastPolicy> {
        if !self.enabled {
            return Ok(CastPolicy::off());
        }
        match self.format.as_str() {
            "off" => Ok(CastPolicy::off()),
            "bf16" => CastPolicy::new(NumFormat::Bf16),
            "fp16" => CastPolicy::new(NumFormat::Fp16),
            other => Err(Error::Config(format!(
                "amp.format must be bf16, fp16 or off, got '{other}'"
            ))),
        }
    }
}

/// Which format allowlisted ops compute in. `None` disables the policy
/// entirely (everything runs FP32).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CastPolicy {
    pub compute_format: Option<NumFormat>,
}

impl CastPolicy {
    /// Accumulation always happens in FP32 regardless of compute format.
    pub const ACCUMULATION: NumFormat = NumFormat::Fp32;

    pub fn off() -> Self {
        CastPolicy {
            compute_format: None,
        }
    }

    pub fn new(format: NumFormat) -> Result<Self> {
        match format {
            NumFormat::Bf16 | NumFormat::Fp16 => Ok(CastPolicy {
                compute_format: Some(format),
            }),
            other => Err(Error::Config(format!(
                "compute format must be BF16 or FP16, got {other:?}"
            ))),
        }
    }

    pub fn enabled(&self) -> bool {
        self.compute_format.is_some()
    }

    /// Round a value produced by an allowlisted op.
    pub fn round(&self, x: f32) -> f32 {
        match self.compute_format {
            Some(f) => round_f32(x, f),
            None => x,
        }
    }
}

/// Dynamic loss scaler. The scale is always a positive power of two so
/// that scaling and unscaling are exact in binary floating point.
#[derive(Debug, Clone)]
pub struct GradScaler {
    scale: f64,
    growth_factor: f64,
    backoff_factor: f64,
    growth_interval: u64,
    clean_steps: u64,
}

impl GradScaler {
    pub const DEFAULT_INIT_SCALE: f64 = 65536.0;
    pub const DEFAULT_GROWTH_INTERVAL: u64 = 2000;

    pub fn new(init_scale: f64, growth_interval: u64) -> Result<Self> {
        if init_scale <= 0.0 || init_scale.log2().fract() != 0.0 {
            return Err(Error::Config(format!(
                "loss scale must be a positive power of two, got {init_scale}"
            )));
        }
        if growth_interval == 0 {
            return Err(Error::Config("growth interval must be >= 1".into()));
        }
        Ok(GradScaler {
            scale: init_scale,
            growth_factor: 2.0,
            backoff_factor: 0.5,
            growth_interval,
            clean_steps: 0,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn clean_steps(&self) -> u64 {
        self.clean_steps
    }

    pub fn scale_loss(&self, loss: f64) -> f64 {
        loss * self.scale
    }

    /// Divide every gradient by the scale. Returns `found_inf`, checked on
    /// the raw gradients before the division.
    pub fn unscale_and_check(&self, grads: &mut [&mut [f32]]) -> bool {
        let found_inf = grads.iter().any(|g| g.iter().any(|x| !x.is_finite()));
        let inv = 1.0f32 / self.scale as f32;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= inv;
            }
        }
        found_inf
    }

    /// Apply the per-iteration policy: on overflow the step is skipped and
    /// the scale backs off; otherwise `apply` runs the optimizer step and
    /// the clean-step counter advances (doubling the scale every
    /// `growth_interval` clean steps).
    pub fn step_or_skip(&mut self, found_inf: bool, apply: impl FnOnce()) -> bool {
        if found_inf {
            self.update(true);
            false
        } else {
            apply();
            self.update(false);
            true
        }
    }

    /// The scale/counter policy alone, for callers that manage their own
    /// optimizer steps.
    pub fn update(&mut self, found_inf: bool) {
        if found_inf {
            self.scale *= self.backoff_factor;
            self.clean_steps = 0;
        } else {
            self.clean_steps += 1;
            if self.clean_steps == self.growth_interval {
                self.scale *= self.growth_factor;
                self.clean_steps = 0;
            }
        }
    }
}

/// Parameter containers that can produce a format-rounded copy of
/// themselves.
pub trait RoundableParams: Clone {
    fn rounded(&self, format: NumFormat) -> Self;
}

/// FP32 master parameters paired with their low-precision working copy.
/// The optimizer updates the master; forwards read the working copy.
#[derive(Debug, Clone)]
pub struct MasterWeights<P: RoundableParams> {
    pub master: P,
    pub working: P,
}

impl<P: RoundableParams> MasterWeights<P> {
    pub fn new(master: P, policy: &CastPolicy) -> Self {
        let working = match policy.compute_format {
            Some(f) => master.rounded(f),
            None => master.clone(),
        };
        MasterWeights { master, working }
    }

    /// Re-derive the working copy from the master. Idempotent; the master
    /// is never touched.
    pub fn sync_working_copy(&mut self, policy: &CastPolicy) {
        self.working = match policy.compute_format {
            Some(f) => self.master.rounded(f),
            None => self.master.clone(),
        };
    }
}

impl RoundableParams for Vec<f32> {
    fn rounded(&self, format: NumFormat) -> Self {
        self.iter().map(|&x| round_f32(x, format)).collect()
    }
}
