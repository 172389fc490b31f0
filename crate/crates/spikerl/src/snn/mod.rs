//! Population-coded spiking network building blocks.
//!
//! The pipeline is: Gaussian receptive-field encoding of the observation
//! into per-dimension neuron populations, a deterministic
//! accumulate-and-fire spike generator, fully connected
//! leaky-integrate-and-fire layers simulated for a fixed number of
//! timesteps, and a firing-rate decoder that maps output populations to
//! bounded continuous actions.

mod actor;

pub use actor::{ActorGrads, ForwardTape, SpikingActor};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Elem, NumFormat};

/// LIF neuron constants shared by all layers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LifConfig {
    /// Current decay per timestep, in [0, 1].
    pub current_decay: f64,
    /// Voltage decay per timestep, in [0, 1].
    pub voltage_decay: f64,
    /// Firing threshold, > 0.
    pub threshold: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            current_decay: 0.5,
            voltage_decay: 0.75,
            threshold: 0.5,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.current_decay) || !(0.0..=1.0).contains(&self.voltage_decay)
        {
            return Err(Error::Config("LIF decays must lie in [0, 1]".into()));
        }
        if self.threshold <= 0.0 {
            return Err(Error::Config("LIF threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Rectangular surrogate used for the spike derivative during
/// backpropagation: d(spike)/d(voltage) = height inside a window of
/// half-width `width` around the threshold, 0 outside.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub width: f64,
    pub height: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            width: 0.5,
            height: 0.5,
        }
    }
}

/// Full network shape and dynamics configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnnConfig {
    /// Encoder neurons per observation dimension.
    pub pop_enc: usize,
    /// Decoder neurons per action dimension.
    pub pop_dec: usize,
    pub hidden: Vec<usize>,
    /// Simulation timesteps per forward pass, >= 1.
    pub t_steps: usize,
    pub lif: LifConfig,
    pub surrogate: SurrogateConfig,
    /// Whether encoder means and widths receive gradient updates.
    pub train_encoder: bool,
}

impl Default for SnnConfig {
    fn default() -> Self {
        SnnConfig {
            pop_enc: 10,
            pop_dec: 10,
            hidden: vec![256, 256],
            t_steps: 5,
            lif: LifConfig::default(),
            surrogate: SurrogateConfig::default(),
            train_encoder: true,
        }
    }
}

impl SnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_enc == 0 || self.pop_dec == 0 {
            return Err(Error::Config("population sizes must be >= 1".into()));
        }
        if self.t_steps == 0 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        self.lif.validate()
    }
}

/// Lower bound applied to encoder widths after every update.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Gaussian receptive-field encoder parameters: per observation dimension,
/// `pop` neurons with learnable means and widths.
#[derive(Debug, Clone)]
pub struct EncoderParams<T> {
    pub obs_dim: usize,
    pub pop: usize,
    /// Row-major [obs_dim x pop].
    pub mu: Vec<T>,
    /// Row-major [obs_dim x pop], strictly positive.
    pub sigma: Vec<T>,
}

impl<T: Elem> EncoderParams<T> {
    /// Means evenly spaced over each dimension's observation range, widths
    /// set to the spacing between adjacent means.
    pub fn init(obs_dim: usize, pop: usize, obs_range: &[(f32, f32)]) -> Result<Self> {
        if obs_range.len() != obs_dim {
            return Err(Error::Shape(format!(
                "obs_range has {} entries for obs_dim {}",
                obs_range.len(),
                obs_dim
            )));
        }
        let mut mu = Vec::with_capacity(obs_dim * pop);
        let mut sigma = Vec::with_capacity(obs_dim * pop);
        for &(lo, hi) in obs_range {
            let (lo, hi) = (lo as f64, hi as f64);
            let spacing = if pop > 1 {
                (hi - lo) / (pop as f64 - 1.0)
            } else {
                (hi - lo) / 2.0
            };
            let spacing = spacing.max(SIGMA_FLOOR);
            for e in 0..pop {
                let m = if pop > 1 {
                    lo + e as f64 * spacing
                } else {
                    (lo + hi) / 2.0
                };
                mu.push(T::from_f64(m));
                sigma.push(T::from_f64(spacing));
            }
        }
        Ok(EncoderParams {
            obs_dim,
            pop,
            mu,
            sigma,
        })
    }

    /// Stimulation strengths A[i, e] = exp(-(s[i] - mu[i,e])^2 / (2 sigma[i,e]^2)),
    /// each in (0, 1].
    pub fn gaussian_stim(&self, s: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.obs_dim * self.pop];
        self.gaussian_stim_into(s, &mut out)?;
        Ok(out)
    }

    pub(crate) fn gaussian_stim_into(&self, s: &[T], out: &mut [T]) -> Result<()> {
        if s.len() != self.obs_dim {
            return Err(Error::Shape(format!(
                "observation length {} for obs_dim {}",
                s.len(),
                self.obs_dim
            )));
        }
        debug_assert_eq!(out.len(), self.obs_dim * self.pop);
        let two = T::from_f64(2.0);
        for (i, &x) in s.iter().enumerate() {
            for e in 0..self.pop {
                let idx = i * self.pop + e;
                let sigma = self.sigma[idx];
                if sigma <= T::zero() {
                    return Err(Error::Domain(format!("sigma[{i}][{e}] must be positive")));
                }
                let d = x - self.mu[idx];
                out[idx] = (-(d * d) / (two * sigma * sigma)).exp();
            }
        }
        Ok(())
    }

    /// Clamp widths to the positive floor. Applied after every update.
    pub fn clamp_sigma(&mut self) {
        let floor = T::from_f64(SIGMA_FLOOR);
        for s in &mut self.sigma {
            if *s < floor {
                *s = floor;
            }
        }
    }
}

/// Deterministic accumulate-and-fire spike generation: the accumulator
/// integrates the stimulation each step and fires (subtracting one) when
/// it reaches 1, so the spike count tracks the cumulative drive.
///
/// Returns a time-major train: `t_steps` rows of `stim.len()` binary
/// values.
pub fn encode_spikes<T: Elem>(stim: &[T], t_steps: usize) -> Result<Vec<Vec<T>>> {
    if t_steps == 0 {
        return Err(Error::Domain("t_steps must be >= 1".into()));
    }
    for &a in stim {
        if !(a >= T::zero() && a <= T::one()) {
            return Err(Error::Domain(format!("stimulation {a} outside [0, 1]")));
        }
    }
    let one = T::one();
    let mut acc = vec![T::zero(); stim.len()];
    let mut train = Vec::with_capacity(t_steps);
    for _ in 0..t_steps {
        let mut row = vec![T::zero(); stim.len()];
        for (i, (&a, slot)) in stim.iter().zip(row.iter_mut()).enumerate() {
            acc[i] = acc[i] + a;
            if acc[i] >= one {
                *slot = one;
                acc[i] = acc[i] - one;
            }
        }
        train.push(row);
    }
    Ok(train)
}

/// Fully connected weight matrix, row-major [out_dim x in_dim], no bias.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<T>,
}

impl<T: Elem> Linear<T> {
    /// Uniform init in (-1/sqrt(in_dim), 1/sqrt(in_dim)).
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..out_dim * in_dim)
            .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Linear {
            out_dim,
            in_dim,
            weight,
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            out_dim,
            in_dim,
            weight: vec![T::zero(); out_dim * in_dim],
        }
    }

    pub fn row(&self, o: usize) -> &[T] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    /// y[o] = dot(weight row o, x), ascending index accumulation.
    pub fn forward_into(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = dot(self.row(o), x);
        }
    }
}

/// Per-layer LIF state: synaptic current, membrane voltage, and the
/// previous step's binary spike vector.
#[derive(Debug, Clone)]
pub struct LifLayerState<T> {
    pub current: Vec<T>,
    pub voltage: Vec<T>,
    pub spikes: Vec<T>,
}

impl<T: Elem> LifLayerState<T> {
    pub fn zeros(width: usize) -> Self {
        LifLayerState {
            current: vec![T::zero(); width],
            voltage: vec![T::zero(); width],
            spikes: vec![T::zero(); width],
        }
    }
}

/// One LIF timestep:
///   c_t = current_decay * c + W * input_spikes
///   v_t = voltage_decay * v * (1 - o_prev) + c_t   (hard reset)
///   o_t = 1 where v_t > threshold.
pub fn lif_step<T: Elem>(
    state: &LifLayerState<T>,
    input_spikes: &[T],
    w: &Linear<T>,
    cfg: &LifConfig,
) -> Result<(LifLayerState<T>, Vec<T>)> {
    if input_spikes.len() != w.in_dim || state.voltage.len() != w.out_dim {
        return Err(Error::Shape(format!(
            "lif_step: input {} / state {} vs weights {}x{}",
            input_spikes.len(),
            state.voltage.len(),
            w.out_dim,
            w.in_dim
        )));
    }
    let dc = T::from_f64(cfg.current_decay);
    let dv = T::from_f64(cfg.voltage_decay);
    let th = T::from_f64(cfg.threshold);
    let mut next = LifLayerState::zeros(w.out_dim);
    for o in 0..w.out_dim {
        let drive = dot(w.row(o), input_spikes);
        let (c, v) = lif_element(
            state.current[o],
            state.voltage[o],
            state.spikes[o],
            drive,
            dc,
            dv,
        );
        next.current[o] = c;
        next.voltage[o] = v;
        next.spikes[o] = if v > th { T::one() } else { T::zero() };
    }
    let out = next.spikes.clone();
    Ok((next, out))
}

/// Shared element update so every forward path computes identical bits.
#[inline]
pub(crate) fn lif_element<T: Elem>(c: T, v: T, o_prev: T, drive: T, dc: T, dv: T) -> (T, T) {
    let c_new = dc * c + drive;
    let v_new = dv * v * (T::one() - o_prev) + c_new;
    (c_new, v_new)
}

/// Firing-rate decoder: one output population of size `pop` per action
/// dimension, combined by a learnable weighted sum and squashed to the
/// action bound with tanh.
#[derive(Debug, Clone)]
pub struct DecoderParams<T> {
    pub action_dim: usize,
    pub pop: usize,
    /// Row-major [action_dim x pop].
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub bound: Vec<T>,
}

impl<T: Elem> DecoderParams<T> {
    pub fn init(action_dim: usize, pop: usize, bound: &[f32], rng: &mut impl Rng) -> Result<Self> {
        if bound.len() != action_dim {
            return Err(Error::Shape("action bound length mismatch".into()));
        }
        if bound.iter().any(|&b| b <= 0.0) {
            return Err(Error::Config("action bounds must be positive".into()));
        }
        let k = 1.0 / (pop as f64).sqrt();
        let weight = (0..action_dim * pop)
            .map(|_| T::from_f64(rng.gen_range(-k..k)))
            .collect();
        Ok(DecoderParams {
            action_dim,
            pop,
            weight,
            bias: vec![T::zero(); action_dim],
            bound: bound.iter().map(|&b| T::from_f64(b as f64)).collect(),
        })
    }

    /// Map per-neuron spike counts (in [0, t_steps]) to actions in
    /// [-bound, bound].
    pub fn decode_action(&self, spike_counts: &[T], t_steps: usize) -> Result<Vec<T>> {
        if spike_counts.len() != self.action_dim * self.pop {
            return Err(Error::Shape(format!(
                "{} spike counts for {} populations of {}",
                spike_counts.len(),
                self.action_dim,
                self.pop
            )));
        }
        let t = T::from_f64(t_steps as f64);
        for &c in spike_counts {
            if c > t || c < T::zero() {
                return Err(Error::Domain(format!(
                    "spike count {c} outside [0, {t_steps}]"
                )));
            }
        }
        let fr: Vec<T> = spike_counts.iter().map(|&c| c / t).collect();
        let mut out = Vec::with_capacity(self.action_dim);
        for j in 0..self.action_dim {
            let w = &self.weight[j * self.pop..(j + 1) * self.pop];
            let pre = dot(w, &fr[j * self.pop..(j + 1) * self.pop]) + self.bias[j];
            out.push(self.bound[j] * pre.tanh());
        }
        Ok(out)
    }
}

/// Round only when a compute format is active.
#[inline]
pub(crate) fn maybe_round<T: Elem>(x: T, format: Option<NumFormat>) -> T {
    match format {
        Some(f) => x.round_format(f),
        None => x,
    }
}
