//! The spiking actor: encode -> LIF layers over T timesteps -> decode,
//! with tape-based backpropagation through time.
//!
//! The backward pass replaces the spike nonlinearity's derivative with a
//! rectangular surrogate window around the threshold, treats the hard
//! reset gate (1 - o_{t-1}) as constant, and passes gradients from the
//! generated input spikes straight through to the stimulation strengths.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dot, io, Elem, NumFormat, Tensor};

use super::{
    lif_element, maybe_round, DecoderParams, EncoderParams, LifConfig, Linear, SnnConfig,
    SurrogateConfig,
};

/// Population-coded spiking policy network.
#[derive(Debug, Clone)]
pub struct SpikingActor<T> {
    pub enc: EncoderParams<T>,
    /// LIF layer weights: obs_dim*pop_enc -> hidden ... -> action_dim*pop_dec.
    pub layers: Vec<Linear<T>>,
    pub dec: DecoderParams<T>,
    pub lif: LifConfig,
    pub surrogate: SurrogateConfig,
    pub t_steps: usize,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape<T> {
    batch: usize,
    obs: Vec<T>,
    stim: Vec<T>,
    /// Time-major input spike train: [t][batch * input_width].
    in_spikes: Vec<Vec<T>>,
    /// Per layer, per timestep: voltages and spikes, [batch * width].
    voltages: Vec<Vec<Vec<T>>>,
    spikes: Vec<Vec<Vec<T>>>,
    counts: Vec<T>,
    fr: Vec<T>,
    pre: Vec<T>,
    widths: Vec<usize>,
}

/// Parameter gradients in the actor's canonical parameter order.
#[derive(Debug, Clone)]
pub struct ActorGrads<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub layers: Vec<Vec<T>>,
    pub dec_weight: Vec<T>,
    pub dec_bias: Vec<T>,
}

impl<T: Elem> ActorGrads<T> {
    pub fn zeros_like(actor: &SpikingActor<T>) -> Self {
        ActorGrads {
            mu: vec![T::zero(); actor.enc.mu.len()],
            sigma: vec![T::zero(); actor.enc.sigma.len()],
            layers: actor
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weight.len()])
                .collect(),
            dec_weight: vec![T::zero(); actor.dec.weight.len()],
            dec_bias: vec![T::zero(); actor.dec.bias.len()],
        }
    }

    /// Gradient slices in the same order as [`SpikingActor::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.mu, &self.sigma];
        for l in &self.layers {
            out.push(l);
        }
        out.push(&self.dec_weight);
        out.push(&self.dec_bias);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.mu, &mut self.sigma];
        for l in &mut self.layers {
            out.push(l);
        }
        out.push(&mut self.dec_weight);
        out.push(&mut self.dec_bias);
        out
    }
}

impl<T: Elem> ForwardTape<T> {
    /// Output-population spike counts recorded by the forward pass.
    pub fn spike_counts(&self) -> &[T] {
        &self.counts
    }
}

impl<T: Elem> SpikingActor<T> {
    pub fn new(
        cfg: &SnnConfig,
        obs_dim: usize,
        action_dim: usize,
        bound: &[f32],
        obs_range: &[(f32, f32)],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let enc = EncoderParams::init(obs_dim, cfg.pop_enc, obs_range)?;
        let mut widths = vec![obs_dim * cfg.pop_enc];
        widths.extend_from_slice(&cfg.hidden);
        widths.push(action_dim * cfg.pop_dec);
        let layers = widths
            .windows(2)
            .map(|w| Linear::init(w[1], w[0], rng))
            .collect();
        let dec = DecoderParams::init(action_dim, cfg.pop_dec, bound, rng)?;
        Ok(SpikingActor {
            enc,
            layers,
            dec,
            lif: cfg.lif,
            surrogate: cfg.surrogate,
            t_steps: cfg.t_steps,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.enc.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.dec.action_dim
    }

    fn layer_widths(&self) -> Vec<usize> {
        let mut widths = vec![self.layers[0].in_dim];
        widths.extend(self.layers.iter().map(|l| l.out_dim));
        widths
    }

    /// Single-observation forward pass.
    pub fn forward(&self, s: &[T]) -> Result<(Vec<T>, ForwardTape<T>)> {
        self.forward_batch(s, 1, None)
    }

    /// Batched forward pass. `obs` is row-major [batch x obs_dim]. When a
    /// compute format is given, the synaptic drives and the decoder
    /// affine output are rounded into it; LIF state stays full precision.
    pub fn forward_batch(
        &self,
        obs: &[T],
        batch: usize,
        format: Option<NumFormat>,
    ) -> Result<(Vec<T>, ForwardTape<T>)> {
        let obs_dim = self.enc.obs_dim;
        if obs.len() != batch * obs_dim || batch == 0 {
            return Err(Error::Shape(format!(
                "observation buffer {} for batch {} x obs_dim {}",
                obs.len(),
                batch,
                obs_dim
            )));
        }
        let n0 = self.layers[0].in_dim;
        let t_steps = self.t_steps;

        let mut stim = vec![T::zero(); batch * n0];
        let mut in_spikes = vec![vec![T::zero(); batch * n0]; t_steps];
        for b in 0..batch {
            self.enc.gaussian_stim_into(
                &obs[b * obs_dim..(b + 1) * obs_dim],
                &mut stim[b * n0..(b + 1) * n0],
            )?;
        }
        // Same accumulate-and-fire recurrence as encode_spikes, applied
        // across the whole batch in place.
        let one = T::one();
        let mut acc = vec![T::zero(); batch * n0];
        for step in in_spikes.iter_mut() {
            for ((a, &drive), slot) in acc.iter_mut().zip(stim.iter()).zip(step.iter_mut()) {
                *a = *a + drive;
                if *a >= one {
                    *slot = one;
                    *a = *a - one;
                }
            }
        }

        let dc = T::from_f64(self.lif.current_decay);
        let dv = T::from_f64(self.lif.voltage_decay);
        let th = T::from_f64(self.lif.threshold);

        let mut voltages: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len());
        let mut spikes: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len());
        let mut current: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut voltage: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        let mut last_spike: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            voltages.push(Vec::with_capacity(t_steps));
            spikes.push(Vec::with_capacity(t_steps));
            current.push(vec![T::zero(); batch * l.out_dim]);
            voltage.push(vec![T::zero(); batch * l.out_dim]);
            last_spike.push(vec![T::zero(); batch * l.out_dim]);
        }

        let mut active: Vec<usize> = Vec::new();
        for t in 0..t_steps {
            let mut x = in_spikes[t].clone();
            for (l, layer) in self.layers.iter().enumerate() {
                let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
                let mut v_t = vec![T::zero(); batch * out_dim];
                let mut o_t = vec![T::zero(); batch * out_dim];
                for b in 0..batch {
                    let xb = &x[b * in_dim..(b + 1) * in_dim];
                    // Inputs are binary spikes: the drive is the sum of the
                    // weights at active indices, in ascending order, which
                    // is bitwise identical to the dense dot product.
                    active.clear();
                    active.extend(xb.iter().enumerate().filter_map(|(k, &v)| {
                        debug_assert!(v == T::zero() || v == T::one());
                        (v != T::zero()).then_some(k)
                    }));
                    for o in 0..out_dim {
                        let idx = b * out_dim + o;
                        let row = layer.row(o);
                        let mut acc = T::zero();
                        for &k in &active {
                            acc = acc + row[k];
                        }
                        let drive = maybe_round(acc, format);
                        let (c_new, v_new) = lif_element(
                            current[l][idx],
                            voltage[l][idx],
                            last_spike[l][idx],
                            drive,
                            dc,
                            dv,
                        );
                        current[l][idx] = c_new;
                        voltage[l][idx] = v_new;
                        v_t[idx] = v_new;
                        o_t[idx] = if v_new > th { T::one() } else { T::zero() };
                    }
                }
                last_spike[l].copy_from_slice(&o_t);
                voltages[l].push(v_t);
                x = o_t.clone();
                spikes[l].push(o_t);
            }
        }

        let out_width = self.layers.last().expect("at least one layer").out_dim;
        let mut counts = vec![T::zero(); batch * out_width];
        for t in 0..t_steps {
            let top = &spikes[self.layers.len() - 1][t];
            for (c, &o) in counts.iter_mut().zip(top.iter()) {
                *c = *c + o;
            }
        }

        let t_div = T::from_f64(t_steps as f64);
        let fr: Vec<T> = counts.iter().map(|&c| c / t_div).collect();
        let pop = self.dec.pop;
        let mut pre = Vec::with_capacity(batch * self.dec.action_dim);
        let mut actions = Vec::with_capacity(batch * self.dec.action_dim);
        for b in 0..batch {
            let fr_b = &fr[b * out_width..(b + 1) * out_width];
            for j in 0..self.dec.action_dim {
                let w = &self.dec.weight[j * pop..(j + 1) * pop];
                let p = maybe_round(
                    dot(w, &fr_b[j * pop..(j + 1) * pop]) + self.dec.bias[j],
                    format,
                );
                pre.push(p);
                actions.push(self.dec.bound[j] * p.tanh());
            }
        }

        let tape = ForwardTape {
            batch,
            obs: obs.to_vec(),
            stim,
            in_spikes,
            voltages,
            spikes,
            counts,
            fr,
            pre,
            widths: self.layer_widths(),
        };
        Ok((actions, tape))
    }

    /// Backpropagation through time over a recorded tape. `grad_action`
    /// is row-major [batch x action_dim]; gradients are summed over the
    /// batch.
    pub fn backward(&self, tape: &ForwardTape<T>, grad_action: &[T]) -> Result<ActorGrads<T>> {
        if tape.widths != self.layer_widths() {
            return Err(Error::State(
                "tape was recorded with a different parameter shape".into(),
            ));
        }
        let batch = tape.batch;
        if grad_action.len() != batch * self.dec.action_dim {
            return Err(Error::Shape(format!(
                "grad_action length {} for batch {} x action_dim {}",
                grad_action.len(),
                batch,
                self.dec.action_dim
            )));
        }
        let mut grads = ActorGrads::zeros_like(self);
        let out_width = self.layers.last().expect("at least one layer").out_dim;
        let pop = self.dec.pop;
        let t_steps = self.t_steps;
        let t_div = T::from_f64(t_steps as f64);

        // Decoder: action = bound * tanh(pre), pre = W_d . fr + b.
        let mut gcounts = vec![T::zero(); batch * out_width];
        for b in 0..batch {
            for j in 0..self.dec.action_dim {
                let p = tape.pre[b * self.dec.action_dim + j];
                let tanh_p = p.tanh();
                let gp = grad_action[b * self.dec.action_dim + j]
                    * self.dec.bound[j]
                    * (T::one() - tanh_p * tanh_p);
                grads.dec_bias[j] = grads.dec_bias[j] + gp;
                for d in 0..pop {
                    let fr_idx = b * out_width + j * pop + d;
                    grads.dec_weight[j * pop + d] =
                        grads.dec_weight[j * pop + d] + gp * tape.fr[fr_idx];
                    gcounts[fr_idx] = gcounts[fr_idx] + gp * self.dec.weight[j * pop + d] / t_div;
                }
            }
        }

        let w_half = T::from_f64(self.surrogate.width);
        let z = T::from_f64(self.surrogate.height);
        let th = T::from_f64(self.lif.threshold);
        let dc = T::from_f64(self.lif.current_decay);
        let dv = T::from_f64(self.lif.voltage_decay);

        // Spike-count gradients reach the top layer's spikes at every
        // timestep; lower layers receive the input gradients of the layer
        // above, one buffer per timestep.
        let mut ohat_per_t: Vec<Vec<T>> = vec![gcounts; t_steps];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
            let mut vhat_next = vec![T::zero(); batch * out_dim];
            let mut chat_next = vec![T::zero(); batch * out_dim];
            let mut xhat_per_t: Vec<Vec<T>> = vec![vec![T::zero(); batch * in_dim]; t_steps];
            let dlayer = &mut grads.layers[l];
            let mut active: Vec<usize> = Vec::new();
            for t in (0..t_steps).rev() {
                let v_t = &tape.voltages[l][t];
                let o_t = &tape.spikes[l][t];
                let x_t: &[T] = if l == 0 {
                    &tape.in_spikes[t]
                } else {
                    &tape.spikes[l - 1][t]
                };
                let ohat = &ohat_per_t[t];
                let xhat = &mut xhat_per_t[t];
                for b in 0..batch {
                    let xb = &x_t[b * in_dim..(b + 1) * in_dim];
                    let xhb = &mut xhat[b * in_dim..(b + 1) * in_dim];
                    // Binary inputs again: the weight gradient only
                    // touches active columns (chat * 1 == chat).
                    active.clear();
                    active.extend(
                        xb.iter()
                            .enumerate()
                            .filter_map(|(k, &v)| (v != T::zero()).then_some(k)),
                    );
                    for o in 0..out_dim {
                        let idx = b * out_dim + o;
                        let surr = if (v_t[idx] - th).abs() < w_half {
                            z
                        } else {
                            T::zero()
                        };
                        let vhat = ohat[idx] * surr + vhat_next[idx] * dv * (T::one() - o_t[idx]);
                        let chat = vhat + chat_next[idx] * dc;
                        vhat_next[idx] = vhat;
                        chat_next[idx] = chat;
                        if chat != T::zero() {
                            let wrow = layer.row(o);
                            let drow = &mut dlayer[o * in_dim..(o + 1) * in_dim];
                            for &k in &active {
                                drow[k] = drow[k] + chat;
                            }
                            for (xh, &w) in xhb.iter_mut().zip(wrow.iter()) {
                                *xh = *xh + chat * w;
                            }
                        }
                    }
                }
            }
            ohat_per_t = xhat_per_t;
        }

        // Straight-through from generated input spikes to the stimulation:
        // every timestep contributes its gradient unchanged.
        let n0 = self.layers[0].in_dim;
        let mut gstim = vec![T::zero(); batch * n0];
        for xhat in &ohat_per_t {
            for (g, &x) in gstim.iter_mut().zip(xhat.iter()) {
                *g = *g + x;
            }
        }

        let obs_dim = self.enc.obs_dim;
        let pop_enc = self.enc.pop;
        for b in 0..batch {
            for i in 0..obs_dim {
                let s = tape.obs[b * obs_dim + i];
                for e in 0..pop_enc {
                    let idx = i * pop_enc + e;
                    let g = gstim[b * n0 + idx];
                    if g == T::zero() {
                        continue;
                    }
                    let a = tape.stim[b * n0 + idx];
                    let sigma = self.enc.sigma[idx];
                    let d = s - self.enc.mu[idx];
                    let s2 = sigma * sigma;
                    grads.mu[idx] = grads.mu[idx] + g * a * d / s2;
                    grads.sigma[idx] = grads.sigma[idx] + g * a * d * d / (s2 * sigma);
                }
            }
        }
        Ok(grads)
    }

    /// Mutable views of every parameter tensor in canonical order:
    /// [mu, sigma, layer weights.., decoder weight, decoder bias].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.enc.mu, &mut self.enc.sigma];
        for l in &mut self.layers {
            out.push(&mut l.weight);
        }
        out.push(&mut self.dec.weight);
        out.push(&mut self.dec.bias);
        out
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.enc.mu, &self.enc.sigma];
        for l in &self.layers {
            out.push(&l.weight);
        }
        out.push(&self.dec.weight);
        out.push(&self.dec.bias);
        out
    }

    /// Copy with every parameter rounded into `format`. Used for the
    /// low-precision working copy during mixed-precision training.
    pub fn rounded(&self, format: NumFormat) -> Self {
        let mut copy = self.clone();
        for slice in copy.param_slices_mut() {
            for v in slice.iter_mut() {
                *v = v.round_format(format);
            }
        }
        copy
    }
}

impl SpikingActor<f32> {
    /// Named parameter tensors for checkpointing, hashing and broadcast.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        let push =
            |out: &mut Vec<(String, Tensor)>, name: &str, shape: Vec<usize>, data: &[f32]| {
                let t = Tensor::from_f32(shape, data.to_vec(), NumFormat::Fp32)
                    .expect("parameter shapes are consistent");
                out.push((name.to_string(), t));
            };
        push(
            &mut out,
            "enc.mu",
            vec![self.enc.obs_dim, self.enc.pop],
            &self.enc.mu,
        );
        push(
            &mut out,
            "enc.sigma",
            vec![self.enc.obs_dim, self.enc.pop],
            &self.enc.sigma,
        );
        for (i, l) in self.layers.iter().enumerate() {
            push(
                &mut out,
                &format!("layers.{i}.weight"),
                vec![l.out_dim, l.in_dim],
                &l.weight,
            );
        }
        push(
            &mut out,
            "dec.weight",
            vec![self.dec.action_dim, self.dec.pop],
            &self.dec.weight,
        );
        push(
            &mut out,
            "dec.bias",
            vec![self.dec.action_dim],
            &self.dec.bias,
        );
        out
    }

    /// Load parameters from tensors produced by [`Self::named_tensors`].
    pub fn load_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let expected = self.named_tensors();
        if tensors.len() != expected.len() {
            return Err(Error::State(format!(
                "checkpoint has {} tensors, actor expects {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((name, t), (want_name, want)) in tensors.iter().zip(expected.iter()) {
            if name != want_name || t.shape() != want.shape() {
                return Err(Error::State(format!(
                    "checkpoint entry '{name}' does not match actor parameter '{want_name}'"
                )));
            }
        }
        let values: Vec<Vec<f32>> = tensors.iter().map(|(_, t)| t.as_f32().to_vec()).collect();
        for (slice, value) in self.param_slices_mut().into_iter().zip(values) {
            slice.copy_from_slice(&value);
        }
        self.enc.clamp_sigma();
        Ok(())
    }

    pub fn param_hash(&self) -> String {
        io::hash_tensors(&self.named_tensors()).expect("f32 parameters always encode")
    }
}
