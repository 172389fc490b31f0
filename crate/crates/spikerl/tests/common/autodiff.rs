//! A generic scalar reverse-mode tape, independent of the hand-derived
//! backward pass in the library. Tests build the same surrogate-relaxed
//! computation graph the network defines (rectangular spike surrogate,
//! constant reset gate, straight-through spike generation) and let this
//! evaluator derive the gradients.

use spikerl::snn::SpikingActor;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Exp(usize),
    Tanh(usize),
    Scale(usize, f64),
    /// Heaviside step at `threshold` whose derivative is the rectangular
    /// surrogate: `height` inside `|v - threshold| < width`, else 0.
    Spike {
        v: usize,
        threshold: f64,
        width: f64,
        height: f64,
    },
    /// Forward value fixed at graph build time, derivative 1 to `input`.
    StraightThrough(usize),
}

pub struct Tape {
    values: Vec<f64>,
    grads: Vec<f64>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            grads: Vec::new(),
            ops: Vec::new(),
        }
    }

    fn push(&mut self, value: f64, op: Op) -> usize {
        self.values.push(value);
        self.grads.push(0.0);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn leaf(&mut self, v: f64) -> usize {
        self.push(v, Op::Leaf)
    }

    pub fn add(&mut self, a: usize, b: usize) -> usize {
        self.push(self.values[a] + self.values[b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: usize, b: usize) -> usize {
        self.push(self.values[a] - self.values[b], Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: usize, b: usize) -> usize {
        self.push(self.values[a] * self.values[b], Op::Mul(a, b))
    }

    pub fn div(&mut self, a: usize, b: usize) -> usize {
        self.push(self.values[a] / self.values[b], Op::Div(a, b))
    }

    pub fn neg(&mut self, a: usize) -> usize {
        self.push(-self.values[a], Op::Neg(a))
    }

    pub fn exp(&mut self, a: usize) -> usize {
        self.push(self.values[a].exp(), Op::Exp(a))
    }

    pub fn tanh(&mut self, a: usize) -> usize {
        self.push(self.values[a].tanh(), Op::Tanh(a))
    }

    pub fn scale(&mut self, a: usize, k: f64) -> usize {
        self.push(self.values[a] * k, Op::Scale(a, k))
    }

    pub fn spike(&mut self, v: usize, threshold: f64, width: f64, height: f64) -> usize {
        let value = if self.values[v] > threshold { 1.0 } else { 0.0 };
        self.push(
            value,
            Op::Spike {
                v,
                threshold,
                width,
                height,
            },
        )
    }

    pub fn straight_through(&mut self, input: usize, value: f64) -> usize {
        self.push(value, Op::StraightThrough(input))
    }

    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }

    pub fn grad(&self, id: usize) -> f64 {
        self.grads[id]
    }

    /// Reverse sweep from the given output cotangents.
    pub fn backward(&mut self, seeds: &[(usize, f64)]) {
        for g in self.grads.iter_mut() {
            *g = 0.0;
        }
        for &(id, seed) in seeds {
            self.grads[id] += seed;
        }
        for id in (0..self.ops.len()).rev() {
            let g = self.grads[id];
            if g == 0.0 {
                continue;
            }
            match self.ops[id] {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.grads[a] += g;
                    self.grads[b] += g;
                }
                Op::Sub(a, b) => {
                    self.grads[a] += g;
                    self.grads[b] -= g;
                }
                Op::Mul(a, b) => {
                    self.grads[a] += g * self.values[b];
                    self.grads[b] += g * self.values[a];
                }
                Op::Div(a, b) => {
                    self.grads[a] += g / self.values[b];
                    self.grads[b] -= g * self.values[a] / (self.values[b] * self.values[b]);
                }
                Op::Neg(a) => self.grads[a] -= g,
                Op::Exp(a) => self.grads[a] += g * self.values[id],
                Op::Tanh(a) => {
                    let t = self.values[id];
                    self.grads[a] += g * (1.0 - t * t);
                }
                Op::Scale(a, k) => self.grads[a] += g * k,
                Op::Spike {
                    v,
                    threshold,
                    width,
                    height,
                } => {
                    if (self.values[v] - threshold).abs() < width {
                        self.grads[v] += g * height;
                    }
                }
                Op::StraightThrough(input) => self.grads[input] += g,
            }
        }
    }
}

/// Node ids of every parameter and output in the graph replica.
pub struct ActorGraph {
    pub tape: Tape,
    pub mu: Vec<usize>,
    pub sigma: Vec<usize>,
    pub layer_weights: Vec<Vec<usize>>,
    pub dec_weight: Vec<usize>,
    pub dec_bias: Vec<usize>,
    pub actions: Vec<usize>,
}

/// Build the surrogate-relaxed forward graph of `actor` on one
/// observation, mirroring the network's own forward semantics (same
/// accumulate-and-fire generator, hard reset treated as constant, spike
/// derivative replaced by the rectangular window).
pub fn build_actor_graph(actor: &SpikingActor<f64>, obs: &[f64]) -> ActorGraph {
    let mut tape = Tape::new();
    let enc = &actor.enc;
    let (obs_dim, pop) = (enc.obs_dim, enc.pop);
    let n0 = obs_dim * pop;
    let t_steps = actor.t_steps;
    let threshold = actor.lif.threshold;
    let (dc, dv) = (actor.lif.current_decay, actor.lif.voltage_decay);
    let (sw, sh) = (actor.surrogate.width, actor.surrogate.height);

    let mu: Vec<usize> = enc.mu.iter().map(|&m| tape.leaf(m)).collect();
    let sigma: Vec<usize> = enc.sigma.iter().map(|&s| tape.leaf(s)).collect();

    // Stimulation A = exp(-(s - mu)^2 / (2 sigma^2)), matching the
    // network's association order: (2 * sigma) * sigma.
    let mut stim = Vec::with_capacity(n0);
    for i in 0..obs_dim {
        let s_leaf = tape.leaf(obs[i]);
        for e in 0..pop {
            let idx = i * pop + e;
            let d = tape.sub(s_leaf, mu[idx]);
            let d2 = tape.mul(d, d);
            let neg_d2 = tape.neg(d2);
            let two_sigma = tape.scale(sigma[idx], 2.0);
            let denom = tape.mul(two_sigma, sigma[idx]);
            let ratio = tape.div(neg_d2, denom);
            stim.push(tape.exp(ratio));
        }
    }

    // Deterministic accumulate-and-fire generator; spikes are
    // straight-through nodes back to their stimulation values.
    let mut acc = vec![0.0f64; n0];
    let mut in_spikes: Vec<Vec<usize>> = Vec::with_capacity(t_steps);
    for _ in 0..t_steps {
        let mut row = Vec::with_capacity(n0);
        for (i, &a_node) in stim.iter().enumerate() {
            acc[i] += tape.value(a_node);
            let fired = if acc[i] >= 1.0 {
                acc[i] -= 1.0;
                1.0
            } else {
                0.0
            };
            row.push(tape.straight_through(a_node, fired));
        }
        in_spikes.push(row);
    }

    let mut layer_weights: Vec<Vec<usize>> = Vec::new();
    let mut x_per_t = in_spikes;
    let num_layers = actor.layers.len();
    for layer in &actor.layers {
        let w_nodes: Vec<usize> = layer.weight.iter().map(|&w| tape.leaf(w)).collect();
        let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
        let mut o_per_t: Vec<Vec<usize>> = Vec::with_capacity(t_steps);
        let mut c_prev: Vec<Option<usize>> = vec![None; out_dim];
        let mut v_prev: Vec<Option<usize>> = vec![None; out_dim];
        let mut o_prev_val = vec![0.0f64; out_dim];
        for x in &x_per_t {
            let mut o_row = Vec::with_capacity(out_dim);
            for o in 0..out_dim {
                // drive = sum_k w[o,k] * x_k, ascending k.
                let mut drive = None;
                for k in 0..in_dim {
                    let term = tape.mul(w_nodes[o * in_dim + k], x[k]);
                    drive = Some(match drive {
                        None => term,
                        Some(d) => tape.add(d, term),
                    });
                }
                let drive = drive.expect("layers have at least one input");
                let c_t = match c_prev[o] {
                    None => drive,
                    Some(c) => {
                        let decayed = tape.scale(c, dc);
                        tape.add(decayed, drive)
                    }
                };
                // Hard reset gate (1 - o_prev) enters as a constant.
                let v_t = match v_prev[o] {
                    None => c_t,
                    Some(v) => {
                        let kept = tape.scale(v, dv * (1.0 - o_prev_val[o]));
                        tape.add(kept, c_t)
                    }
                };
                let o_t = tape.spike(v_t, threshold, sw, sh);
                c_prev[o] = Some(c_t);
                v_prev[o] = Some(v_t);
                o_prev_val[o] = tape.value(o_t);
                o_row.push(o_t);
            }
            o_per_t.push(o_row);
        }
        layer_weights.push(w_nodes);
        x_per_t = o_per_t;
    }
    assert_eq!(layer_weights.len(), num_layers);

    // Spike counts, firing rates, decoder.
    let out_width = actor.layers.last().unwrap().out_dim;
    let mut counts: Vec<usize> = Vec::with_capacity(out_width);
    for o in 0..out_width {
        let mut total = x_per_t[0][o];
        for row in &x_per_t[1..] {
            total = tape.add(total, row[o]);
        }
        counts.push(total);
    }
    let t_leaf = tape.leaf(t_steps as f64);
    let fr: Vec<usize> = counts.iter().map(|&c| tape.div(c, t_leaf)).collect();

    let dec = &actor.dec;
    let dec_weight: Vec<usize> = dec.weight.iter().map(|&w| tape.leaf(w)).collect();
    let dec_bias: Vec<usize> = dec.bias.iter().map(|&b| tape.leaf(b)).collect();
    let mut actions = Vec::with_capacity(dec.action_dim);
    for j in 0..dec.action_dim {
        let mut pre = None;
        for d in 0..dec.pop {
            let term = tape.mul(dec_weight[j * dec.pop + d], fr[j * dec.pop + d]);
            pre = Some(match pre {
                None => term,
                Some(p) => tape.add(p, term),
            });
        }
        let pre = tape.add(pre.expect("decoder populations are non-empty"), dec_bias[j]);
        let squashed = tape.tanh(pre);
        actions.push(tape.scale(squashed, dec.bound[j]));
    }

    ActorGraph {
        tape,
        mu,
        sigma,
        layer_weights,
        dec_weight,
        dec_bias,
        actions,
    }
}
