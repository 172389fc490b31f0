//! Q-value critic: a fully connected MLP with rectified-linear hidden
//! activations mapping a concatenated (state, action) row to a scalar.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dot, io, Elem, NumFormat, Tensor};

/// Dense layer with bias, row-major [out_dim x in_dim].
#[derive(Debug, Clone)]
pub struct Affine<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Elem> Affine<T> {
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (in_dim as f64).sqrt();
        Affine {
            out_dim,
            in_dim,
            weight: (0..out_dim * in_dim)
                .map(|_| T::from_f64(rng.gen_range(-k..k)))
                .collect(),
            bias: (0..out_dim)
                .map(|_| T::from_f64(rng.gen_range(-k..k)))
                .collect(),
        }
    }

    fn row(&self, o: usize) -> &[T] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

#[derive(Debug, Clone)]
pub struct CriticNet<T> {
    /// Hidden layers followed by the scalar head.
    pub layers: Vec<Affine<T>>,
}

/// Activations recorded by a forward pass: the input of every layer and
/// each layer's pre-activation.
#[derive(Debug, Clone)]
pub struct CriticTape<T> {
    batch: usize,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct CriticGrads<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Elem> CriticGrads<T> {
    /// Slices interleaved [w0, b0, w1, b1, ..] to match
    /// [`CriticNet::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }
}

impl<T: Elem> CriticNet<T> {
    pub fn new(in_dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::Config("critic input width must be >= 1".into()));
        }
        let mut widths = vec![in_dim];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Ok(CriticNet {
            layers: widths
                .windows(2)
                .map(|w| Affine::init(w[1], w[0], rng))
                .collect(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    /// Batched forward over row-major [batch x in_dim] input. When a
    /// compute format is given every affine output is rounded into it;
    /// the ReLU keeps values on the format grid for free.
    pub fn forward_batch(
        &self,
        input: &[T],
        batch: usize,
        format: Option<NumFormat>,
    ) -> Result<(Vec<T>, CriticTape<T>)> {
        if input.len() != batch * self.in_dim() || batch == 0 {
            return Err(Error::Shape(format!(
                "critic input {} for batch {} x {}",
                input.len(),
                batch,
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![T::zero(); batch * layer.out_dim];
            for b in 0..batch {
                let xb = &x[b * layer.in_dim..(b + 1) * layer.in_dim];
                for o in 0..layer.out_dim {
                    let mut v = dot(layer.row(o), xb) + layer.bias[o];
                    if let Some(f) = format {
                        v = v.round_format(f);
                    }
                    z[b * layer.out_dim + o] = v;
                }
            }
            inputs.push(x);
            pres.push(z.clone());
            if l + 1 < self.layers.len() {
                for v in z.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            x = z;
        }
        Ok((
            x,
            CriticTape {
                batch,
                inputs,
                pre: pres,
            },
        ))
    }

    /// Backward pass from dL/dq. Returns parameter gradients (summed over
    /// the batch) and the gradient with respect to the input rows.
    pub fn backward(&self, tape: &CriticTape<T>, dq: &[T]) -> Result<(CriticGrads<T>, Vec<T>)> {
        if dq.len() != tape.batch {
            return Err(Error::Shape(format!(
                "dq length {} for batch {}",
                dq.len(),
                tape.batch
            )));
        }
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::State("tape does not match this critic".into()));
        }
        let batch = tape.batch;
        let mut grads = CriticGrads {
            weights: self
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weight.len()])
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.bias.len()])
                .collect(),
        };
        let mut dz: Vec<T> = dq.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l + 1 < self.layers.len() {
                // Through the ReLU of layer l.
                let pre = &tape.pre[l];
                for (g, &z) in dz.iter_mut().zip(pre.iter()) {
                    if z <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            let x = &tape.inputs[l];
            let mut dx = vec![T::zero(); batch * layer.in_dim];
            for b in 0..batch {
                let xb = &x[b * layer.in_dim..(b + 1) * layer.in_dim];
                let dxb = &mut dx[b * layer.in_dim..(b + 1) * layer.in_dim];
                for o in 0..layer.out_dim {
                    let g = dz[b * layer.out_dim + o];
                    if g == T::zero() {
                        continue;
                    }
                    grads.biases[l][o] = grads.biases[l][o] + g;
                    let wrow = layer.row(o);
                    let drow = &mut grads.weights[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                    for k in 0..layer.in_dim {
                        drow[k] = drow[k] + g * xb[k];
                        dxb[k] = dxb[k] + g * wrow[k];
                    }
                }
            }
            dz = dx;
        }
        Ok((grads, dz))
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out
    }

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

impl CriticNet<f32> {
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((
                format!("{prefix}.layers.{i}.weight"),
                Tensor::from_f32(vec![l.out_dim, l.in_dim], l.weight.clone(), NumFormat::Fp32)
                    .expect("consistent shapes"),
            ));
            out.push((
                format!("{prefix}.layers.{i}.bias"),
                Tensor::from_f32(vec![l.out_dim], l.bias.clone(), NumFormat::Fp32)
                    .expect("consistent shapes"),
            ));
        }
        out
    }

    pub fn load_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let expected = self.layers.len() * 2;
        if tensors.len() != expected {
            return Err(Error::State(format!(
                "critic checkpoint has {} tensors, expected {expected}",
                tensors.len()
            )));
        }
        let values: Vec<Vec<f32>> = tensors.iter().map(|(_, t)| t.as_f32().to_vec()).collect();
        for (slice, value) in self.param_slices_mut().into_iter().zip(values) {
            if slice.len() != value.len() {
                return Err(Error::State("critic tensor size mismatch".into()));
            }
            slice.copy_from_slice(&value);
        }
        Ok(())
    }

    pub fn param_hash(&self) -> String {
        io::hash_tensors(&self.named_tensors("critic")).expect("f32 parameters always encode")
    }
}
