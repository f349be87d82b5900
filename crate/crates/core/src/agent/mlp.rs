//! Fully connected network with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Activation> {
        match tag {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Layer {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (o, row) in self.weights.chunks_exact(self.inputs).enumerate() {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + self.biases[o]);
        }
    }
}

/// Hidden layers use `activation`; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Pre-activations and activations recorded by a forward pass.
pub struct Trace {
    /// `activations[0]` is the input, `activations[k+1]` the output of layer k.
    pub activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Same shapes as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.biases.iter_mut()).for_each(|x| *x *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }
}

impl Mlp {
    /// Uniform initialisation in ±1/√fan_in for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut l = Layer::zeros(w[0], w[1]);
                for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                    *p = rng.random_range(-bound..=bound);
                }
                l
            })
            .collect();
        Mlp { layers, activation }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Mlp {
        Mlp {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            activation,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.activations.pop().unwrap())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(activations.last().unwrap(), &mut z);
            let a = if k == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(Trace { activations, pre })
    }

    /// Accumulates into `grads` the parameter gradient for an upstream
    /// gradient `d_out` on the network output.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut Gradients) {
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if k != last {
                for (d, &z) in delta.iter_mut().zip(&trace.pre[k]) {
                    *d *= self.activation.derivative(z);
                }
            }
            let input = &trace.activations[k];
            let g = &mut grads.layers[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Plain gradient step `θ ← θ − lr·g`. Rejects non-finite results and
    /// leaves the network untouched in that case.
    pub fn apply(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        let mut next = self.layers.clone();
        for (k, (l, g)) in next.iter_mut().zip(&grads.layers).enumerate() {
            for (p, d) in l
                .weights
                .iter_mut()
                .chain(l.biases.iter_mut())
                .zip(g.weights.iter().chain(&g.biases))
            {
                *p -= lr * d;
                if !p.is_finite() {
                    return Err(Error::NonFinite { layer: k });
                }
            }
        }
        self.layers = next;
        Ok(())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

/// One supervised sample for a Q-network: squared error on a single output.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

pub fn sample_loss(net: &Mlp, s: &Sample) -> Result<f64> {
    let q = net.forward(&s.input)?;
    Ok((s.target - q[s.action]).powi(2))
}

pub fn sample_gradient(net: &Mlp, s: &Sample) -> Result<Gradients> {
    let trace = net.trace(&s.input)?;
    let mut d_out = vec![0.0; net.output_dim()];
    d_out[s.action] = -2.0 * (s.target - trace.output()[s.action]);
    let mut g = Gradients::zeros_like(net);
    net.backward(&trace, &d_out, &mut g);
    Ok(g)
}

/// Max relative deviation between backpropagated and central-difference
/// gradients (step `h`) of the squared error on `sample`.
pub fn gradient_check(net: &Mlp, sample: &Sample, h: f64) -> Result<f64> {
    let analytic = sample_gradient(net, sample)?.flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let count = probe.parameter_count();
    for i in 0..count {
        let original = *probe.params_mut().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = original + h;
        let up = sample_loss(&probe, sample)?;
        *probe.params_mut().nth(i).unwrap() = original - h;
        let down = sample_loss(&probe, sample)?;
        *probe.params_mut().nth(i).unwrap() = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[130, 128, 64, 21], Activation::Relu, &mut rng);
        assert_eq!(net.sizes(), vec![130, 128, 64, 21]);
        assert_eq!(net.forward(&vec![0.1; 130]).unwrap().len(), 21);
        assert!(matches!(net.forward(&[0.0; 5]), Err(Error::Dimension { expected: 130, actual: 5 })));
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[16, 4, 2], Activation::Relu, &mut rng);
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= 0.25));
        assert!(net.layers[1].weights.iter().all(|w| w.abs() <= 0.5));
    }

    #[test]
    fn zero_network_bias_gradients() {
        let net = Mlp::zeros(&[3, 4, 2], Activation::Relu);
        let s = Sample {
            input: vec![0.0; 3],
            action: 1,
            target: 2.0,
        };
        let g = sample_gradient(&net, &s).unwrap();
        assert_eq!(g.layers[1].biases, vec![0.0, -4.0]);
        assert!(gradient_check(&net, &s, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn linear_network_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 2, 2], Activation::Linear, &mut rng);
        let x = [0.5, -1.0, 2.0];
        let s = Sample {
            input: x.to_vec(),
            action: 0,
            target: 1.0,
        };
        let (l1, l2) = (&net.layers[0], &net.layers[1]);
        let h: Vec<f64> = (0..2)
            .map(|o| (0..3).map(|i| l1.weights[o * 3 + i] * x[i]).sum::<f64>() + l1.biases[o])
            .collect();
        let q0 = (l2.weights[0] * h[0] + l2.weights[1] * h[1]) + l2.biases[0];
        let e = -2.0 * (1.0 - q0);
        let g = sample_gradient(&net, &s).unwrap();
        // output layer: only row 0 gets gradient
        assert_eq!(g.layers[1].biases, vec![e, 0.0]);
        assert_eq!(g.layers[1].weights, vec![e * h[0], e * h[1], 0.0, 0.0]);
        for o in 0..2 {
            let d = e * l2.weights[o];
            assert_eq!(g.layers[0].biases[o], d);
            for i in 0..3 {
                assert_eq!(g.layers[0].weights[o * 3 + i], d * x[i]);
            }
        }
    }

    #[test]
    fn apply_rejects_non_finite() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Relu);
        let mut g = Gradients::zeros_like(&net);
        g.layers[0].biases[0] = f64::INFINITY;
        assert!(matches!(net.apply(&g, 1.0), Err(Error::NonFinite { layer: 0 })));
        assert_eq!(net.layers[0].biases[0], 0.0);
    }
}
