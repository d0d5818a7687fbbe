//! Small fully connected networks with ReLU hidden layers, hand-written
//! backpropagation, SGD/Adam updates and a binary checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic     4 bytes  "RANN"
//! version   u32      1
//! n_sizes   u32      number of layer sizes (layers + 1), >= 2
//! sizes     u32 * n_sizes
//! per layer l = 0..n_sizes-1:
//!   weights f64 * sizes[l+1] * sizes[l], row-major (one row per output)
//!   biases  f64 * sizes[l+1]
//! ```

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RngStream;

const MAGIC: &[u8; 4] = b"RANN";
const VERSION: u32 = 1;
const MAX_PARAMS: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Feed-forward net: ReLU on hidden layers, identity on the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Activations recorded by [`DenseNet::forward_trace`]: the input followed by
/// the output of every layer.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|x| *x = 0.0);
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x *= k);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

impl DenseNet {
    /// Uniform initialisation in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(sizes: &[usize], rng: &mut RngStream) -> Self {
        assert!(
            sizes.len() >= 2 && sizes.iter().all(|&s| s > 0),
            "bad layer sizes {sizes:?}"
        );
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                Dense {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect(),
                    biases: (0..outputs).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        DenseNet { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(
            sizes.len() >= 2 && sizes.iter().all(|&s| s > 0),
            "bad layer sizes {sizes:?}"
        );
        DenseNet {
            layers: sizes
                .windows(2)
                .map(|w| Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights: vec![0.0; w[0] * w[1]],
                    biases: vec![0.0; w[1]],
                })
                .collect(),
        }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty());
        for w in layers.windows(2) {
            assert_eq!(w[0].outputs, w[1].inputs, "layer shapes do not chain");
        }
        for l in &layers {
            assert_eq!(l.weights.len(), l.inputs * l.outputs);
            assert_eq!(l.biases.len(), l.outputs);
        }
        DenseNet { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    /// Order-sensitive hash of the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.parameters() {
            h ^= p.to_bits();
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut t = Trace::default();
        self.forward_trace(x, &mut t);
        t.acts.pop().expect("at least one layer")
    }

    /// Forward pass that keeps every activation for [`DenseNet::backward`].
    pub fn forward_trace(&self, x: &[f64], trace: &mut Trace) {
        assert_eq!(
            x.len(),
            self.input_dim(),
            "input has {} features, net expects {}",
            x.len(),
            self.input_dim()
        );
        trace.acts.resize_with(self.layers.len() + 1, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let (before, after) = trace.acts.split_at_mut(li + 1);
            let input = &before[li];
            let out = &mut after[0];
            out.clear();
            out.extend(l.weights.chunks_exact(l.inputs).zip(&l.biases).map(|(row, b)| {
                let z = row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + b;
                if li < last {
                    z.max(0.0)
                } else {
                    z
                }
            }));
        }
    }

    /// Accumulates into `grads` the gradient of `<upstream, output>` with respect
    /// to every parameter and returns the gradient with respect to the input.
    /// ReLU's derivative at 0 is taken as 0.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grads: &mut Gradients) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_dim());
        assert_eq!(trace.acts.len(), self.layers.len() + 1, "trace does not match network");
        let mut delta = upstream.to_vec();
        let mut next = Vec::new();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let input = &trace.acts[li];
            let (gw, gb) = &mut grads.layers[li];
            next.clear();
            next.resize(l.inputs, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * l.inputs;
                let wrow = &l.weights[row..row + l.inputs];
                for ((g, &a), (n, &w)) in gw[row..row + l.inputs]
                    .iter_mut()
                    .zip(input)
                    .zip(next.iter_mut().zip(wrow))
                {
                    *g += d * a;
                    *n += d * w;
                }
            }
            if li > 0 {
                for (n, &a) in next.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *n = 0.0;
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        delta
    }

    pub fn copy_from(&mut self, other: &DenseNet) {
        assert_eq!(self.sizes(), other.sizes(), "shape mismatch");
        self.layers.clone_from(&other.layers);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.sizes();
        let mut out = Vec::with_capacity(12 + 4 * sizes.len() + 8 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for l in &self.layers {
            for x in l.weights.iter().chain(&l.biases) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Err(Error::Checkpoint(m));
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(Error::Checkpoint)? != MAGIC {
            return bad("bad magic".into());
        }
        let version = r.u32().map_err(Error::Checkpoint)?;
        if version != VERSION {
            return bad(format!("unsupported version {version}"));
        }
        let n = r.u32().map_err(Error::Checkpoint)? as usize;
        if !(2..=64).contains(&n) {
            return bad(format!("implausible layer count {n}"));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            let s = r.u32().map_err(Error::Checkpoint)? as usize;
            if s == 0 {
                return bad("zero-width layer".into());
            }
            sizes.push(s);
        }
        let mut params = 0usize;
        for w in sizes.windows(2) {
            params = w[0]
                .checked_mul(w[1])
                .and_then(|x| x.checked_add(w[1]))
                .and_then(|x| x.checked_add(params))
                .filter(|&p| p <= MAX_PARAMS)
                .ok_or_else(|| Error::Checkpoint("parameter count too large".into()))?;
        }
        if bytes.len() - r.pos != params * 8 {
            return bad(format!(
                "expected {} parameter bytes, found {}",
                params * 8,
                bytes.len() - r.pos
            ));
        }
        let mut layers = Vec::with_capacity(n - 1);
        for w in sizes.windows(2) {
            let (inputs, outputs) = (w[0], w[1]);
            let weights = (0..inputs * outputs)
                .map(|_| r.f64())
                .collect::<std::result::Result<_, _>>();
            let biases = (0..outputs).map(|_| r.f64()).collect::<std::result::Result<_, _>>();
            layers.push(Dense {
                inputs,
                outputs,
                weights: weights.map_err(Error::Checkpoint)?,
                biases: biases.map_err(Error::Checkpoint)?,
            });
        }
        Ok(DenseNet { layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Fixed learning rate plus Adam moments when enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Optimizer {
            kind,
            learning_rate,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Descends along `grads`. Non-finite gradients abort without touching `net`.
    pub fn apply_update(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite gradient at optimizer step {}",
                self.step
            )));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (l, (gw, gb)) in net.layers.iter_mut().zip(&grads.layers) {
                    for (p, g) in l.weights.iter_mut().chain(l.biases.iter_mut()).zip(gw.iter().chain(gb)) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let n = net.parameter_count();
                if self.m.len() != n {
                    self.m = vec![0.0; n];
                    self.v = vec![0.0; n];
                }
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let params = net
                    .layers
                    .iter_mut()
                    .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()));
                for (((p, g), m), v) in params.zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }
}
