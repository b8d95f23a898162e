//! Fully-connected networks with batch normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Dense(usize),
    BatchNorm,
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be positive".into()));
        }
        if !layers.iter().any(|l| matches!(l, Layer::Dense(_))) {
            return Err(Error::InvalidParameter("a network needs a dense layer".into()));
        }
        if let Some(Layer::Dense(0)) = layers.iter().find(|l| matches!(l, Layer::Dense(0))) {
            return Err(Error::InvalidParameter("dense width must be positive".into()));
        }
        Ok(MlpSpec { input_dim, layers })
    }

    /// `[Dense(w), BN, ReLU]` per hidden width, then `Dense(output_dim)`.
    pub fn hidden_blocks(input_dim: usize, widths: &[usize], output_dim: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len() * 3 + 1);
        for &w in widths {
            layers.extend([Layer::Dense(w), Layer::BatchNorm, Layer::Relu]);
        }
        layers.push(Layer::Dense(output_dim));
        MlpSpec::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_dim(&self) -> usize {
        self.widths().last().copied().unwrap_or(self.input_dim)
    }

    /// Width after each layer.
    fn widths(&self) -> Vec<usize> {
        let mut width = self.input_dim;
        self.layers
            .iter()
            .map(|l| {
                if let Layer::Dense(w) = l {
                    width = *w;
                }
                width
            })
            .collect()
    }

    /// Every parameter and buffer this network owns, with its shape.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>, ParamRole)> {
        let mut out = Vec::new();
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense(w) => {
                    out.push((format!("dense{i}.weight"), vec![width, w], ParamRole::Trainable));
                    out.push((format!("dense{i}.bias"), vec![w], ParamRole::Trainable));
                    width = w;
                }
                Layer::BatchNorm => {
                    out.push((format!("bn{i}.gamma"), vec![width], ParamRole::Trainable));
                    out.push((format!("bn{i}.beta"), vec![width], ParamRole::Trainable));
                    out.push((format!("bn{i}.running_mean"), vec![width], ParamRole::Buffer));
                    out.push((format!("bn{i}.running_var"), vec![width], ParamRole::Buffer));
                }
                Layer::Relu | Layer::Tanh => {}
            }
        }
        out
    }

    /// Glorot-uniform dense weights, zero biases, identity batch norm.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let mut params = ParamSet::default();
        for (name, shape, role) in self.param_shapes() {
            let t = if name.ends_with(".weight") {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let n = shape[0] * shape[1];
                let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
                Tensor::from_parts(shape, data)
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor::ones(&shape)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t, role);
        }
        params
    }
}

/// The named network shapes used for the synthetic datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Three 1024-wide blocks in the generator, two in the discriminator.
    #[serde(rename = "main")]
    Main,
    /// One 64-wide block in each network.
    #[serde(rename = "simple-ring")]
    SimpleRing,
    /// One 1024-wide block in each network.
    #[serde(rename = "simple-grid")]
    SimpleGrid,
    /// Two 32-wide blocks in each network.
    #[serde(rename = "simple-smile")]
    SimpleSmile,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Main,
        Architecture::SimpleRing,
        Architecture::SimpleGrid,
        Architecture::SimpleSmile,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Main => "main",
            Architecture::SimpleRing => "simple-ring",
            Architecture::SimpleGrid => "simple-grid",
            Architecture::SimpleSmile => "simple-smile",
        }
    }

    fn widths(self) -> (&'static [usize], &'static [usize]) {
        match self {
            Architecture::Main => (&[1024, 1024, 1024], &[1024, 1024]),
            Architecture::SimpleRing => (&[64], &[64]),
            Architecture::SimpleGrid => (&[1024], &[1024]),
            Architecture::SimpleSmile => (&[32, 32], &[32, 32]),
        }
    }

    pub fn generator(self, noise_dim: usize, data_dim: usize) -> Result<MlpSpec> {
        MlpSpec::hidden_blocks(noise_dim, self.widths().0, data_dim)
    }

    /// The discriminator trunk with an `output_dim`-wide head: the noise
    /// dimension for kernel losses, 1 for a scalar critic.
    pub fn discriminator(self, data_dim: usize, output_dim: usize) -> Result<MlpSpec> {
        MlpSpec::hidden_blocks(data_dim, self.widths().1, output_dim)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    /// Updated by the optimizer.
    Trainable,
    /// Updated as a side effect of the forward pass (batch-norm statistics).
    Buffer,
}

/// Named tensors owned by one network (or by the kernel logits).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    trainable: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, role: ParamRole) {
        match role {
            ParamRole::Trainable => self.trainable.insert(name.into(), value),
            ParamRole::Buffer => self.buffers.insert(name.into(), value),
        };
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.trainable.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match self.trainable.get_mut(name) {
            Some(t) => Some(t),
            None => self.buffers.get_mut(name),
        }
    }

    pub fn trainable(&self) -> &BTreeMap<String, Tensor> {
        &self.trainable
    }

    pub fn trainable_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.trainable
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    /// Every entry, trainable first, each group in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor, ParamRole)> {
        self.trainable
            .iter()
            .map(|(k, v)| (k, v, ParamRole::Trainable))
            .chain(self.buffers.iter().map(|(k, v)| (k, v, ParamRole::Buffer)))
    }

    /// Checks that this set holds exactly the entries `spec` expects.
    pub fn check_against(&self, spec: &MlpSpec) -> Result<()> {
        let expected = spec.param_shapes();
        let count = self.trainable.len() + self.buffers.len();
        if count != expected.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {count}",
                expected.len()
            )));
        }
        for (name, shape, _) in expected {
            match self.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Shape(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Shape(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    /// Folds batch statistics into the running estimates:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], momentum: f64) {
        for s in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let name = format!("bn{}.{suffix}", s.layer);
                if let Some(running) = self.buffers.get_mut(&name) {
                    for (r, b) in running.data_mut().iter_mut().zip(batch) {
                        *r = momentum * *r + (1.0 - momentum) * b;
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Batch norm uses batch statistics.
    Train,
    /// Batch norm uses running statistics.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    /// Added to the variance before the square root.
    pub eps: f64,
    /// Weight of the old running value in each update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.99,
        }
    }
}

/// Per-feature batch mean and (biased) variance seen by one BN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Anything that maps a batch node to an output node on a tape.
pub trait Network {
    fn forward(&mut self, tape: &mut Tape, input: Var) -> Result<Var>;
}

impl<F> Network for F
where
    F: FnMut(&mut Tape, Var) -> Result<Var>,
{
    fn forward(&mut self, tape: &mut Tape, input: Var) -> Result<Var> {
        self(tape, input)
    }
}

/// An MLP whose trainable parameters live on a tape as named variables.
pub struct BoundMlp<'a> {
    spec: &'a MlpSpec,
    params: &'a ParamSet,
    vars: BTreeMap<String, Var>,
    phase: Phase,
    bn: BatchNormConfig,
    stats: Vec<Vec<BatchStats>>,
}

impl<'a> BoundMlp<'a> {
    /// Registers every trainable tensor as a variable named `prefix/name`.
    pub fn new(
        tape: &mut Tape,
        spec: &'a MlpSpec,
        params: &'a ParamSet,
        prefix: &str,
        phase: Phase,
        bn: BatchNormConfig,
    ) -> Result<Self> {
        params.check_against(spec)?;
        let vars = params
            .trainable()
            .iter()
            .map(|(name, t)| (name.clone(), tape.variable(format!("{prefix}/{name}"), t.clone())))
            .collect();
        Ok(BoundMlp {
            spec,
            params,
            vars,
            phase,
            bn,
            stats: Vec::new(),
        })
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Parameter names and nodes in name order.
    pub fn vars(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(k, v)| (k, *v))
    }

    pub fn var_list(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }

    /// Batch statistics recorded by the `call`-th train-phase forward pass.
    pub fn batch_stats(&self, call: usize) -> Option<&[BatchStats]> {
        self.stats.get(call).map(Vec::as_slice)
    }

    fn forward_impl(&mut self, tape: &mut Tape, input: Var) -> Result<Var> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 2 || shape[1] != self.spec.input_dim() || shape[0] == 0 {
            return Err(Error::Shape(format!(
                "network expects a non-empty [B, {}] batch, got {shape:?}",
                self.spec.input_dim()
            )));
        }
        let batch = shape[0];
        if self.phase == Phase::Train && batch < 2 && self.has_batch_norm() {
            return Err(Error::InvalidParameter(format!(
                "train-phase batch norm needs at least 2 rows, got {batch}"
            )));
        }
        let mut stats = Vec::new();
        let mut h = input;
        for (i, layer) in self.spec.layers().iter().enumerate() {
            h = match layer {
                Layer::Dense(_) => {
                    let w = self.vars[&format!("dense{i}.weight")];
                    let b = self.vars[&format!("dense{i}.bias")];
                    let hw = tape.matmul(h, w)?;
                    tape.add(hw, b)?
                }
                Layer::BatchNorm => {
                    let gamma = self.vars[&format!("bn{i}.gamma")];
                    let beta = self.vars[&format!("bn{i}.beta")];
                    let normalized = match self.phase {
                        Phase::Train => {
                            let mean = tape.mean_rows(h)?;
                            let centered = tape.sub(h, mean)?;
                            let sq = tape.square(centered)?;
                            let var = tape.mean_rows(sq)?;
                            stats.push(BatchStats {
                                layer: i,
                                mean: tape.value(mean).data().to_vec(),
                                var: tape.value(var).data().to_vec(),
                            });
                            let var = tape.shift(var, self.bn.eps)?;
                            let std = tape.sqrt(var)?;
                            tape.div(centered, std)?
                        }
                        Phase::Eval => {
                            let mean = self.params.get(&format!("bn{i}.running_mean")).unwrap();
                            let var = self.params.get(&format!("bn{i}.running_var")).unwrap();
                            let std = var.map(|v| (v + self.bn.eps).sqrt());
                            let mean = tape.constant(mean.clone());
                            let std = tape.constant(std);
                            let centered = tape.sub(h, mean)?;
                            tape.div(centered, std)?
                        }
                    };
                    let scaled = tape.mul(normalized, gamma)?;
                    tape.add(scaled, beta)?
                }
                Layer::Relu => tape.relu(h)?,
                Layer::Tanh => tape.tanh(h)?,
            };
        }
        if self.phase == Phase::Train {
            self.stats.push(stats);
        }
        Ok(h)
    }

    fn has_batch_norm(&self) -> bool {
        self.spec.layers().contains(&Layer::BatchNorm)
    }
}

impl Network for BoundMlp<'_> {
    fn forward(&mut self, tape: &mut Tape, input: Var) -> Result<Var> {
        self.forward_impl(tape, input)
    }
}

/// Runs `spec` in eval phase on a plain tensor.
pub fn predict(spec: &MlpSpec, params: &ParamSet, bn: BatchNormConfig, input: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut net = BoundMlp::new(&mut tape, spec, params, "net", Phase::Eval, bn)?;
    let x = tape.constant(input.clone());
    let y = net.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn init_respects_bounds_and_identity_batch_norm() {
        let spec = MlpSpec::hidden_blocks(2, &[1024], 2).unwrap();
        let params = spec.init_params(&mut stream(1, Stream::Init));
        let limit = (6.0f64 / 1026.0).sqrt();
        let w = params.get("dense0.weight").unwrap();
        assert_eq!(w.shape(), &[2, 1024]);
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        // not degenerate: the spread should use most of the interval
        assert!(w.data().iter().any(|v| v.abs() > 0.9 * limit));
        assert!(params.get("dense0.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(params.get("bn1.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(params.get("bn1.beta").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(params.get("bn1.running_mean").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(params.get("bn1.running_var").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_seed_same_params() {
        let spec = Architecture::SimpleSmile.generator(2, 2).unwrap();
        let a = spec.init_params(&mut stream(9, Stream::Init));
        let b = spec.init_params(&mut stream(9, Stream::Init));
        assert_eq!(a, b);
        let c = spec.init_params(&mut stream(10, Stream::Init));
        assert_ne!(a, c);
    }

    #[test]
    fn architecture_shapes() {
        let g = Architecture::Main.generator(2, 2).unwrap();
        assert_eq!(g.layers().iter().filter(|l| **l == Layer::BatchNorm).count(), 3);
        assert_eq!(g.output_dim(), 2);
        let d = Architecture::Main.discriminator(2, 2).unwrap();
        assert_eq!(d.layers().iter().filter(|l| **l == Layer::BatchNorm).count(), 2);
        let ring = Architecture::SimpleRing.generator(2, 2).unwrap();
        assert_eq!(ring.layers()[0], Layer::Dense(64));
        let grid = Architecture::SimpleGrid.discriminator(2, 1).unwrap();
        assert_eq!(grid.layers()[0], Layer::Dense(1024));
        assert_eq!(grid.output_dim(), 1);
        let smile = Architecture::SimpleSmile.generator(2, 2).unwrap();
        assert_eq!(smile.layers()[3], Layer::Dense(32));
        assert_eq!("simple-grid".parse::<Architecture>().unwrap(), Architecture::SimpleGrid);
        assert!("huge".parse::<Architecture>().is_err());
    }

    #[test]
    fn single_dense_layer_is_a_matrix_product() {
        let spec = MlpSpec::new(2, vec![Layer::Dense(2)]).unwrap();
        let mut params = ParamSet::default();
        params.insert(
            "dense0.weight",
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            ParamRole::Trainable,
        );
        params.insert("dense0.bias", Tensor::vector(vec![0.5, -0.5]), ParamRole::Trainable);
        let out = predict(&spec, &params, BatchNormConfig::default(), &Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1.5, -0.5]);
    }

    #[test]
    fn constant_batch_normalizes_to_beta() {
        let spec = MlpSpec::new(2, vec![Layer::Dense(3), Layer::BatchNorm]).unwrap();
        let mut params = spec.init_params(&mut stream(2, Stream::Init));
        let beta = Tensor::vector(vec![0.25, -1.0, 3.0]);
        *params.get_mut("bn1.beta").unwrap() = beta.clone();
        let mut tape = Tape::new();
        let mut net = BoundMlp::new(&mut tape, &spec, &params, "n", Phase::Train, BatchNormConfig::default()).unwrap();
        let x = tape.constant(Tensor::matrix(4, 2, vec![0.3, -0.7, 0.3, -0.7, 0.3, -0.7, 0.3, -0.7]).unwrap());
        let y = net.forward(&mut tape, x).unwrap();
        for i in 0..4 {
            assert_eq!(tape.value(y).row(i), beta.data());
        }
    }

    #[test]
    fn train_phase_rejects_single_row() {
        let spec = Architecture::SimpleRing.generator(2, 2).unwrap();
        let params = spec.init_params(&mut stream(2, Stream::Init));
        let mut tape = Tape::new();
        let mut net = BoundMlp::new(&mut tape, &spec, &params, "n", Phase::Train, BatchNormConfig::default()).unwrap();
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap());
        assert!(net.forward(&mut tape, x).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let spec = MlpSpec::new(1, vec![Layer::Dense(1), Layer::BatchNorm]).unwrap();
        let mut params = spec.init_params(&mut stream(2, Stream::Init));
        let stats = [BatchStats { layer: 1, mean: vec![2.0], var: vec![3.0] }];
        params.update_running_stats(&stats, 0.99);
        assert!((params.get("bn1.running_mean").unwrap().data()[0] - 0.02).abs() < 1e-15);
        assert!((params.get("bn1.running_var").unwrap().data()[0] - 1.02).abs() < 1e-15);
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let ring = Architecture::SimpleRing.generator(2, 2).unwrap();
        let grid = Architecture::SimpleGrid.generator(2, 2).unwrap();
        let params = ring.init_params(&mut stream(2, Stream::Init));
        assert!(params.check_against(&ring).is_ok());
        assert!(params.check_against(&grid).is_err());
    }
}
