//! Feedforward ReLU networks.
//!
//! Layers alternate strictly between dense linear maps and ReLU, starting
//! and ending with a linear layer. Layer indices follow the usual
//! convention: `x_0` is the input and `x_i` the output of the `i`-th layer,
//! so a network with dims `[n_0, n_1, n_2]` has three layers
//! (linear, ReLU, linear).

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Affine layer `x ↦ W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `n_out × n_in`.
    pub weight: Tensor,
    /// `n_out`.
    pub bias: Tensor,
}

impl Linear {
    /// Checks that `weight` is a matrix and `bias` a vector of matching length.
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.rows()] {
            return Err(Error::Network(format!(
                "weight {:?} and bias {:?} do not form a linear layer",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    /// Input width.
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Output width.
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// One layer of a network.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Affine layer.
    Linear(Linear),
    /// Elementwise ReLU.
    Relu,
}

/// Feedforward ReLU network: affine layers separated by ReLUs, ending in an affine layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Robustness property for label `y`: rows `c_{y'} = e_{y'} − e_y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specification {
    /// True class.
    pub label: usize,
    /// Number of classes.
    pub classes: usize,
}

impl Specification {
    /// Specification for true label `label` out of `classes`.
    pub fn new(label: usize, classes: usize) -> Result<Self> {
        if label >= classes || classes < 2 {
            return Err(Error::Invalid(format!(
                "label {label} invalid for {classes} classes"
            )));
        }
        Ok(Self { label, classes })
    }

    /// The competing classes `y' ≠ y`, in increasing order.
    pub fn others(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes).filter(move |&c| c != self.label)
    }

    /// `(classes − 1) × classes` comparison matrix.
    pub fn matrix(&self) -> Tensor {
        let n = self.classes;
        let mut data = Vec::with_capacity((n - 1) * n);
        for other in self.others() {
            for c in 0..n {
                data.push(if c == other {
                    1.0
                } else if c == self.label {
                    -1.0
                } else {
                    0.0
                });
            }
        }
        Tensor::matrix(n - 1, n, data).expect("shape matches data")
    }
}

impl Network {
    /// Checks that layers alternate, start and end with an affine layer and chain in width.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    /// Interleaves ReLU layers between the given linear layers.
    pub fn from_linear(linear: Vec<Linear>) -> Result<Self> {
        let mut layers = Vec::with_capacity(linear.len() * 2);
        for (k, l) in linear.into_iter().enumerate() {
            if k > 0 {
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Linear(l));
        }
        Self::new(layers)
    }

    /// Random network with uniform `±1/√fan_in` weights and zero biases.
    pub fn build(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Network(format!(
                "need at least input and output widths, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Network(format!("zero width in {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let linear = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..=bound))
                    .collect();
                Linear::new(
                    Tensor::matrix(fan_out, fan_in, data)?,
                    Tensor::zeros(&[fan_out]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_linear(linear)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Network("no layers".into()));
        }
        let mut prev_out: Option<usize> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let expect_linear = i % 2 == 0;
            match (layer, expect_linear) {
                (Layer::Linear(l), true) => {
                    if let Some(p) = prev_out {
                        if p != l.in_dim() {
                            return Err(Error::Network(format!(
                                "layer {} expects width {} but receives {p}",
                                i + 1,
                                l.in_dim()
                            )));
                        }
                    }
                    if l.out_dim() == 0 || l.in_dim() == 0 {
                        return Err(Error::Network(format!("layer {} has zero width", i + 1)));
                    }
                    if !l.weight.all_finite() || !l.bias.all_finite() {
                        return Err(Error::Network(format!(
                            "layer {} has non-finite parameters",
                            i + 1
                        )));
                    }
                    prev_out = Some(l.out_dim());
                }
                (Layer::Relu, false) => {}
                _ => {
                    return Err(Error::Network(format!(
                        "layer {} breaks linear/ReLU alternation",
                        i + 1
                    )))
                }
            }
        }
        if matches!(self.layers.last(), Some(Layer::Relu)) {
            return Err(Error::Network("last layer must be linear".into()));
        }
        Ok(())
    }

    /// All layers, in order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of layers `L`, counting ReLU layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Affine layers, in order.
    pub fn linear_layers(&self) -> impl Iterator<Item = &Linear> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Linear(l) => Some(l),
            Layer::Relu => None,
        })
    }

    /// Mutable affine layers, in order.
    pub fn linear_layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Linear(l) => Some(l),
            Layer::Relu => None,
        })
    }

    /// The first affine layer.
    pub fn first_linear(&self) -> &Linear {
        self.linear_layers().next().expect("validated network")
    }

    /// Mutable first affine layer.
    pub fn first_linear_mut(&mut self) -> &mut Linear {
        self.linear_layers_mut().next().expect("validated network")
    }

    /// Widths `n_0, n_1, …` of the linear layers' inputs and the output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.linear_layers().map(Linear::out_dim));
        dims
    }

    /// Width of every layer output, `x_0` through `x_L`.
    pub fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        for layer in &self.layers {
            let prev = *w.last().unwrap();
            w.push(match layer {
                Layer::Linear(l) => l.out_dim(),
                Layer::Relu => prev,
            });
        }
        w
    }

    /// Input width.
    pub fn input_dim(&self) -> usize {
        self.first_linear().in_dim()
    }

    /// Output width.
    pub fn output_dim(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Linear(l)) => l.out_dim(),
            _ => unreachable!("validated network ends with a linear layer"),
        }
    }

    /// Total number of weights and biases.
    pub fn num_params(&self) -> usize {
        self.linear_layers()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter vector θ: per linear layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.linear_layers() {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Overwrites all parameters from `theta`, in [`Network::params`] order.
    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::Invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        let mut off = 0;
        for l in self.linear_layers_mut() {
            let nw = l.weight.len();
            l.weight.data_mut().copy_from_slice(&theta[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.data_mut().copy_from_slice(&theta[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Invalid(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Concrete forward pass; returns the logits.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.pop().unwrap())
    }

    /// Every layer output `x_0, …, x_L`.
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut acts = vec![x.to_vec()];
        for layer in &self.layers {
            let prev = acts.last().unwrap();
            let next = match layer {
                Layer::Linear(l) => {
                    let mut out = l.weight.matvec(&Tensor::vector(prev.clone()))?.into_data();
                    for (o, b) in out.iter_mut().zip(l.bias.data()) {
                        *o += b;
                    }
                    out
                }
                Layer::Relu => prev.iter().map(|&v| v.max(0.0)).collect(),
            };
            acts.push(next);
        }
        Ok(acts)
    }

    /// Parameters as tape leaves (or untracked values when `tape` is `None`).
    pub fn vars(&self, tape: Option<&Tape>) -> NetVars {
        let mk = |t: &Tensor| match tape {
            Some(tape) => tape.leaf(t.clone()),
            None => Var::constant(t.clone()),
        };
        NetVars {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Linear(l) => LayerVars::Linear {
                        weight: mk(&l.weight),
                        bias: mk(&l.bias),
                    },
                    Layer::Relu => LayerVars::Relu,
                })
                .collect(),
        }
    }

    /// Merges the specification rows into the last linear layer, giving a
    /// network whose outputs are `c_{y'}ᵀ h(x)` for every `y' ≠ y`.
    pub fn elide(&self, spec: &Specification) -> Result<Network> {
        if spec.classes != self.output_dim() {
            return Err(Error::Invalid(format!(
                "specification over {} classes for a network with {} outputs",
                spec.classes,
                self.output_dim()
            )));
        }
        let mut layers = self.layers.clone();
        let Some(Layer::Linear(last)) = layers.last_mut() else {
            unreachable!("validated network ends with a linear layer")
        };
        let c = spec.matrix();
        let weight = c.matmul(&last.weight)?;
        let bias = c.matvec(&last.bias)?;
        *last = Linear::new(weight, bias)?;
        Network::new(layers)
    }

    /// Text serialization (`certlab-net v1`).
    pub fn to_text(&self) -> String {
        let mut s = String::from("certlab-net v1\ndims:");
        for d in self.dims() {
            write!(s, " {d}").unwrap();
        }
        s.push('\n');
        for l in self.linear_layers() {
            writeln!(s, "linear {} {}", l.out_dim(), l.in_dim()).unwrap();
            for r in 0..l.out_dim() {
                let row: Vec<String> = l.weight.row(r).iter().map(|v| format!("{v:?}")).collect();
                s.push_str(&row.join(" "));
                s.push('\n');
            }
            s.push_str("bias\n");
            let row: Vec<String> = l.bias.data().iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    /// Parses the text serialization; errors carry the byte offset.
    pub fn from_text(text: &str) -> Result<Network> {
        Parser::new(text).network()
    }

    /// Writes the text serialization to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads a network saved with [`Network::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Network parameters as [`Var`]s, ready for recording on a tape.
#[derive(Clone, Debug)]
pub struct NetVars {
    /// Layers, in order.
    pub layers: Vec<LayerVars>,
}

/// One layer of [`NetVars`].
#[derive(Clone, Debug)]
pub enum LayerVars {
    /// Affine layer.
    Linear {
        /// Weight matrix.
        weight: Var,
        /// Bias vector.
        bias: Var,
    },
    /// Elementwise ReLU.
    Relu,
}

impl NetVars {
    /// Output for input `x`.
    pub fn forward(&self, x: &Var) -> crate::tensor::Result<Var> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                LayerVars::Linear { weight, bias } => weight.matvec(&cur)?.add(bias)?,
                LayerVars::Relu => cur.relu(),
            };
        }
        Ok(cur)
    }

    /// Parameter leaves in θ order (weight, bias per linear layer).
    pub fn params(&self) -> Vec<&Var> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerVars::Linear { weight, bias } => Some([weight, bias]),
                LayerVars::Relu => None,
            })
            .flatten()
            .collect()
    }

    /// Weight matrix of the first affine layer.
    pub fn first_weight(&self) -> &Var {
        match &self.layers[0] {
            LayerVars::Linear { weight, .. } => weight,
            LayerVars::Relu => unreachable!("first layer is linear"),
        }
    }

    /// Merges specification rows into the last layer, as [`Network::elide`].
    pub fn elide(&self, spec: &Specification) -> crate::tensor::Result<NetVars> {
        let mut layers = self.layers.clone();
        if let Some(LayerVars::Linear { weight, bias }) = layers.last_mut() {
            let c = Var::constant(spec.matrix());
            *weight = c.matmul(weight)?;
            *bias = c.matvec(bias)?;
        }
        Ok(NetVars { layers })
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn err<T>(&self, offset: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset,
            msg: msg.into(),
        })
    }

    /// Next non-empty line, with its starting byte offset.
    fn line(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.text.len() {
            let start = self.pos;
            let rest = &self.text[start..];
            let end = rest.find('\n').map_or(rest.len(), |i| i + 1);
            self.pos += end;
            let line = rest[..end].trim_end_matches(['\n', '\r']);
            if !line.trim().is_empty() {
                return Some((start, line));
            }
        }
        None
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.line() {
            Some(l) => Ok(l),
            None => self.err(self.text.len(), format!("unexpected end of file, expected {what}")),
        }
    }

    /// Parses whitespace-separated numbers from `line`, a slice of the text.
    fn numbers<T: std::str::FromStr>(&self, line: &str) -> Result<Vec<T>> {
        let mut out = Vec::new();
        for tok in line.split_whitespace() {
            let at = tok.as_ptr() as usize - self.text.as_ptr() as usize;
            match tok.parse::<T>() {
                Ok(v) => out.push(v),
                Err(_) => return self.err(at, format!("cannot parse number {tok:?}")),
            }
        }
        Ok(out)
    }

    fn network(&mut self) -> Result<Network> {
        let (off, header) = self.expect_line("header")?;
        if header.trim() != "certlab-net v1" {
            return self.err(off, format!("bad header {header:?}"));
        }
        let (off, dims_line) = self.expect_line("dims line")?;
        let Some(rest) = dims_line.trim_start().strip_prefix("dims:") else {
            return self.err(off, "expected `dims:`");
        };
        let dims: Vec<usize> = self.numbers(rest)?;
        if dims.len() < 2 {
            return self.err(off, "need at least two widths");
        }
        let mut linear = Vec::new();
        let mut last_was_relu = true;
        while let Some((off, line)) = self.line() {
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("relu") => {
                    if last_was_relu {
                        return self.err(off, "ReLU layers must alternate with linear layers");
                    }
                    last_was_relu = true;
                }
                Some("linear") => {
                    let shape: Vec<usize> =
                        self.numbers(line.trim_start().trim_start_matches("linear"))?;
                    if shape.len() != 2 {
                        return self.err(off, "expected `linear <rows> <cols>`");
                    }
                    let (rows, cols) = (shape[0], shape[1]);
                    let k = linear.len();
                    if k + 1 >= dims.len() || dims[k] != cols || dims[k + 1] != rows {
                        return self.err(
                            off,
                            format!("linear {rows}x{cols} does not match dims {dims:?} at layer {k}"),
                        );
                    }
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (roff, row) = self.expect_line("weight row")?;
                        let vals: Vec<f64> = self.numbers(row)?;
                        if vals.len() != cols {
                            return self.err(roff, format!("expected {cols} values, got {}", vals.len()));
                        }
                        data.extend(vals);
                    }
                    let (boff, bias_kw) = self.expect_line("bias")?;
                    if bias_kw.trim() != "bias" {
                        return self.err(boff, "expected `bias`");
                    }
                    let (voff, brow) = self.expect_line("bias values")?;
                    let bias: Vec<f64> = self.numbers(brow)?;
                    if bias.len() != rows {
                        return self.err(voff, format!("expected {rows} bias values, got {}", bias.len()));
                    }
                    linear.push(Linear::new(
                        Tensor::matrix(rows, cols, data)?,
                        Tensor::vector(bias),
                    )?);
                    last_was_relu = false;
                }
                Some(other) => return self.err(off, format!("unknown layer kind {other:?}")),
                None => unreachable!("blank lines are skipped"),
            }
        }
        if last_was_relu && !linear.is_empty() {
            return self.err(self.text.len(), "network ends with a ReLU layer");
        }
        if linear.len() + 1 != dims.len() {
            return self.err(
                self.text.len(),
                format!("dims promise {} linear layers, found {}", dims.len() - 1, linear.len()),
            );
        }
        Network::from_linear(linear)
    }
}
