use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng::{Domain, SeedStream};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    ReLU,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::ReLU => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::ReLU),
            _ => None,
        }
    }
}

/// Which activation each layer gets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActivationPlan {
    /// ReLU after every layer, including the last.
    AllRelu,
    /// ReLU on hidden layers, identity on the output layer.
    HiddenRelu,
    /// One entry per layer.
    Explicit(Vec<Activation>),
}

impl ActivationPlan {
    fn resolve(&self, layers: usize) -> Result<Vec<Activation>> {
        Ok(match self {
            ActivationPlan::AllRelu => vec![Activation::ReLU; layers],
            ActivationPlan::HiddenRelu => {
                let mut v = vec![Activation::ReLU; layers];
                v[layers - 1] = Activation::Identity;
                v
            }
            ActivationPlan::Explicit(v) => {
                if v.len() != layers {
                    return Err(Error::InvalidDimension(format!("{} activations for {layers} layers", v.len())));
                }
                v.clone()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in x out`.
    pub weights: Matrix<T>,
    /// `1 x out`.
    pub bias: Matrix<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacPass {
    Forward,
    ForwardBackward,
}

/// Multiply-accumulate weight of a backward pass relative to the forward
/// pass: one product for the weight gradient, one for the input gradient.
pub const BACKWARD_MAC_FACTOR: u64 = 3;

/// Intermediate values recorded by [`Mlp::forward`], consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub input: Matrix<T>,
    pub pre: Vec<Matrix<T>>,
    pub post: Vec<Matrix<T>>,
    /// Inverted-dropout masks (already scaled), hidden layers only.
    pub masks: Vec<Option<Matrix<T>>>,
}

impl<T> ForwardTrace<T> {
    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Matrix<T>,
    pub bias: Matrix<T>,
}

/// Parameter gradients, one entry per layer; empty when the model is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub params: Gradients<T>,
    pub input_grad: Matrix<T>,
}

/// Feedforward stack of dense layers.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
    frozen: bool,
    dropout_rate: f64,
    init_seed: u64,
    dropout_stream: SeedStream,
}

impl<T: Scalar> Mlp<T> {
    /// Glorot-uniform weights from a stream keyed by `seed`, zero biases.
    pub fn init(dims: &[usize], plan: &ActivationPlan, dropout_rate: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidDimension(format!("need at least two layer widths, got {}", dims.len())));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidDimension(format!("width at position {pos} is zero")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidDimension(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let acts = plan.resolve(dims.len() - 1)?;
        let mut stream = SeedStream::from_key(seed);
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(w, activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| T::from_wire(stream.symmetric(bound))).collect();
                Dense {
                    weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: Matrix::zeros(1, fan_out),
                    activation,
                }
            })
            .collect();
        Ok(Self::assemble(layers, false, dropout_rate, seed))
    }

    /// Builds a model from explicit layers. Adjacent widths must chain.
    pub fn from_layers(layers: Vec<Dense<T>>, dropout_rate: f64, seed: u64) -> Result<Self> {
        validate_layers(&layers)?;
        Ok(Self::assemble(layers, false, dropout_rate, seed))
    }

    fn assemble(layers: Vec<Dense<T>>, frozen: bool, dropout_rate: f64, seed: u64) -> Self {
        Self {
            layers,
            frozen,
            dropout_rate,
            init_seed: seed,
            dropout_stream: SeedStream::new(seed, Domain::Dropout, 0),
        }
    }

    pub(crate) fn restore(layers: Vec<Dense<T>>, frozen: bool, dropout_rate: f64) -> Result<Self> {
        validate_layers(&layers)?;
        Ok(Self::assemble(layers, frozen, dropout_rate, 0))
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(Dense::out_dim));
        d
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn forward(&mut self, input: &Matrix<T>, pass: Pass) -> Result<(Matrix<T>, ForwardTrace<T>)> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let dropout = pass == Pass::Train && self.dropout_rate > 0.0;
        let keep_scale: T = lit(1.0 / (1.0 - self.dropout_rate));
        let mut trace = ForwardTrace {
            input: input.clone(),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &trace.post[i - 1] };
            let pre = affine(layer, x)?;
            let mut post = activate(layer.activation, &pre);
            let mask = if dropout && i < last {
                let rate = self.dropout_rate;
                let stream = &mut self.dropout_stream;
                let data = (0..post.rows() * post.cols())
                    .map(|_| if stream.uniform01() < rate { T::zero() } else { keep_scale })
                    .collect();
                let mask = Matrix::from_vec(post.rows(), post.cols(), data)?;
                post.hadamard_in_place(&mask);
                Some(mask)
            } else {
                None
            };
            trace.pre.push(pre);
            trace.post.push(post);
            trace.masks.push(mask);
        }
        let out = trace.post[last].clone();
        Ok((out, trace))
    }

    /// Eval-mode forward without a trace. Never touches the dropout stream.
    pub fn predict(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = activate(layer.activation, &affine(layer, &x)?);
        }
        Ok(x)
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!("batch has {} columns, model expects {}", input.cols(), self.in_dim())));
        }
        Ok(())
    }

    pub fn backward(&self, trace: &ForwardTrace<T>, upstream: &Matrix<T>) -> Result<Backward<T>> {
        let n = self.layers.len();
        if trace.layer_count() != n || trace.post.len() != n || trace.masks.len() != n {
            return Err(Error::Trace(format!("trace has {} layers, model has {n}", trace.layer_count())));
        }
        for (i, (layer, pre)) in self.layers.iter().zip(&trace.pre).enumerate() {
            if pre.cols() != layer.out_dim() || pre.rows() != trace.input.rows() {
                return Err(Error::Trace(format!("layer {i} pre-activation has shape {:?}", pre.shape())));
            }
        }
        if trace.input.cols() != self.in_dim() {
            return Err(Error::Trace("trace input width differs from model".into()));
        }
        if upstream.shape() != trace.post[n - 1].shape() {
            return Err(Error::Shape(format!(
                "upstream {:?} does not match output {:?}",
                upstream.shape(),
                trace.post[n - 1].shape()
            )));
        }

        let mut grads = Vec::with_capacity(if self.frozen { 0 } else { n });
        let mut g = upstream.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            if let Some(mask) = &trace.masks[i] {
                g.hadamard_in_place(mask);
            }
            if layer.activation == Activation::ReLU {
                for (gv, &p) in g.data_mut().iter_mut().zip(trace.pre[i].data()) {
                    if p <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
            let x = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            if !self.frozen {
                grads.push(LayerGrads { weights: x.t_matmul(&g)?, bias: g.column_sums() });
            }
            g = g.matmul_t(&layer.weights)?;
        }
        grads.reverse();
        Ok(Backward { params: Gradients { layers: grads }, input_grad: g })
    }

    /// `p <- p - lr * g` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} gradient layers for {} model layers",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if g.weights.shape() != layer.weights.shape() || g.bias.shape() != layer.bias.shape() {
                return Err(Error::Shape("gradient shape differs from parameter".into()));
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, &d) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *p -= lr * d;
            }
            for (p, &d) in layer.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *p -= lr * d;
            }
        }
        Ok(())
    }

    /// Multiply-accumulate count for `rows` samples.
    pub fn mac_count(&self, rows: usize, pass: MacPass) -> u64 {
        let per_row: u64 = self.layers.iter().map(|l| (l.in_dim() * l.out_dim()) as u64).sum();
        let forward = rows as u64 * per_row;
        match pass {
            MacPass::Forward => forward,
            MacPass::ForwardBackward => BACKWARD_MAC_FACTOR * forward,
        }
    }

    /// Parameters, frozen flag and dropout rate compare bit-for-bit.
    /// The dropout stream position is runtime state and is not compared.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.frozen == other.frozen
            && self.dropout_rate.to_bits() == other.dropout_rate.to_bits()
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.activation == b.activation && a.weights.bit_eq(&b.weights) && a.bias.bit_eq(&b.bias))
    }

    /// Largest absolute parameter difference; `None` if architectures differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.dims() != other.dims() {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            worst = worst.max(a.weights.max_abs_diff(&b.weights)?);
            worst = worst.max(a.bias.max_abs_diff(&b.bias)?);
        }
        Some(worst)
    }

    pub fn parameters_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.bias.is_finite())
    }
}

fn validate_layers<T: Scalar>(layers: &[Dense<T>]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidDimension("model has no layers".into()));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.in_dim() == 0 || l.out_dim() == 0 {
            return Err(Error::InvalidDimension(format!("layer {i} has a zero width")));
        }
        if l.bias.shape() != (1, l.out_dim()) {
            return Err(Error::InvalidDimension(format!("layer {i} bias has shape {:?}", l.bias.shape())));
        }
    }
    for (i, w) in layers.windows(2).enumerate() {
        if w[0].out_dim() != w[1].in_dim() {
            return Err(Error::InvalidDimension(format!(
                "layer {i} outputs {} but layer {} expects {}",
                w[0].out_dim(),
                i + 1,
                w[1].in_dim()
            )));
        }
    }
    Ok(())
}

fn affine<T: Scalar>(layer: &Dense<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    let mut z = x.matmul(&layer.weights)?;
    z.add_row(&layer.bias)?;
    Ok(z)
}

fn activate<T: Scalar>(act: Activation, z: &Matrix<T>) -> Matrix<T> {
    match act {
        Activation::Identity => z.clone(),
        Activation::ReLU => z.map(|v| if v > T::zero() { v } else { T::zero() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>, act: Activation) -> Dense<f64> {
        Dense {
            weights: Matrix::from_vec(rows, cols, w).unwrap(),
            bias: Matrix::from_vec(1, cols, b).unwrap(),
            activation: act,
        }
    }

    #[test]
    fn init_rejects_zero_width() {
        let e = Mlp::<f64>::init(&[4, 0, 2], &ActivationPlan::AllRelu, 0.0, 1).unwrap_err();
        assert!(matches!(e, Error::InvalidDimension(_)));
        assert!(Mlp::<f64>::init(&[4], &ActivationPlan::AllRelu, 0.0, 1).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = Mlp::<f64>::init(&[4, 3], &ActivationPlan::HiddenRelu, 0.0, 42).unwrap();
        let b = Mlp::<f64>::init(&[4, 3], &ActivationPlan::HiddenRelu, 0.0, 42).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.layers()[0].bias.data().iter().all(|&v| v == 0.0));
        assert!(!a.is_frozen());
        let bound = (6.0f64 / 7.0).sqrt();
        assert!(a.layers()[0].weights.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let mut m = Mlp::from_layers(vec![layer(eye, 3, 3, vec![0.0; 3], Activation::Identity)], 0.0, 0).unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.5, 0.0, 7.0, -1.0]).unwrap();
        let (y, _) = m.forward(&x, Pass::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_yields_bias_rows() {
        let b = vec![0.5, -1.0];
        let mut m = Mlp::from_layers(
            vec![layer(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 2, b.clone(), Activation::Identity)],
            0.0,
            0,
        )
        .unwrap();
        let (y, _) = m.forward(&Matrix::zeros(4, 3), Pass::Train).unwrap();
        for r in 0..4 {
            assert_eq!(y.row(r), &b[..]);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut m = Mlp::<f64>::init(&[4, 3], &ActivationPlan::AllRelu, 0.0, 1).unwrap();
        assert!(matches!(m.forward(&Matrix::zeros(2, 5), Pass::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut m = Mlp::<f64>::init(&[3, 4, 2], &ActivationPlan::HiddenRelu, 0.0, 9).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.3, -0.2, 1.0, 0.7, 0.1, -0.5]).unwrap();
        let (_, trace) = m.forward(&x, Pass::Train).unwrap();
        let bw = m.backward(&trace, &Matrix::zeros(2, 2)).unwrap();
        assert!(bw.input_grad.data().iter().all(|&v| v == 0.0));
        for g in &bw.params.layers {
            assert!(g.weights.data().iter().all(|&v| v == 0.0));
            assert!(g.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn frozen_model_yields_input_grad_only() {
        let mut m = Mlp::<f64>::init(&[3, 4, 2], &ActivationPlan::HiddenRelu, 0.0, 9).unwrap();
        m.set_frozen(true);
        let x = Matrix::from_vec(1, 3, vec![0.3, -0.2, 1.0]).unwrap();
        let (_, trace) = m.forward(&x, Pass::Train).unwrap();
        let bw = m.backward(&trace, &Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        assert!(bw.params.is_empty());
        assert_eq!(bw.input_grad.shape(), (1, 3));
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let mut a = Mlp::<f64>::init(&[3, 4, 2], &ActivationPlan::HiddenRelu, 0.0, 1).unwrap();
        let b = Mlp::<f64>::init(&[3, 2], &ActivationPlan::HiddenRelu, 0.0, 1).unwrap();
        let (_, trace) = a.forward(&Matrix::zeros(1, 3), Pass::Train).unwrap();
        assert!(matches!(b.backward(&trace, &Matrix::zeros(1, 2)), Err(Error::Trace(_))));
    }

    #[test]
    fn sgd_arithmetic() {
        let mut m = Mlp::from_layers(vec![layer(vec![1.0], 1, 1, vec![0.0], Activation::Identity)], 0.0, 0).unwrap();
        let g = Gradients {
            layers: vec![LayerGrads { weights: Matrix::from_vec(1, 1, vec![0.5]).unwrap(), bias: Matrix::zeros(1, 1) }],
        };
        m.sgd_step(&g, 0.1).unwrap();
        assert_eq!(m.layers()[0].weights.get(0, 0), 0.95);
    }

    #[test]
    fn sgd_noops_and_freeze() {
        let mut m = Mlp::<f64>::init(&[3, 4, 2], &ActivationPlan::HiddenRelu, 0.0, 5).unwrap();
        let before = m.clone();
        let x = Matrix::from_vec(1, 3, vec![0.3, -0.2, 1.0]).unwrap();
        let (_, trace) = m.forward(&x, Pass::Train).unwrap();
        let bw = m.backward(&trace, &Matrix::from_vec(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        m.sgd_step(&bw.params, 0.0).unwrap();
        assert!(m.bit_eq(&before));
        let zeros = Gradients {
            layers: bw
                .params
                .layers
                .iter()
                .map(|g| LayerGrads {
                    weights: Matrix::zeros(g.weights.rows(), g.weights.cols()),
                    bias: Matrix::zeros(1, g.bias.cols()),
                })
                .collect(),
        };
        m.sgd_step(&zeros, 0.5).unwrap();
        assert!(m.bit_eq(&before));

        m.set_frozen(true);
        assert!(matches!(m.sgd_step(&bw.params, 0.1), Err(Error::Frozen)));
        let y1 = m.predict(&x).unwrap();
        let y2 = m.predict(&x).unwrap();
        assert!(y1.bit_eq(&y2));

        m.set_frozen(false);
        m.sgd_step(&bw.params, 0.1).unwrap();
        assert!(!m.bit_eq(&{
            let mut b = before.clone();
            b.set_frozen(false);
            b
        }));
    }

    #[test]
    fn mac_counts() {
        let m = Mlp::<f64>::init(&[4, 3], &ActivationPlan::AllRelu, 0.0, 1).unwrap();
        assert_eq!(m.mac_count(2, MacPass::Forward), 24);
        assert_eq!(m.mac_count(2, MacPass::ForwardBackward), 72);
        let m = Mlp::<f64>::init(&[4, 8, 3], &ActivationPlan::AllRelu, 0.0, 1).unwrap();
        assert_eq!(m.mac_count(5, MacPass::Forward), 280);
    }

    #[test]
    fn dropout_only_in_train_and_replays_from_seed() {
        let mut a = Mlp::<f64>::init(&[4, 16, 2], &ActivationPlan::HiddenRelu, 0.5, 3).unwrap();
        let mut b = a.clone();
        let x = Matrix::from_vec(2, 4, vec![1.0, 2.0, -1.0, 0.5, 0.2, 0.1, 0.9, -0.3]).unwrap();
        let (e1, t1) = a.forward(&x, Pass::Eval).unwrap();
        assert!(t1.masks.iter().all(Option::is_none));
        assert!(e1.bit_eq(&a.predict(&x).unwrap()));
        let (y1, ta) = a.forward(&x, Pass::Train).unwrap();
        let (y2, _) = b.forward(&x, Pass::Train).unwrap();
        assert!(y1.bit_eq(&y2));
        assert!(ta.masks[0].is_some());
        assert!(ta.masks[1].is_none());
    }

    #[test]
    fn f32_engine_runs() {
        let mut m = Mlp::<f32>::init(&[3, 4, 2], &ActivationPlan::HiddenRelu, 0.0, 5).unwrap();
        let x = Matrix::from_vec(1, 3, vec![0.3f32, -0.2, 1.0]).unwrap();
        let (y, trace) = m.forward(&x, Pass::Train).unwrap();
        let bw = m.backward(&trace, &y).unwrap();
        m.sgd_step(&bw.params, 0.1).unwrap();
        assert!(m.parameters_finite());
    }
}
