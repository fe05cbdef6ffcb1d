//! Small dense networks with exact reverse-mode gradients, the Adam
//! optimizer, and the two networks of the refinement pipeline.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicTree, Pose, Velocity, POSE_DIM};

/// IDNet input: current and next pose and velocity, 16 × 3 × 4 values.
pub const IDNET_INPUT: usize = 4 * POSE_DIM;
pub const IDNET_HIDDEN: [usize; 2] = [256, 256];
/// RefineNet input: predicted pose plus the reference pose without the wrist.
pub const REFINENET_INPUT: usize = POSE_DIM + POSE_DIM - 3;
pub const REFINENET_HIDDEN: [usize; 1] = [64];
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    Identity,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

impl OutputTransform {
    fn apply(self, x: f64) -> f64 {
        match self {
            OutputTransform::Identity => x,
            OutputTransform::Sigmoid => sigmoid(x),
        }
    }

    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            OutputTransform::Identity => 1.0,
            OutputTransform::Sigmoid => y * (1.0 - y),
        }
    }
}

/// One affine layer; `weights` is `outputs × inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden: Activation,
    output: OutputTransform,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Cached forward pass of a batch, consumed by [`Mlp::backward`].
pub struct ForwardCache {
    /// `activations[0]` is the input, the last entry the transformed output.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty")
    }
}

impl Mlp {
    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new(sizes: &[usize], hidden: Activation, output: OutputTransform, rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((w[1], w[0]), || rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers, hidden, output }
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: OutputTransform) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer { weights: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        Self { layers, hidden, output }
    }

    pub fn from_layers(layers: Vec<Layer>, hidden: Activation, output: OutputTransform) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::Dimension(format!(
                    "layer {k}: {} biases for {} outputs",
                    l.bias.len(),
                    l.weights.nrows()
                )));
            }
            if k > 0 && layers[k - 1].weights.nrows() != l.weights.ncols() {
                return Err(Error::Dimension(format!(
                    "layer {k} takes {} inputs but layer {} produces {}",
                    l.weights.ncols(),
                    k - 1,
                    layers[k - 1].weights.nrows()
                )));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} parameters")));
            }
        }
        Ok(Self { layers, hidden, output })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_transform(&self) -> OutputTransform {
        self.output
    }

    pub fn with_output_transform(mut self, output: OutputTransform) -> Self {
        self.output = output;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weights (row-major) then bias, layer by layer.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.activations.pop().expect("non-empty"))
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!("network takes {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = activations[k].dot(&l.weights.t());
            z += &l.bias;
            if k == last {
                z.mapv_inplace(|v| self.output.apply(v));
            } else {
                z.mapv_inplace(|v| self.hidden.apply(v));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse pass for a batch. `upstream` is the loss gradient with respect
    /// to the transformed outputs; parameter gradients are summed over rows.
    /// Returns the parameter gradients and the gradient with respect to the
    /// inputs.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Dimension(format!("upstream {:?} vs output {:?}", upstream.dim(), out.dim())));
        }
        let mut delta = upstream.to_owned();
        delta.zip_mut_with(out, |d, &y| *d *= self.output.derivative_from_output(y));
        let mut grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = &cache.activations[k];
            let weights = delta.t().dot(input);
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weights, bias });
            let mut back = delta.dot(&self.layers[k].weights);
            if k > 0 {
                back.zip_mut_with(input, |d, &y| *d *= self.hidden.derivative_from_output(y));
            }
            delta = back;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Gradients of `upstream · f(x)` for a single input.
    pub fn gradient(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let xb = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Dimension(e.to_string()))?;
        let cache = self.forward_cached(xb)?;
        let ub = ArrayView2::from_shape((1, upstream.len()), upstream).map_err(|e| Error::Dimension(e.to_string()))?;
        let (g, dx) = self.backward(&cache, ub)?;
        Ok((g, dx.into_raw_vec_and_offset().0))
    }
}

impl Gradients {
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights *= k;
            l.bias *= k;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|x| x.is_finite())
    }
}

/// Adam with the usual bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    /// Descends along `grads`; both iterators must follow the same order.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: impl Iterator<Item = f64>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut n = 0;
        for (((p, g), m), v) in params.zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            n += 1;
        }
        debug_assert_eq!(n, self.m.len());
    }
}

/// Inverse-dynamics network: pose transition → muscle excitations.
#[derive(Clone, Debug, PartialEq)]
pub struct IdNet {
    /// Sigmoid output; the pre-sigmoid values are the policy mean.
    pub mlp: Mlp,
    /// Per-muscle log standard deviation of the exploration noise.
    pub log_std: Vec<f64>,
}

pub fn idnet_input(p: &Pose, v: &Velocity, p_next: &Pose, v_next: &Velocity) -> [f64; IDNET_INPUT] {
    let mut x = [0.0; IDNET_INPUT];
    x[..POSE_DIM].copy_from_slice(&p.to_flat());
    x[POSE_DIM..2 * POSE_DIM].copy_from_slice(&v.to_flat());
    x[2 * POSE_DIM..3 * POSE_DIM].copy_from_slice(&p_next.to_flat());
    x[3 * POSE_DIM..].copy_from_slice(&v_next.to_flat());
    x
}

impl IdNet {
    pub fn new(num_muscles: usize, rng: &mut impl Rng) -> Self {
        let sizes = [IDNET_INPUT, IDNET_HIDDEN[0], IDNET_HIDDEN[1], num_muscles];
        Self { mlp: Mlp::new(&sizes, Activation::Tanh, OutputTransform::Sigmoid, rng), log_std: vec![-0.5; num_muscles] }
    }

    pub fn from_parts(mlp: Mlp, log_std: Vec<f64>) -> Result<Self> {
        if mlp.input_dim() != IDNET_INPUT {
            return Err(Error::Dimension(format!("IDNet takes {IDNET_INPUT} inputs, network has {}", mlp.input_dim())));
        }
        if log_std.len() != mlp.output_dim() {
            return Err(Error::Dimension(format!("{} log-std entries for {} outputs", log_std.len(), mlp.output_dim())));
        }
        if mlp.output_transform() != OutputTransform::Sigmoid {
            return Err(Error::InvalidArgument("IDNet output must be sigmoid".into()));
        }
        Ok(Self { mlp, log_std })
    }

    pub fn num_muscles(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Deterministic excitations, each in `(0, 1)`.
    pub fn infer(&self, p: &Pose, v: &Velocity, p_next: &Pose, v_next: &Velocity) -> Vec<f64> {
        self.mlp.forward(&idnet_input(p, v, p_next, v_next)).expect("fixed input size")
    }

    pub fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// Residual pose refiner: `p_pred + MLP([p_pred | p_ref without wrist])`.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineNet {
    pub mlp: Mlp,
}

pub fn refinenet_input(p_pred: &Pose, p_ref: &Pose) -> [f64; REFINENET_INPUT] {
    let mut x = [0.0; REFINENET_INPUT];
    x[..POSE_DIM].copy_from_slice(&p_pred.to_flat());
    x[POSE_DIM..].copy_from_slice(&p_ref.to_flat()[3..]);
    x
}

impl RefineNet {
    /// Random hidden layer, zero output layer: the identity refiner.
    pub fn new(rng: &mut impl Rng) -> Self {
        let sizes = [REFINENET_INPUT, REFINENET_HIDDEN[0], POSE_DIM];
        let mut mlp = Mlp::new(&sizes, Activation::Tanh, OutputTransform::Identity, rng);
        let last = mlp.layers_mut().last_mut().expect("two layers");
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        Self { mlp }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != REFINENET_INPUT || mlp.output_dim() != POSE_DIM {
            return Err(Error::Dimension(format!(
                "RefineNet maps {REFINENET_INPUT} -> {POSE_DIM}, network maps {} -> {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self { mlp })
    }

    /// Refined pose before clamping. The wrist is passed through from `p_pred`.
    pub fn refine_unclamped(&self, p_pred: &Pose, p_ref: &Pose) -> Pose {
        let residual = self.mlp.forward(&refinenet_input(p_pred, p_ref)).expect("fixed input size");
        let mut out = *p_pred;
        for j in 1..out.rotations.len() {
            for a in 0..3 {
                out.rotations[j][a] += residual[3 * j + a];
            }
        }
        out
    }

    pub fn refine(&self, tree: &KinematicTree, p_pred: &Pose, p_ref: &Pose) -> Pose {
        tree.clamped(&self.refine_unclamped(p_pred, p_ref))
    }
}

pub const CHECKPOINT_FORMAT: &str = "mshand-ckpt";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which network a checkpoint holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Idnet,
    Refinenet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serialized network (`mshand-ckpt` JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: NetKind,
    pub hidden_activation: Activation,
    pub output_transform: OutputTransform,
    pub layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<Vec<f64>>,
}

impl Checkpoint {
    fn new(kind: NetKind, mlp: &Mlp, log_std: Option<Vec<f64>>) -> Self {
        let layers = mlp
            .layers()
            .iter()
            .map(|l| LayerRecord {
                rows: l.weights.nrows(),
                cols: l.weights.ncols(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind,
            hidden_activation: mlp.hidden_activation(),
            output_transform: mlp.output_transform(),
            layers,
            log_std,
        }
    }

    fn mlp(&self, expected: NetKind) -> Result<Mlp> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!("unexpected format tag {:?}", self.format)));
        }
        if self.version > CHECKPOINT_VERSION {
            return Err(Error::Version { format: self.format.clone(), found: self.version, supported: CHECKPOINT_VERSION });
        }
        if self.kind != expected {
            return Err(Error::InvalidArgument(format!("checkpoint holds {:?}, expected {:?}", self.kind, expected)));
        }
        let layers = self
            .layers
            .iter()
            .map(|r| {
                let weights = Array2::from_shape_vec((r.rows, r.cols), r.weights.clone())
                    .map_err(|e| Error::Dimension(format!("checkpoint layer: {e}")))?;
                Ok(Layer { weights, bias: Array1::from(r.bias.clone()) })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, self.hidden_activation, self.output_transform)
    }
}

impl IdNet {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(NetKind::Idnet, &self.mlp, Some(self.log_std.clone()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mlp = ck.mlp(NetKind::Idnet)?;
        let log_std = ck.log_std.clone().unwrap_or_else(|| vec![LOG_STD_MIN; mlp.output_dim()]);
        Self::from_parts(mlp, log_std)
    }
}

impl RefineNet {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(NetKind::Refinenet, &self.mlp, None)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::from_mlp(ck.mlp(NetKind::Refinenet)?)
    }
}
