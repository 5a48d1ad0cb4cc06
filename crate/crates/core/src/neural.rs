//! Fully connected dueling Q-network with hand-written backpropagation.
//!
//! Layout: a two-layer ReLU trunk feeds a value stream (one hidden ReLU layer
//! then a scalar) and an advantage stream (one hidden ReLU layer then one
//! output per action). Q-values are recombined as
//! `Q(x, a) = V(x) + A(x, a) - mean(A(x, ·))`.
//!
//! Networks can grow: [`DuelingNetwork::expand`] appends zero-weight inputs
//! and outputs. The mean in the aggregation runs over the first
//! `centered_actions` outputs, which is every output for a freshly built
//! network and the pre-expansion outputs for a grown one, so Q-values of the
//! original actions are unchanged by expansion.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("input has {got} features, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("action index {index} out of range for {n_actions} actions")]
    ActionIndex { index: usize, n_actions: usize },
    #[error("TD target must be finite")]
    NonFiniteTarget,
    #[error("parameter shapes do not match")]
    ShapeMismatch,
    #[error("bad model file: {0}")]
    Decode(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
}

/// One affine layer. `weight` is `inputs x outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    /// Uniform ±1/sqrt(fan_in) weights, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-bound..=bound));
        Self { weight, bias: Array1::zeros(outputs) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    fn shape(&self) -> (usize, usize) {
        self.weight.dim()
    }
}

/// All trainable tensors of a dueling network. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub trunk_in: Dense,
    pub trunk_hidden: Dense,
    pub value_hidden: Dense,
    pub value_out: Dense,
    pub advantage_hidden: Dense,
    pub advantage_out: Dense,
}

impl Params {
    fn layers(&self) -> [&Dense; 6] {
        [
            &self.trunk_in,
            &self.trunk_hidden,
            &self.value_hidden,
            &self.value_out,
            &self.advantage_hidden,
            &self.advantage_out,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 6] {
        [
            &mut self.trunk_in,
            &mut self.trunk_hidden,
            &mut self.value_hidden,
            &mut self.value_out,
            &mut self.advantage_hidden,
            &mut self.advantage_out,
        ]
    }

    /// Flat views of every tensor in canonical order: for each layer its
    /// weight then its bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| {
                [l.weight.as_slice().expect("standard layout"), l.bias.as_slice().expect("standard layout")]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| {
                let Dense { weight, bias } = l;
                [weight.as_slice_mut().expect("standard layout"), bias.as_slice_mut().expect("standard layout")]
            })
            .collect()
    }

    fn zeros_like(&self) -> Self {
        let z = |d: &Dense| {
            let (i, o) = d.shape();
            Dense::zeros(i, o)
        };
        Self {
            trunk_in: z(&self.trunk_in),
            trunk_hidden: z(&self.trunk_hidden),
            value_hidden: z(&self.value_hidden),
            value_out: z(&self.value_out),
            advantage_hidden: z(&self.advantage_hidden),
            advantage_out: z(&self.advantage_out),
        }
    }

    fn same_shape(&self, other: &Params) -> bool {
        self.layers().iter().zip(other.layers()).all(|(a, b)| a.shape() == b.shape())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Partial derivatives of a scalar loss, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Params);

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.0.tensors()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingNetwork {
    input_dim: usize,
    n_actions: usize,
    hidden_width: usize,
    centered_actions: usize,
    params: Params,
}

/// Activations kept from a batched forward pass for backpropagation.
struct Cache {
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    hv: Array2<f64>,
    ha: Array2<f64>,
    q: Array2<f64>,
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|v| v.max(0.0));
    a
}

/// Zeroes `grad` wherever the post-activation `act` was clamped.
fn relu_mask(mut grad: Array2<f64>, act: &Array2<f64>) -> Array2<f64> {
    grad.zip_mut_with(act, |g, a| {
        if *a <= 0.0 {
            *g = 0.0;
        }
    });
    grad
}

impl DuelingNetwork {
    /// Builds a freshly initialised network for `state_dim + n_actions` inputs.
    pub fn new(state_dim: usize, n_actions: usize, hidden_width: usize, seed: u64) -> Self {
        assert!(n_actions > 0 && hidden_width > 0);
        let input_dim = state_dim + n_actions;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params {
            trunk_in: Dense::init(input_dim, hidden_width, &mut rng),
            trunk_hidden: Dense::init(hidden_width, hidden_width, &mut rng),
            value_hidden: Dense::init(hidden_width, hidden_width, &mut rng),
            value_out: Dense::init(hidden_width, 1, &mut rng),
            advantage_hidden: Dense::init(hidden_width, hidden_width, &mut rng),
            advantage_out: Dense::init(hidden_width, n_actions, &mut rng),
        };
        Self { input_dim, n_actions, hidden_width, centered_actions: n_actions, params }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn state_dim(&self) -> usize {
        self.input_dim - self.n_actions
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_width
    }

    /// Number of leading actions the network was trained on. These take
    /// part in the mean-centring and in greedy action selection.
    pub fn centered_actions(&self) -> usize {
        self.centered_actions
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn check_input(&self, cols: usize) -> Result<(), NeuralError> {
        if cols != self.input_dim {
            return Err(NeuralError::InputDim { expected: self.input_dim, got: cols });
        }
        Ok(())
    }

    fn forward_cached(&self, x: Array2<f64>) -> Cache {
        let p = &self.params;
        let h1 = relu(p.trunk_in.forward(&x));
        let h2 = relu(p.trunk_hidden.forward(&h1));
        let hv = relu(p.value_hidden.forward(&h2));
        let v = p.value_out.forward(&hv);
        let ha = relu(p.advantage_hidden.forward(&h2));
        let a = p.advantage_out.forward(&ha);
        let mean = a.slice(ndarray::s![.., ..self.centered_actions]).mean_axis(Axis(1)).expect("non-empty");
        let mut q = a;
        for ((mut row, vv), m) in q.rows_mut().into_iter().zip(v.column(0)).zip(mean.iter()) {
            let shift = vv - m;
            row.mapv_inplace(|x| x + shift);
        }
        Cache { x, h1, h2, hv, ha, q }
    }

    /// Q-values for a batch of inputs, one row per sample.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>, NeuralError> {
        self.check_input(x.ncols())?;
        Ok(self.forward_cached(x.to_owned()).q)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.check_input(x.len())?;
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        Ok(self.forward_cached(batch).q.into_raw_vec_and_offset().0)
    }

    /// State value V(x) and raw advantages A(x, ·) before recombination.
    pub fn value_and_advantages(&self, x: &[f64]) -> Result<(f64, Vec<f64>), NeuralError> {
        self.check_input(x.len())?;
        let p = &self.params;
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        let h2 = relu(p.trunk_hidden.forward(&relu(p.trunk_in.forward(&batch))));
        let v = p.value_out.forward(&relu(p.value_hidden.forward(&h2)))[[0, 0]];
        let a = p.advantage_out.forward(&relu(p.advantage_hidden.forward(&h2)));
        Ok((v, a.into_raw_vec_and_offset().0))
    }

    /// Index of the largest Q among the centred actions; ties go to the
    /// lowest index.
    pub fn greedy_action(&self, x: &[f64]) -> Result<usize, NeuralError> {
        let q = self.forward(x)?;
        Ok(argmax(&q[..self.centered_actions]))
    }

    /// Mean squared TD error over a batch and its gradient.
    ///
    /// `loss = (1/B) sum_b (Q(x_b, a_b) - y_b)^2`
    pub fn td_backward_batch(
        &self,
        x: &Array2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients), NeuralError> {
        self.check_input(x.ncols())?;
        let batch = x.nrows();
        assert_eq!(actions.len(), batch);
        assert_eq!(targets.len(), batch);
        if let Some(&index) = actions.iter().find(|&&a| a >= self.n_actions) {
            return Err(NeuralError::ActionIndex { index, n_actions: self.n_actions });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(NeuralError::NonFiniteTarget);
        }
        let cache = self.forward_cached(x.to_owned());
        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut dq = Array2::<f64>::zeros((batch, self.n_actions));
        for (b, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = cache.q[[b, a]] - y;
            loss += err * err * scale;
            dq[[b, a]] = 2.0 * err * scale;
        }
        Ok((loss, self.backward(&cache, dq)))
    }

    /// Squared TD error `(Q(x, a) - target)^2` for one sample and its gradient.
    pub fn td_backward(&self, x: &[f64], action: usize, target: f64) -> Result<(f64, Gradients), NeuralError> {
        self.check_input(x.len())?;
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
        self.td_backward_batch(&batch, &[action], &[target])
    }

    fn backward(&self, cache: &Cache, dq: Array2<f64>) -> Gradients {
        let p = &self.params;
        let centered = self.centered_actions as f64;
        // Q = V + A - mean_c(A): dV = sum_a dQ, dA = dQ - sum_a dQ / c on centred columns.
        let dq_sum = dq.sum_axis(Axis(1));
        let dv = dq_sum.clone().insert_axis(Axis(1));
        let mut da = dq;
        for (mut row, s) in da.rows_mut().into_iter().zip(dq_sum.iter()) {
            let shift = s / centered;
            row.slice_mut(ndarray::s![..self.centered_actions]).mapv_inplace(|x| x - shift);
        }

        let mut g = p.zeros_like();
        let grad_layer = |input: &Array2<f64>, dout: &Array2<f64>| Dense {
            weight: input.t().dot(dout),
            bias: dout.sum_axis(Axis(0)),
        };

        g.advantage_out = grad_layer(&cache.ha, &da);
        let dha = relu_mask(da.dot(&p.advantage_out.weight.t()), &cache.ha);
        g.advantage_hidden = grad_layer(&cache.h2, &dha);
        let mut dh2 = dha.dot(&p.advantage_hidden.weight.t());

        g.value_out = grad_layer(&cache.hv, &dv);
        let dhv = relu_mask(dv.dot(&p.value_out.weight.t()), &cache.hv);
        g.value_hidden = grad_layer(&cache.h2, &dhv);
        dh2 += &dhv.dot(&p.value_hidden.weight.t());

        let dh2 = relu_mask(dh2, &cache.h2);
        g.trunk_hidden = grad_layer(&cache.h1, &dh2);
        let dh1 = relu_mask(dh2.dot(&p.trunk_hidden.weight.t()), &cache.h1);
        g.trunk_in = grad_layer(&cache.x, &dh1);
        Gradients(standardize(g))
    }

    /// Polyak averaging: `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &DuelingNetwork, tau: f64) -> Result<(), NeuralError> {
        if !self.same_architecture(online) {
            return Err(NeuralError::ShapeMismatch);
        }
        for (t, o) in self.params.tensors_mut().into_iter().zip(online.params.tensors()) {
            for (tv, ov) in t.iter_mut().zip(o) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        }
        Ok(())
    }

    pub fn same_architecture(&self, other: &DuelingNetwork) -> bool {
        self.input_dim == other.input_dim
            && self.n_actions == other.n_actions
            && self.hidden_width == other.hidden_width
            && self.centered_actions == other.centered_actions
            && self.params.same_shape(&other.params)
    }

    /// Grows the network by `extra_inputs` input features and `extra_outputs`
    /// actions. New connections are zero and existing parameters are copied
    /// bit for bit.
    pub fn expand(&self, extra_inputs: usize, extra_outputs: usize) -> DuelingNetwork {
        let mut out = self.clone();
        if extra_inputs > 0 {
            let old = &self.params.trunk_in.weight;
            let mut w = Array2::zeros((self.input_dim + extra_inputs, self.hidden_width));
            w.slice_mut(ndarray::s![..self.input_dim, ..]).assign(old);
            out.params.trunk_in.weight = w;
            out.input_dim += extra_inputs;
        }
        if extra_outputs > 0 {
            let old = &self.params.advantage_out;
            let mut w = Array2::zeros((self.hidden_width, self.n_actions + extra_outputs));
            w.slice_mut(ndarray::s![.., ..self.n_actions]).assign(&old.weight);
            let mut b = Array1::zeros(self.n_actions + extra_outputs);
            b.slice_mut(ndarray::s![..self.n_actions]).assign(&old.bias);
            out.params.advantage_out = Dense { weight: w, bias: b };
            out.n_actions += extra_outputs;
        }
        out
    }
}

/// Rebuilds every tensor in standard (C-contiguous) layout.
fn standardize(mut p: Params) -> Params {
    for l in p.layers_mut() {
        if !l.weight.is_standard_layout() {
            l.weight = l.weight.as_standard_layout().into_owned();
        }
    }
    p
}

/// Position of the maximum; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Adam moments and hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn adam(net: &DuelingNetwork) -> Self {
        Self::with_shapes(net.params.tensors().iter().map(|t| t.len()).collect())
    }

    fn with_shapes(sizes: Vec<usize>) -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NeuralError> {
        let shapes_match = params.len() == grads.len()
            && params.len() == self.first_moment.len()
            && params.iter().zip(grads).zip(&self.first_moment).all(|((p, g), m)| p.len() == g.len() && g.len() == m.len());
        if !shapes_match {
            return Err(NeuralError::ShapeMismatch);
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first_moment).zip(&mut self.second_moment) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to `net` using `grads`.
pub fn optimizer_step(net: &mut DuelingNetwork, grads: &Gradients, opt: &mut OptimizerState) -> Result<(), NeuralError> {
    if !net.params.same_shape(&grads.0) {
        return Err(NeuralError::ShapeMismatch);
    }
    let mut params = net.params.tensors_mut();
    opt.update(&mut params, &grads.tensors())
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(online: &DuelingNetwork, target: &mut DuelingNetwork, tau: f64) -> Result<(), NeuralError> {
    target.soft_update_from(online, tau)
}

pub const MODEL_MAGIC: &[u8; 8] = b"DUELQNET";
pub const MODEL_VERSION: u32 = 1;

/// Serialises the network.
///
/// Layout, little-endian throughout:
///
/// | bytes | field |
/// |-------|-------|
/// | 8     | magic `DUELQNET` |
/// | 4     | format version (u32, currently 1) |
/// | 4     | state_dim (u32) |
/// | 4     | n_actions (u32) |
/// | 4     | hidden_width (u32) |
/// | 4     | centered_actions (u32) |
/// | ...   | parameter blocks as f64, in order: trunk_in W, b; trunk_hidden W, b; value_hidden W, b; value_out W, b; advantage_hidden W, b; advantage_out W, b |
///
/// Weight matrices are stored row-major with shape `inputs x outputs`.
pub fn serialize(net: &DuelingNetwork) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 8 * net.params.parameter_count());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for dim in [net.state_dim(), net.n_actions, net.hidden_width, net.centered_actions] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for t in net.params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<DuelingNetwork, NeuralError> {
    if bytes.len() < 28 {
        return Err(NeuralError::Decode(format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(NeuralError::Decode("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
    let version = word(0);
    if version != MODEL_VERSION {
        return Err(NeuralError::Version(version));
    }
    let (state_dim, n_actions, hidden, centered) =
        (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    if n_actions == 0 || hidden == 0 || centered == 0 || centered > n_actions {
        return Err(NeuralError::Decode(format!(
            "inconsistent header: n_actions={n_actions} hidden={hidden} centered={centered}"
        )));
    }
    let input_dim = state_dim + n_actions;
    let shapes = [
        (input_dim, hidden),
        (hidden, hidden),
        (hidden, hidden),
        (hidden, 1),
        (hidden, hidden),
        (hidden, n_actions),
    ];
    let expected: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
    let body = &bytes[28..];
    if body.len() != expected * 8 {
        return Err(NeuralError::Decode(format!(
            "payload has {} bytes, header implies {}",
            body.len(),
            expected * 8
        )));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
    let mut layers = shapes.iter().map(|&(i, o)| Dense {
        weight: Array2::from_shape_vec((i, o), take(i * o)).expect("shape"),
        bias: Array1::from(take(o)),
    });
    let mut next = || layers.next().expect("six layers");
    let params = Params {
        trunk_in: next(),
        trunk_hidden: next(),
        value_hidden: next(),
        value_out: next(),
        advantage_hidden: next(),
        advantage_out: next(),
    };
    if params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(NeuralError::Decode("non-finite parameter".into()));
    }
    Ok(DuelingNetwork { input_dim, n_actions, hidden_width: hidden, centered_actions: centered, params })
}
