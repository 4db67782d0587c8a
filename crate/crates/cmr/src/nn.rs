//! Deep MLP with manual forward/backward passes.
//!
//! Architecture is fixed by construction: affine layers with tanh on every
//! hidden layer and an identity output (logits feed the softmax loss).
//! Biases are zero-initialized and carry no spectral penalty.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::linalg::{top_singular_triple, vec_dot, Matrix};
use crate::rng::{domains, stream_rng};
use crate::{CmrError, Result, Scalar};

/// Magic bytes of the checkpoint format.
const CHECKPOINT_MAGIC: &[u8; 4] = b"CMRW";
const CHECKPOINT_VERSION: u32 = 1;

/// One affine layer.
#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// `scale * Q` for an orthonormal factor Q of a seeded Gaussian draw;
    /// every singular value equals `scale`.
    OrthogonalScaled { scale: f64 },
    /// Entries uniform in `+-sqrt(6 / (rows + cols))`.
    GlorotUniform,
}

/// Multi-layer perceptron: an ordered list of affine layers.
#[derive(Debug, Clone)]
pub struct MlpModel<T> {
    layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> MlpModel<T> {
    /// Builds a model from explicit layers, validating the shape chain.
    pub fn from_layers(layers: Vec<LayerParams<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(CmrError::InvalidState("model needs at least one layer".into()));
        }
        for i in 1..layers.len() {
            if layers[i].weight.cols() != layers[i - 1].weight.rows() {
                return Err(CmrError::InvalidState(format!(
                    "layer {} input dim {} does not chain with layer {} output dim {}",
                    i,
                    layers[i].weight.cols(),
                    i - 1,
                    layers[i - 1].weight.rows()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.rows() {
                return Err(CmrError::InvalidState(format!(
                    "layer {i} bias length {} does not match output dim {}",
                    l.bias.len(),
                    l.weight.rows()
                )));
            }
        }
        Ok(MlpModel { layers })
    }

    /// Initializes weights per `init` (one deterministic stream per layer)
    /// and biases to zero. `dims` lists layer widths input-first, so
    /// `dims.len() - 1` weight matrices are created.
    pub fn init(dims: &[usize], init: &InitSpec, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(CmrError::InvalidState("dims needs at least input and output".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (idx, pair) in dims.windows(2).enumerate() {
            let (rows, cols) = (pair[1], pair[0]);
            let mut rng = stream_rng(seed, domains::INIT, idx as u64);
            let weight = match init {
                InitSpec::OrthogonalScaled { scale } => {
                    init_orthogonal_scaled_rng(rows, cols, T::from_f64_lossy(*scale), &mut rng)?
                }
                InitSpec::GlorotUniform => init_glorot_uniform_rng(rows, cols, &mut rng),
            };
            layers.push(LayerParams { weight, bias: vec![T::zero(); rows] });
        }
        MlpModel::from_layers(layers)
    }

    /// Widths for the 15-layer stress architecture: 784 in, hidden width
    /// 256, 10 out.
    pub fn deep_mlp_dims(depth: usize, input: usize, hidden: usize, output: usize) -> Vec<usize> {
        assert!(depth >= 2);
        let mut dims = Vec::with_capacity(depth + 1);
        dims.push(input);
        dims.extend(std::iter::repeat(hidden).take(depth - 1));
        dims.push(output);
        dims
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.rows()));
        d
    }

    /// Zero-valued gradient set with this model's shapes.
    pub fn zero_gradients(&self) -> GradientSet<T> {
        GradientSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }
}

/// Per-parameter gradients (or any model-shaped accumulator).
#[derive(Debug, Clone)]
pub struct GradientSet<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> GradientSet<T> {
    /// Global l2 norm over all parameters, accumulated in layer order
    /// (weights row-major, then bias).
    pub fn global_norm(&self) -> T {
        let mut acc = T::zero();
        for l in &self.layers {
            acc += l.weight.sum_squares();
            acc += vec_dot(&l.bias, &l.bias);
        }
        acc.sqrt()
    }

    pub fn scale_in_place(&mut self, s: T) {
        for l in &mut self.layers {
            l.weight.scale_in_place(s);
            for b in &mut l.bias {
                *b *= s;
            }
        }
    }

    /// `self += s * other`.
    pub fn add_scaled_in_place(&mut self, s: T, other: &GradientSet<T>) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled_in_place(s, &b.weight);
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }

    pub fn shapes_match(&self, model: &MlpModel<T>) -> bool {
        self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(g, p)| {
                g.weight.shape() == p.weight.shape() && g.bias.len() == p.bias.len()
            })
    }
}

/// `scale * Q` with Q the orthonormal factor of a seeded Gaussian matrix
/// (semi-orthogonal for rectangular shapes: Q^T Q = I when rows >= cols,
/// Q Q^T = I otherwise). All singular values equal `scale`.
pub fn init_orthogonal_scaled<T: Scalar>(
    rows: usize,
    cols: usize,
    scale: T,
    seed: u64,
) -> Result<Matrix<T>> {
    init_orthogonal_scaled_rng(rows, cols, scale, &mut stream_rng(seed, domains::INIT, 0))
}

fn init_orthogonal_scaled_rng<T: Scalar>(
    rows: usize,
    cols: usize,
    scale: T,
    rng: &mut impl Rng,
) -> Result<Matrix<T>> {
    if !(scale > T::zero()) {
        return Err(CmrError::InvalidState("orthogonal init scale must be positive".into()));
    }
    let w = if rows <= cols {
        let g: Matrix<T> = crate::rng::gaussian_matrix(rng, rows, cols);
        crate::linalg::orthonormal_rows(&g)?
    } else {
        let g: Matrix<T> = crate::rng::gaussian_matrix(rng, cols, rows);
        crate::linalg::orthonormal_rows(&g)?.transpose()
    };
    Ok(w.scale(scale))
}

/// Entries uniform in `+-sqrt(6 / (rows + cols))`.
pub fn init_glorot_uniform<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Matrix<T> {
    init_glorot_uniform_rng(rows, cols, &mut stream_rng(seed, domains::INIT, 0))
}

fn init_glorot_uniform_rng<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        let u: f64 = rng.random();
        *v = T::from_f64_lossy((2.0 * u - 1.0) * limit);
    }
    m
}

/// Per-layer intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// Preactivations h_1 ..= h_L.
    pub pre: Vec<Matrix<T>>,
    /// Activations z_0 ..= z_{L-1} (z_0 is the input batch).
    pub act: Vec<Matrix<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Output-layer preactivations (the logits).
    pub fn logits(&self) -> &Matrix<T> {
        self.pre.last().unwrap()
    }
}

/// Forward pass over a batch (rows are samples). Tanh on hidden layers,
/// identity on the output layer.
pub fn forward<T: Scalar>(model: &MlpModel<T>, batch: &Matrix<T>) -> Result<ForwardTrace<T>> {
    if batch.cols() != model.input_dim() {
        return Err(CmrError::InvalidState(format!(
            "batch has {} features, model expects {}",
            batch.cols(),
            model.input_dim()
        )));
    }
    let depth = model.depth();
    let mut pre = Vec::with_capacity(depth);
    let mut act = Vec::with_capacity(depth);
    act.push(batch.clone());
    for (idx, layer) in model.layers.iter().enumerate() {
        let z = act.last().unwrap();
        let mut h = z.matmul(&layer.weight.transpose());
        for i in 0..h.rows() {
            for (hv, &b) in h.row_mut(i).iter_mut().zip(&layer.bias) {
                *hv += b;
            }
        }
        if !h.is_finite() {
            return Err(CmrError::NumericalDivergence(format!(
                "non-finite preactivation in layer {idx}"
            )));
        }
        if idx + 1 < depth {
            let mut z_next = h.clone();
            for v in z_next.data_mut() {
                *v = v.tanh();
            }
            act.push(z_next);
        }
        pre.push(h);
    }
    Ok(ForwardTrace { pre, act })
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / batch_size`. Stabilized by row-max
/// subtraction.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[u8]) -> (T, Matrix<T>) {
    let b = logits.rows();
    assert_eq!(b, labels.len(), "one label per logit row");
    let classes = logits.cols();
    let inv_b = T::one() / T::from_f64_lossy(b as f64);
    let mut grad = Matrix::zeros(b, classes);
    let mut loss = T::zero();
    for i in 0..b {
        let row = logits.row(i);
        let label = labels[i] as usize;
        debug_assert!(label < classes);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut denom = T::zero();
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss += log_denom - (row[label] - max);
        let grow = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            let softmax = (v - max).exp() / denom;
            let target = if j == label { T::one() } else { T::zero() };
            grow[j] = (softmax - target) * inv_b;
        }
    }
    (loss * inv_b, grad)
}

/// Backward pass: exact gradients of the (already batch-normalized) loss
/// with respect to all weights and biases. `tanh' = 1 - tanh^2` uses the
/// stored activations.
pub fn backward<T: Scalar>(
    model: &MlpModel<T>,
    trace: &ForwardTrace<T>,
    grad_logits: &Matrix<T>,
) -> GradientSet<T> {
    let depth = model.depth();
    let mut grads = model.zero_gradients();
    let mut delta = grad_logits.clone();
    for idx in (0..depth).rev() {
        // dL/dW = delta^T z_{idx}; dL/db = column sums of delta.
        grads.layers[idx].weight = delta.matmul_transpose_self(&trace.act[idx]);
        let bias = &mut grads.layers[idx].bias;
        for i in 0..delta.rows() {
            for (bv, &d) in bias.iter_mut().zip(delta.row(i)) {
                *bv += d;
            }
        }
        if idx > 0 {
            let mut prev = delta.matmul(&model.layers[idx].weight);
            let z = &trace.act[idx];
            for (p, &zv) in prev.data_mut().iter_mut().zip(z.data()) {
                *p *= T::one() - zv * zv;
            }
            delta = prev;
        }
    }
    grads
}

/// L2 weight penalty `coeff/2 * sum ||W||_F^2` and per-layer gradients
/// `coeff * W`. Biases are excluded.
pub fn l2_penalty_grad<T: Scalar>(model: &MlpModel<T>, coeff: T) -> (T, Vec<Matrix<T>>) {
    let half = T::from_f64_lossy(0.5);
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(model.depth());
    for l in &model.layers {
        value += l.weight.sum_squares();
        grads.push(l.weight.scale(coeff));
    }
    (coeff * half * value, grads)
}

/// Spectral-norm penalty `coeff/2 * sum sigma_max(W_l)^2` with gradients
/// `coeff * sigma_max * u_1 v_1^T` (top singular triple via power
/// iteration).
pub fn sn_penalty_grad<T: Scalar>(model: &MlpModel<T>, coeff: T) -> (T, Vec<Matrix<T>>) {
    let half = T::from_f64_lossy(0.5);
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(model.depth());
    for l in &model.layers {
        if coeff == T::zero() {
            value += T::zero();
            grads.push(Matrix::zeros(l.weight.rows(), l.weight.cols()));
            continue;
        }
        let (sigma, u, v) = top_singular_triple(&l.weight);
        value += sigma * sigma;
        grads.push(Matrix::outer(&u, &v).scale(coeff * sigma));
    }
    (coeff * half * value, grads)
}

/// Classification accuracy by logit argmax, evaluated in batches.
pub fn accuracy<T: Scalar>(
    model: &MlpModel<T>,
    images: &Matrix<T>,
    labels: &[u8],
    batch_size: usize,
) -> Result<f64> {
    assert_eq!(images.rows(), labels.len());
    let mut correct = 0usize;
    let total = images.rows();
    let mut start = 0;
    while start < total {
        let end = (start + batch_size).min(total);
        let rows = end - start;
        let mut batch = Matrix::zeros(rows, images.cols());
        for i in 0..rows {
            batch.row_mut(i).copy_from_slice(images.row(start + i));
        }
        let trace = forward(model, &batch)?;
        let logits = trace.logits();
        for i in 0..rows {
            let row = logits.row(i);
            let mut best = 0usize;
            let mut best_v = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            if best == labels[start + i] as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / total as f64)
}

/// Writes the binary checkpoint plus a JSON sidecar (`<path>.json`) with
/// dims, activation, seed and the caller's config snapshot.
///
/// Layout: magic "CMRW", version u32 LE, layer count u32 LE, then per layer
/// rows u32, cols u32, row-major f64 LE weights, bias length u32, f64 LE
/// biases.
pub fn save_checkpoint<T: Scalar>(
    model: &MlpModel<T>,
    path: &Path,
    seed: u64,
    config_json: &serde_json::Value,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(model.depth() as u32).to_le_bytes())?;
    for l in &model.layers {
        w.write_all(&(l.weight.rows() as u32).to_le_bytes())?;
        w.write_all(&(l.weight.cols() as u32).to_le_bytes())?;
        for v in l.weight.data() {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        w.write_all(&(l.bias.len() as u32).to_le_bytes())?;
        for v in &l.bias {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    w.flush()?;

    let sidecar = serde_json::json!({
        "dims": model.dims(),
        "activation": "tanh",
        "seed": seed,
        "config": config_json,
    });
    let sidecar_path = sidecar_path(path);
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn sidecar_path(ckpt: &Path) -> std::path::PathBuf {
    let mut os = ckpt.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(_) => Err(CmrError::FormatError {
                offset: self.offset,
                message: format!("truncated checkpoint while reading {what}"),
            }),
        }
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<MlpModel<T>> {
    let mut r = CountingReader { inner: BufReader::new(File::open(path)?), offset: 0 };
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CmrError::FormatError {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"),
        });
    }
    let version = r.read_u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CmrError::FormatError {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let layer_count = r.read_u32("layer count")? as usize;
    if layer_count == 0 || layer_count > 4096 {
        return Err(CmrError::FormatError {
            offset: 8,
            message: format!("implausible layer count {layer_count}"),
        });
    }
    let mut layers = Vec::with_capacity(layer_count);
    for idx in 0..layer_count {
        let rows = r.read_u32("rows")? as usize;
        let cols = r.read_u32("cols")? as usize;
        if rows == 0 || cols == 0 || rows * cols > (1 << 28) {
            return Err(CmrError::FormatError {
                offset: r.offset,
                message: format!("implausible layer {idx} shape {rows}x{cols}"),
            });
        }
        let mut weight = Matrix::zeros(rows, cols);
        for v in weight.data_mut() {
            *v = T::from_f64_lossy(r.read_f64("weight")?);
        }
        let bias_len = r.read_u32("bias length")? as usize;
        if bias_len != rows {
            return Err(CmrError::FormatError {
                offset: r.offset,
                message: format!("layer {idx} bias length {bias_len} != rows {rows}"),
            });
        }
        let mut bias = vec![T::zero(); bias_len];
        for v in &mut bias {
            *v = T::from_f64_lossy(r.read_f64("bias")?);
        }
        layers.push(LayerParams { weight, bias });
    }
    MlpModel::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svd;
    use crate::Mat64;

    fn toy_model(dims: &[usize], seed: u64) -> MlpModel<f64> {
        MlpModel::init(dims, &InitSpec::GlorotUniform, seed).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let layers = vec![
            LayerParams { weight: Mat64::zeros(3, 4), bias: vec![0.0; 3] },
            LayerParams { weight: Mat64::zeros(2, 3), bias: vec![0.0; 2] },
        ];
        let model = MlpModel::from_layers(layers).unwrap();
        let x = Mat64::from_fn(5, 4, |i, j| (i + j) as f64);
        let trace = forward(&model, &x).unwrap();
        assert_eq!(trace.logits().max_abs(), 0.0);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let weight = Mat64::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let model =
            MlpModel::from_layers(vec![LayerParams { weight, bias: vec![0.5, -1.0] }]).unwrap();
        let x = Mat64::from_vec(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let trace = forward(&model, &x).unwrap();
        // W x + b with no tanh on the output layer.
        assert_eq!(trace.logits().row(0), &[6.5, 14.0]);
    }

    #[test]
    fn three_layer_trace_matches_hand_computation() {
        let w1 = Mat64::from_vec(2, 2, vec![0.5, -0.25, 0.75, 0.1]).unwrap();
        let w2 = Mat64::from_vec(2, 2, vec![-0.3, 0.6, 0.2, 0.4]).unwrap();
        let w3 = Mat64::from_vec(2, 2, vec![1.0, -1.0, 0.5, 0.25]).unwrap();
        let model = MlpModel::from_layers(vec![
            LayerParams { weight: w1, bias: vec![0.1, -0.2] },
            LayerParams { weight: w2, bias: vec![0.0, 0.05] },
            LayerParams { weight: w3, bias: vec![-0.1, 0.3] },
        ])
        .unwrap();
        let x = [0.8, -0.4];
        let trace = forward(&model, &Mat64::from_vec(1, 2, x.to_vec()).unwrap()).unwrap();

        let h1: [f64; 2] = [0.5 * 0.8 - 0.25 * -0.4 + 0.1, 0.75 * 0.8 + 0.1 * -0.4 - 0.2];
        let z1 = [h1[0].tanh(), h1[1].tanh()];
        let h2: [f64; 2] = [-0.3 * z1[0] + 0.6 * z1[1], 0.2 * z1[0] + 0.4 * z1[1] + 0.05];
        let z2 = [h2[0].tanh(), h2[1].tanh()];
        let h3 = [z2[0] - z2[1] - 0.1, 0.5 * z2[0] + 0.25 * z2[1] + 0.3];

        for (got, want) in trace.pre[0].row(0).iter().zip(h1) {
            assert!((got - want).abs() <= 1e-15);
        }
        for (got, want) in trace.pre[1].row(0).iter().zip(h2) {
            assert!((got - want).abs() <= 1e-15);
        }
        for (got, want) in trace.pre[2].row(0).iter().zip(h3) {
            assert!((got - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn forward_flags_divergence() {
        let weight = Mat64::from_vec(1, 1, vec![1e300]).unwrap();
        let model = MlpModel::from_layers(vec![
            LayerParams { weight: weight.clone(), bias: vec![0.0] },
            LayerParams { weight, bias: vec![0.0] },
        ])
        .unwrap();
        let x = Mat64::from_vec(1, 1, vec![1e300]).unwrap();
        assert!(matches!(forward(&model, &x), Err(CmrError::NumericalDivergence(_))));
    }

    #[test]
    fn softmax_uniform_logits_loss_is_ln_classes() {
        let logits = Mat64::zeros(4, 10);
        let labels = [0u8, 3, 7, 9];
        let (loss, _) = softmax_cross_entropy(&logits, &labels);
        assert!((loss - 10.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn softmax_confident_correct_logit_drives_loss_to_zero() {
        let mut logits = Mat64::zeros(1, 10);
        logits[(0, 4)] = 50.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[4]);
        assert!(loss <= 1e-12);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let logits = Mat64::from_vec(2, 3, vec![0.3, -0.7, 1.1, 0.0, 0.4, -0.2]).unwrap();
        let labels = [2u8, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = logits.clone();
                plus[(i, j)] += h;
                let mut minus = logits.clone();
                minus[(i, j)] -= h;
                let (lp, _) = softmax_cross_entropy(&plus, &labels);
                let (lm, _) = softmax_cross_entropy(&minus, &labels);
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - grad[(i, j)]).abs() <= 1e-6, "({i},{j}): {fd} vs {}", grad[(i, j)]);
            }
        }
    }

    #[test]
    fn backward_zero_grad_logits_gives_zero_gradients() {
        let model = toy_model(&[3, 4, 2], 5);
        let x = Mat64::from_fn(2, 3, |i, j| 0.1 * (i as f64 + j as f64));
        let trace = forward(&model, &x).unwrap();
        let grads = backward(&model, &trace, &Mat64::zeros(2, 2));
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn backward_linear_layer_is_outer_product() {
        let weight = Mat64::from_vec(2, 3, vec![0.2, -0.1, 0.4, 0.0, 0.3, -0.5]).unwrap();
        let model =
            MlpModel::from_layers(vec![LayerParams { weight, bias: vec![0.0, 0.0] }]).unwrap();
        let x = Mat64::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let trace = forward(&model, &x).unwrap();
        let g = Mat64::from_vec(1, 2, vec![0.7, -0.3]).unwrap();
        let grads = backward(&model, &trace, &g);
        let expected = Mat64::outer(g.row(0), x.row(0));
        assert!(grads.layers[0].weight.sub(&expected).max_abs() <= 1e-15);
        assert_eq!(grads.layers[0].bias, vec![0.7, -0.3]);
    }

    #[test]
    fn backward_matches_finite_differences_on_toy_network() {
        // Full-network check on a seeded 3-layer width-4 toy, h = 1e-5.
        let model = toy_model(&[4, 4, 4, 3], 17);
        let x = Mat64::from_fn(5, 4, |i, j| ((i * 4 + j) as f64 * 0.37).sin());
        let labels = [0u8, 2, 1, 0, 2];

        let loss_of = |m: &MlpModel<f64>| {
            let t = forward(m, &x).unwrap();
            softmax_cross_entropy(t.logits(), &labels).0
        };

        let trace = forward(&model, &x).unwrap();
        let (_, grad_logits) = softmax_cross_entropy(trace.logits(), &labels);
        let grads = backward(&model, &trace, &grad_logits);

        let h = 1e-5;
        for li in 0..model.depth() {
            let (rows, cols) = model.layers()[li].weight.shape();
            for i in 0..rows {
                for j in 0..cols {
                    let mut plus = model.clone();
                    plus.layers_mut()[li].weight[(i, j)] += h;
                    let mut minus = model.clone();
                    minus.layers_mut()[li].weight[(i, j)] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let an = grads.layers[li].weight[(i, j)];
                    let denom = an.abs().max(1e-3);
                    assert!(
                        ((fd - an) / denom).abs() <= 1e-5,
                        "layer {li} ({i},{j}): fd {fd} vs {an}"
                    );
                }
                let mut plus = model.clone();
                plus.layers_mut()[li].bias[i] += h;
                let mut minus = model.clone();
                minus.layers_mut()[li].bias[i] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let an = grads.layers[li].bias[i];
                assert!(((fd - an) / an.abs().max(1e-3)).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn l2_penalty_and_gradient() {
        let model = MlpModel::from_layers(vec![LayerParams {
            weight: Mat64::identity(2),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let (v0, g0) = l2_penalty_grad(&model, 0.0);
        assert_eq!(v0, 0.0);
        assert_eq!(g0[0].max_abs(), 0.0);
        let (v, g) = l2_penalty_grad(&model, 1.0);
        assert_eq!(v, 1.0);
        assert_eq!(g[0].data(), Mat64::identity(2).data());
    }

    #[test]
    fn sn_penalty_hand_case_and_fd() {
        let model = MlpModel::from_layers(vec![LayerParams {
            weight: Mat64::from_diag(&[3.0, 1.0]),
            bias: vec![0.0, 0.0],
        }])
        .unwrap();
        let (v, g) = sn_penalty_grad(&model, 1.0);
        assert!((v - 4.5).abs() <= 1e-9);
        assert!((g[0].get(0, 0) - 3.0).abs() <= 1e-7);
        assert!(g[0].get(1, 1).abs() <= 1e-7);

        // FD on the top singular value squared (simple sigma_max).
        let h = 1e-6;
        let base = model.layers()[0].weight.clone();
        for i in 0..2 {
            for j in 0..2 {
                let mut plus = base.clone();
                plus[(i, j)] += h;
                let mut minus = base.clone();
                minus[(i, j)] -= h;
                let sp = svd(&plus).unwrap().sigma_max();
                let sm = svd(&minus).unwrap().sigma_max();
                let fd = (0.5 * sp * sp - 0.5 * sm * sm) / (2.0 * h);
                assert!((fd - g[0][(i, j)]).abs() <= 1e-5, "({i},{j})");
            }
        }
    }

    #[test]
    fn orthogonal_init_has_flat_spectrum() {
        for (rows, cols) in [(32, 32), (10, 48), (48, 10)] {
            let w: Mat64 = init_orthogonal_scaled(rows, cols, 0.06, 9).unwrap();
            let d = svd(&w).unwrap();
            for &s in d.singular_values() {
                assert!((s - 0.06).abs() <= 1e-9, "{rows}x{cols}: sigma {s}");
            }
        }
    }

    #[test]
    fn orthogonal_init_is_deterministic() {
        let a: Mat64 = init_orthogonal_scaled(16, 16, 0.5, 3).unwrap();
        let b: Mat64 = init_orthogonal_scaled(16, 16, 0.5, 3).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn glorot_bounds_and_variance() {
        let (rows, cols) = (256, 256);
        let w: Mat64 = init_glorot_uniform(rows, cols, 77);
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for &v in w.data() {
            assert!(v.abs() <= limit);
            sum += v;
            sumsq += v * v;
        }
        let n = (rows * cols) as f64;
        let var = sumsq / n - (sum / n).powi(2);
        let expected = 2.0 / (rows + cols) as f64;
        assert!((var - expected).abs() <= 0.1 * expected, "var {var} vs {expected}");
        let w2: Mat64 = init_glorot_uniform(rows, cols, 77);
        assert_eq!(w.data(), w2.data());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = toy_model(&[6, 5, 4], 23);
        let dir = std::env::temp_dir().join("cmr_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&model, &path, 23, &serde_json::json!({"note": "test"})).unwrap();
        let loaded: MlpModel<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.depth(), model.depth());
        for (a, b) in loaded.layers().iter().zip(model.layers()) {
            assert_eq!(a.weight.data(), b.weight.data());
            assert_eq!(a.bias, b.bias);
        }
        let sidecar = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(sidecar.contains("tanh"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_truncation() {
        let dir = std::env::temp_dir().join("cmr_ckpt_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(CmrError::FormatError { .. })
        ));

        let model = toy_model(&[3, 2], 1);
        let good = dir.join("good.ckpt");
        save_checkpoint(&model, &good, 1, &serde_json::Value::Null).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        match load_checkpoint::<f64>(&path) {
            Err(CmrError::FormatError { offset, .. }) => assert!(offset > 0),
            other => panic!("expected FormatError, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
