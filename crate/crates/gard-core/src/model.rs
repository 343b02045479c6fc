//! The GARD networks as pure forward functions over tape tensors: two local
//! MLP autoencoders (top-down and bottom-up feature reconstruction), a global
//! GCN autoencoder over the normalized undirected graph, and the mean-pool
//! readout with a softmax classifier head.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::{KernelError, Tensor};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("checkpoint io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse error: {0}")]
    Parse(String),
    #[error("checkpoint tensor {name}: shape {got_rows}x{got_cols} differs from expected {rows}x{cols}")]
    ShapeDrift {
        name: String,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("checkpoint missing tensor {0}")]
    MissingTensor(String),
}

/// Hidden-layer nonlinearity. relu is the default; tanh is available behind
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<S: Scalar>(self, tape: &mut Tape<S>, x: &Tensor<S>) -> Result<Tensor<S>, KernelError> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation {other:?} (expected relu|tanh)")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
        }
    }
}

/// Static layer sizes of a model instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Node feature dimension.
    pub d: usize,
    /// Hidden width of every encoder/decoder.
    pub d_h: usize,
    /// Number of label classes.
    pub classes: usize,
    /// Optional extra hidden layer in the classifier head (off by default:
    /// the head is a single affine map into the softmax).
    pub classifier_hidden: Option<usize>,
}

/// Two-layer perceptron: Linear → activation → Linear, biases on both layers,
/// activation after the first layer only.
#[derive(Debug, Clone)]
pub struct MlpParams<S: Scalar> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

impl<S: Scalar> MlpParams<S> {
    fn zeros(d_in: usize, d_mid: usize, d_out: usize) -> Self {
        MlpParams {
            w1: Tensor::param(d_in, d_mid, vec![S::zero(); d_in * d_mid]).expect("shape"),
            b1: Tensor::param(1, d_mid, vec![S::zero(); d_mid]).expect("shape"),
            w2: Tensor::param(d_mid, d_out, vec![S::zero(); d_mid * d_out]).expect("shape"),
            b2: Tensor::param(1, d_out, vec![S::zero(); d_out]).expect("shape"),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        x: &Tensor<S>,
        activation: Activation,
    ) -> Result<Tensor<S>, KernelError> {
        let h = tape.matmul(x, &self.w1)?;
        let h = tape.add_bias_row(&h, &self.b1)?;
        let h = activation.apply(tape, &h)?;
        let out = tape.matmul(&h, &self.w2)?;
        tape.add_bias_row(&out, &self.b2)
    }
}

/// All learnable weights: Θ1 (the four local MLPs), Θ2 (GCN encoder/decoder
/// plus the mask token), and the supervised classifier head.
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub dims: ModelDims,
    pub activation: Activation,
    /// Top-down encoder (d → d_h → d_h).
    pub f_local1: MlpParams<S>,
    /// Top-down decoder (d_h → d_h → d).
    pub g_local1: MlpParams<S>,
    /// Bottom-up encoder.
    pub f_local2: MlpParams<S>,
    /// Bottom-up decoder.
    pub g_local2: MlpParams<S>,
    /// GCN encoder layer weights, no biases (d → d_h, d_h → d_h).
    pub gcn_w1: Tensor<S>,
    pub gcn_w2: Tensor<S>,
    /// Single-layer GCN decoder weight (d_h → d).
    pub gcn_dec_w: Tensor<S>,
    /// Optional extra head layer (3·d_h → hidden), present only when
    /// `dims.classifier_hidden` is set.
    pub head_hidden: Option<(Tensor<S>, Tensor<S>)>,
    /// Final affine map into class logits.
    pub head_w: Tensor<S>,
    pub head_b: Tensor<S>,
    /// Learnable vector substituted for masked node features.
    pub mask_token: Tensor<S>,
}

fn glorot<S: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<S> = (0..fan_in * fan_out)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    let t = Tensor::param(fan_in, fan_out, data).expect("shape");
    t
}

fn glorot_mlp<S: Scalar>(
    rng: &mut ChaCha8Rng,
    d_in: usize,
    d_mid: usize,
    d_out: usize,
) -> MlpParams<S> {
    let mut mlp = MlpParams::zeros(d_in, d_mid, d_out);
    mlp.w1 = glorot(rng, d_in, d_mid);
    mlp.w2 = glorot(rng, d_mid, d_out);
    mlp
}

/// Fresh parameters: weights from the uniform Glorot distribution
/// U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))), zero biases, zero mask
/// token. Deterministic per seed; the draw order is fixed.
pub fn init_params<S: Scalar>(
    dims: ModelDims,
    activation: Activation,
    seed: u64,
) -> ModelParams<S> {
    assert!(dims.d >= 1 && dims.d_h >= 1 && dims.classes >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, d_h, c) = (dims.d, dims.d_h, dims.classes);
    let f_local1 = glorot_mlp(&mut rng, d, d_h, d_h);
    let g_local1 = glorot_mlp(&mut rng, d_h, d_h, d);
    let f_local2 = glorot_mlp(&mut rng, d, d_h, d_h);
    let g_local2 = glorot_mlp(&mut rng, d_h, d_h, d);
    let gcn_w1 = glorot(&mut rng, d, d_h);
    let gcn_w2 = glorot(&mut rng, d_h, d_h);
    let gcn_dec_w = glorot(&mut rng, d_h, d);
    let head_in = 3 * d_h;
    let (head_hidden, head_w) = match dims.classifier_hidden {
        Some(h) => {
            let w_h = glorot(&mut rng, head_in, h);
            let b_h = Tensor::param(1, h, vec![S::zero(); h]).expect("shape");
            (Some((w_h, b_h)), glorot(&mut rng, h, c))
        }
        None => (None, glorot(&mut rng, head_in, c)),
    };
    let head_b = Tensor::param(1, c, vec![S::zero(); c]).expect("shape");
    let mask_token = Tensor::param(1, d, vec![S::zero(); d]).expect("shape");
    ModelParams {
        dims,
        activation,
        f_local1,
        g_local1,
        f_local2,
        g_local2,
        gcn_w1,
        gcn_w2,
        gcn_dec_w,
        head_hidden,
        head_w,
        head_b,
        mask_token,
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Every trainable tensor, named, in a fixed order.
    pub fn trainable(&self) -> Vec<(&'static str, Tensor<S>)> {
        let mut out = vec![
            ("f_local1.w1", self.f_local1.w1.clone()),
            ("f_local1.b1", self.f_local1.b1.clone()),
            ("f_local1.w2", self.f_local1.w2.clone()),
            ("f_local1.b2", self.f_local1.b2.clone()),
            ("g_local1.w1", self.g_local1.w1.clone()),
            ("g_local1.b1", self.g_local1.b1.clone()),
            ("g_local1.w2", self.g_local1.w2.clone()),
            ("g_local1.b2", self.g_local1.b2.clone()),
            ("f_local2.w1", self.f_local2.w1.clone()),
            ("f_local2.b1", self.f_local2.b1.clone()),
            ("f_local2.w2", self.f_local2.w2.clone()),
            ("f_local2.b2", self.f_local2.b2.clone()),
            ("g_local2.w1", self.g_local2.w1.clone()),
            ("g_local2.b1", self.g_local2.b1.clone()),
            ("g_local2.w2", self.g_local2.w2.clone()),
            ("g_local2.b2", self.g_local2.b2.clone()),
            ("f_global.w1", self.gcn_w1.clone()),
            ("f_global.w2", self.gcn_w2.clone()),
            ("g_global.w", self.gcn_dec_w.clone()),
        ];
        if let Some((w_h, b_h)) = &self.head_hidden {
            out.push(("head.hidden_w", w_h.clone()));
            out.push(("head.hidden_b", b_h.clone()));
        }
        out.push(("head.w", self.head_w.clone()));
        out.push(("head.b", self.head_b.clone()));
        out.push(("mask_token", self.mask_token.clone()));
        out
    }

    /// Θ1: the four local MLPs.
    pub fn theta1(&self) -> Vec<(&'static str, Tensor<S>)> {
        self.trainable()
            .into_iter()
            .filter(|(name, _)| name.starts_with("f_local") || name.starts_with("g_local"))
            .collect()
    }

    /// Θ2: GCN encoder/decoder weights and the mask token.
    pub fn theta2(&self) -> Vec<(&'static str, Tensor<S>)> {
        self.trainable()
            .into_iter()
            .filter(|(name, _)| {
                name.starts_with("f_global") || name.starts_with("g_global") || *name == "mask_token"
            })
            .collect()
    }

    pub fn zero_grad(&self) {
        for (_, t) in self.trainable() {
            t.zero_grad();
        }
    }
}

/// Outputs of the local reconstruction branch.
pub struct LocalForward<S: Scalar> {
    /// Top-down reconstruction from parent features; compared against X_c.
    pub z_p: Tensor<S>,
    /// Bottom-up reconstruction from child features; compared against X_p.
    pub z_c: Tensor<S>,
    pub h_p: Tensor<S>,
    pub h_c: Tensor<S>,
}

/// Top-down and bottom-up local autoencoders over the parent/child feature
/// rows. The reconstruction direction is crossed: z_p targets the child
/// features, z_c the parent features.
pub fn local_forward<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    x_p: &Tensor<S>,
    x_c: &Tensor<S>,
) -> Result<LocalForward<S>, KernelError> {
    let act = params.activation;
    let h_p = params.f_local1.forward(tape, x_p, act)?;
    let z_p = params.g_local1.forward(tape, &h_p, act)?;
    let h_c = params.f_local2.forward(tape, x_c, act)?;
    let z_c = params.g_local2.forward(tape, &h_c, act)?;
    Ok(LocalForward { z_p, z_c, h_p, h_c })
}

/// One graph convolution: act(Â · H_in · W), with the activation applied only
/// when `activate` is set (decoder layers stay linear). GCN layers carry no
/// bias.
pub fn gcn_layer<S: Scalar>(
    tape: &mut Tape<S>,
    a_hat: &Tensor<S>,
    h_in: &Tensor<S>,
    w: &Tensor<S>,
    activate: Option<Activation>,
) -> Result<Tensor<S>, KernelError> {
    let mixed = tape.matmul(a_hat, h_in)?;
    let out = tape.matmul(&mixed, w)?;
    match activate {
        Some(act) => act.apply(tape, &out),
        None => Ok(out),
    }
}

/// Global autoencoder: 2-layer GCN encoder (hidden activation after the first
/// layer) and 1-layer linear GCN decoder. Returns (Z, H): the reconstruction
/// and the latent node representations.
pub fn global_forward<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    a_hat: &Tensor<S>,
    x: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>), KernelError> {
    let h = global_encode(tape, params, a_hat, x)?;
    let z = gcn_layer(tape, a_hat, &h, &params.gcn_dec_w, None)?;
    Ok((z, h))
}

fn global_encode<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    a_hat: &Tensor<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>, KernelError> {
    let h1 = gcn_layer(tape, a_hat, x, &params.gcn_w1, Some(params.activation))?;
    gcn_layer(tape, a_hat, &h1, &params.gcn_w2, None)
}

/// Event-level representation: per-encoder mean-pooled rows concatenated in
/// the fixed order (local top-down, local bottom-up, global).
pub struct EventRepresentation<S: Scalar> {
    pub m: Tensor<S>,
    pub h_k1: Tensor<S>,
    pub h_k2: Tensor<S>,
    pub h_j: Tensor<S>,
}

/// Mean-pool each encoder's node representations over the full, unmasked
/// feature matrix and concatenate. Both local encoders see all node features
/// here, not just the paired rows.
pub fn readout<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    a_hat: &Tensor<S>,
    x: &Tensor<S>,
) -> Result<EventRepresentation<S>, KernelError> {
    let act = params.activation;
    let h_k1_nodes = params.f_local1.forward(tape, x, act)?;
    let h_k2_nodes = params.f_local2.forward(tape, x, act)?;
    let h_j_nodes = global_encode(tape, params, a_hat, x)?;
    let h_k1 = tape.mean_rows(&h_k1_nodes)?;
    let h_k2 = tape.mean_rows(&h_k2_nodes)?;
    let h_j = tape.mean_rows(&h_j_nodes)?;
    let m = tape.concat_cols(&[h_k1.clone(), h_k2.clone(), h_j.clone()])?;
    Ok(EventRepresentation { m, h_k1, h_k2, h_j })
}

/// Class logits and the softmax probability row for one event representation.
pub struct Classification<S: Scalar> {
    pub logits: Tensor<S>,
    pub probs: Tensor<S>,
}

pub fn classify<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    m: &Tensor<S>,
) -> Result<Classification<S>, KernelError> {
    let mut h = m.clone();
    if let Some((w_h, b_h)) = &params.head_hidden {
        let lin = tape.matmul(&h, w_h)?;
        let lin = tape.add_bias_row(&lin, b_h)?;
        h = params.activation.apply(tape, &lin)?;
    }
    let logits = tape.matmul(&h, &params.head_w)?;
    let logits = tape.add_bias_row(&logits, &params.head_b)?;
    let probs = tape.row_softmax(&logits)?;
    Ok(Classification { logits, probs })
}

// ── Checkpoints ─────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    dims: ModelDims,
    activation: Activation,
    tensors: BTreeMap<String, TensorRecord>,
}

pub const CHECKPOINT_FORMAT: &str = "gard-model/1";

/// Write all parameters as a versioned JSON map of named tensors.
pub fn save_checkpoint<S: Scalar>(
    params: &ModelParams<S>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut tensors = BTreeMap::new();
    for (name, t) in params.trainable() {
        tensors.insert(
            name.to_string(),
            TensorRecord {
                rows: t.rows(),
                cols: t.cols(),
                data: t.data().into_iter().map(Scalar::as_f64).collect(),
            },
        );
    }
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        dims: params.dims,
        activation: params.activation,
        tensors,
    };
    let file = File::create(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, &ckpt).map_err(|e| ModelError::Parse(e.to_string()))?;
    writer.flush().map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Load a checkpoint, rejecting any tensor whose shape drifted from the
/// declared dimensions.
pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<ModelParams<S>, ModelError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| ModelError::Parse(e.to_string()))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Parse(format!(
            "unsupported checkpoint format {:?}",
            ckpt.format
        )));
    }
    let params: ModelParams<S> = init_params(ckpt.dims, ckpt.activation, 0);
    for (name, tensor) in params.trainable() {
        let record = ckpt
            .tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))?;
        if record.rows != tensor.rows() || record.cols != tensor.cols() {
            return Err(ModelError::ShapeDrift {
                name: name.to_string(),
                rows: tensor.rows(),
                cols: tensor.cols(),
                got_rows: record.rows,
                got_cols: record.cols,
            });
        }
        tensor.load_data(record.data.iter().map(|&v| S::from_f64(v)).collect())?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn dims(d: usize, d_h: usize, classes: usize) -> ModelDims {
        ModelDims {
            d,
            d_h,
            classes,
            classifier_hidden: None,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_weights_reconstruct_zero() {
        let mut params: ModelParams<f64> = init_params(dims(3, 4, 2), Activation::Relu, 1);
        params.f_local1 = MlpParams::zeros(3, 4, 4);
        params.g_local1 = MlpParams::zeros(4, 4, 3);
        params.f_local2 = MlpParams::zeros(3, 4, 4);
        params.g_local2 = MlpParams::zeros(4, 4, 3);
        let mut tape = Tape::new();
        let x = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = local_forward(&mut tape, &params, &x, &x).unwrap();
        assert!(out.z_p.data().iter().all(|&v| v == 0.0));
        assert!(out.z_c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_forward_shapes_for_single_pair() {
        let params: ModelParams<f64> = init_params(dims(3, 5, 2), Activation::Relu, 2);
        let mut tape = Tape::new();
        let x = Tensor::new(1, 3, vec![0.5, -0.5, 1.0]).unwrap();
        let out = local_forward(&mut tape, &params, &x, &x).unwrap();
        assert_eq!((out.z_p.rows(), out.z_p.cols()), (1, 3));
        assert_eq!((out.h_p.rows(), out.h_p.cols()), (1, 5));
    }

    #[test]
    fn local_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params: ModelParams<f64> = init_params(dims(4, 3, 2), Activation::Relu, 3);
        let x_p = random_input(&mut rng, 3, 4);
        let x_c = random_input(&mut rng, 3, 4);
        let theta1: Vec<Tensor<f64>> = params.theta1().into_iter().map(|(_, t)| t).collect();
        let err = grad_check(
            |tape| {
                let out = local_forward(tape, &params, &x_p, &x_c)?;
                let sq_p = tape.mul(&out.z_p, &out.z_p)?;
                let sq_c = tape.mul(&out.z_c, &out.z_c)?;
                let sp = tape.sum_all(&sq_p)?;
                let sc = tape.sum_all(&sq_c)?;
                tape.add(&sp, &sc)
            },
            &theta1,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "max rel err {err}");
    }

    #[test]
    fn gcn_layer_identity_on_single_node() {
        let mut tape = Tape::new();
        let a_hat = Tensor::new(1, 1, vec![1.0]).unwrap();
        let h = Tensor::new(1, 2, vec![3.0, -4.0]).unwrap();
        let w = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = gcn_layer(&mut tape, &a_hat, &h, &w, None).unwrap();
        assert_eq!(out.data(), vec![3.0, -4.0]);
    }

    #[test]
    fn gcn_layer_two_node_hand_example() {
        let mut tape = Tape::new();
        let a_hat = Tensor::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let h = Tensor::new(2, 2, vec![2.0, 0.0, 0.0, 2.0]).unwrap();
        let w = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = gcn_layer(&mut tape, &a_hat, &h, &w, None).unwrap();
        assert_eq!(out.data(), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gcn_layer_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 4;
        let h = random_input(&mut rng, n, 3);
        let w = random_input(&mut rng, 3, 2);
        // Symmetric normalized-like matrix (values irrelevant for equivariance).
        let mut a_data = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.random_range(0.0..0.5);
                a_data[i * n + j] = v;
                a_data[j * n + i] = v;
            }
        }
        let a_hat = Tensor::new(n, n, a_data.clone()).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut ph = vec![0.0; n * 3];
        for (new_i, &old_i) in perm.iter().enumerate() {
            ph[new_i * 3..(new_i + 1) * 3]
                .copy_from_slice(&h.data()[old_i * 3..(old_i + 1) * 3]);
        }
        let mut pa = vec![0.0; n * n];
        for (ni, &oi) in perm.iter().enumerate() {
            for (nj, &oj) in perm.iter().enumerate() {
                pa[ni * n + nj] = a_data[oi * n + oj];
            }
        }
        let h_p = Tensor::new(n, 3, ph).unwrap();
        let a_p = Tensor::new(n, n, pa).unwrap();

        let mut tape = Tape::new();
        let base = gcn_layer(&mut tape, &a_hat, &h, &w, Some(Activation::Relu)).unwrap();
        let permuted = gcn_layer(&mut tape, &a_p, &h_p, &w, Some(Activation::Relu)).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            for j in 0..2 {
                assert!((permuted.get(new_i, j) - base.get(old_i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn global_forward_zero_weights_gives_zero() {
        let mut params: ModelParams<f64> = init_params(dims(3, 4, 2), Activation::Relu, 4);
        params.gcn_w1 = Tensor::param(3, 4, vec![0.0; 12]).unwrap();
        params.gcn_w2 = Tensor::param(4, 4, vec![0.0; 16]).unwrap();
        params.gcn_dec_w = Tensor::param(4, 3, vec![0.0; 12]).unwrap();
        let mut tape = Tape::new();
        let a_hat = Tensor::new(1, 1, vec![1.0]).unwrap();
        let x = Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let (z, _) = global_forward(&mut tape, &params, &a_hat, &x).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_forward_shapes_on_single_node() {
        let params: ModelParams<f64> = init_params(dims(3, 6, 2), Activation::Relu, 5);
        let mut tape = Tape::new();
        let a_hat = Tensor::new(1, 1, vec![1.0]).unwrap();
        let x = Tensor::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let (z, h) = global_forward(&mut tape, &params, &a_hat, &x).unwrap();
        assert_eq!((h.rows(), h.cols()), (1, 6));
        assert_eq!((z.rows(), z.cols()), (1, 3));
    }

    #[test]
    fn global_gradients_match_finite_differences_including_mask_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let params: ModelParams<f64> = init_params(dims(3, 4, 2), Activation::Relu, 6);
        let n = 4;
        let x = random_input(&mut rng, n, 3);
        let mut a_data = vec![0.0f64; n * n];
        for i in 0..n {
            a_data[i * n + i] = 0.5;
            if i + 1 < n {
                a_data[i * n + i + 1] = 0.3;
                a_data[(i + 1) * n + i] = 0.3;
            }
        }
        let a_hat = Tensor::new(n, n, a_data).unwrap();
        let theta2: Vec<Tensor<f64>> = params.theta2().into_iter().map(|(_, t)| t).collect();
        let err = grad_check(
            |tape| {
                let masked = tape.replace_rows(&x, &[1, 3], &params.mask_token)?;
                let (z, _) = global_forward(tape, &params, &a_hat, &masked)?;
                let sq = tape.mul(&z, &z)?;
                tape.sum_all(&sq)
            },
            &theta2,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "max rel err {err}");
    }

    #[test]
    fn readout_of_single_node_event() {
        let params: ModelParams<f64> = init_params(dims(3, 4, 2), Activation::Relu, 7);
        let mut tape = Tape::new();
        let a_hat = Tensor::new(1, 1, vec![1.0]).unwrap();
        let x = Tensor::new(1, 3, vec![0.4, -0.2, 0.9]).unwrap();
        let rep = readout(&mut tape, &params, &a_hat, &x).unwrap();
        assert_eq!((rep.m.rows(), rep.m.cols()), (1, 12));
        // Mean of one row is the row itself: m is the concat of the encodings.
        let expected: Vec<f64> = rep
            .h_k1
            .data()
            .into_iter()
            .chain(rep.h_k2.data())
            .chain(rep.h_j.data())
            .collect();
        assert_eq!(rep.m.data(), expected);
    }

    #[test]
    fn readout_length_is_three_hidden_widths() {
        for d_h in [2usize, 5, 8] {
            let params: ModelParams<f64> = init_params(dims(3, d_h, 2), Activation::Relu, 8);
            let mut tape = Tape::new();
            let a_hat = Tensor::new(1, 1, vec![1.0]).unwrap();
            let x = Tensor::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
            let rep = readout(&mut tape, &params, &a_hat, &x).unwrap();
            assert_eq!(rep.m.cols(), 3 * d_h);
        }
    }

    #[test]
    fn classify_uniform_under_zero_head() {
        let mut params: ModelParams<f64> = init_params(dims(2, 3, 4), Activation::Relu, 9);
        params.head_w = Tensor::param(9, 4, vec![0.0; 36]).unwrap();
        params.head_b = Tensor::param(1, 4, vec![0.0; 4]).unwrap();
        let mut tape = Tape::new();
        let m = Tensor::new(1, 9, vec![0.3; 9]).unwrap();
        let out = classify(&mut tape, &params, &m).unwrap();
        for &p in &out.probs.data() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_bias_dominates_zero_weights() {
        let mut params: ModelParams<f64> = init_params(dims(2, 3, 4), Activation::Relu, 10);
        params.head_w = Tensor::param(9, 4, vec![0.0; 36]).unwrap();
        params.head_b = Tensor::param(1, 4, vec![10.0, 0.0, 0.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let m = Tensor::new(1, 9, vec![1.0; 9]).unwrap();
        let out = classify(&mut tape, &params, &m).unwrap();
        let probs = out.probs.data();
        // softmax(10,0,0,0)[0] = e^10 / (e^10 + 3)
        let expected = 10f64.exp() / (10f64.exp() + 3.0);
        assert!((probs[0] - expected).abs() < 1e-9);
        assert!(probs[0] > 0.999);
    }

    #[test]
    fn classify_probabilities_sum_to_one() {
        let params: ModelParams<f64> = init_params(dims(2, 3, 5), Activation::Relu, 11);
        let mut tape = Tape::new();
        let m = Tensor::new(1, 9, vec![0.1, -0.4, 2.0, 0.0, 1.0, -1.0, 0.5, 0.25, -2.0]).unwrap();
        let out = classify(&mut tape, &params, &m).unwrap();
        let sum: f64 = out.probs.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_is_invariant_to_logit_shift() {
        let params: ModelParams<f64> = init_params(dims(2, 3, 3), Activation::Relu, 12);
        let mut tape = Tape::new();
        let m = Tensor::new(1, 9, vec![0.7, -0.3, 0.2, 1.1, 0.0, -0.9, 0.4, 0.8, -0.5]).unwrap();
        let out = classify(&mut tape, &params, &m).unwrap();
        let logits = out.logits.data();
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        let shifted_t = Tensor::new(1, 3, shifted).unwrap();
        let probs2 = tape.row_softmax(&shifted_t).unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
                    if x > bv {
                        (i, x)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        };
        assert_eq!(argmax(&out.probs.data()), argmax(&probs2.data()));
    }

    #[test]
    fn classifier_hidden_layer_is_exercised_when_configured() {
        let dims = ModelDims {
            d: 2,
            d_h: 3,
            classes: 2,
            classifier_hidden: Some(4),
        };
        let params: ModelParams<f64> = init_params(dims, Activation::Relu, 13);
        assert!(params.head_hidden.is_some());
        let mut tape = Tape::new();
        let m = Tensor::new(1, 9, vec![0.5; 9]).unwrap();
        let out = classify(&mut tape, &params, &m).unwrap();
        assert_eq!(out.probs.cols(), 2);
        let names: Vec<&str> = params.trainable().iter().map(|(n, _)| *n).collect();
        assert!(names.contains(&"head.hidden_w"));
    }

    #[test]
    fn init_is_deterministic_and_seeds_differ() {
        let a: ModelParams<f64> = init_params(dims(4, 6, 3), Activation::Relu, 42);
        let b: ModelParams<f64> = init_params(dims(4, 6, 3), Activation::Relu, 42);
        for ((_, ta), (_, tb)) in a.trainable().iter().zip(b.trainable().iter()) {
            assert_eq!(ta.data(), tb.data());
        }
        let c: ModelParams<f64> = init_params(dims(4, 6, 3), Activation::Relu, 43);
        let differs = a
            .trainable()
            .iter()
            .zip(c.trainable().iter())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs);
    }

    #[test]
    fn init_respects_glorot_bounds_and_zero_biases() {
        let params: ModelParams<f64> = init_params(dims(4, 6, 3), Activation::Relu, 44);
        let bound_w1 = (6.0_f64 / (4.0 + 6.0)).sqrt();
        assert!(params
            .f_local1
            .w1
            .data()
            .iter()
            .all(|v| v.abs() <= bound_w1));
        let bound_head = (6.0_f64 / (18.0 + 3.0)).sqrt();
        assert!(params.head_w.data().iter().all(|v| v.abs() <= bound_head));
        assert!(params.f_local1.b1.data().iter().all(|&v| v == 0.0));
        assert!(params.mask_token.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn theta_partition_covers_everything_but_the_head() {
        let params: ModelParams<f64> = init_params(dims(4, 6, 3), Activation::Relu, 45);
        let all = params.trainable().len();
        let t1 = params.theta1().len();
        let t2 = params.theta2().len();
        // Head = final affine map (w, b) with no hidden layer configured.
        assert_eq!(all, t1 + t2 + 2);
    }

    #[test]
    fn checkpoint_round_trip_and_shape_drift() {
        let params: ModelParams<f64> = init_params(dims(3, 4, 2), Activation::Tanh, 46);
        let mut path = std::env::temp_dir();
        path.push(format!("gard-model-test-{}.json", std::process::id()));
        save_checkpoint(&params, &path).unwrap();
        let loaded: ModelParams<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.activation, Activation::Tanh);
        for ((_, a), (_, b)) in params.trainable().iter().zip(loaded.trainable().iter()) {
            assert_eq!(a.data(), b.data());
        }

        // Corrupt a shape and expect rejection.
        let text = std::fs::read_to_string(&path).unwrap();
        let mut ckpt: serde_json::Value = serde_json::from_str(&text).unwrap();
        ckpt["tensors"]["mask_token"]["cols"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&path),
            Err(ModelError::ShapeDrift { .. })
        ));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn works_at_f32_precision_too() {
        let params: ModelParams<f32> = init_params(dims(3, 4, 2), Activation::Relu, 47);
        let mut tape = Tape::new();
        let a_hat = Tensor::new(1, 1, vec![1.0f32]).unwrap();
        let x = Tensor::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let rep = readout(&mut tape, &params, &a_hat, &x).unwrap();
        let out = classify(&mut tape, &params, &rep.m).unwrap();
        let sum: f32 = out.probs.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
}
