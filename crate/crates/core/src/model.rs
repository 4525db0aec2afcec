//! The trainable classifier: an optional tanh hidden layer feeding a linear
//! head. `forward` exposes both the penultimate features (the head's input)
//! and the logits, since scoring works in feature space.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, log_sum_exp, matmul_bt, softmax_unchecked, Matrix, Stream, Vector};

/// Elementwise nonlinearity of the hidden layer. Only `tanh` is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

/// Feature stage selector: raw inputs, or one hidden layer of the given width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Architecture {
    Linear,
    Mlp { hidden: usize },
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "linear" {
            return Ok(Architecture::Linear);
        }
        if let Some(width) = s.strip_prefix("mlp:") {
            let hidden: usize = width
                .parse()
                .map_err(|_| Error::config("arch", format!("bad hidden width in {s:?}")))?;
            if hidden == 0 {
                return Err(Error::config("arch", "hidden width must be positive"));
            }
            return Ok(Architecture::Mlp { hidden });
        }
        Err(Error::config(
            "arch",
            format!("unknown architecture {s:?} (expected linear or mlp:H)"),
        ))
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub biases: Vector,
    pub activation: Activation,
}

/// The last layer: class `i` scores `weights.row(i) · y + biases[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `n_classes × feat_dim`
    pub weights: Matrix,
    pub biases: Vector,
}

impl LinearHead {
    pub fn new(weights: Matrix, biases: Vector) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::shape(
                "LinearHead::new",
                format!("{} weight rows, {} biases", weights.rows(), biases.len()),
            ));
        }
        if weights.rows() < 2 {
            return Err(Error::config("n_classes", "a head needs at least 2 classes"));
        }
        if !weights.is_finite() || biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("head parameters"));
        }
        Ok(LinearHead { weights, biases })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Class scores for one feature vector.
    pub fn scores(&self, y: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(self.biases.iter())
            .map(|(w, b)| numerics::dot(w, y) + b)
            .collect()
    }

    /// `features · Wᵀ + 1 · bᵀ`
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        let mut out = matmul_bt(features, &self.weights)?;
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(self.biases.iter()) {
                *o += b;
            }
        }
        Ok(out)
    }
}

/// Parameters of the whole network. The same shape doubles as its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub hidden: Option<DenseLayer>,
    pub head: LinearHead,
}

pub type Gradient = NetworkParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    /// Penultimate features, one row per input.
    pub features: Matrix,
    /// Head scores, one row per input.
    pub logits: Matrix,
}

impl ForwardResult {
    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.logits.cols()
    }

    pub fn predicted(&self) -> Vec<usize> {
        self.logits.row_iter().map(numerics::argmax).collect()
    }
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(layer) => layer.weights.cols(),
            None => self.head.feat_dim(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }

    pub fn architecture(&self) -> Architecture {
        match &self.hidden {
            Some(layer) => Architecture::Mlp {
                hidden: layer.weights.rows(),
            },
            None => Architecture::Linear,
        }
    }

    /// All parameters flattened in checkpoint order: hidden weights, hidden
    /// biases, head weights, head biases.
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(layer) = &self.hidden {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.biases);
        }
        out.extend_from_slice(self.head.weights.as_slice());
        out.extend_from_slice(&self.head.biases);
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut f64> {
        let mut out: Vec<&mut f64> = Vec::new();
        if let Some(layer) = &mut self.hidden {
            out.extend(layer.weights.as_mut_slice().iter_mut());
            out.extend(layer.biases.as_mut_slice().iter_mut());
        }
        out.extend(self.head.weights.as_mut_slice().iter_mut());
        out.extend(self.head.biases.as_mut_slice().iter_mut());
        out
    }

    fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            hidden: self.hidden.as_ref().map(|l| DenseLayer {
                weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                biases: Vector::zeros(l.biases.len()),
                activation: l.activation,
            }),
            head: LinearHead {
                weights: Matrix::zeros(self.head.weights.rows(), self.head.weights.cols()),
                biases: Vector::zeros(self.head.biases.len()),
            },
        }
    }

    fn same_shape(&self, other: &NetworkParams) -> bool {
        let layer_shape = |l: &Option<DenseLayer>| {
            l.as_ref()
                .map(|l| (l.weights.rows(), l.weights.cols(), l.biases.len(), l.activation))
        };
        layer_shape(&self.hidden) == layer_shape(&other.hidden)
            && self.head.weights.rows() == other.head.weights.rows()
            && self.head.weights.cols() == other.head.weights.cols()
            && self.head.biases.len() == other.head.biases.len()
    }
}

pub fn forward(params: &NetworkParams, inputs: &Matrix) -> Result<ForwardResult> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::shape(
            "forward",
            format!(
                "inputs have {} columns, network expects {}",
                inputs.cols(),
                params.input_dim()
            ),
        ));
    }
    let features = match &params.hidden {
        None => inputs.clone(),
        Some(layer) => {
            let mut h = matmul_bt(inputs, &layer.weights)?;
            for i in 0..h.rows() {
                for (v, b) in h.row_mut(i).iter_mut().zip(layer.biases.iter()) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            h
        }
    };
    let logits = params.head.logits(&features)?;
    Ok(ForwardResult { features, logits })
}

/// Cross-entropy `-ln softmax(logits)[label]` of one row, in nats.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

pub(crate) fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
        Some((row, &label)) => Err(Error::InvalidLabel {
            row,
            label,
            n_classes,
        }),
        None => Ok(()),
    }
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_grad(params: &NetworkParams, inputs: &Matrix, labels: &[usize]) -> Result<(f64, Gradient)> {
    if inputs.rows() == 0 {
        return Err(Error::Empty("loss over an empty batch"));
    }
    if labels.len() != inputs.rows() {
        return Err(Error::shape(
            "loss_and_grad",
            format!("{} labels for {} rows", labels.len(), inputs.rows()),
        ));
    }
    check_labels(labels, params.n_classes())?;

    let fr = forward(params, inputs)?;
    let n = inputs.rows() as f64;
    let mut grad = params.zeros_like();

    // d loss / d logits = (softmax - onehot) / n
    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(fr.logits.rows(), fr.logits.cols());
    for (k, &label) in labels.iter().enumerate() {
        let row = fr.logits.row(k);
        loss += cross_entropy(row, label);
        let p = softmax_unchecked(row);
        let d = dlogits.row_mut(k);
        for (dj, pj) in d.iter_mut().zip(p.iter()) {
            *dj = pj / n;
        }
        d[label] -= 1.0 / n;
    }
    loss /= n;

    for k in 0..dlogits.rows() {
        let d = dlogits.row(k);
        let y = fr.features.row(k);
        for (i, &di) in d.iter().enumerate() {
            grad.head.biases.as_mut_slice()[i] += di;
            for (g, &yj) in grad.head.weights.row_mut(i).iter_mut().zip(y) {
                *g += di * yj;
            }
        }
    }

    if let (Some(layer), Some(glayer)) = (&params.hidden, &mut grad.hidden) {
        let w2 = &params.head.weights;
        for k in 0..dlogits.rows() {
            let d = dlogits.row(k);
            let h = fr.features.row(k);
            let x = inputs.row(k);
            for (j, &hj) in h.iter().enumerate() {
                let mut dh = 0.0;
                for (i, &di) in d.iter().enumerate() {
                    dh += di * w2[(i, j)];
                }
                let dz = dh * layer.activation.derivative_from_output(hj);
                glayer.biases.as_mut_slice()[j] += dz;
                for (g, &xm) in glayer.weights.row_mut(j).iter_mut().zip(x) {
                    *g += dz * xm;
                }
            }
        }
    }

    Ok((loss, grad))
}

/// `params - lr * grad`, elementwise.
pub fn sgd_step(params: &NetworkParams, grad: &Gradient, lr: f64) -> Result<NetworkParams> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::config(
            "lr",
            format!("learning rate {lr} must be finite and >= 0"),
        ));
    }
    if !params.same_shape(grad) {
        return Err(Error::shape("sgd_step", "gradient shape differs from parameters"));
    }
    let mut next = params.clone();
    for (p, g) in next.values_mut().into_iter().zip(grad.values()) {
        *p -= lr * g;
    }
    if next.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameters after SGD step"));
    }
    Ok(next)
}

/// Fresh parameters. Weights are `N(0, 1/fan_in)`, biases zero; hidden layer
/// weights are drawn before head weights, each row-major.
pub fn init_params(
    arch: Architecture,
    input_dim: usize,
    n_classes: usize,
    stream: &mut Stream,
) -> Result<NetworkParams> {
    if input_dim == 0 {
        return Err(Error::config("dim", "input dimension must be positive"));
    }
    if n_classes < 2 {
        return Err(Error::config("classes", "need at least 2 classes"));
    }
    let mut gaussian_matrix = |rows: usize, cols: usize| {
        let scale = (1.0 / cols as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| scale * stream.gaussian())
    };
    let (hidden, feat_dim) = match arch {
        Architecture::Linear => (None, input_dim),
        Architecture::Mlp { hidden } => {
            if hidden == 0 {
                return Err(Error::config("arch", "hidden width must be positive"));
            }
            let layer = DenseLayer {
                weights: gaussian_matrix(hidden, input_dim),
                biases: Vector::zeros(hidden),
                activation: Activation::Tanh,
            };
            (Some(layer), hidden)
        }
    };
    let head = LinearHead {
        weights: gaussian_matrix(n_classes, feat_dim),
        biases: Vector::zeros(n_classes),
    };
    Ok(NetworkParams { hidden, head })
}

// Checkpoint text layout, one record per line:
//
//   mms-params v1
//   hidden <out> <in> tanh | hidden none
//   <out lines of <in> weights> <one line of <out> biases>   (if hidden)
//   head <n_classes> <feat_dim>
//   <n_classes lines of <feat_dim> weights> <one line of <n_classes> biases>
//
// Values are space separated in Rust's shortest round-trip `{:e}` form.
const CHECKPOINT_MAGIC: &str = "mms-params v1";

pub fn checkpoint_to_string(params: &NetworkParams) -> String {
    fn push_values(out: &mut String, values: &[f64]) {
        let line: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fn push_block(out: &mut String, weights: &Matrix, biases: &[f64]) {
        for row in weights.row_iter() {
            push_values(out, row);
        }
        push_values(out, biases);
    }

    let mut out = format!("{CHECKPOINT_MAGIC}\n");
    match &params.hidden {
        None => out.push_str("hidden none\n"),
        Some(layer) => {
            out.push_str(&format!(
                "hidden {} {} {}\n",
                layer.weights.rows(),
                layer.weights.cols(),
                layer.activation.name()
            ));
            push_block(&mut out, &layer.weights, &layer.biases);
        }
    }
    out.push_str(&format!(
        "head {} {}\n",
        params.head.weights.rows(),
        params.head.weights.cols()
    ));
    push_block(&mut out, &params.head.weights, &params.head.biases);
    out
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(checkpoint_to_string(params).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

pub fn parse_checkpoint(text: &str, path: &Path) -> Result<NetworkParams> {
    let mut cursor = CheckpointCursor {
        lines: text.lines().enumerate(),
        path,
        line: 0,
    };

    let magic = cursor.next_line("header")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(cursor.bad(format!("expected {CHECKPOINT_MAGIC:?}")));
    }

    let record = cursor.next_line("hidden record")?;
    let mut tokens = record.split_whitespace();
    if tokens.next() != Some("hidden") {
        return Err(cursor.bad("expected hidden record".into()));
    }
    let hidden = match tokens.next() {
        Some("none") => None,
        t => {
            let rows = cursor.dim(t)?;
            let cols = cursor.dim(tokens.next())?;
            let activation = match tokens.next() {
                Some("tanh") => Activation::Tanh,
                other => return Err(cursor.bad(format!("unknown activation {other:?}"))),
            };
            let (weights, biases) = cursor.block(rows, cols)?;
            Some(DenseLayer {
                weights,
                biases,
                activation,
            })
        }
    };

    let record = cursor.next_line("head record")?;
    let mut tokens = record.split_whitespace();
    if tokens.next() != Some("head") {
        return Err(cursor.bad("expected head record".into()));
    }
    let rows = cursor.dim(tokens.next())?;
    let cols = cursor.dim(tokens.next())?;
    let (weights, biases) = cursor.block(rows, cols)?;
    let head = LinearHead::new(weights, biases).map_err(|e| cursor.bad(e.to_string()))?;
    if let Some(layer) = &hidden {
        if layer.weights.rows() != head.feat_dim() {
            return Err(cursor.bad("head width does not match hidden layer".into()));
        }
    }
    Ok(NetworkParams { hidden, head })
}

struct CheckpointCursor<'a, I> {
    lines: I,
    path: &'a Path,
    line: usize,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> CheckpointCursor<'a, I> {
    fn bad(&self, reason: String) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            line: self.line,
            reason,
        }
    }

    fn next_line(&mut self, what: &str) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.bad(format!("unexpected end of file, expected {what}"))),
        }
    }

    fn dim(&self, token: Option<&str>) -> Result<usize> {
        token
            .and_then(|t| t.parse().ok())
            .filter(|&d: &usize| d > 0)
            .ok_or_else(|| self.bad("missing or invalid dimension".into()))
    }

    fn values(&mut self, expect: usize) -> Result<Vec<f64>> {
        let line = self.next_line("values")?;
        let mut values = Vec::with_capacity(expect);
        for t in line.split_whitespace() {
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => return Err(self.bad(format!("bad number {t:?}"))),
            }
        }
        if values.len() != expect {
            return Err(self.bad(format!("{} values, expected {expect}", values.len())));
        }
        Ok(values)
    }

    fn block(&mut self, rows: usize, cols: usize) -> Result<(Matrix, Vector)> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.values(cols)?);
        }
        let biases = self.values(rows)?;
        Ok((Matrix::from_vec(rows, cols, data)?, biases.into()))
    }
}
