//! Feed-forward network definition, JSON loading, random generation and evaluation.
//!
//! A network with `ℓ` hidden layers stores `ℓ + 1` affine maps. The activation is
//! applied after maps `0..ℓ`; the last map produces the output directly.
//!
//! Variables are numbered in one flat index space: node `j` (0-based) of variable
//! layer `i` (layer 0 holds the inputs, layer `i ≥ 1` the outputs of hidden layer
//! `i`) has index `offset(i) + j` with `offset(i) = Σ_{k<i} n_k`. The network output
//! is never a variable; it is substituted as an affine expression of the last layer.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Tanh => v.tanh(),
        }
    }

    /// First derivative. For ReLU the right derivative at 0 is returned.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = self.apply(v);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::UnknownActivation(s.to_string())),
        }
    }
}

/// One affine map `v = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Self {
        Self { weights, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs())
            .map(|r| {
                let row = self.weights.row(r);
                row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.bias[r]
            })
            .collect()
    }
}

/// Axis-aligned box `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] <= hi[i])) {
            return Err(Error::Config(format!(
                "box coordinate {i} has lo {} > hi {}",
                lo[i], hi[i]
            )));
        }
        Ok(Self { lo, hi })
    }

    /// The same interval `[lo, hi]` in every coordinate.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }
}

/// One face `cᵀ y ≤ d` of an output polytope. `d` is what verification bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub normal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSpec {
    pub faces: Vec<Face>,
}

impl PolytopeSpec {
    pub fn new(normals: Vec<Vec<f64>>) -> Result<Self> {
        if normals.is_empty() {
            return Err(Error::Config("polytope needs at least one face".into()));
        }
        if normals.iter().any(|c| c.iter().all(|v| *v == 0.0)) {
            return Err(Error::Config("face normal must be nonzero".into()));
        }
        Ok(Self {
            faces: normals
                .into_iter()
                .map(|normal| Face {
                    normal,
                    offset: None,
                })
                .collect(),
        })
    }

    /// The `2 n_y` faces `±e_i`, ordered `+e_0, -e_0, +e_1, ...`.
    pub fn axis_aligned(n_y: usize) -> Self {
        let mut normals = Vec::with_capacity(2 * n_y);
        for i in 0..n_y {
            for sign in [1.0, -1.0] {
                let mut c = vec![0.0; n_y];
                c[i] = sign;
                normals.push(c);
            }
        }
        Self::new(normals).expect("axis faces are nonzero")
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

/// Values of every variable layer plus the pre-activations and the output.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `x^0 .. x^ℓ`.
    pub layers: Vec<Vec<f64>>,
    /// `v^0 .. v^{ℓ-1}`.
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Trace {
    /// All variables in global index order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    activation: Activation,
    layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    activation: String,
    layers: Vec<LayerFile>,
}

impl NetworkModel {
    /// Validates the shape chain.
    pub fn new(activation: Activation, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                detail: "network has no layers".into(),
            });
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::ShapeMismatch {
                    layer: k,
                    detail: format!(
                        "bias has {} entries but W has {} rows",
                        layer.bias.len(),
                        layer.outputs()
                    ),
                });
            }
            if layer.outputs() == 0 || layer.inputs() == 0 {
                return Err(Error::ShapeMismatch {
                    layer: k,
                    detail: "empty weight matrix".into(),
                });
            }
            if k > 0 && layer.inputs() != layers[k - 1].outputs() {
                return Err(Error::ShapeMismatch {
                    layer: k,
                    detail: format!(
                        "W has {} columns but layer {} has {} nodes",
                        layer.inputs(),
                        k - 1,
                        layers[k - 1].outputs()
                    ),
                });
            }
        }
        Ok(Self { activation, layers })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let activation: Activation = file.activation.parse()?;
        let mut layers = Vec::with_capacity(file.layers.len());
        for (k, lf) in file.layers.into_iter().enumerate() {
            let rows = lf.w.len();
            let cols = lf.w.first().map_or(0, Vec::len);
            if let Some(r) = lf.w.iter().position(|row| row.len() != cols) {
                return Err(Error::ShapeMismatch {
                    layer: k,
                    detail: format!("row {r} of W is ragged"),
                });
            }
            let weights = DMatrix::from_fn(rows, cols, |r, c| lf.w[r][c]);
            layers.push(Layer::new(weights, DVector::from_vec(lf.b)));
        }
        Self::new(activation, layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            activation: self.activation.name().to_string(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: (0..l.outputs())
                        .map(|r| l.weights.row(r).iter().copied().collect())
                        .collect(),
                    b: l.bias.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// Weights and biases drawn i.i.d. from a standard Gaussian.
    ///
    /// Parameters are drawn layer by layer, `W` in row-major order followed by `b`.
    pub fn random(
        n_inputs: usize,
        n_outputs: usize,
        hidden_layers: usize,
        nodes_per_layer: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if n_inputs == 0 || n_outputs == 0 || hidden_layers == 0 || nodes_per_layer == 0 {
            return Err(Error::Config(
                "random model needs every count to be at least 1".into(),
            ));
        }
        let mut rng = CounterRng::new(seed);
        let mut widths = vec![n_inputs];
        widths.extend(std::iter::repeat(nodes_per_layer).take(hidden_layers));
        widths.push(n_outputs);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    data.push(rng.gaussian());
                }
                let weights = DMatrix::from_row_slice(rows, cols, &data);
                let bias = DVector::from_iterator(rows, (0..rows).map(|_| rng.gaussian()));
                Layer::new(weights, bias)
            })
            .collect();
        Self::new(activation, layers)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().expect("validated non-empty")
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_layer().outputs()
    }

    /// Number of hidden layers `ℓ`.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Widths of variable layers `n_0 = n_u, n_1, ..., n_ℓ`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.n_inputs()];
        w.extend(self.layers[..self.hidden_layers()].iter().map(Layer::outputs));
        w
    }

    /// Total hidden nodes `n`.
    pub fn n_hidden(&self) -> usize {
        self.widths()[1..].iter().sum()
    }

    pub fn n_variables(&self) -> usize {
        self.widths().iter().sum()
    }

    pub fn layer_offset(&self, layer: usize) -> usize {
        self.widths()[..layer].iter().sum()
    }

    pub fn var_index(&self, layer: usize, node: usize) -> usize {
        self.layer_offset(layer) + node
    }

    /// Variable indices of one variable layer.
    pub fn layer_vars(&self, layer: usize) -> std::ops::Range<usize> {
        let off = self.layer_offset(layer);
        off..off + self.widths()[layer]
    }

    /// Which variable layer owns a global index.
    pub fn layer_of_var(&self, var: usize) -> Option<usize> {
        let mut off = 0;
        for (i, w) in self.widths().into_iter().enumerate() {
            if var < off + w {
                return Some(i);
            }
            off += w;
        }
        None
    }

    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(u)?.output)
    }

    pub fn trace(&self, u: &[f64]) -> Result<Trace> {
        if u.len() != self.n_inputs() {
            return Err(Error::Dimension {
                expected: self.n_inputs(),
                got: u.len(),
            });
        }
        let mut layers = vec![u.to_vec()];
        let mut pre = Vec::with_capacity(self.hidden_layers());
        for layer in &self.layers[..self.hidden_layers()] {
            let v = layer.apply(layers.last().unwrap());
            layers.push(v.iter().map(|&z| self.activation.apply(z)).collect());
            pre.push(v);
        }
        let output = self.output_layer().apply(layers.last().unwrap());
        Ok(Trace {
            layers,
            pre,
            output,
        })
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
