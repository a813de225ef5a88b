//! Feedforward ReLU networks.
//!
//! A [`Network`] is a chain of affine layers, each optionally followed by a
//! ReLU. Convolutions are lowered to dense affine layers when a model is
//! loaded, so everything downstream only ever sees matrices.
//!
//! Tensors are flattened row-major as (channel, row, column).

use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Current version of the JSON model format.
pub const MODEL_FORMAT_VERSION: u64 = 1;

/// Dense layer `z = W h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AffineLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::DimensionMismatch {
                context: "affine layer bias",
                expected: weight.nrows(),
                got: bias.len(),
            });
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine layer"));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, h: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weight.dot(&h) + &self.bias
    }
}

/// A feedforward network `f(x) = W_n σ(... σ(W_1 x + b_1) ...) + b_n`.
///
/// Every layer but the last is followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<AffineLayer>,
    input_shape: Vec<usize>,
}

impl Network {
    /// Builds a ReLU network; the last layer is linear.
    pub fn new(layers: Vec<AffineLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Config("network has no layers".into()))?;
        let input_shape = vec![first.in_dim()];
        Self::with_input_shape(layers, input_shape)
    }

    fn with_input_shape(layers: Vec<AffineLayer>, input_shape: Vec<usize>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("network has no layers".into()));
        };
        let input_dim: usize = input_shape.iter().product();
        if input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if first.in_dim() != input_dim {
            return Err(Error::DimensionMismatch {
                context: "first layer input",
                expected: input_dim,
                got: first.in_dim(),
            });
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(Self {
            layers,
            input_shape,
        })
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    /// Number of affine layers `n`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Number of hidden (ReLU) layers, `n - 1`.
    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    /// `true` for every layer followed by a ReLU.
    pub fn activation_after(&self) -> Vec<bool> {
        (0..self.layers.len())
            .map(|i| i + 1 < self.layers.len())
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Widths of the hidden layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_count()]
            .iter()
            .map(AffineLayer::out_dim)
            .collect()
    }

    /// Same network with the last layer negated.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        let last = out.layers.last_mut().expect("non-empty");
        last.weight.mapv_inplace(|v| -v);
        last.bias.mapv_inplace(|v| -v);
        out
    }

    /// Serializes to the version-1 JSON model format as dense + relu entries.
    pub fn to_json(&self) -> Value {
        let mut entries = Vec::with_capacity(2 * self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let weight: Vec<Vec<f64>> = layer.weight.rows().into_iter().map(|r| r.to_vec()).collect();
            entries.push(json!({
                "type": "dense",
                "weight": weight,
                "bias": layer.bias.to_vec(),
            }));
            if i + 1 < self.layers.len() {
                entries.push(json!({ "type": "relu" }));
            }
        }
        json!({
            "version": MODEL_FORMAT_VERSION,
            "input_shape": self.input_shape,
            "layers": entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// 2-d convolution, lowered to a dense layer by [`lower_conv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    /// `(out_ch, in_ch, kh, kw)`
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    /// `(channels, height, width)`
    pub input_shape: (usize, usize, usize),
}

impl ConvSpec {
    /// Output `(channels, height, width)`.
    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        let (out_ch, in_ch, kh, kw) = self.kernel.dim();
        let (c, h, w) = self.input_shape;
        if in_ch != c {
            return Err(Error::DimensionMismatch {
                context: "conv input channels",
                expected: c,
                got: in_ch,
            });
        }
        if self.bias.len() != out_ch {
            return Err(Error::DimensionMismatch {
                context: "conv bias",
                expected: out_ch,
                got: self.bias.len(),
            });
        }
        let (sh, sw) = self.stride;
        if sh == 0 || sw == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        let (ph, pw) = self.padding;
        let span = |n: usize, p: usize, k: usize, s: usize| -> Option<usize> {
            let padded = n + 2 * p;
            (k > 0 && padded >= k).then(|| (padded - k) / s + 1)
        };
        match (span(h, ph, kh, sh), span(w, pw, kw, sw)) {
            (Some(oh), Some(ow)) if out_ch > 0 => Ok((out_ch, oh, ow)),
            _ => Err(Error::Config(format!(
                "conv output dims are not positive for input {h}x{w}, kernel {kh}x{kw}, padding {ph}x{pw}"
            ))),
        }
    }
}

/// Lowers a convolution to an equivalent dense layer over row-major
/// (channel, row, column) flattened tensors.
pub fn lower_conv(spec: &ConvSpec) -> Result<AffineLayer> {
    let (out_ch, oh, ow) = spec.output_shape()?;
    let (_, in_ch, kh, kw) = spec.kernel.dim();
    let (_, h, w) = spec.input_shape;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;

    let mut weight = Array2::<f64>::zeros((out_ch * oh * ow, in_ch * h * w));
    let mut bias = Array1::<f64>::zeros(out_ch * oh * ow);
    for o in 0..out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (o * oh + oy) * ow + ox;
                bias[row] = spec.bias[o];
                for c in 0..in_ch {
                    for ky in 0..kh {
                        let Some(iy) = (oy * sh + ky).checked_sub(ph).filter(|&y| y < h) else {
                            continue;
                        };
                        for kx in 0..kw {
                            let Some(ix) = (ox * sw + kx).checked_sub(pw).filter(|&x| x < w)
                            else {
                                continue;
                            };
                            weight[[row, (c * h + iy) * w + ix]] += spec.kernel[[o, c, ky, kx]];
                        }
                    }
                }
            }
        }
    }
    AffineLayer::new(weight, bias)
}

/// Reads and validates a version-1 JSON model.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_network(&text)
}

/// Parses a version-1 JSON model from a string.
pub fn parse_network(text: &str) -> Result<Network> {
    let doc: Value = serde_json::from_str(text)?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Config("model must be a JSON object".into()))?;

    match obj.get("version").and_then(Value::as_u64) {
        Some(MODEL_FORMAT_VERSION) => {}
        other => {
            return Err(Error::Config(format!(
                "unsupported model version {other:?}, expected {MODEL_FORMAT_VERSION}"
            )))
        }
    }

    let input_shape: Vec<usize> = obj
        .get("input_shape")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Config("missing input_shape".into()))?
        .iter()
        .map(|v| v.as_u64().filter(|&n| n > 0).map(|n| n as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Config("input_shape entries must be positive integers".into()))?;
    if input_shape.len() != 1 && input_shape.len() != 3 {
        return Err(Error::Config(
            "input_shape must be [d] or [channels, height, width]".into(),
        ));
    }

    let entries = obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Config("missing layers array".into()))?;

    // Shape of the tensor flowing into the next entry.
    let mut shape = input_shape.clone();
    let mut layers: Vec<AffineLayer> = Vec::new();
    let mut relu_after: Vec<bool> = Vec::new();
    let mut entry_of_layer: Vec<usize> = Vec::new();

    for (index, entry) in entries.iter().enumerate() {
        let layer_err = |message: String| Error::Layer { index, message };
        let kind = entry
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| layer_err("missing \"type\"".into()))?;
        match kind {
            "relu" => {
                match relu_after.last_mut() {
                    None => return Err(layer_err("relu must follow a dense or conv2d entry".into())),
                    Some(true) => return Err(layer_err("consecutive relu entries".into())),
                    Some(flag) => *flag = true,
                }
                if index + 1 == entries.len() {
                    return Err(layer_err("relu must not be the last entry".into()));
                }
            }
            "dense" => {
                let weight = parse_matrix(entry.get("weight")).map_err(&layer_err)?;
                let bias = parse_vector(entry.get("bias"), "bias").map_err(&layer_err)?;
                let in_dim: usize = shape.iter().product();
                if weight.ncols() != in_dim {
                    return Err(layer_err(format!(
                        "dimension mismatch: weight has {} columns, input has {in_dim}",
                        weight.ncols()
                    )));
                }
                let layer = AffineLayer::new(weight, bias).map_err(|e| layer_err(e.to_string()))?;
                shape = vec![layer.out_dim()];
                layers.push(layer);
                relu_after.push(false);
                entry_of_layer.push(index);
            }
            "conv2d" => {
                let &[c, h, w] = shape.as_slice() else {
                    return Err(layer_err(
                        "conv2d needs a [channels, height, width] input".into(),
                    ));
                };
                let kernel = parse_kernel(entry.get("kernel")).map_err(&layer_err)?;
                let bias = parse_vector(entry.get("bias"), "bias").map_err(&layer_err)?;
                let stride = parse_pair(entry.get("stride"), (1, 1), "stride").map_err(&layer_err)?;
                let padding = parse_pair(entry.get("padding"), (0, 0), "padding").map_err(&layer_err)?;
                let spec = ConvSpec {
                    kernel,
                    bias,
                    stride,
                    padding,
                    input_shape: (c, h, w),
                };
                let (oc, oh, ow) = spec.output_shape().map_err(|e| layer_err(e.to_string()))?;
                let layer = lower_conv(&spec).map_err(|e| layer_err(e.to_string()))?;
                shape = vec![oc, oh, ow];
                layers.push(layer);
                relu_after.push(false);
                entry_of_layer.push(index);
            }
            other => return Err(layer_err(format!("unsupported layer type \"{other}\""))),
        }
    }

    if layers.is_empty() {
        return Err(Error::Config("model has no dense or conv2d layers".into()));
    }
    // A network is σ after every affine layer but the last.
    let n = relu_after.len();
    if let Some(missing) = relu_after[..n - 1].iter().position(|&r| !r) {
        return Err(Error::Layer {
            index: entry_of_layer[missing],
            message: "hidden layer is not followed by relu".into(),
        });
    }
    Network::with_input_shape(layers, input_shape)
}

fn parse_vector(value: Option<&Value>, what: &str) -> std::result::Result<Array1<f64>, String> {
    let arr = value
        .and_then(Value::as_array)
        .ok_or_else(|| format!("missing or non-array \"{what}\""))?;
    let vals: Vec<f64> = arr
        .iter()
        .map(Value::as_f64)
        .collect::<Option<_>>()
        .ok_or_else(|| format!("\"{what}\" must contain numbers"))?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(format!("non-finite entry in \"{what}\""));
    }
    Ok(Array1::from(vals))
}

fn parse_matrix(value: Option<&Value>) -> std::result::Result<Array2<f64>, String> {
    let rows = value
        .and_then(Value::as_array)
        .ok_or_else(|| "missing or non-array \"weight\"".to_string())?;
    if rows.is_empty() {
        return Err("\"weight\" has no rows".into());
    }
    let parsed: Vec<Array1<f64>> = rows
        .iter()
        .map(|r| parse_vector(Some(r), "weight"))
        .collect::<std::result::Result<_, _>>()?;
    let cols = parsed[0].len();
    if cols == 0 || parsed.iter().any(|r| r.len() != cols) {
        return Err("dimension mismatch: \"weight\" rows have unequal or zero length".into());
    }
    let flat: Vec<f64> = parsed.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((parsed.len(), cols), flat).map_err(|e| e.to_string())
}

fn parse_kernel(value: Option<&Value>) -> std::result::Result<Array4<f64>, String> {
    let outer = value
        .and_then(Value::as_array)
        .ok_or_else(|| "missing or non-array \"kernel\"".to_string())?;
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut flat = Vec::new();
    for out in outer {
        let ins = out.as_array().ok_or("kernel must be 4-dimensional")?;
        let mut kh_kw: Option<(usize, usize)> = None;
        for inp in ins {
            let m = parse_matrix(Some(inp)).map_err(|e| format!("kernel: {e}"))?;
            match kh_kw {
                None => kh_kw = Some(m.dim()),
                Some(d) if d != m.dim() => return Err("kernel slices have unequal shapes".into()),
                _ => {}
            }
            flat.extend(m.iter().copied());
        }
        let (kh, kw) = kh_kw.ok_or("kernel has no input channels")?;
        let d = (ins.len(), kh, kw);
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => return Err("kernel output slices have unequal shapes".into()),
            _ => {}
        }
    }
    let (ci, kh, kw) = dims.ok_or("kernel has no output channels")?;
    Array4::from_shape_vec((outer.len(), ci, kh, kw), flat).map_err(|e| e.to_string())
}

fn parse_pair(
    value: Option<&Value>,
    default: (usize, usize),
    what: &str,
) -> std::result::Result<(usize, usize), String> {
    let Some(value) = value else {
        return Ok(default);
    };
    let arr = value
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| format!("\"{what}\" must be a pair of integers"))?;
    let get = |v: &Value| v.as_u64().map(|n| n as usize);
    match (get(&arr[0]), get(&arr[1])) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(format!("\"{what}\" must be a pair of non-negative integers")),
    }
}

fn check_input(net: &Network, x: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "network input",
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Evaluates the network, returning the output and the hidden
/// pre-activations `z_1 .. z_{n-1}`.
pub fn forward(net: &Network, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Vec<Array1<f64>>)> {
    check_input(net, x)?;
    let mut pre = Vec::with_capacity(net.hidden_count());
    let mut h = x.to_owned();
    for layer in &net.layers()[..net.hidden_count()] {
        let z = layer.apply(h.view());
        h = z.mapv(relu);
        pre.push(z);
    }
    let out = net.layers()[net.hidden_count()].apply(h.view());
    Ok((out, pre))
}

/// Which element of the Clarke set `[0, 1]` to use at an exact kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroRule {
    Zero,
    #[default]
    One,
}

/// An element of the Clarke Jacobian at `x`: `W_n Δ_{n-1} W_{n-1} ... Δ_1 W_1`.
pub fn jacobian_at(net: &Network, x: ArrayView1<'_, f64>, zero_rule: ZeroRule) -> Result<Array2<f64>> {
    let (_, pre) = forward(net, x)?;
    let at_zero = match zero_rule {
        ZeroRule::Zero => 0.0,
        ZeroRule::One => 1.0,
    };
    let gates: Vec<Array1<f64>> = pre
        .iter()
        .map(|z| {
            z.mapv(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    0.0
                } else {
                    at_zero
                }
            })
        })
        .collect();
    Ok(pattern_jacobian(net, &gates))
}

/// `W_n D_{n-1} W_{n-1} ... D_1 W_1` for diagonal gates `D_i`.
pub fn pattern_jacobian(net: &Network, gates: &[Array1<f64>]) -> Array2<f64> {
    debug_assert_eq!(gates.len(), net.hidden_count());
    let layers = net.layers();
    let mut jac = layers[layers.len() - 1].weight.clone();
    for (layer, gate) in layers[..layers.len() - 1].iter().zip(gates).rev() {
        let scaled = &jac * &gate.view().insert_axis(ndarray::Axis(0));
        jac = scaled.dot(&layer.weight);
    }
    jac
}

/// Induced ∞-norm: maximum absolute row sum.
pub fn inf_norm(m: &Array2<f64>) -> f64 {
    m.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[inline]
pub(crate) fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Seeded random MLP with layer sizes `[d, h_1, ..., h_{n-1}, K]`.
///
/// Weights are drawn from `N(0, 2 / fan_in)`, biases from `N(0, 0.1²)`.
pub fn random_mlp(sizes: &[usize], seed: u64) -> Result<Network> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Config(
            "layer sizes need at least input and output widths, all positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bias_dist = Normal::new(0.0, 0.1).expect("valid normal");
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid normal");
            let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut rng));
            let bias = Array1::from_shape_simple_fn(fan_out, || bias_dist.sample(&mut rng));
            AffineLayer::new(weight, bias)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

/// Uniform point in `[-1, 1]^d`, seeded.
pub fn random_point(dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_simple_fn(dim, || rng.random_range(-1.0..=1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Network {
        // W1=[[1]], b=[-1], relu, W2=[[2]], b=[0]
        Network::new(vec![
            AffineLayer::new(array![[1.0]], array![-1.0]).unwrap(),
            AffineLayer::new(array![[2.0]], array![0.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn loads_single_dense_layer() {
        let net = parse_network(
            r#"{"version":1,"input_shape":[2],"layers":[{"type":"dense","weight":[[1,-2],[3,4]],"bias":[0,0]}]}"#,
        )
        .unwrap();
        assert_eq!(net.depth(), 1);
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.output_dim(), 2);
        assert_eq!(net.layers()[0].weight, array![[1.0, -2.0], [3.0, 4.0]]);
        assert_eq!(net.activation_after(), vec![false]);
    }

    #[test]
    fn loads_dense_relu_dense() {
        let net = parse_network(
            r#"{"version":1,"input_shape":[1],"layers":[
                {"type":"dense","weight":[[1]],"bias":[0]},
                {"type":"relu"},
                {"type":"dense","weight":[[3]],"bias":[0]}]}"#,
        )
        .unwrap();
        assert_eq!(net.activation_after(), vec![true, false]);
    }

    #[test]
    fn rejects_bias_length_mismatch_with_layer_index() {
        let err = parse_network(
            r#"{"version":1,"input_shape":[2],"layers":[
                {"type":"dense","weight":[[1,0],[0,1]],"bias":[0,0]},
                {"type":"relu"},
                {"type":"dense","weight":[[1,2]],"bias":[0,0]}]}"#,
        )
        .unwrap_err();
        match err {
            Error::Layer { index, message } => {
                assert_eq!(index, 2);
                assert!(message.contains("mismatch"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_relu_placement_and_unknown_types() {
        let cases = [
            r#"{"version":1,"input_shape":[1],"layers":[{"type":"relu"},{"type":"dense","weight":[[1]],"bias":[0]}]}"#,
            r#"{"version":1,"input_shape":[1],"layers":[{"type":"dense","weight":[[1]],"bias":[0]},{"type":"relu"}]}"#,
            r#"{"version":1,"input_shape":[1],"layers":[{"type":"dense","weight":[[1]],"bias":[0]},{"type":"relu"},{"type":"relu"},{"type":"dense","weight":[[1]],"bias":[0]}]}"#,
            r#"{"version":1,"input_shape":[1],"layers":[{"type":"dense","weight":[[1]],"bias":[0]},{"type":"batchnorm"}]}"#,
        ];
        for (i, case) in cases.iter().enumerate() {
            assert!(
                matches!(parse_network(case), Err(Error::Layer { .. })),
                "case {i} should fail with a layer error"
            );
        }
        assert!(matches!(parse_network("{not json"), Err(Error::Json(_))));
    }

    #[test]
    fn identity_conv_is_scaled_identity() {
        let spec = ConvSpec {
            kernel: Array4::from_elem((1, 1, 1, 1), 2.0),
            bias: array![0.5],
            stride: (1, 1),
            padding: (0, 0),
            input_shape: (1, 2, 2),
        };
        let layer = lower_conv(&spec).unwrap();
        assert_eq!(layer.weight, Array2::<f64>::eye(4) * 2.0);
        assert_eq!(layer.bias, Array1::from_elem(4, 0.5));
    }

    #[test]
    fn full_window_conv_sums_inputs() {
        let spec = ConvSpec {
            kernel: Array4::from_elem((1, 1, 2, 2), 1.0),
            bias: array![0.0],
            stride: (1, 1),
            padding: (0, 0),
            input_shape: (1, 2, 2),
        };
        let layer = lower_conv(&spec).unwrap();
        assert_eq!(layer.weight, array![[1.0, 1.0, 1.0, 1.0]]);
    }

    #[test]
    fn strided_conv_shape() {
        let spec = ConvSpec {
            kernel: Array4::from_elem((1, 1, 2, 2), 1.0),
            bias: array![0.0],
            stride: (2, 2),
            padding: (0, 0),
            input_shape: (1, 4, 4),
        };
        assert_eq!(spec.output_shape().unwrap(), (1, 2, 2));
        assert_eq!(lower_conv(&spec).unwrap().weight.dim(), (4, 16));
    }

    #[test]
    fn conv_rejects_empty_output() {
        let spec = ConvSpec {
            kernel: Array4::from_elem((1, 1, 3, 3), 1.0),
            bias: array![0.0],
            stride: (1, 1),
            padding: (0, 0),
            input_shape: (1, 2, 2),
        };
        assert!(lower_conv(&spec).is_err());
    }

    #[test]
    fn forward_examples() {
        let id = Network::new(vec![AffineLayer::new(array![[1.0]], array![0.0]).unwrap()]).unwrap();
        assert_eq!(forward(&id, array![3.0].view()).unwrap().0, array![3.0]);

        let net = toy();
        let (out, pre) = forward(&net, array![2.0].view()).unwrap();
        assert_eq!(pre[0], array![1.0]);
        assert_eq!(out, array![2.0]);
        let (out, pre) = forward(&net, array![0.0].view()).unwrap();
        assert_eq!(pre[0], array![-1.0]);
        assert_eq!(out, array![0.0]);

        assert!(forward(&net, array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let net = Network::new(vec![
            AffineLayer::new(array![[1.0]], array![0.0]).unwrap(),
            AffineLayer::new(array![[3.0]], array![0.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(jacobian_at(&net, array![2.0].view(), ZeroRule::One).unwrap(), array![[3.0]]);
        assert_eq!(jacobian_at(&net, array![-2.0].view(), ZeroRule::One).unwrap(), array![[0.0]]);
        // kink: the rule picks the Clarke element
        assert_eq!(jacobian_at(&net, array![0.0].view(), ZeroRule::One).unwrap(), array![[3.0]]);
        assert_eq!(jacobian_at(&net, array![0.0].view(), ZeroRule::Zero).unwrap(), array![[0.0]]);

        // all-positive pre-activations: plain product
        let net = Network::new(vec![
            AffineLayer::new(array![[1.0, 1.0], [1.0, -1.0]], array![10.0, 10.0]).unwrap(),
            AffineLayer::new(array![[2.0, 1.0]], array![0.0]).unwrap(),
        ])
        .unwrap();
        let j = jacobian_at(&net, array![0.1, 0.2].view(), ZeroRule::One).unwrap();
        assert_eq!(j, array![[3.0, 1.0]]);
        assert_eq!(inf_norm(&j), 4.0);
    }

    #[test]
    fn json_round_trip_preserves_network() {
        let net = random_mlp(&[3, 5, 2], 11).unwrap();
        let back = parse_network(&net.to_json().to_string()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn random_mlp_is_seeded() {
        assert_eq!(random_mlp(&[4, 6, 2], 5).unwrap(), random_mlp(&[4, 6, 2], 5).unwrap());
        assert_ne!(random_mlp(&[4, 6, 2], 5).unwrap(), random_mlp(&[4, 6, 2], 6).unwrap());
    }
}
