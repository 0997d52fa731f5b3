use std::f64::consts::TAU;
use std::path::Path;

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{map_chunks, CHUNK_ROWS};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`
    Silu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn silu(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            activation: Activation::Silu,
        }
    }
}

/// Fourier features `[t, sin(2πkt/P), cos(2πkt/P)]` for `k = 1..=frequencies`
/// and period `P`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeEmbedding {
    pub frequencies: usize,
    /// With `P = 1` the features at `t = 0` and `t = 1` coincide except for
    /// the raw `t` channel; `P = 2` keeps the endpoints apart.
    #[serde(default = "unit_period")]
    pub period: f64,
}

fn unit_period() -> f64 {
    1.0
}

impl TimeEmbedding {
    pub fn new(frequencies: usize) -> Self {
        Self {
            frequencies,
            period: 1.0,
        }
    }

    pub fn with_period(frequencies: usize, period: f64) -> Self {
        Self { frequencies, period }
    }

    pub fn width(&self) -> usize {
        1 + 2 * self.frequencies
    }

    fn write(&self, t: f64, out: &mut [f64]) {
        out[0] = t;
        for k in 1..=self.frequencies {
            let (s, c) = (TAU * k as f64 * t / self.period).sin_cos();
            out[2 * k - 1] = s;
            out[2 * k] = c;
        }
    }
}

/// A differentiable vector field `(t, x) -> R^out`, stored as one flat
/// parameter vector. Layer `l` owns a row-major `out × in` weight block
/// followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlField {
    pub arch: Architecture,
    pub time_embed: Option<TimeEmbedding>,
    /// Per-time factor applied to the network output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_scale: Option<OutputScale>,
    pub params: Vec<f64>,
}

/// Time-dependent output factor `s(t)`, so the field is `s(t) · MLP(t, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutputScale {
    /// The VP diffusion coefficient `sqrt((1 − t) β_max + t β_min)`.
    Sigma { beta_max: f64, beta_min: f64 },
}

impl OutputScale {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            OutputScale::Sigma { beta_max, beta_min } => ((1.0 - t) * beta_max + t * beta_min).max(0.0).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }
    fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }
}

/// Scalar loss with its parameter gradient.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

struct ChunkCache {
    rows: std::ops::Range<usize>,
    /// Layer inputs; `acts[0]` is the feature matrix.
    acts: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Array2<f64>>,
    /// Output factors per row, when the field has an output scale.
    scales: Option<Vec<f64>>,
}

fn scale_rows(a: &mut Array2<f64>, scales: &[f64]) {
    for (mut row, &s) in a.outer_iter_mut().zip(scales) {
        row *= s;
    }
}

/// Activations retained from a batched forward evaluation.
pub struct ForwardPass {
    pub output: Array2<f64>,
    chunks: Vec<ChunkCache>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn layers_of(arch: &Architecture, in_width: usize) -> Vec<Layer> {
    let mut dims = vec![in_width];
    dims.extend(&arch.hidden);
    dims.push(arch.output_dim);
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let l = Layer {
                fan_in: w[0],
                fan_out: w[1],
                offset,
            };
            offset += l.len();
            l
        })
        .collect()
}

impl ControlField {
    /// Deterministic initialization: weights `N(0, 1/fan_in)`, zero biases and
    /// a zero output layer, so the initial field is identically zero.
    pub fn init(seed: u64, arch: Architecture, time_embed: Option<TimeEmbedding>) -> Result<Self> {
        if arch.input_dim == 0 || arch.output_dim == 0 {
            return Err(Error::Config("architecture needs input and output dims >= 1".into()));
        }
        if arch.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        let mut field = Self {
            arch,
            time_embed,
            output_scale: None,
            params: Vec::new(),
        };
        let layers = field.layers();
        field.params = vec![0.0; layers.iter().map(Layer::len).sum()];
        let mut rng = RngStream::new(seed).fork("init");
        let last = layers.len() - 1;
        for l in &layers[..last] {
            let scale = 1.0 / (l.fan_in as f64).sqrt();
            for w in &mut field.params[l.offset..l.offset + l.weight_len()] {
                *w = scale * rng.normal();
            }
        }
        Ok(field)
    }

    pub fn with_output_scale(mut self, scale: OutputScale) -> Self {
        self.output_scale = Some(scale);
        self
    }

    fn row_scales(&self, ts: &[f64]) -> Option<Vec<f64>> {
        self.output_scale.map(|s| ts.iter().map(|&t| s.at(t)).collect())
    }

    /// Width of the network input: state plus time features.
    pub fn input_width(&self) -> usize {
        self.arch.input_dim + self.time_embed.map_or(0, |e| e.width())
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(Layer::len).sum()
    }

    fn layers(&self) -> Vec<Layer> {
        layers_of(&self.arch, self.input_width())
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    fn check_params(&self) -> Result<()> {
        let expected = self.num_params();
        if self.params.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: self.params.len(),
            });
        }
        Ok(())
    }

    fn weights(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.fan_out, l.fan_in), &self.params[l.offset..l.offset + l.weight_len()])
            .expect("layer layout")
    }

    fn bias(&self, l: &Layer) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[l.offset + l.weight_len()..l.offset + l.len()])
    }

    fn features(&self, ts: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut feat = Array2::zeros((x.nrows(), self.input_width()));
        feat.slice_mut(s![.., ..self.arch.input_dim]).assign(&x);
        if let Some(embed) = self.time_embed {
            for (i, mut row) in feat.outer_iter_mut().enumerate() {
                let tail = row.as_slice_mut().expect("row-major features");
                embed.write(ts[i], &mut tail[self.arch.input_dim..]);
            }
        }
        feat
    }

    fn check_inputs(&self, ts: &[f64], x: &ArrayView2<f64>) -> Result<()> {
        self.check_params()?;
        if x.ncols() != self.arch.input_dim {
            return Err(Error::Dimension {
                expected: self.arch.input_dim,
                got: x.ncols(),
            });
        }
        if (self.time_embed.is_some() || self.output_scale.is_some()) && ts.len() != x.nrows() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: ts.len(),
            });
        }
        Ok(())
    }

    fn forward_chunk(&self, layers: &[Layer], feat: Array2<f64>, keep: bool) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let mut acts = Vec::new();
        let mut pre = Vec::new();
        let mut a = feat;
        let last = layers.len() - 1;
        for (li, l) in layers.iter().enumerate() {
            let mut z = Array2::zeros((a.nrows(), l.fan_out));
            z += &self.bias(l);
            general_mat_mul(1.0, &a, &self.weights(l).t(), 1.0, &mut z);
            let next = if li == last {
                z.clone()
            } else {
                z.mapv(|v| v * sigmoid(v))
            };
            if keep {
                acts.push(std::mem::replace(&mut a, next));
                if li != last {
                    pre.push(z);
                }
            } else {
                a = next;
            }
        }
        (a, acts, pre)
    }

    /// Evaluate on a batch: row `i` of `x` at time `ts[i]`. `ts` is ignored for
    /// fields without a time embedding.
    pub fn forward(&self, ts: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(ts, &x)?;
        let layers = self.layers();
        let parts = map_chunks(x.nrows(), CHUNK_ROWS, |r| {
            let tsl = if ts.len() == x.nrows() { &ts[r.clone()] } else { &[][..] };
            let feat = self.features(tsl, x.slice(s![r, ..]));
            let mut out = self.forward_chunk(&layers, feat, false).0;
            if let Some(sc) = self.row_scales(tsl) {
                scale_rows(&mut out, &sc);
            }
            out
        });
        Ok(stack_rows(parts, self.arch.output_dim))
    }

    /// Batched evaluation at a single time.
    pub fn forward_at(&self, t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let ts = vec![t; x.nrows()];
        self.forward(&ts, x)
    }

    /// Single-point evaluation.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::Dimension {
            expected: self.arch.input_dim,
            got: x.len(),
        })?;
        Ok(self.forward(&[t], x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass retaining what [`ControlField::backward`] needs.
    pub fn forward_cached(&self, ts: &[f64], x: ArrayView2<f64>) -> Result<ForwardPass> {
        self.check_inputs(ts, &x)?;
        let layers = self.layers();
        let chunks = map_chunks(x.nrows(), CHUNK_ROWS, |r| {
            let tsl = if ts.len() == x.nrows() { &ts[r.clone()] } else { &[][..] };
            let feat = self.features(tsl, x.slice(s![r.clone(), ..]));
            let (mut out, acts, pre) = self.forward_chunk(&layers, feat, true);
            let scales = self.row_scales(tsl);
            if let Some(sc) = &scales {
                scale_rows(&mut out, sc);
            }
            (out, ChunkCache { rows: r, acts, pre, scales })
        });
        let (outs, caches): (Vec<_>, Vec<_>) = chunks.into_iter().unzip();
        Ok(ForwardPass {
            output: stack_rows(outs, self.arch.output_dim),
            chunks: caches,
        })
    }

    /// Reverse-mode sweep. Given `d_output = ∂L/∂output`, returns the parameter
    /// gradient and `∂L/∂x` (time features excluded). Chunk gradients are summed
    /// in chunk order.
    pub fn backward(&self, pass: &ForwardPass, d_output: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        if d_output.dim() != pass.output.dim() {
            return Err(Error::Dimension {
                expected: pass.output.len(),
                got: d_output.len(),
            });
        }
        let layers = self.layers();
        let n_params = self.num_params();
        let parts = map_chunks(pass.chunks.len(), 1, |ci| {
            let cache = &pass.chunks[ci.start];
            let mut grad = vec![0.0; n_params];
            let mut delta = d_output.slice(s![cache.rows.clone(), ..]).to_owned();
            if let Some(sc) = &cache.scales {
                scale_rows(&mut delta, sc);
            }
            for li in (0..layers.len()).rev() {
                let l = &layers[li];
                if li + 1 < layers.len() {
                    // through the activation of layer li
                    let z = &cache.pre[li];
                    ndarray::Zip::from(&mut delta).and(z).for_each(|d, &z| {
                        let sg = sigmoid(z);
                        *d *= sg * (1.0 + z * (1.0 - sg));
                    });
                }
                let a_prev = &cache.acts[li];
                {
                    let (wslice, bslice) = grad[l.offset..l.offset + l.len()].split_at_mut(l.weight_len());
                    let mut gw = ArrayViewMut2::from_shape((l.fan_out, l.fan_in), wslice).expect("layout");
                    general_mat_mul(1.0, &delta.t(), a_prev, 1.0, &mut gw);
                    for (b, s) in bslice.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                        *b += s;
                    }
                }
                delta = delta.dot(&self.weights(l));
            }
            let dx = delta.slice(s![.., ..self.arch.input_dim]).to_owned();
            (grad, dx)
        });
        let mut grad = vec![0.0; n_params];
        let mut dxs = Vec::with_capacity(parts.len());
        for (g, dx) in parts {
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
            dxs.push(dx);
        }
        Ok((grad, stack_rows(dxs, self.arch.input_dim)))
    }

    /// Mean squared regression loss `mean_i ‖f(t_i, x_i) − target_i‖²` and its
    /// gradient. The target is treated as a constant.
    pub fn regression_loss_grad(
        &self,
        ts: &[f64],
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
    ) -> Result<LossGrad> {
        let pass = self.forward_cached(ts, x)?;
        if target.dim() != pass.output.dim() {
            return Err(Error::Dimension {
                expected: pass.output.len(),
                got: target.len(),
            });
        }
        let resid = &pass.output - &target;
        let loss = mean_row_sq_norm(resid.view())?;
        let scale = 2.0 / x.nrows() as f64;
        let (grad, _) = self.backward(&pass, (resid * scale).view())?;
        Ok(LossGrad { loss, grad })
    }

    /// Mean squared regression loss without the gradient.
    pub fn regression_loss(&self, ts: &[f64], x: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
        let out = self.forward(ts, x)?;
        mean_row_sq_norm((&out - &target).view())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let field: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        field.check_params()?;
        Ok(field)
    }
}

/// `mean_i ‖r_i‖²`, failing on the first non-finite row.
pub(crate) fn mean_row_sq_norm(resid: ArrayView2<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (i, row) in resid.outer_iter().enumerate() {
        let v: f64 = row.iter().map(|r| r * r).sum();
        if !v.is_finite() {
            return Err(Error::NonFinite {
                index: i,
                context: "loss term".into(),
            });
        }
        total += v;
    }
    Ok(total / resid.nrows().max(1) as f64)
}

pub(crate) fn stack_rows(parts: Vec<Array2<f64>>, cols: usize) -> Array2<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Array2::zeros((rows, cols));
    let mut at = 0;
    for p in parts {
        out.slice_mut(s![at..at + p.nrows(), ..]).assign(&p);
        at += p.nrows();
    }
    out
}
