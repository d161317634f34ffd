//! Bidirectional gated-recurrent network with hand-derived backpropagation.
//!
//! Cell (per direction, per layer):
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```
//!
//! Gate blocks are stacked `[r, z, n]` along the rows of `W_i*` and `W_h*`.
//! All parameters live in one flat `Vec<f64>` described by a [`ParamLayout`].

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exertion::{coral_bias_backward, coral_biases, sigmoid};
use crate::labels::PauseType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum HeadKind {
    /// Four logits per frame.
    Classification,
    /// One unbounded scalar per frame.
    Regression,
    /// One probability per frame (pause vs. no pause).
    Binary,
    /// Mean-pooled sequence, `classes - 1` cumulative probabilities.
    Ordinal { classes: usize },
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Classification => PauseType::ALL.len(),
            HeadKind::Regression | HeadKind::Binary => 1,
            HeadKind::Ordinal { classes } => classes.saturating_sub(1),
        }
    }

    pub fn is_frame_wise(self) -> bool {
        !matches!(self, HeadKind::Ordinal { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub kernel: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_true")]
    pub bidirectional: bool,
    pub head: HeadKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
}

fn default_layers() -> usize {
    2
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, head: HeadKind) -> Self {
        Self {
            input_dim,
            hidden_dim,
            layers: 2,
            bidirectional: true,
            head,
            conv: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::InvalidParameter(format!(
                "input_dim, hidden_dim and layers must be positive (got {}, {}, {})",
                self.input_dim, self.hidden_dim, self.layers
            )));
        }
        if let Some(c) = self.conv {
            if c.kernel == 0 || c.kernel % 2 == 0 || c.channels == 0 {
                return Err(Error::InvalidParameter(format!(
                    "conv front-end needs an odd kernel and channels > 0 (got {}, {})",
                    c.kernel, c.channels
                )));
            }
        }
        if let HeadKind::Ordinal { classes } = self.head {
            if classes < 2 {
                return Err(Error::InvalidParameter(format!(
                    "ordinal head needs at least 2 classes, got {classes}"
                )));
            }
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of the last recurrent layer's output.
    pub fn hidden_width(&self) -> usize {
        self.hidden_dim * self.directions()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub fan_in: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Copy, Debug)]
struct GruSlots {
    w_ih: usize,
    w_hh: usize,
    b_ih: usize,
    b_hh: usize,
}

#[derive(Clone, Debug)]
enum HeadSlots {
    Frame { weight: usize, bias: usize },
    Ordinal { weight: usize, first: usize, increments: usize },
}

/// Names, shapes and offsets of every parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
    conv: Option<(usize, usize)>,
    gru: Vec<Vec<GruSlots>>,
    head: HeadSlots,
}

impl ParamLayout {
    fn build(cfg: &ModelConfig) -> Self {
        let mut entries: Vec<ParamEntry> = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let entry = ParamEntry {
                name,
                shape,
                offset: total,
                fan_in,
            };
            total += entry.len();
            entries.push(entry);
            entries.len() - 1
        };
        let h = cfg.hidden_dim;
        let mut in_dim = cfg.input_dim;
        let conv = cfg.conv.map(|c| {
            let fan = c.kernel * cfg.input_dim;
            let w = push("conv.weight".into(), vec![c.channels, fan], fan);
            let b = push("conv.bias".into(), vec![c.channels], fan);
            in_dim = c.channels;
            (w, b)
        });
        let mut gru = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut dirs = Vec::with_capacity(cfg.directions());
            for d in 0..cfg.directions() {
                let tag = if d == 0 { "fwd" } else { "bwd" };
                let p = format!("gru.{l}.{tag}");
                dirs.push(GruSlots {
                    w_ih: push(format!("{p}.w_ih"), vec![3 * h, in_dim], in_dim),
                    w_hh: push(format!("{p}.w_hh"), vec![3 * h, h], h),
                    b_ih: push(format!("{p}.b_ih"), vec![3 * h], h),
                    b_hh: push(format!("{p}.b_hh"), vec![3 * h], h),
                });
            }
            gru.push(dirs);
            in_dim = cfg.hidden_width();
        }
        let head = match cfg.head {
            HeadKind::Ordinal { classes } => HeadSlots::Ordinal {
                weight: push("head.weight".into(), vec![in_dim], in_dim),
                first: push("head.bias_first".into(), vec![1], in_dim),
                increments: push("head.bias_increments".into(), vec![classes - 2], in_dim),
            },
            kind => {
                let k = kind.outputs();
                HeadSlots::Frame {
                    weight: push("head.weight".into(), vec![k, in_dim], in_dim),
                    bias: push("head.bias".into(), vec![k], in_dim),
                }
            }
        };
        Self {
            entries,
            total,
            conv,
            gru,
            head,
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entry_of(&self, index: usize) -> usize {
        self.entries
            .iter()
            .position(|e| e.range().contains(&index))
            .expect("index within layout")
    }

    fn mat<'a>(&self, data: &'a [f64], slot: usize) -> ArrayView2<'a, f64> {
        let e = &self.entries[slot];
        ArrayView2::from_shape((e.shape[0], e.shape[1]), &data[e.range()]).expect("layout shape")
    }

    fn mat_mut<'a>(&self, data: &'a mut [f64], slot: usize) -> ArrayViewMut2<'a, f64> {
        let e = &self.entries[slot];
        ArrayViewMut2::from_shape((e.shape[0], e.shape[1]), &mut data[e.range()])
            .expect("layout shape")
    }

    fn vec<'a>(&self, data: &'a [f64], slot: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&data[self.entries[slot].range()])
    }

    fn slice<'a>(&self, data: &'a [f64], slot: usize) -> &'a [f64] {
        &data[self.entries[slot].range()]
    }

    fn slice_mut<'a>(&self, data: &'a mut [f64], slot: usize) -> &'a mut [f64] {
        &mut data[self.entries[slot].range()]
    }
}

/// Recurrent sequence model: optional convolution, stacked (bi)GRU layers, one head.
#[derive(Clone, Debug)]
pub struct SeqModel {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<f64>,
}

struct DirCache {
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    ghn: Array2<f64>,
    /// Hidden state entering each step, in processing order.
    h_prev: Array2<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    dirs: Vec<DirCache>,
}

struct ConvCache {
    patches: Array2<f64>,
    out: Array2<f64>,
}

/// Intermediate values of one forward pass, consumed by [`SeqModel::backward`].
pub struct ForwardCache {
    n_params: usize,
    frames: usize,
    conv: Option<ConvCache>,
    layers: Vec<LayerCache>,
    hidden: Array2<f64>,
    pooled: Option<Array1<f64>>,
    outputs: Array2<f64>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &Array2<f64> {
        &self.outputs
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

impl SeqModel {
    /// Parameters drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &model.layout.entries {
            let bound = 1.0 / (e.fan_in.max(1) as f64).sqrt();
            for p in &mut model.params[e.range()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::build(&config);
        let params = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        model.set_params(params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::LengthMismatch {
                what: "parameter vector vs layout",
                left: params.len(),
                right: self.layout.total,
            });
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.outputs)
    }

    /// Final recurrent hidden states (`T x hidden_width`).
    pub fn hidden(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.hidden)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        let frames = x.nrows();
        if frames == 0 {
            return Err(Error::EmptyInput("model input"));
        }
        let p = &self.params;
        let ly = &self.layout;
        let conv = match (self.config.conv, ly.conv) {
            (Some(c), Some((w, b))) => Some(conv_forward(x, c.kernel, ly.mat(p, w), ly.vec(p, b))),
            _ => None,
        };
        let mut input = match &conv {
            Some(c) => c.out.clone(),
            None => x.to_owned(),
        };
        let h = self.config.hidden_dim;
        let mut layers = Vec::with_capacity(self.config.layers);
        for dirs in &ly.gru {
            let mut out = Array2::zeros((frames, h * dirs.len()));
            let mut caches = Vec::with_capacity(dirs.len());
            for (d, slots) in dirs.iter().enumerate() {
                let view = out.slice_mut(s![.., d * h..(d + 1) * h]);
                caches.push(dir_forward(
                    input.view(),
                    ly.mat(p, slots.w_ih),
                    ly.slice(p, slots.w_hh),
                    ly.vec(p, slots.b_ih),
                    ly.slice(p, slots.b_hh),
                    d == 1,
                    &vec![0.0; h],
                    view,
                ));
            }
            layers.push(LayerCache {
                input: std::mem::replace(&mut input, out),
                dirs: caches,
            });
        }
        let hidden = input;
        let (outputs, pooled) = match ly.head {
            HeadSlots::Frame { weight, bias } => {
                let mut y = hidden.dot(&ly.mat(p, weight).t());
                y += &ly.vec(p, bias);
                if self.config.head == HeadKind::Binary {
                    y.mapv_inplace(sigmoid);
                }
                (y, None)
            }
            HeadSlots::Ordinal {
                weight,
                first,
                increments,
            } => {
                let pooled = hidden.mean_axis(Axis(0)).expect("non-empty");
                let score = pooled.dot(&ly.vec(p, weight));
                let biases = coral_biases(ly.slice(p, first)[0], ly.slice(p, increments));
                let probs: Vec<f64> = biases.iter().map(|b| sigmoid(score + b)).collect();
                let y = Array2::from_shape_vec((1, probs.len()), probs).expect("row");
                (y, Some(pooled))
            }
        };
        Ok(ForwardCache {
            n_params: self.layout.total,
            frames,
            conv,
            layers,
            hidden,
            pooled,
            outputs,
        })
    }

    /// Parameter gradients given `d loss / d outputs` (same shape as the outputs).
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if cache.n_params != self.layout.total || cache.layers.len() != self.config.layers {
            return Err(Error::ShapeMismatch(
                "forward cache was produced by a different model".into(),
            ));
        }
        if upstream.dim() != cache.outputs.dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient {:?} vs outputs {:?}",
                upstream.shape(),
                cache.outputs.shape()
            )));
        }
        let p = &self.params;
        let ly = &self.layout;
        let mut grad = vec![0.0; ly.total];
        let mut d_hidden = match ly.head {
            HeadSlots::Frame { weight, bias } => {
                let mut dy = upstream.to_owned();
                if self.config.head == HeadKind::Binary {
                    dy.zip_mut_with(&cache.outputs, |d, &y| *d *= y * (1.0 - y));
                }
                general_mat_mul(1.0, &dy.t(), &cache.hidden, 1.0, &mut ly.mat_mut(&mut grad, weight));
                add_colsum(ly.slice_mut(&mut grad, bias), dy.view());
                dy.dot(&ly.mat(p, weight))
            }
            HeadSlots::Ordinal {
                weight,
                first,
                increments,
            } => {
                let pooled = cache.pooled.as_ref().expect("ordinal cache has pooled features");
                let dlogits: Vec<f64> = upstream
                    .iter()
                    .zip(cache.outputs.iter())
                    .map(|(d, y)| d * y * (1.0 - y))
                    .collect();
                let (d_score, d_first, d_raw) =
                    coral_bias_backward(&dlogits, ly.slice(p, increments));
                for (g, x) in ly.slice_mut(&mut grad, weight).iter_mut().zip(pooled) {
                    *g += d_score * x;
                }
                ly.slice_mut(&mut grad, first)[0] += d_first;
                for (g, d) in ly.slice_mut(&mut grad, increments).iter_mut().zip(d_raw) {
                    *g += d;
                }
                let row = ly.vec(p, weight).mapv(|w| d_score * w / cache.frames as f64);
                let mut dh = Array2::zeros(cache.hidden.raw_dim());
                dh.rows_mut().into_iter().for_each(|mut r| r.assign(&row));
                dh
            }
        };
        let h = self.config.hidden_dim;
        for (l, (dirs, lc)) in ly.gru.iter().zip(&cache.layers).enumerate().rev() {
            let need_dx = l > 0 || cache.conv.is_some();
            let mut d_input = need_dx.then(|| Array2::zeros(lc.input.raw_dim()));
            for (d, (slots, dc)) in dirs.iter().zip(&lc.dirs).enumerate() {
                let dout = d_hidden.slice(s![.., d * h..(d + 1) * h]);
                let dx = dir_backward(
                    lc.input.view(),
                    ly.mat(p, slots.w_ih),
                    ly.slice(p, slots.w_hh),
                    dc,
                    dout,
                    d == 1,
                    &mut grad,
                    ly,
                    *slots,
                    need_dx,
                );
                if let (Some(acc), Some(dx)) = (d_input.as_mut(), dx) {
                    *acc += &dx;
                }
            }
            if let Some(di) = d_input {
                d_hidden = di;
            }
        }
        if let (Some(cc), Some((w, b))) = (&cache.conv, ly.conv) {
            let mut dpre = d_hidden;
            dpre.zip_mut_with(&cc.out, |d, &o| *d *= 1.0 - o * o);
            general_mat_mul(1.0, &dpre.t(), &cc.patches, 1.0, &mut ly.mat_mut(&mut grad, w));
            add_colsum(ly.slice_mut(&mut grad, b), dpre.view());
        }
        Ok(grad)
    }

    /// Hard frame labels from frame-wise outputs.
    pub fn frame_classes(&self, outputs: ArrayView2<'_, f64>) -> Result<Vec<PauseType>> {
        match self.config.head {
            HeadKind::Classification => Ok(outputs.rows().into_iter().map(|r| argmax_class(r)).collect()),
            HeadKind::Regression => Ok(outputs
                .column(0)
                .iter()
                .map(|v| PauseType::ALL[v.round().clamp(0.0, 3.0) as usize])
                .collect()),
            HeadKind::Binary => Ok(outputs
                .column(0)
                .iter()
                .map(|&v| if v > 0.5 { PauseType::S } else { PauseType::O })
                .collect()),
            HeadKind::Ordinal { .. } => Err(Error::InvalidParameter(
                "ordinal head has no frame-wise classes".into(),
            )),
        }
    }
}

fn argmax_class(row: ArrayView1<'_, f64>) -> PauseType {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    PauseType::ALL[best]
}

fn add_colsum(acc: &mut [f64], m: ArrayView2<'_, f64>) {
    for row in m.rows() {
        for (a, v) in acc.iter_mut().zip(row.iter()) {
            *a += v;
        }
    }
}

fn conv_forward(x: ArrayView2<'_, f64>, kernel: usize, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> ConvCache {
    let (frames, f) = x.dim();
    let pad = kernel / 2;
    let mut patches = Array2::zeros((frames, kernel * f));
    for t in 0..frames {
        for j in 0..kernel {
            let src = t + j;
            if src < pad || src - pad >= frames {
                continue;
            }
            patches
                .slice_mut(s![t, j * f..(j + 1) * f])
                .assign(&x.row(src - pad));
        }
    }
    let mut out = patches.dot(&w.t());
    out += &b;
    out.mapv_inplace(f64::tanh);
    ConvCache { patches, out }
}

/// `y = W v` for a row-major `rows x cols` matrix.
#[inline]
fn matvec(w: &[f64], cols: usize, v: &[f64], y: &mut [f64]) {
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = [0.0f64; 4];
        let mut chunks = row.chunks_exact(4);
        let mut vs = v.chunks_exact(4);
        for (a, b) in (&mut chunks).zip(&mut vs) {
            acc[0] += a[0] * b[0];
            acc[1] += a[1] * b[1];
            acc[2] += a[2] * b[2];
            acc[3] += a[3] * b[3];
        }
        let mut tail = 0.0;
        for (a, b) in chunks.remainder().iter().zip(vs.remainder()) {
            tail += a * b;
        }
        *yi = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
    }
}

#[allow(clippy::too_many_arguments)]
fn dir_forward(
    x: ArrayView2<'_, f64>,
    w_ih: ArrayView2<'_, f64>,
    w_hh: &[f64],
    b_ih: ArrayView1<'_, f64>,
    b_hh: &[f64],
    reverse: bool,
    h0: &[f64],
    mut out: ArrayViewMut2<'_, f64>,
) -> DirCache {
    let frames = x.nrows();
    let h = h0.len();
    let mut gi = x.dot(&w_ih.t());
    gi += &b_ih;
    let mut r = Array2::zeros((frames, h));
    let mut z = Array2::zeros((frames, h));
    let mut n = Array2::zeros((frames, h));
    let mut ghn = Array2::zeros((frames, h));
    let mut h_prev = Array2::zeros((frames, h));
    let mut state = h0.to_vec();
    let mut gh = vec![0.0; 3 * h];
    for step in 0..frames {
        let t = if reverse { frames - 1 - step } else { step };
        h_prev
            .row_mut(step)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&state);
        matvec(w_hh, h, &state, &mut gh);
        let g = gi.row(t);
        for j in 0..h {
            let rj = sigmoid(g[j] + gh[j] + b_hh[j]);
            let zj = sigmoid(g[h + j] + gh[h + j] + b_hh[h + j]);
            let hn = gh[2 * h + j] + b_hh[2 * h + j];
            let nj = (g[2 * h + j] + rj * hn).tanh();
            state[j] = (1.0 - zj) * nj + zj * state[j];
            r[[step, j]] = rj;
            z[[step, j]] = zj;
            n[[step, j]] = nj;
            ghn[[step, j]] = hn;
        }
        for (o, &v) in out.row_mut(t).iter_mut().zip(&state) {
            *o = v;
        }
    }
    DirCache { r, z, n, ghn, h_prev }
}

#[allow(clippy::too_many_arguments)]
fn dir_backward(
    x: ArrayView2<'_, f64>,
    w_ih: ArrayView2<'_, f64>,
    w_hh: &[f64],
    cache: &DirCache,
    dout: ArrayView2<'_, f64>,
    reverse: bool,
    grad: &mut [f64],
    ly: &ParamLayout,
    slots: GruSlots,
    need_dx: bool,
) -> Option<Array2<f64>> {
    let (frames, h) = dout.dim();
    let mut dgi = Array2::zeros((frames, 3 * h));
    let mut dgh = Array2::<f64>::zeros((frames, 3 * h));
    let mut carry = vec![0.0; h];
    let mut next = vec![0.0; h];
    for step in (0..frames).rev() {
        let t = if reverse { frames - 1 - step } else { step };
        for j in 0..h {
            let dh = dout[[t, j]] + carry[j];
            let (r, z, n) = (cache.r[[step, j]], cache.z[[step, j]], cache.n[[step, j]]);
            let hp = cache.h_prev[[step, j]];
            let dn_pre = dh * (1.0 - z) * (1.0 - n * n);
            let dz_pre = dh * (hp - n) * z * (1.0 - z);
            let dr_pre = dn_pre * cache.ghn[[step, j]] * r * (1.0 - r);
            dgi[[t, j]] = dr_pre;
            dgi[[t, h + j]] = dz_pre;
            dgi[[t, 2 * h + j]] = dn_pre;
            dgh[[step, j]] = dr_pre;
            dgh[[step, h + j]] = dz_pre;
            dgh[[step, 2 * h + j]] = dn_pre * r;
            next[j] = dh * z;
        }
        let row = dgh.row(step);
        for (g, w) in row.iter().zip(w_hh.chunks_exact(h)) {
            if *g != 0.0 {
                for (c, wv) in next.iter_mut().zip(w) {
                    *c += g * wv;
                }
            }
        }
        std::mem::swap(&mut carry, &mut next);
    }
    general_mat_mul(1.0, &dgi.t(), &x, 1.0, &mut ly.mat_mut(grad, slots.w_ih));
    add_colsum(ly.slice_mut(grad, slots.b_ih), dgi.view());
    general_mat_mul(1.0, &dgh.t(), &cache.h_prev, 1.0, &mut ly.mat_mut(grad, slots.w_hh));
    add_colsum(ly.slice_mut(grad, slots.b_hh), dgh.view());
    need_dx.then(|| dgi.dot(&w_ih))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn cfg(head: HeadKind) -> ModelConfig {
        ModelConfig::new(3, 4, head)
    }

    #[test]
    fn zero_parameters_halve_the_state_each_step() {
        let h0 = vec![1.0, -2.0];
        let x = Array2::<f64>::zeros((3, 1));
        let w_ih = Array2::<f64>::zeros((6, 1));
        let w_hh = vec![0.0; 12];
        let b = Array1::<f64>::zeros(6);
        let mut out = Array2::zeros((3, 2));
        dir_forward(x.view(), w_ih.view(), &w_hh, b.view(), &[0.0; 6], false, &h0, out.view_mut());
        assert_eq!(out.row(0).to_vec(), vec![0.5, -1.0]);
        assert_eq!(out.row(2).to_vec(), vec![0.125, -0.25]);
    }

    #[test]
    fn output_shapes_per_head() {
        let x = Array2::from_shape_fn((7, 3), |(t, f)| (t * 3 + f) as f64 * 0.1);
        for (head, k) in [
            (HeadKind::Classification, 4),
            (HeadKind::Regression, 1),
            (HeadKind::Binary, 1),
        ] {
            let m = SeqModel::new(cfg(head), 1).unwrap();
            assert_eq!(m.forward(x.view()).unwrap().dim(), (7, k));
        }
        let m = SeqModel::new(cfg(HeadKind::Ordinal { classes: 5 }), 1).unwrap();
        let y = m.forward(x.view()).unwrap();
        assert_eq!(y.dim(), (1, 4));
        assert!(y.row(0).windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn binary_head_in_unit_interval_and_half_at_zero() {
        let x = Array2::from_elem((5, 3), 2.0);
        let m = SeqModel::new(cfg(HeadKind::Binary), 3).unwrap();
        assert!(m.forward(x.view()).unwrap().iter().all(|&p| p > 0.0 && p < 1.0));
        let z = SeqModel::zeros(cfg(HeadKind::Binary)).unwrap();
        assert!(z.forward(x.view()).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn identical_rows_without_recurrence_give_identical_outputs() {
        let mut m = SeqModel::new(cfg(HeadKind::Classification), 5).unwrap();
        let mut params = m.params().to_vec();
        for e in m.layout().entries().to_vec() {
            if e.name.ends_with("w_hh") {
                params[e.range()].iter_mut().for_each(|v| *v = 0.0);
            }
            // the state also flows through z * h; close the update gate
            if e.name.ends_with("b_ih") {
                let h = e.shape[0] / 3;
                params[e.offset + h..e.offset + 2 * h].iter_mut().for_each(|v| *v = -1e3);
            }
        }
        m.set_params(params).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(_, f)| f as f64 - 1.0);
        let y = m.forward(x.view()).unwrap();
        for t in 1..6 {
            assert_eq!(y.row(t), y.row(0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = SeqModel::new(cfg(HeadKind::Regression), 0).unwrap();
        assert!(m.forward(Array2::zeros((4, 2)).view()).is_err());
        let cache = m.forward_cached(Array2::zeros((4, 3)).view()).unwrap();
        assert!(m.backward(&cache, Array2::zeros((3, 1)).view()).is_err());
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut c = cfg(HeadKind::Regression);
        c.conv = Some(ConvConfig { kernel: 3, channels: 2 });
        let m = SeqModel::new(c, 9).unwrap();
        let x = Array2::from_shape_fn((6, 3), |(t, f)| ((t + 2 * f) as f64).sin());
        let cache = m.forward_cached(x.view()).unwrap();
        let zero = m.backward(&cache, Array2::zeros((6, 1)).view()).unwrap();
        assert!(zero.iter().all(|&g| g == 0.0));
        let up = Array2::from_shape_fn((6, 1), |(t, _)| t as f64 - 2.5);
        let g1 = m.backward(&cache, up.view()).unwrap();
        let g2 = m.backward(&cache, (&up * 2.0).view()).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn layout_names_are_unique_and_cover_the_vector() {
        let mut c = ModelConfig::new(5, 3, HeadKind::Ordinal { classes: 2 });
        c.conv = Some(ConvConfig { kernel: 5, channels: 4 });
        let m = SeqModel::new(c, 0).unwrap();
        let entries = m.layout().entries();
        let names: std::collections::BTreeSet<_> = entries.iter().map(|e| &e.name).collect();
        assert_eq!(names.len(), entries.len());
        let sum: usize = entries.iter().map(|e| e.len()).sum();
        assert_eq!(sum, m.params().len());
    }
}
