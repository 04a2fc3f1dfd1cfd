//! Reference kernel for the gray/depth feature merge: bidirectional
//! single-head cross-attention, concatenation and a two-layer feedforward
//! network with LayerNorm, plus its reverse-mode gradient.

use std::path::Path;

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{self, IoError};

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(thiserror::Error, Debug)]
pub enum AttentionError {
    #[error("channel mismatch: {0} vs {1}")]
    Channels(usize, usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize, usize), (usize, usize, usize)),
    #[error("non-finite feature value")]
    NonFinite,
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("gradient is implemented for softmax attention only")]
    Unsupported,
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Softmax,
    Linear,
}

/// `height × width` grid of `d`-channel features, stored as one token per
/// row in row-major spatial order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    tokens: DMatrix<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, tokens: DMatrix<f64>) -> Result<Self, AttentionError> {
        if tokens.nrows() != height * width || tokens.ncols() == 0 {
            return Err(AttentionError::Shape(
                (height, width, tokens.ncols()),
                (tokens.nrows(), 1, tokens.ncols()),
            ));
        }
        if !tokens.iter().all(|v| v.is_finite()) {
            return Err(AttentionError::NonFinite);
        }
        Ok(Self { height, width, tokens })
    }

    pub fn from_fn(height: usize, width: usize, d: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self, AttentionError> {
        Self::new(height, width, DMatrix::from_fn(height * width, d, f))
    }

    /// Uniform values in `[-scale, scale]`.
    pub fn random(height: usize, width: usize, d: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let tokens = DMatrix::from_fn(height * width, d, |_, _| rng.gen_range(-scale..=scale));
        Self { height, width, tokens }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.tokens.ncols()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels())
    }

    pub fn tokens(&self) -> &DMatrix<f64> {
        &self.tokens
    }

    /// Grid whose token `i` is token `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let tokens = DMatrix::from_fn(self.tokens.nrows(), self.tokens.ncols(), |r, c| self.tokens[(perm[r], c)]);
        Self { tokens, ..*self }
    }
}

/// Query, key and value projections (`d × d`, applied as `x·W`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams {
    /// Queries from the gray features, keys and values from depth.
    pub gray_from_depth: AttentionParams,
    /// Queries from depth, keys and values from gray.
    pub depth_from_gray: AttentionParams,
    pub w1: DMatrix<f64>,
    pub b1: RowDVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: RowDVector<f64>,
    pub gamma: RowDVector<f64>,
    pub beta: RowDVector<f64>,
    pub eps: f64,
    pub mode: AttentionMode,
}

impl MergeParams {
    /// Projections and weights uniform in `[−1/√d, 1/√d]`, γ = 1, β = 0.
    pub fn random(d: usize, seed: u64, mode: AttentionMode) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (d as f64).sqrt();
        let mut m = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-a..=a));
        let gray_from_depth = AttentionParams {
            wq: m(d, d),
            wk: m(d, d),
            wv: m(d, d),
        };
        let depth_from_gray = AttentionParams {
            wq: m(d, d),
            wk: m(d, d),
            wv: m(d, d),
        };
        let w1 = m(2 * d, d);
        let w2 = m(d, d);
        let b1 = RowDVector::from_iterator(d, m(1, d).iter().copied());
        let b2 = RowDVector::from_iterator(d, m(1, d).iter().copied());
        Self {
            gray_from_depth,
            depth_from_gray,
            w1,
            b1,
            w2,
            b2,
            gamma: RowDVector::from_element(d, 1.0),
            beta: RowDVector::zeros(d),
            eps: LAYER_NORM_EPS,
            mode,
        }
    }

    pub fn channels(&self) -> usize {
        self.w2.ncols()
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let d = self.channels();
        let bad = |what: &str| Err(AttentionError::Params(what.to_string()));
        for p in [&self.gray_from_depth, &self.depth_from_gray] {
            for w in [&p.wq, &p.wk, &p.wv] {
                if w.shape() != (d, d) {
                    return bad("attention projections must be d×d");
                }
            }
        }
        if self.w1.shape() != (2 * d, d) || self.w2.shape() != (d, d) {
            return bad("feedforward weights must be 2d×d and d×d");
        }
        if [&self.b1, &self.b2, &self.gamma, &self.beta].iter().any(|v| v.len() != d) {
            return bad("bias and normalization vectors must have d entries");
        }
        if !(self.eps > 0.0) {
            return bad("normalization epsilon must be positive");
        }
        Ok(())
    }

    fn tensors(&self) -> Vec<(&'static str, &DMatrix<f64>)> {
        vec![
            ("gray_from_depth.wq", &self.gray_from_depth.wq),
            ("gray_from_depth.wk", &self.gray_from_depth.wk),
            ("gray_from_depth.wv", &self.gray_from_depth.wv),
            ("depth_from_gray.wq", &self.depth_from_gray.wq),
            ("depth_from_gray.wk", &self.depth_from_gray.wk),
            ("depth_from_gray.wv", &self.depth_from_gray.wv),
            ("w1", &self.w1),
            ("w2", &self.w2),
        ]
    }

    fn vectors(&self) -> Vec<(&'static str, &RowDVector<f64>)> {
        vec![("b1", &self.b1), ("b2", &self.b2), ("gamma", &self.gamma), ("beta", &self.beta)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorShape {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamDescriptor {
    channels: usize,
    mode: AttentionMode,
    eps: f64,
    dtype: String,
    layout: String,
    tensors: Vec<TensorShape>,
}

/// Writes `base.bin` (little-endian f64, row-major tensors in descriptor
/// order) and `base.json` (shapes).
pub fn save_params(params: &MergeParams, base: &Path) -> Result<(), AttentionError> {
    params.validate()?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    for (name, m) in params.tensors() {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
        tensors.push(TensorShape {
            name: name.into(),
            shape: vec![m.nrows(), m.ncols()],
        });
    }
    for (name, v) in params.vectors() {
        for x in v.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        tensors.push(TensorShape {
            name: name.into(),
            shape: vec![v.len()],
        });
    }
    let desc = ParamDescriptor {
        channels: params.channels(),
        mode: params.mode,
        eps: params.eps,
        dtype: "f64le".into(),
        layout: "row-major".into(),
        tensors,
    };
    io::write_bytes(&base.with_extension("bin"), &bytes)?;
    io::write_json(&base.with_extension("json"), &desc)?;
    Ok(())
}

pub fn load_params(base: &Path) -> Result<MergeParams, AttentionError> {
    let desc: ParamDescriptor = io::read_json(&base.with_extension("json"))?;
    let bytes = io::read_bytes(&base.with_extension("bin"))?;
    if desc.dtype != "f64le" {
        return Err(AttentionError::Params(format!("dtype {}", desc.dtype)));
    }
    let total: usize = desc.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * 8 {
        return Err(AttentionError::Params(format!(
            "blob holds {} bytes, descriptor needs {}",
            bytes.len(),
            total * 8
        )));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let d = desc.channels;
    let mut take = |name: &str, shape: &[usize]| -> Result<DMatrix<f64>, AttentionError> {
        let t = desc
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AttentionError::Params(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(AttentionError::Params(format!("{name} has shape {:?}, expected {shape:?}", t.shape)));
        }
        let (r, c) = if shape.len() == 2 { (shape[0], shape[1]) } else { (1, shape[0]) };
        let data: Vec<f64> = values.by_ref().take(r * c).collect();
        Ok(DMatrix::from_row_slice(r, c, &data))
    };
    // the blob order is fixed, so tensors are read in that order
    let order = [
        "gray_from_depth.wq",
        "gray_from_depth.wk",
        "gray_from_depth.wv",
        "depth_from_gray.wq",
        "depth_from_gray.wk",
        "depth_from_gray.wv",
        "w1",
        "w2",
    ];
    if desc.tensors.iter().map(|t| t.name.as_str()).take(8).ne(order.iter().copied()) {
        return Err(AttentionError::Params("unexpected tensor order".into()));
    }
    let sq = [d, d];
    let gq = take(order[0], &sq)?;
    let gk = take(order[1], &sq)?;
    let gv = take(order[2], &sq)?;
    let dq = take(order[3], &sq)?;
    let dk = take(order[4], &sq)?;
    let dv = take(order[5], &sq)?;
    let w1 = take("w1", &[2 * d, d])?;
    let w2 = take("w2", &sq)?;
    let row = |m: DMatrix<f64>| RowDVector::from_iterator(m.len(), m.iter().copied());
    let b1 = row(take("b1", &[d])?);
    let b2 = row(take("b2", &[d])?);
    let gamma = row(take("gamma", &[d])?);
    let beta = row(take("beta", &[d])?);
    let p = MergeParams {
        gray_from_depth: AttentionParams { wq: gq, wk: gk, wv: gv },
        depth_from_gray: AttentionParams { wq: dq, wk: dk, wv: dv },
        w1,
        b1,
        w2,
        b2,
        gamma,
        beta,
        eps: desc.eps,
        mode: desc.mode,
    };
    p.validate()?;
    Ok(p)
}

/// Row-wise softmax with the row maximum subtracted.
pub fn softmax_rows(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = s.clone();
    for mut row in a.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let z = row.sum();
        row /= z;
    }
    a
}

fn elu_plus_one(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Attention weights `softmax(Q·Kᵀ/√d)` of softmax mode.
pub fn attention_weights(fq: &FeatureGrid, fkv: &FeatureGrid, p: &AttentionParams) -> Result<DMatrix<f64>, AttentionError> {
    check_channels(fq, fkv)?;
    let q = fq.tokens() * &p.wq;
    let k = fkv.tokens() * &p.wk;
    Ok(softmax_rows(&((q * k.transpose()) / (fq.channels() as f64).sqrt())))
}

fn check_channels(a: &FeatureGrid, b: &FeatureGrid) -> Result<(), AttentionError> {
    if a.channels() != b.channels() {
        return Err(AttentionError::Channels(a.channels(), b.channels()));
    }
    Ok(())
}

/// Cross-attention with queries from `fq` and keys/values from `fkv`; the
/// output has `fq`'s shape.
pub fn cross_attention(
    fq: &FeatureGrid,
    fkv: &FeatureGrid,
    p: &AttentionParams,
    mode: AttentionMode,
) -> Result<FeatureGrid, AttentionError> {
    check_channels(fq, fkv)?;
    if p.wq.shape() != (fq.channels(), fq.channels()) {
        return Err(AttentionError::Params("projection shape".into()));
    }
    let out = match mode {
        AttentionMode::Softmax => attention_weights(fq, fkv, p)? * (fkv.tokens() * &p.wv),
        AttentionMode::Linear => {
            let q = (fq.tokens() * &p.wq).map(elu_plus_one);
            let k = (fkv.tokens() * &p.wk).map(elu_plus_one);
            let v = fkv.tokens() * &p.wv;
            let kv = k.transpose() * v;
            let ksum = k.row_sum();
            let mut out = &q * kv;
            for (i, mut row) in out.row_iter_mut().enumerate() {
                row /= q.row(i).dot(&ksum);
            }
            out
        }
    };
    Ok(FeatureGrid {
        height: fq.height,
        width: fq.width,
        tokens: out,
    })
}

/// Linear-mode attention accumulated token by token, without reassociating
/// the products.
pub fn linear_attention_rowwise(fq: &FeatureGrid, fkv: &FeatureGrid, p: &AttentionParams) -> Result<FeatureGrid, AttentionError> {
    check_channels(fq, fkv)?;
    let q = (fq.tokens() * &p.wq).map(elu_plus_one);
    let k = (fkv.tokens() * &p.wk).map(elu_plus_one);
    let v = fkv.tokens() * &p.wv;
    let d = fq.channels();
    let mut out = DMatrix::zeros(q.nrows(), d);
    for i in 0..q.nrows() {
        let mut num = RowDVector::zeros(d);
        let mut den = 0.0;
        for j in 0..k.nrows() {
            let w = q.row(i).dot(&k.row(j));
            num += v.row(j) * w;
            den += w;
        }
        out.set_row(i, &(num / den));
    }
    Ok(FeatureGrid {
        height: fq.height,
        width: fq.width,
        tokens: out,
    })
}

struct Forward {
    x: DMatrix<f64>,
    h1: DMatrix<f64>,
    r: DMatrix<f64>,
    xhat: DMatrix<f64>,
    inv_std: Vec<f64>,
    out: DMatrix<f64>,
}

fn add_row(m: &mut DMatrix<f64>, b: &RowDVector<f64>) {
    for mut row in m.row_iter_mut() {
        row += b;
    }
}

fn forward(fb: &FeatureGrid, fc: &FeatureGrid, p: &MergeParams) -> Result<Forward, AttentionError> {
    p.validate()?;
    if fb.shape() != fc.shape() {
        return Err(AttentionError::Shape(fb.shape(), fc.shape()));
    }
    if fb.channels() != p.channels() {
        return Err(AttentionError::Channels(fb.channels(), p.channels()));
    }
    let d = p.channels();
    let a = cross_attention(fb, fc, &p.gray_from_depth, p.mode)?;
    let c = cross_attention(fc, fb, &p.depth_from_gray, p.mode)?;
    let n = a.tokens.nrows();
    let mut x = DMatrix::zeros(n, 2 * d);
    x.columns_mut(0, d).copy_from(&a.tokens);
    x.columns_mut(d, d).copy_from(&c.tokens);
    let mut h1 = &x * &p.w1;
    add_row(&mut h1, &p.b1);
    let r = h1.map(|v| v.max(0.0));
    let mut h2 = &r * &p.w2;
    add_row(&mut h2, &p.b2);
    let mut xhat = h2.clone();
    let mut inv_std = Vec::with_capacity(n);
    for mut row in xhat.row_iter_mut() {
        let mean = row.mean();
        let var = row.map(|v| (v - mean) * (v - mean)).mean();
        let is = 1.0 / (var + p.eps).sqrt();
        row.apply(|v| *v = (*v - mean) * is);
        inv_std.push(is);
    }
    let mut out = xhat.clone();
    for mut row in out.row_iter_mut() {
        row.component_mul_assign(&p.gamma);
        row += &p.beta;
    }
    Ok(Forward {
        x,
        h1,
        r,
        xhat,
        inv_std,
        out,
    })
}

/// `G(CrossAttn(FB, FC) ⊕ CrossAttn(FC, FB))` with
/// `G = LayerNorm ∘ Linear ∘ ReLU ∘ Linear`.
pub fn merge_features(fb: &FeatureGrid, fc: &FeatureGrid, p: &MergeParams) -> Result<FeatureGrid, AttentionError> {
    let f = forward(fb, fc, p)?;
    Ok(FeatureGrid {
        height: fb.height,
        width: fb.width,
        tokens: f.out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeGrads {
    pub fb: DMatrix<f64>,
    pub fc: DMatrix<f64>,
    pub gray_from_depth: AttentionGrads,
    pub depth_from_gray: AttentionGrads,
    pub w1: DMatrix<f64>,
    pub b1: RowDVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: RowDVector<f64>,
    pub gamma: RowDVector<f64>,
    pub beta: RowDVector<f64>,
}

/// Softmax cross-attention backward; accumulates into the input gradients.
fn attention_backward(
    fq: &DMatrix<f64>,
    fkv: &DMatrix<f64>,
    p: &AttentionParams,
    d_out: &DMatrix<f64>,
    d_fq: &mut DMatrix<f64>,
    d_fkv: &mut DMatrix<f64>,
) -> AttentionGrads {
    let scale = 1.0 / (fq.ncols() as f64).sqrt();
    let q = fq * &p.wq;
    let k = fkv * &p.wk;
    let v = fkv * &p.wv;
    let a = softmax_rows(&((&q * k.transpose()) * scale));
    let dv = a.transpose() * d_out;
    let da = d_out * v.transpose();
    let mut ds = da.component_mul(&a);
    for (i, mut row) in ds.row_iter_mut().enumerate() {
        let s: f64 = row.sum();
        for (j, x) in row.iter_mut().enumerate() {
            *x -= a[(i, j)] * s;
        }
    }
    ds *= scale;
    let dq = &ds * &k;
    let dk = ds.transpose() * &q;
    *d_fq += &dq * p.wq.transpose();
    *d_fkv += &dk * p.wk.transpose() + &dv * p.wv.transpose();
    AttentionGrads {
        wq: fq.transpose() * dq,
        wk: fkv.transpose() * dk,
        wv: fkv.transpose() * dv,
    }
}

/// Reverse-mode gradients of `Σ upstream ⊙ merge_features(FB, FC)`.
pub fn merge_grad(fb: &FeatureGrid, fc: &FeatureGrid, p: &MergeParams, upstream: &DMatrix<f64>) -> Result<MergeGrads, AttentionError> {
    if p.mode != AttentionMode::Softmax {
        return Err(AttentionError::Unsupported);
    }
    let f = forward(fb, fc, p)?;
    if upstream.shape() != f.out.shape() {
        return Err(AttentionError::Shape(
            (upstream.nrows(), 1, upstream.ncols()),
            (f.out.nrows(), 1, f.out.ncols()),
        ));
    }
    let d = p.channels();
    let n = f.out.nrows();
    let d_gamma = RowDVector::from_fn(d, |_, c| (0..n).map(|i| upstream[(i, c)] * f.xhat[(i, c)]).sum());
    let d_beta = upstream.row_sum();
    let mut dh2 = DMatrix::zeros(n, d);
    for i in 0..n {
        let dxhat = upstream.row(i).component_mul(&p.gamma);
        let m1 = dxhat.mean();
        let m2 = dxhat.dot(&f.xhat.row(i)) / d as f64;
        for c in 0..d {
            dh2[(i, c)] = f.inv_std[i] * (dxhat[c] - m1 - f.xhat[(i, c)] * m2);
        }
    }
    let d_w2 = f.r.transpose() * &dh2;
    let d_b2 = dh2.row_sum();
    let dr = &dh2 * p.w2.transpose();
    let dh1 = dr.zip_map(&f.h1, |g, h| if h > 0.0 { g } else { 0.0 });
    let d_w1 = f.x.transpose() * &dh1;
    let d_b1 = dh1.row_sum();
    let dx = &dh1 * p.w1.transpose();
    let da = dx.columns(0, d).into_owned();
    let dc = dx.columns(d, d).into_owned();
    let mut d_fb = DMatrix::zeros(n, d);
    let mut d_fc = DMatrix::zeros(n, d);
    let g1 = attention_backward(fb.tokens(), fc.tokens(), &p.gray_from_depth, &da, &mut d_fb, &mut d_fc);
    let g2 = attention_backward(fc.tokens(), fb.tokens(), &p.depth_from_gray, &dc, &mut d_fc, &mut d_fb);
    Ok(MergeGrads {
        fb: d_fb,
        fc: d_fc,
        gray_from_depth: g1,
        depth_from_gray: g2,
        w1: d_w1,
        b1: d_b1,
        w2: d_w2,
        b2: d_b2,
        gamma: d_gamma,
        beta: d_beta,
    })
}
