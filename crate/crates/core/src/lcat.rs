//! Learnable graph convolutional attention layer.
//!
//! Forward pass, for input features `X` and closed neighborhoods `N*(i)`:
//!
//! ```text
//! e      = X·Wm + b
//! e'_i   = (e_i + λ2 Σ_{k∈N*(i)} e_k) / (1 + λ2 |N*(i)|)
//! ψ_ij   = λ1 · aᵀ[W2ᵀe'_i ∥ W2ᵀe'_j]
//! α_i·   = softmax_{j∈N*(i)} ψ_ij
//! E'_i   = Σ_j α_ij W1ᵀe_j
//! Ẽ_i    = normalize(λ3 E'_i + (1 − λ3) e_i)
//! ```
//!
//! `λk = sigmoid(ℓk)` so the unconstrained logits can be trained directly.
//! λ1 = 0 gives uniform (GCN-style) weights; λ1 = 1, λ2 = 0 gives the plain
//! attention score without a LeakyReLU.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Closed neighborhoods `N*(i)` (self included) in CSR form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Neighborhoods {
    pub fn from_graph(g: &KnowledgeGraph) -> Self {
        Self::from_lists(&g.closed_neighborhoods())
    }

    /// Builds from explicit lists. Each list gets `i` added if absent.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for (i, l) in lists.iter().enumerate() {
            let mut l = l.clone();
            l.push(i);
            l.sort_unstable();
            l.dedup();
            indices.extend(l);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcatDims {
    pub d_in: usize,
    pub d_model: usize,
    pub d_out: usize,
}

impl LcatDims {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_model == 0 || self.d_out == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.d_model != self.d_out {
            return Err(Error::Config(format!(
                "output mixing needs d_model == d_out (got {} and {})",
                self.d_model, self.d_out
            )));
        }
        Ok(())
    }
}

/// Every trainable tensor of the layer. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct LcatParameters {
    pub mlp_weight: Array2<f64>,
    pub mlp_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    /// `[a_left; a_right]`, length `2·d_out`.
    pub attn: Array1<f64>,
    /// Logits behind λ1, λ2, λ3.
    pub lambda_logits: [f64; 3],
}

impl LcatParameters {
    pub fn zeros(dims: LcatDims) -> Self {
        Self {
            mlp_weight: Array2::zeros((dims.d_in, dims.d_model)),
            mlp_bias: Array1::zeros(dims.d_model),
            w1: Array2::zeros((dims.d_model, dims.d_out)),
            w2: Array2::zeros((dims.d_model, dims.d_out)),
            attn: Array1::zeros(2 * dims.d_out),
            lambda_logits: [0.0; 3],
        }
    }

    /// Uniform(±1/√fan_in) weights, zero bias, λ = 0.5.
    pub fn init<R: Rng + ?Sized>(dims: LcatDims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let mut p = Self::zeros(dims);
        let mut fill = |m: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in m {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(p.mlp_weight.as_slice_mut().unwrap(), dims.d_in);
        fill(p.w1.as_slice_mut().unwrap(), dims.d_model);
        fill(p.w2.as_slice_mut().unwrap(), dims.d_model);
        fill(p.attn.as_slice_mut().unwrap(), 2 * dims.d_out);
        Ok(p)
    }

    pub fn dims(&self) -> LcatDims {
        LcatDims {
            d_in: self.mlp_weight.nrows(),
            d_model: self.mlp_weight.ncols(),
            d_out: self.w1.ncols(),
        }
    }

    pub fn lambdas(&self) -> [f64; 3] {
        self.lambda_logits.map(sigmoid)
    }

    /// Number of scalars across all tensors.
    pub fn len(&self) -> usize {
        self.mlp_weight.len() + self.mlp_bias.len() + self.w1.len() + self.w2.len() + self.attn.len() + 3
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Named flat views, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("mlp_weight", self.mlp_weight.as_slice().expect("standard layout")),
            ("mlp_bias", self.mlp_bias.as_slice().expect("standard layout")),
            ("w1", self.w1.as_slice().expect("standard layout")),
            ("w2", self.w2.as_slice().expect("standard layout")),
            ("attn", self.attn.as_slice().expect("standard layout")),
            ("lambda_logits", &self.lambda_logits[..]),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("mlp_weight", self.mlp_weight.as_slice_mut().expect("standard layout")),
            ("mlp_bias", self.mlp_bias.as_slice_mut().expect("standard layout")),
            ("w1", self.w1.as_slice_mut().expect("standard layout")),
            ("w2", self.w2.as_slice_mut().expect("standard layout")),
            ("attn", self.attn.as_slice_mut().expect("standard layout")),
            ("lambda_logits", &mut self.lambda_logits[..]),
        ]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!("flat vector has {} entries, parameters have {}", flat.len(), self.len())));
        }
        let mut at = 0;
        for (_, t) in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.mlp_weight.dim() == other.mlp_weight.dim()
            && self.mlp_bias.dim() == other.mlp_bias.dim()
            && self.w1.dim() == other.w1.dim()
            && self.w2.dim() == other.w2.dim()
            && self.attn.dim() == other.attn.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Values that replace the learned λ's (for ablations). A frozen λ receives
/// no gradient.
pub type LambdaOverride = [Option<f64>; 3];

#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    nbrs: Neighborhoods,
    e: Array2<f64>,
    conv: Array2<f64>,
    /// `h = e'·W2`
    h: Array2<f64>,
    /// `g = e·W1`
    g: Array2<f64>,
    /// Pre-activation scores without the λ1 factor: `p_i + q_j`, CSR order.
    raw_scores: Vec<f64>,
    lambdas: [f64; 3],
    z_norm: Array1<f64>,
}

/// Encoder output plus what backprop needs.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Row-normalized output `Ẽ`.
    pub e_tilde: Array2<f64>,
    /// Aggregated neighborhood messages `E'` before mixing.
    pub aggregated: Array2<f64>,
    /// Attention coefficients in CSR order of the neighborhoods used.
    pub attention: Vec<f64>,
    cache: Option<ForwardCache>,
}

impl EncoderOutput {
    /// Drops the backprop cache.
    pub fn detach(mut self) -> Self {
        self.cache = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lcat {
    pub params: LcatParameters,
    pub frozen: LambdaOverride,
}

impl Lcat {
    pub fn new(params: LcatParameters) -> Self {
        Self { params, frozen: [None; 3] }
    }

    pub fn lambdas(&self) -> [f64; 3] {
        let learned = self.params.lambdas();
        [0, 1, 2].map(|k| self.frozen[k].unwrap_or(learned[k]))
    }

    /// `X·Wm + b`, no nonlinearity.
    pub fn mlp_forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let d_in = self.params.mlp_weight.nrows();
        if x.ncols() != d_in {
            return Err(Error::Dimension { expected: d_in, found: x.ncols(), context: "encoder input features".into() });
        }
        Ok(x.dot(&self.params.mlp_weight) + &self.params.mlp_bias)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, nbrs: &Neighborhoods) -> Result<EncoderOutput> {
        if x.nrows() != nbrs.len() {
            return Err(Error::Shape(format!("{} feature rows for {} nodes", x.nrows(), nbrs.len())));
        }
        let lambdas = self.lambdas();
        let [l1, l2, l3] = lambdas;
        let e = self.mlp_forward(x)?;
        let conv = convolve(&e, nbrs, l2);
        let h = conv.dot(&self.params.w2);
        let d_out = self.params.w2.ncols();
        let p = h.dot(&self.params.attn.slice(s![..d_out]));
        let q = h.dot(&self.params.attn.slice(s![d_out..]));
        let mut raw_scores = Vec::with_capacity(nbrs.nnz());
        for i in 0..nbrs.len() {
            raw_scores.extend(nbrs.of(i).iter().map(|&j| p[i] + q[j]));
        }
        let attention = softmax_rows(nbrs, &raw_scores, l1);
        let g = e.dot(&self.params.w1);
        let aggregated = aggregate(&g, nbrs, &attention);
        let z = &aggregated * l3 + &e * (1.0 - l3);
        let z_norm = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let mut e_tilde = z;
        for (mut row, &n) in e_tilde.rows_mut().into_iter().zip(&z_norm) {
            if n > 0.0 {
                row /= n;
            }
        }
        Ok(EncoderOutput {
            e_tilde,
            aggregated,
            attention,
            cache: Some(ForwardCache {
                x: x.to_owned(),
                nbrs: nbrs.clone(),
                e,
                conv,
                h,
                g,
                raw_scores,
                lambdas,
                z_norm,
            }),
        })
    }

    /// Exact gradients of a scalar loss given `dL/dẼ`.
    pub fn backward(&self, out: &EncoderOutput, grad: ArrayView2<'_, f64>) -> Result<LcatParameters> {
        let c = out.cache.as_ref().ok_or(Error::NoForwardCache)?;
        if grad.dim() != out.e_tilde.dim() {
            return Err(Error::Shape(format!("gradient {:?} vs output {:?}", grad.dim(), out.e_tilde.dim())));
        }
        let [l1, l2, l3] = c.lambdas;
        let nbrs = &c.nbrs;
        let n = nbrs.len();
        let d_out = self.params.w2.ncols();
        let mut grads = LcatParameters::zeros(self.params.dims());

        // row normalization
        let mut dz = Array2::<f64>::zeros(grad.dim());
        for i in 0..n {
            let nz = c.z_norm[i];
            if nz == 0.0 {
                continue;
            }
            let y = out.e_tilde.row(i);
            let gi = grad.row(i);
            let proj = y.dot(&gi);
            dz.row_mut(i).assign(&((&gi - &(&y * proj)) / nz));
        }

        // output mixing
        let dlambda3 = ((&out.aggregated - &c.e) * &dz).sum();
        let d_agg = &dz * l3;
        let mut de = &dz * (1.0 - l3);

        // aggregation E'_i = Σ α_ij g_j
        let mut dg = Array2::<f64>::zeros(c.g.dim());
        let mut dalpha = vec![0.0; nbrs.nnz()];
        for i in 0..n {
            let dai = d_agg.row(i);
            for (slot, &j) in nbrs.range(i).zip(nbrs.of(i)) {
                dg.row_mut(j).scaled_add(out.attention[slot], &dai);
                dalpha[slot] = dai.dot(&c.g.row(j));
            }
        }

        // softmax and scores ψ_ij = λ1 (p_i + q_j)
        let mut dlambda1 = 0.0;
        let mut dp = Array1::<f64>::zeros(n);
        let mut dq = Array1::<f64>::zeros(n);
        for i in 0..n {
            let r = nbrs.range(i);
            let weighted: f64 = r.clone().map(|s| out.attention[s] * dalpha[s]).sum();
            for (slot, &j) in r.zip(nbrs.of(i)) {
                let dpsi = out.attention[slot] * (dalpha[slot] - weighted);
                dlambda1 += dpsi * c.raw_scores[slot];
                dp[i] += l1 * dpsi;
                dq[j] += l1 * dpsi;
            }
        }
        let a_left = self.params.attn.slice(s![..d_out]);
        let a_right = self.params.attn.slice(s![d_out..]);
        grads.attn.slice_mut(s![..d_out]).assign(&c.h.t().dot(&dp));
        grads.attn.slice_mut(s![d_out..]).assign(&c.h.t().dot(&dq));
        let mut dh = Array2::<f64>::zeros(c.h.dim());
        Zip::from(dh.rows_mut()).and(&dp).and(&dq).for_each(|mut row, &pi, &qi| {
            row.scaled_add(pi, &a_left);
            row.scaled_add(qi, &a_right);
        });

        // h = e'·W2, g = e·W1
        grads.w2 = c.conv.t().dot(&dh);
        let dconv = dh.dot(&self.params.w2.t());
        grads.w1 = c.e.t().dot(&dg);
        de += &dg.dot(&self.params.w1.t());

        // convolution e'_i = (e_i + λ2 S_i) / (1 + λ2 |N*_i|)
        let mut dlambda2 = 0.0;
        for i in 0..n {
            let nb = nbrs.of(i);
            let denom = 1.0 + l2 * nb.len() as f64;
            let dci = dconv.row(i);
            de.row_mut(i).scaled_add(1.0 / denom, &dci);
            let mut sum = Array1::<f64>::zeros(c.e.ncols());
            for &k in nb {
                de.row_mut(k).scaled_add(l2 / denom, &dci);
                sum += &c.e.row(k);
            }
            let dd = &sum - &(&c.conv.row(i) * nb.len() as f64);
            dlambda2 += dci.dot(&dd) / denom;
        }

        // e = X·Wm + b
        grads.mlp_weight = c.x.t().dot(&de);
        grads.mlp_bias = de.sum_axis(Axis(0));

        let dl = [dlambda1, dlambda2, dlambda3];
        for k in 0..3 {
            grads.lambda_logits[k] = if self.frozen[k].is_some() {
                0.0
            } else {
                let s = sigmoid(self.params.lambda_logits[k]);
                dl[k] * s * (1.0 - s)
            };
        }
        Ok(grads)
    }
}

/// `e'_i = (e_i + λ2 Σ_{k∈N*(i)} e_k) / (1 + λ2 |N*(i)|)`.
pub fn convolve(e: &Array2<f64>, nbrs: &Neighborhoods, lambda2: f64) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(e.dim());
    for i in 0..nbrs.len() {
        let nb = nbrs.of(i);
        let mut row = out.row_mut(i);
        for &k in nb {
            row += &e.row(k);
        }
        row *= lambda2;
        row += &e.row(i);
        row /= 1.0 + lambda2 * nb.len() as f64;
    }
    out
}

/// Max-shifted softmax of `lambda1 · raw` over each neighborhood.
pub fn softmax_rows(nbrs: &Neighborhoods, raw: &[f64], lambda1: f64) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    for i in 0..nbrs.len() {
        let r = nbrs.range(i);
        let scores: Vec<f64> = raw[r.clone()].iter().map(|&v| lambda1 * v).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (slot, e) in r.zip(exps) {
            out[slot] = e / total;
        }
    }
    out
}

/// `E'_i = Σ_j α_ij g_j` with `g = e·W1` precomputed.
pub fn aggregate(g: &Array2<f64>, nbrs: &Neighborhoods, attention: &[f64]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(g.dim());
    for i in 0..nbrs.len() {
        let mut row = out.row_mut(i);
        for (slot, &j) in nbrs.range(i).zip(nbrs.of(i)) {
            row.scaled_add(attention[slot], &g.row(j));
        }
    }
    out
}

const CHECKPOINT_FORMAT: &str = "lcat-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorBlob {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    seed: u64,
    dims: LcatDims,
    tensors: Vec<TensorBlob>,
    lambda_logits: [f64; 3],
}

fn expected_shapes(d: LcatDims) -> [(&'static str, Vec<usize>); 5] {
    [
        ("mlp_weight", vec![d.d_in, d.d_model]),
        ("mlp_bias", vec![d.d_model]),
        ("w1", vec![d.d_model, d.d_out]),
        ("w2", vec![d.d_model, d.d_out]),
        ("attn", vec![2 * d.d_out]),
    ]
}

/// Parameters plus the seed they were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: LcatParameters,
    pub seed: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let dims = self.params.dims();
        let shapes = expected_shapes(dims);
        let tensors = self
            .params
            .tensors()
            .into_iter()
            .take(5)
            .zip(shapes)
            .map(|((name, data), (_, shape))| TensorBlob { name: name.into(), shape, data: data.to_vec() })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            dims,
            tensors,
            lambda_logits: self.params.lambda_logits,
        };
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(&file)?).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint, rejecting any tensor whose shape disagrees with
    /// the stored dims or with `expect` when given.
    pub fn load(path: impl AsRef<Path>, expect: Option<LcatDims>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_slice(&bytes)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Shape(format!("unsupported checkpoint {} v{}", file.format, file.version)));
        }
        if let Some(d) = expect {
            if d != file.dims {
                return Err(Error::Shape(format!("checkpoint dims {:?}, expected {d:?}", file.dims)));
            }
        }
        file.dims.validate()?;
        let mut params = LcatParameters::zeros(file.dims);
        params.lambda_logits = file.lambda_logits;
        let shapes = expected_shapes(file.dims);
        if file.tensors.len() != shapes.len() {
            return Err(Error::Shape(format!("checkpoint has {} tensors, expected {}", file.tensors.len(), shapes.len())));
        }
        for ((blob, (name, shape)), (_, dst)) in file.tensors.iter().zip(shapes).zip(params.tensors_mut()) {
            if blob.name != name || blob.shape != shape || blob.data.len() != dst.len() {
                return Err(Error::Shape(format!(
                    "tensor `{}` {:?} ({} values) does not match `{name}` {shape:?}",
                    blob.name,
                    blob.shape,
                    blob.data.len()
                )));
            }
            dst.copy_from_slice(&blob.data);
        }
        if !params.is_finite() {
            return Err(Error::Numerical("checkpoint contains non-finite values".into()));
        }
        Ok(Self { params, seed: file.seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(d_in: usize, d: usize) -> LcatDims {
        LcatDims { d_in, d_model: d, d_out: d }
    }

    fn path_graph(n: usize) -> Neighborhoods {
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut l = Vec::new();
                if i > 0 {
                    l.push(i - 1);
                }
                if i + 1 < n {
                    l.push(i + 1);
                }
                l
            })
            .collect();
        Neighborhoods::from_lists(&lists)
    }

    #[test]
    fn mlp_identity_and_bias() {
        let mut p = LcatParameters::zeros(dims(2, 2));
        p.mlp_weight = Array2::eye(2);
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let lcat = Lcat::new(p.clone());
        assert_eq!(lcat.mlp_forward(x.view()).unwrap(), x);

        p.mlp_weight.fill(0.0);
        p.mlp_bias = array![0.5, -1.0];
        let lcat = Lcat::new(p);
        assert_eq!(lcat.mlp_forward(x.view()).unwrap(), array![[0.5, -1.0], [0.5, -1.0]]);
        assert!(lcat.mlp_forward(array![[1.0]].view()).is_err());
    }

    #[test]
    fn convolution_cases() {
        let nb = path_graph(2);
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(convolve(&e, &nb, 0.0), e);
        let c = convolve(&e, &nb, 1.0);
        assert_abs_diff_eq!(c.row(0), array![2.0 / 3.0, 1.0 / 3.0], epsilon = 1e-15);

        let same = Array2::from_shape_fn((3, 2), |(_, j)| [0.3, -0.7][j]);
        assert_abs_diff_eq!(convolve(&same, &path_graph(3), 0.42), same, epsilon = 1e-15);

        let iso = Neighborhoods::from_lists(&[vec![]]);
        assert_abs_diff_eq!(convolve(&array![[5.0, 6.0]], &iso, 0.9), array![[5.0, 6.0]], epsilon = 1e-12);
    }

    #[test]
    fn zero_lambda1_is_uniform() {
        // center 0 with three neighbors
        let nb = Neighborhoods::from_lists(&[vec![1, 2, 3], vec![0], vec![0], vec![0]]);
        let raw: Vec<f64> = (0..nb.nnz()).map(|i| i as f64 * 1.7 - 3.0).collect();
        let a = softmax_rows(&nb, &raw, 0.0);
        for &v in &a[nb.range(0)] {
            assert_eq!(v, 0.25);
        }
        let iso = Neighborhoods::from_lists(&[vec![]]);
        assert_eq!(softmax_rows(&iso, &[123.0], 1.0), vec![1.0]);
    }

    #[test]
    fn isolated_node_aggregates_itself() {
        let mut p = LcatParameters::init(dims(3, 2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.w1 = array![[2.0, 0.0], [1.0, -1.0]];
        let lcat = Lcat::new(p);
        let x = array![[0.2, 0.1, -0.4]];
        let out = lcat.forward(x.view(), &Neighborhoods::from_lists(&[vec![]])).unwrap();
        let e = lcat.mlp_forward(x.view()).unwrap();
        assert_abs_diff_eq!(out.aggregated, e.dot(&lcat.params.w1), epsilon = 1e-15);
        assert_eq!(out.attention, vec![1.0]);
    }

    #[test]
    fn mixing_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nb = path_graph(4);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let p = LcatParameters::init(dims(3, 4), &mut rng).unwrap();
        let mut lcat = Lcat::new(p);

        lcat.frozen[2] = Some(1.0);
        let out = lcat.forward(x.view(), &nb).unwrap();
        let mut expect = out.aggregated.clone();
        crate::features::l2_normalize_rows(&mut expect);
        assert_abs_diff_eq!(out.e_tilde, expect, epsilon = 1e-12);

        lcat.frozen[2] = Some(0.0);
        let out = lcat.forward(x.view(), &nb).unwrap();
        let mut expect = lcat.mlp_forward(x.view()).unwrap();
        crate::features::l2_normalize_rows(&mut expect);
        assert_abs_diff_eq!(out.e_tilde, expect, epsilon = 1e-12);

        lcat.frozen[2] = Some(0.5);
        let out = lcat.forward(x.view(), &nb).unwrap();
        let e = lcat.mlp_forward(x.view()).unwrap();
        let mut expect = (&out.aggregated + &e) * 0.5;
        crate::features::l2_normalize_rows(&mut expect);
        assert_abs_diff_eq!(out.e_tilde, expect, epsilon = 1e-12);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nb = path_graph(5);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let lcat = Lcat::new(LcatParameters::init(dims(3, 4), &mut rng).unwrap());
        let out = lcat.forward(x.view(), &nb).unwrap();
        let g = lcat.backward(&out, Array2::zeros((5, 4)).view()).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_needs_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nb = path_graph(2);
        let x = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
        let lcat = Lcat::new(LcatParameters::init(dims(2, 2), &mut rng).unwrap());
        let out = lcat.forward(x.view(), &nb).unwrap().detach();
        assert!(matches!(lcat.backward(&out, Array2::zeros((2, 2)).view()), Err(Error::NoForwardCache)));
    }

    #[test]
    fn saturated_lambda_has_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nb = path_graph(4);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let upstream = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let mut p = LcatParameters::init(dims(3, 3), &mut rng).unwrap();
        for l in [30.0, -30.0] {
            p.lambda_logits[0] = l;
            let lcat = Lcat::new(p.clone());
            let out = lcat.forward(x.view(), &nb).unwrap();
            let g = lcat.backward(&out, upstream.view()).unwrap();
            assert!(g.lambda_logits[0].abs() < 1e-10);
        }
    }

    #[test]
    fn dims_must_match_for_mixing() {
        let bad = LcatDims { d_in: 3, d_model: 4, d_out: 2 };
        assert!(matches!(LcatParameters::init(bad, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Config(_))));
    }

    #[test]
    fn flat_round_trip() {
        let p = LcatParameters::init(dims(3, 2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut q = LcatParameters::zeros(p.dims());
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_shape_check() {
        let p = LcatParameters::init(dims(3, 2), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        Checkpoint { params: p.clone(), seed: 77 }.save(&path).unwrap();
        let back = Checkpoint::load(&path, Some(dims(3, 2))).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.seed, 77);
        assert!(Checkpoint::load(&path, Some(dims(4, 2))).is_err());

        let text = std::fs::read_to_string(&path).unwrap().replace("\"shape\":[2]", "\"shape\":[3]");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Checkpoint::load(&path, None), Err(Error::Shape(_))));
    }
}
