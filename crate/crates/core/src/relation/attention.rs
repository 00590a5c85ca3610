//! Single-head self-attention over the proposals of one video, with a
//! residual connection and an MLP scoring head, plus its exact backward pass.
//!
//! ```text
//! Q = X Wq   K = X Wk   V = X Wv
//! A = softmax_rows(Q K^T / sqrt(d_att))
//! H = X + (A V) Wo
//! s = sigmoid(act(H W1 + b1) w2 + b2)
//! ```

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::WeightSet;

/// Hidden activation of the scoring MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub activation: Activation,
}

/// Gradients with the same layout as [`RelationWeights`], plus the input.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGrads {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
    pub x: Array2<f64>,
}

impl RelationWeights {
    pub fn zeros(d_in: usize, d_att: usize, h_r: usize) -> Self {
        Self {
            wq: Array2::zeros((d_in, d_att)),
            wk: Array2::zeros((d_in, d_att)),
            wv: Array2::zeros((d_in, d_att)),
            wo: Array2::zeros((d_att, d_in)),
            w1: Array2::zeros((d_in, h_r)),
            b1: Array1::zeros(h_r),
            w2: Array1::zeros(h_r),
            b2: 0.0,
            activation: Activation::Tanh,
        }
    }

    /// Every matrix entry uniform in `[-1/sqrt(d_in), 1/sqrt(d_in))` from a
    /// ChaCha8 stream, biases zero. Matrices are filled in the order
    /// Wq, Wk, Wv, Wo, W1, w2, row-major.
    pub fn seeded(d_in: usize, d_att: usize, h_r: usize, seed: u64) -> Self {
        let mut w = Self::zeros(d_in, d_att, h_r);
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo, &mut w.w1] {
            m.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        w.w2.mapv_inplace(|_| rng.random_range(-bound..bound));
        w
    }

    pub fn d_in(&self) -> usize {
        self.wq.nrows()
    }

    pub fn d_att(&self) -> usize {
        self.wq.ncols()
    }

    pub fn h_r(&self) -> usize {
        self.w1.ncols()
    }

    fn check_shapes(&self) -> Result<()> {
        let (d_in, d_att, h_r) = (self.d_in(), self.d_att(), self.h_r());
        let ok = self.wk.dim() == (d_in, d_att)
            && self.wv.dim() == (d_in, d_att)
            && self.wo.dim() == (d_att, d_in)
            && self.w1.dim() == (d_in, h_r)
            && self.b1.len() == h_r
            && self.w2.len() == h_r;
        if ok && d_att > 0 {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("relation weights have inconsistent shapes".into()))
        }
    }

    /// Visits every parameter as a flat slice, in a fixed order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("wq", self.wq.as_slice_mut().unwrap());
        f("wk", self.wk.as_slice_mut().unwrap());
        f("wv", self.wv.as_slice_mut().unwrap());
        f("wo", self.wo.as_slice_mut().unwrap());
        f("w1", self.w1.as_slice_mut().unwrap());
        f("b1", self.b1.as_slice_mut().unwrap());
        f("w2", self.w2.as_slice_mut().unwrap());
        f("b2", std::slice::from_mut(&mut self.b2));
    }

    /// In-place `w -= lr * g`.
    pub fn apply_gradient(&mut self, g: &RelationGrads, lr: f64) {
        self.wq.scaled_add(-lr, &g.wq);
        self.wk.scaled_add(-lr, &g.wk);
        self.wv.scaled_add(-lr, &g.wv);
        self.wo.scaled_add(-lr, &g.wo);
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2 -= lr * g.b2;
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.clone()
            .for_each_param_mut(|_, xs| ok &= xs.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn to_weight_set(&self) -> WeightSet {
        let (d_in, d_att, h_r) = (self.d_in(), self.d_att(), self.h_r());
        let mut ws = WeightSet::default();
        for (k, v) in [("d_in", d_in), ("d_att", d_att), ("h_r", h_r)] {
            ws.dims.insert(k.into(), v);
        }
        ws.meta.insert("activation".into(), self.activation.name().into());
        ws.push("wq", &[d_in, d_att], self.wq.iter().copied());
        ws.push("wk", &[d_in, d_att], self.wk.iter().copied());
        ws.push("wv", &[d_in, d_att], self.wv.iter().copied());
        ws.push("wo", &[d_att, d_in], self.wo.iter().copied());
        ws.push("mlp.w1", &[d_in, h_r], self.w1.iter().copied());
        ws.push("mlp.b1", &[h_r], self.b1.iter().copied());
        ws.push("mlp.w2", &[h_r], self.w2.iter().copied());
        ws.push("mlp.b2", &[1], [self.b2]);
        ws
    }

    pub fn from_weight_set(ws: &WeightSet) -> Result<Self> {
        let (d_in, d_att, h_r) = (ws.dim("d_in")?, ws.dim("d_att")?, ws.dim("h_r")?);
        let mat = |name: &str, r: usize, c: usize| -> Result<Array2<f64>> {
            Ok(Array2::from_shape_vec((r, c), ws.take(name, &[r, c])?.to_vec()).expect("shape checked"))
        };
        let activation = match ws.meta.get("activation").map(String::as_str) {
            None | Some("tanh") => Activation::Tanh,
            Some("identity") => Activation::Identity,
            Some(other) => return Err(Error::Schema(format!("unknown activation `{other}`"))),
        };
        let w = Self {
            wq: mat("wq", d_in, d_att)?,
            wk: mat("wk", d_in, d_att)?,
            wv: mat("wv", d_in, d_att)?,
            wo: mat("wo", d_att, d_in)?,
            w1: mat("mlp.w1", d_in, h_r)?,
            b1: Array1::from(ws.take("mlp.b1", &[h_r])?.to_vec()),
            w2: Array1::from(ws.take("mlp.w2", &[h_r])?.to_vec()),
            b2: ws.take("mlp.b2", &[1])?[0],
            activation,
        };
        w.check_shapes()?;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_set(&WeightSet::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_set().save(path)
    }
}

/// Intermediates kept by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Row-stochastic attention matrix.
    pub attention: Array2<f64>,
    pub mixed: Array2<f64>,
    pub hidden: Array2<f64>,
    pub activated: Array2<f64>,
    pub scores: Array1<f64>,
    weights: RelationWeights,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_rows(mut s: Array2<f64>) -> Array2<f64> {
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    s
}

pub fn attention_forward(x: &Array2<f64>, w: &RelationWeights) -> Result<(Array1<f64>, ForwardCache)> {
    w.check_shapes()?;
    if x.nrows() == 0 || x.ncols() != w.d_in() {
        return Err(Error::ShapeMismatch(format!(
            "input is {}x{}, relation module expects N>=1 rows of width {}",
            x.nrows(),
            x.ncols(),
            w.d_in()
        )));
    }
    let scale = 1.0 / (w.d_att() as f64).sqrt();
    let q = x.dot(&w.wq);
    let k = x.dot(&w.wk);
    let v = x.dot(&w.wv);
    let attention = softmax_rows(q.dot(&k.t()) * scale);
    let mixed = attention.dot(&v);
    let hidden = x + &mixed.dot(&w.wo);
    let mut activated = hidden.dot(&w.w1);
    activated += &w.b1;
    activated.mapv_inplace(|u| w.activation.apply(u));
    let scores = activated.dot(&w.w2).mapv(|o| sigmoid(o + w.b2));
    let cache = ForwardCache {
        x: x.clone(),
        q,
        k,
        v,
        attention,
        mixed,
        hidden,
        activated,
        scores: scores.clone(),
        weights: w.clone(),
    };
    Ok((scores, cache))
}

/// Backpropagates `d_scores` (dL/ds per proposal) through the cached forward pass.
pub fn attention_backward(cache: &ForwardCache, d_scores: &Array1<f64>) -> Result<RelationGrads> {
    let w = &cache.weights;
    let n = cache.x.nrows();
    if d_scores.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} score gradients for {n} proposals",
            d_scores.len()
        )));
    }
    let scale = 1.0 / (w.d_att() as f64).sqrt();

    // sigmoid and output layer
    let d_logit = d_scores * &cache.scores.mapv(|s| s * (1.0 - s));
    let g_w2 = cache.activated.t().dot(&d_logit);
    let g_b2 = d_logit.sum();
    let d_act = outer(&d_logit, &w.w2);
    let act = w.activation;
    let d_pre = d_act * &cache.activated.mapv(|y| act.derivative_from_output(y));
    let g_w1 = cache.hidden.t().dot(&d_pre);
    let g_b1 = d_pre.sum_axis(Axis(0));
    let d_hidden = d_pre.dot(&w.w1.t());

    // residual
    let mut g_x = d_hidden.clone();
    let g_wo = cache.mixed.t().dot(&d_hidden);
    let d_mixed = d_hidden.dot(&w.wo.t());

    // A V
    let d_attn = d_mixed.dot(&cache.v.t());
    let d_v = cache.attention.t().dot(&d_mixed);

    // row softmax: dS = A * (dA - rowsum(dA * A))
    let mut d_logits = Array2::zeros((n, n));
    for r in 0..n {
        let a = cache.attention.row(r);
        let da = d_attn.row(r);
        let inner: f64 = a.iter().zip(da.iter()).map(|(x, y)| x * y).sum();
        for c in 0..n {
            d_logits[[r, c]] = a[c] * (da[c] - inner) * scale;
        }
    }
    let d_q = d_logits.dot(&cache.k);
    let d_k = d_logits.t().dot(&cache.q);

    let g_wq = cache.x.t().dot(&d_q);
    let g_wk = cache.x.t().dot(&d_k);
    let g_wv = cache.x.t().dot(&d_v);
    g_x += &d_q.dot(&w.wq.t());
    g_x += &d_k.dot(&w.wk.t());
    g_x += &d_v.dot(&w.wv.t());

    Ok(RelationGrads {
        wq: g_wq,
        wk: g_wk,
        wv: g_wv,
        wo: g_wo,
        w1: g_w1,
        b1: g_b1,
        w2: g_w2,
        b2: g_b2,
        x: g_x,
    })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_x(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_proposal_attends_to_itself() {
        let w = RelationWeights::seeded(5, 4, 3, 1);
        let (_, cache) = attention_forward(&random_x(1, 5, 2), &w).unwrap();
        assert_eq!(cache.attention, array![[1.0]]);
    }

    #[test]
    fn identical_rows_get_identical_scores() {
        let w = RelationWeights::seeded(5, 4, 3, 1);
        let mut x = random_x(3, 5, 2);
        let row = x.row(0).to_owned();
        x.row_mut(2).assign(&row);
        let (s, _) = attention_forward(&x, &w).unwrap();
        assert_eq!(s[0], s[2]);
    }

    #[test]
    fn hand_evaluated_forward() {
        let eye = Array2::<f64>::eye(2);
        let w = RelationWeights {
            wq: eye.clone(),
            wk: eye.clone(),
            wv: eye.clone(),
            wo: eye.clone(),
            w1: eye.clone(),
            b1: Array1::zeros(2),
            w2: array![1.0, 1.0],
            b2: 0.0,
            activation: Activation::Identity,
        };
        let (s, cache) = attention_forward(&eye, &w).unwrap();
        // softmax([1/sqrt(2), 0]) = [e^a / (e^a + 1), 1 / (e^a + 1)]
        let a = (0.5f64).sqrt();
        let p = a.exp() / (a.exp() + 1.0);
        assert!((p - 0.669_761_549_3).abs() < 1e-9);
        assert!((cache.attention[[0, 0]] - p).abs() < 1e-15);
        assert!((cache.attention[[0, 1]] - (1.0 - p)).abs() < 1e-15);
        // H = I + A has rows summing to 2, so both scores are sigmoid(2).
        let expect = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((expect - 0.880_797_077_977_882_3).abs() < 1e-15);
        for v in s.iter() {
            assert!((v - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let w = RelationWeights::seeded(4, 3, 5, 7);
        let (_, cache) = attention_forward(&random_x(6, 4, 8), &w).unwrap();
        let g = attention_backward(&cache, &Array1::zeros(6)).unwrap();
        assert!(g.wq.iter().chain(g.wo.iter()).chain(g.x.iter()).all(|&v| v == 0.0));
        assert_eq!(g.b2, 0.0);
        assert!(attention_backward(&cache, &Array1::zeros(5)).is_err());
    }

    #[test]
    fn duplicated_rows_get_duplicated_input_gradients() {
        let w = RelationWeights::seeded(4, 3, 5, 7);
        let mut x = random_x(4, 4, 9);
        let row = x.row(1).to_owned();
        x.row_mut(3).assign(&row);
        let (_, cache) = attention_forward(&x, &w).unwrap();
        let g = attention_backward(&cache, &array![0.3, -0.7, 0.2, -0.7]).unwrap();
        for (a, b) in g.x.row(1).iter().zip(g.x.row(3).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let w = RelationWeights::seeded(4, 3, 5, 7);
        assert!(attention_forward(&random_x(3, 5, 1), &w).is_err());
        assert!(attention_forward(&Array2::zeros((0, 4)), &w).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = RelationWeights::seeded(6, 4, 3, 11);
        w.activation = Activation::Identity;
        let p = dir.path().join("rel.json");
        w.save(&p).unwrap();
        let back = RelationWeights::load(&p).unwrap();
        assert_eq!(back.activation, Activation::Identity);
        assert_eq!(back.d_in(), 6);
        back.save(&p).unwrap();
        assert_eq!(RelationWeights::load(&p).unwrap(), back);
    }
}
