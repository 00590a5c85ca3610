//! A small temporal network producing confidence maps from features:
//! two kernel-3 convolutions with ReLU, two kernel-1 sigmoid boundary heads,
//! and a map head that mean-pools the hidden features over every candidate
//! span and projects them to the two map channels.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ConfidenceMaps;
use crate::error::{Error, Result};
use crate::ingest::FeatureSequence;
use crate::weights::WeightSet;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub t: usize,
    pub d_max: usize,
    /// `[h, c, 3]`
    pub conv1_w: Array3<f64>,
    pub conv1_b: Array1<f64>,
    /// `[h, h, 3]`
    pub conv2_w: Array3<f64>,
    pub conv2_b: Array1<f64>,
    pub start_w: Array1<f64>,
    pub start_b: f64,
    pub end_w: Array1<f64>,
    pub end_b: f64,
    /// `[2, h]`, row 0 feeds `m_cc`, row 1 feeds `m_cr`.
    pub map_w: Array2<f64>,
    pub map_b: Array1<f64>,
}

impl HeadWeights {
    pub fn zeros(t: usize, c: usize, h: usize, d_max: usize) -> Self {
        Self {
            t,
            d_max,
            conv1_w: Array3::zeros((h, c, 3)),
            conv1_b: Array1::zeros(h),
            conv2_w: Array3::zeros((h, h, 3)),
            conv2_b: Array1::zeros(h),
            start_w: Array1::zeros(h),
            start_b: 0.0,
            end_w: Array1::zeros(h),
            end_b: 0.0,
            map_w: Array2::zeros((2, h)),
            map_b: Array1::zeros(2),
        }
    }

    /// Uniform fan-in initialization from a ChaCha8 stream.
    pub fn seeded(t: usize, c: usize, h: usize, d_max: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(t, c, h, d_max);
        let fill = |xs: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in xs {
                *x = rng.random_range(-bound..bound);
            }
        };
        fill(w.conv1_w.as_slice_mut().unwrap(), 3 * c, &mut rng);
        fill(w.conv1_b.as_slice_mut().unwrap(), 3 * c, &mut rng);
        fill(w.conv2_w.as_slice_mut().unwrap(), 3 * h, &mut rng);
        fill(w.conv2_b.as_slice_mut().unwrap(), 3 * h, &mut rng);
        fill(w.start_w.as_slice_mut().unwrap(), h, &mut rng);
        fill(w.end_w.as_slice_mut().unwrap(), h, &mut rng);
        fill(w.map_w.as_slice_mut().unwrap(), h, &mut rng);
        fill(w.map_b.as_slice_mut().unwrap(), h, &mut rng);
        let mut pair = [0.0; 2];
        fill(&mut pair, h, &mut rng);
        w.start_b = pair[0];
        w.end_b = pair[1];
        w
    }

    pub fn c(&self) -> usize {
        self.conv1_w.dim().1
    }

    pub fn h(&self) -> usize {
        self.conv1_w.dim().0
    }

    pub fn to_weight_set(&self) -> WeightSet {
        let (h, c) = (self.h(), self.c());
        let mut ws = WeightSet::default();
        for (k, v) in [("t", self.t), ("c", c), ("h", h), ("d_max", self.d_max)] {
            ws.dims.insert(k.into(), v);
        }
        ws.push("conv1.weight", &[h, c, 3], self.conv1_w.iter().copied());
        ws.push("conv1.bias", &[h], self.conv1_b.iter().copied());
        ws.push("conv2.weight", &[h, h, 3], self.conv2_w.iter().copied());
        ws.push("conv2.bias", &[h], self.conv2_b.iter().copied());
        ws.push("start.weight", &[h], self.start_w.iter().copied());
        ws.push("start.bias", &[1], [self.start_b]);
        ws.push("end.weight", &[h], self.end_w.iter().copied());
        ws.push("end.bias", &[1], [self.end_b]);
        ws.push("map.weight", &[2, h], self.map_w.iter().copied());
        ws.push("map.bias", &[2], self.map_b.iter().copied());
        ws
    }

    pub fn from_weight_set(ws: &WeightSet) -> Result<Self> {
        let (t, c, h, d_max) = (ws.dim("t")?, ws.dim("c")?, ws.dim("h")?, ws.dim("d_max")?);
        if t == 0 || c == 0 || h == 0 || d_max == 0 {
            return Err(Error::ShapeMismatch(format!(
                "head dims must be positive: t={t} c={c} h={h} d_max={d_max}"
            )));
        }
        let arr3 = |name: &str, shape: [usize; 3]| -> Result<Array3<f64>> {
            Ok(Array3::from_shape_vec(shape, ws.take(name, &shape)?.to_vec()).expect("shape checked"))
        };
        let arr1 = |name: &str, n: usize| -> Result<Array1<f64>> { Ok(Array1::from(ws.take(name, &[n])?.to_vec())) };
        Ok(Self {
            t,
            d_max,
            conv1_w: arr3("conv1.weight", [h, c, 3])?,
            conv1_b: arr1("conv1.bias", h)?,
            conv2_w: arr3("conv2.weight", [h, h, 3])?,
            conv2_b: arr1("conv2.bias", h)?,
            start_w: arr1("start.weight", h)?,
            start_b: ws.take("start.bias", &[1])?[0],
            end_w: arr1("end.weight", h)?,
            end_b: ws.take("end.bias", &[1])?[0],
            map_w: Array2::from_shape_vec((2, h), ws.take("map.weight", &[2, h])?.to_vec()).expect("shape checked"),
            map_b: arr1("map.bias", 2)?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_set(&WeightSet::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_weight_set().save(path)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero-padded kernel-3 convolution followed by ReLU, as one im2col product.
fn conv3_relu(x: &Array2<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (t, c_in) = x.dim();
    let c_out = w.dim().0;
    let mut cols = Array2::zeros((t, 3 * c_in));
    for r in 0..t {
        for k in 0..3 {
            let src = r as isize + k as isize - 1;
            if src < 0 || src >= t as isize {
                continue;
            }
            cols.row_mut(r)
                .slice_mut(ndarray::s![k * c_in..(k + 1) * c_in])
                .assign(&x.row(src as usize));
        }
    }
    let mut kernel = Array2::zeros((3 * c_in, c_out));
    for o in 0..c_out {
        for ci in 0..c_in {
            for k in 0..3 {
                kernel[[k * c_in + ci, o]] = w[[o, ci, k]];
            }
        }
    }
    let mut y = cols.dot(&kernel);
    y += b;
    y.mapv_inplace(|v| v.max(0.0));
    y
}

pub fn forward_head(seq: &FeatureSequence, w: &HeadWeights) -> Result<ConfidenceMaps> {
    if seq.t() != w.t || seq.c() != w.c() {
        return Err(Error::ShapeMismatch(format!(
            "features are {}x{}, head expects {}x{}",
            seq.t(),
            seq.c(),
            w.t,
            w.c()
        )));
    }
    let t = w.t;
    let z1 = conv3_relu(seq.data(), &w.conv1_w, &w.conv1_b);
    let z2 = conv3_relu(&z1, &w.conv2_w, &w.conv2_b);

    let mut maps = ConfidenceMaps::zeros(t, w.d_max);
    maps.p_start = z2.dot(&w.start_w).mapv(|v| sigmoid(v + w.start_b));
    maps.p_end = z2.dot(&w.end_w).mapv(|v| sigmoid(v + w.end_b));

    // Span mean pooling commutes with the linear projection, so project each
    // snippet first and pool the projections with prefix sums.
    let projected = z2.dot(&w.map_w.t()); // t x 2
    let mut prefix = Array2::<f64>::zeros((t + 1, 2));
    for r in 0..t {
        let next = &prefix.row(r) + &projected.row(r);
        prefix.row_mut(r + 1).assign(&next);
    }
    for d in 0..w.d_max.min(t) {
        let len = (d + 1) as f64;
        for i in 0..t - d {
            let span = &prefix.row(i + d + 1) - &prefix.row(i);
            maps.m_cc[[d, i]] = sigmoid(span[0] / len + w.map_b[0]);
            maps.m_cr[[d, i]] = sigmoid(span[1] / len + w.map_b[1]);
        }
    }
    maps.zero_invalid_cells();
    debug_assert_eq!(maps.m_cc.len_of(Axis(0)), w.d_max);
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn features(t: usize, c: usize) -> FeatureSequence {
        FeatureSequence::new(
            "v",
            Array2::from_shape_fn((t, c), |(r, ch)| ((r * 3 + ch) as f64).sin()),
        )
        .unwrap()
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let w = HeadWeights::zeros(12, 4, 5, 12);
        let m = forward_head(&features(12, 4), &w).unwrap();
        assert!(m.p_start.iter().chain(m.p_end.iter()).all(|&v| v == 0.5));
        for d in 0..12 {
            for i in 0..12 {
                let expect = if i + d < 12 { 0.5 } else { 0.0 };
                assert_eq!(m.m_cc[[d, i]], expect);
                assert_eq!(m.m_cr[[d, i]], expect);
            }
        }
    }

    #[test]
    fn outputs_in_open_unit_interval_and_deterministic() {
        let w = HeadWeights::seeded(30, 6, 8, 20, 3);
        let x = features(30, 6);
        let a = forward_head(&x, &w).unwrap();
        let b = forward_head(&x, &w).unwrap();
        assert_eq!(a, b);
        for d in 0..20 {
            for i in 0..30 - d {
                assert!(a.m_cc[[d, i]] > 0.0 && a.m_cc[[d, i]] < 1.0);
                assert!(a.m_cr[[d, i]] > 0.0 && a.m_cr[[d, i]] < 1.0);
            }
        }
        assert!(a.p_start.iter().all(|&v| v > 0.0 && v < 1.0));
        a.validate().unwrap();
    }

    #[test]
    fn shape_mismatch() {
        let w = HeadWeights::seeded(30, 6, 8, 20, 3);
        assert!(matches!(
            forward_head(&features(29, 6), &w),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            forward_head(&features(30, 5), &w),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let w = HeadWeights::seeded(10, 3, 4, 10, 9);
        let p = dir.path().join("head.json");
        w.save(&p).unwrap();
        let back = HeadWeights::load(&p).unwrap();
        assert_eq!((back.t, back.c(), back.h(), back.d_max), (10, 3, 4, 10));
        for (a, b) in back.conv1_w.iter().zip(w.conv1_w.iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        back.save(dir.path().join("again.json")).unwrap();
        assert_eq!(HeadWeights::load(dir.path().join("again.json")).unwrap(), back);
    }
}
