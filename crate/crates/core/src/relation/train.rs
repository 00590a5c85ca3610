//! Desk-scale trainer: plain gradient descent, one step per video, on the
//! mean squared error between refined scores and tIoU targets.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{attention_backward, attention_forward, RelationWeights};
use crate::error::{Error, Result};

/// Pooled proposal vectors of one video and their regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSample {
    pub x: Array2<f64>,
    pub target: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchOrder {
    /// Videos in dataset order every epoch.
    #[default]
    Sequential,
    /// A seeded permutation drawn anew each epoch.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub d_att: usize,
    pub h_r: usize,
    #[serde(default)]
    pub order: BatchOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 200,
            seed: 0,
            d_att: 64,
            h_r: 64,
            order: BatchOrder::Sequential,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: RelationWeights,
    /// Dataset MSE before training followed by one entry per epoch.
    pub loss_trace: Vec<f64>,
}

/// Mean squared error pooled over every proposal of every video.
pub fn dataset_mse(data: &[RelationSample], w: &RelationWeights) -> Result<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for sample in data {
        let (s, _) = attention_forward(&sample.x, w)?;
        sum += s
            .iter()
            .zip(sample.target.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += s.len();
    }
    Ok(sum / count as f64)
}

fn validate(data: &[RelationSample]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::Value("relation training set is empty".into()))?;
    let d_in = first.x.ncols();
    for (i, s) in data.iter().enumerate() {
        if s.x.nrows() == 0 || s.x.ncols() != d_in || s.target.len() != s.x.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "sample {i}: {}x{} features with {} targets (width {d_in} expected)",
                s.x.nrows(),
                s.x.ncols(),
                s.target.len()
            )));
        }
        if let Some(t) = s.target.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Value(format!("sample {i}: target {t} outside [0, 1]")));
        }
    }
    Ok(d_in)
}

pub fn train_relation(data: &[RelationSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let d_in = validate(data)?;
    let mut weights = RelationWeights::seeded(d_in, cfg.d_att, cfg.h_r, cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut loss_trace = Vec::with_capacity(cfg.epochs + 1);
    loss_trace.push(dataset_mse(data, &weights)?);

    for epoch in 1..=cfg.epochs {
        if cfg.order == BatchOrder::Shuffled {
            order.shuffle(&mut shuffle_rng);
        }
        for &v in &order {
            let sample = &data[v];
            let (scores, cache) = attention_forward(&sample.x, &weights)?;
            let n = scores.len() as f64;
            let d_scores = (&scores - &sample.target) * (2.0 / n);
            let grads = attention_backward(&cache, &d_scores)?;
            weights.apply_gradient(&grads, cfg.lr);
        }
        let loss = dataset_mse(data, &weights)?;
        if !loss.is_finite() || !weights.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { weights, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(seed: u64) -> Vec<RelationSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..6)
            .map(|_| {
                let n = rng.random_range(1..6);
                let x = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
                let target = x.column(0).mapv(|v| 0.5 + 0.4 * v);
                RelationSample { x, target }
            })
            .collect()
    }

    fn cfg(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            lr,
            epochs,
            seed: 4,
            d_att: 4,
            h_r: 6,
            order: BatchOrder::Sequential,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let data = toy(1);
        let out = train_relation(&data, &cfg(0.0, 5)).unwrap();
        assert_eq!(out.weights, RelationWeights::seeded(5, 4, 6, 4));
        assert_eq!(out.loss_trace.len(), 6);
        assert!(out.loss_trace.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let out = train_relation(&toy(1), &cfg(0.1, 0)).unwrap();
        assert_eq!(out.weights, RelationWeights::seeded(5, 4, 6, 4));
        assert_eq!(out.loss_trace.len(), 1);
    }

    #[test]
    fn loss_decreases_and_is_reproducible() {
        let data = toy(2);
        let a = train_relation(&data, &cfg(0.1, 100)).unwrap();
        let b = train_relation(&data, &cfg(0.1, 100)).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert!(a.loss_trace.last().unwrap() < &a.loss_trace[0]);
        let mut shuffled = cfg(0.1, 20);
        shuffled.order = BatchOrder::Shuffled;
        let s1 = train_relation(&data, &shuffled).unwrap();
        let s2 = train_relation(&data, &shuffled).unwrap();
        assert_eq!(s1.loss_trace, s2.loss_trace);
    }

    #[test]
    fn rejects_bad_datasets() {
        assert!(train_relation(&[], &cfg(0.1, 1)).is_err());
        let mut data = toy(3);
        data[0].target[0] = 1.5;
        assert!(matches!(train_relation(&data, &cfg(0.1, 1)), Err(Error::Value(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy(3);
        let err = train_relation(&data, &cfg(1e300, 3)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }
}
