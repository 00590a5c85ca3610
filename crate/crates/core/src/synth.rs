//! Seeded synthetic videos: snippet features with raised activity inside
//! action instances, grid-aligned ground truth, and video-level class scores.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{ClassEntry, ClassificationScores, FeatureSequence};
use crate::metrics::VideoProposals;
use crate::propgen::{decode_proposals, oracle_confidence_maps, DecodeConfig};
use crate::relation::{proposal_features, PoolConfig, RelationSample};
use crate::segment::{sort_ranked, tiou, Annotation, GroundTruthDB, Proposal, TemporalSegment, VideoAnnotations};

pub const SYNTH_LABELS: [&str; 5] = ["Archery", "Bowling", "Diving", "Juggling", "Rowing"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub videos: usize,
    pub t: usize,
    pub c: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            videos: 50,
            t: 100,
            c: 8,
            min_instances: 1,
            max_instances: 4,
            noise: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub features: Vec<FeatureSequence>,
    pub gt: GroundTruthDB,
    pub classification: BTreeMap<String, ClassificationScores>,
}

pub fn video_id(i: usize) -> String {
    format!("synth_{i:04}")
}

/// Builds the dataset. Instances of a video share one label, have pairwise
/// distinct boundary snippets, do not overlap, and end before the last snippet.
pub fn generate(cfg: &SynthConfig, seed: u64) -> SynthDataset {
    assert!(
        cfg.t > 2 * cfg.max_instances,
        "sequence too short for the instance count"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(cfg.videos);
    let mut gt = GroundTruthDB::default();
    let mut classification = BTreeMap::new();
    let t = cfg.t as f64;
    for v in 0..cfg.videos {
        let vid = video_id(v);
        let duration = rng.random_range(60.0..240.0f64).round();
        let label = *SYNTH_LABELS.choose(&mut rng).expect("non-empty");
        let k = rng.random_range(cfg.min_instances..=cfg.max_instances);

        let mut idx: Vec<usize> = (0..cfg.t).collect();
        idx.shuffle(&mut rng);
        let mut picked: Vec<usize> = idx[..2 * k].to_vec();
        picked.sort_unstable();
        let annotations: Vec<Annotation> = picked
            .chunks_exact(2)
            .map(|p| Annotation {
                label: label.to_string(),
                segment: TemporalSegment::new(p[0] as f64 / t, p[1] as f64 / t).expect("distinct indices"),
            })
            .collect();

        let gain: Vec<f64> = (0..cfg.c).map(|_| rng.random_range(0.5..1.0)).collect();
        let data = Array2::from_shape_fn((cfg.t, cfg.c), |(r, ch)| {
            let inside = picked.chunks_exact(2).any(|p| r >= p[0] && r < p[1]);
            let base = if inside { gain[ch] } else { 0.0 };
            base + cfg.noise * rng.random_range(-1.0..1.0)
        });
        features.push(FeatureSequence::new(vid.clone(), data).expect("finite"));

        let entries = SYNTH_LABELS
            .iter()
            .map(|&l| ClassEntry {
                label: l.to_string(),
                score: if l == label {
                    rng.random_range(0.6..0.95)
                } else {
                    rng.random_range(0.0..0.3)
                },
            })
            .collect();
        classification.insert(
            vid.clone(),
            ClassificationScores::new(vid.clone(), entries).expect("valid scores"),
        );
        gt.videos.insert(
            vid,
            VideoAnnotations {
                duration_seconds: duration,
                annotations,
            },
        );
    }
    SynthDataset {
        features,
        gt,
        classification,
    }
}

/// Decodes oracle maps for every video of the dataset.
pub fn oracle_proposals(ds: &SynthDataset, t: usize, d_max: usize, decode: &DecodeConfig) -> VideoProposals {
    ds.gt
        .videos
        .iter()
        .map(|(vid, v)| {
            let segs: Vec<_> = v.annotations.iter().map(|a| a.segment).collect();
            (
                vid.clone(),
                decode_proposals(&oracle_confidence_maps(&segs, t, d_max), decode),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Weight of the uniform noise mixed into each score.
    pub noise_weight: f64,
    pub boundary_ratio: f64,
    pub max_proposals: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            noise_weight: 0.7,
            boundary_ratio: 0.4,
            max_proposals: 20,
        }
    }
}

/// Oracle-decoded proposals whose scores are blended with seeded uniform
/// noise: `(1 - w) * score + w * u`.
pub fn corrupted_proposals(ds: &SynthDataset, cfg: &CorruptionConfig, seed: u64) -> VideoProposals {
    let t = ds.features.first().map(FeatureSequence::t).unwrap_or(0);
    let decode = DecodeConfig {
        boundary_ratio: cfg.boundary_ratio,
        max_proposals: cfg.max_proposals,
        ..DecodeConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = oracle_proposals(ds, t, t, &decode);
    for props in out.values_mut() {
        for p in props.iter_mut() {
            let u: f64 = rng.random_range(0.0..1.0);
            p.score = ((1.0 - cfg.noise_weight) * p.score + cfg.noise_weight * u).clamp(0.0, 1.0);
        }
        sort_ranked(props);
    }
    out
}

/// Best tIoU of each proposal with any instance.
pub fn tiou_targets(props: &[Proposal], gt: &[TemporalSegment]) -> Array1<f64> {
    props
        .iter()
        .map(|p| gt.iter().map(|g| tiou(&p.segment, g)).fold(0.0, f64::max))
        .collect()
}

/// Pooled features and tIoU targets for every video with at least one proposal.
pub fn relation_samples(ds: &SynthDataset, proposals: &VideoProposals, pool: &PoolConfig) -> Vec<RelationSample> {
    ds.features
        .iter()
        .filter_map(|seq| {
            let props = proposals.get(&seq.video_id).filter(|p| !p.is_empty())?;
            Some(RelationSample {
                x: proposal_features(seq, props, pool),
                target: tiou_targets(props, &ds.gt.segments(&seq.video_id)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propgen::boundary_index;

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, 7);
        let b = generate(&cfg, 7);
        assert_eq!(a.gt, b.gt);
        assert_eq!(a.features, b.features);
        assert_eq!(a.features.len(), 50);
        for (vid, v) in &a.gt.videos {
            assert!((1..=4).contains(&v.annotations.len()));
            let mut bounds: Vec<usize> = v
                .annotations
                .iter()
                .flat_map(|an| {
                    [
                        boundary_index(an.segment.start(), 100),
                        boundary_index(an.segment.end(), 100),
                    ]
                })
                .collect();
            let n = bounds.len();
            bounds.dedup();
            assert_eq!(bounds.len(), n, "{vid}");
            assert!(v.annotations.iter().all(|an| an.segment.end() <= 0.99));
            let cls = &a.classification[vid];
            assert_eq!(cls.entries()[0].label, v.annotations[0].label);
        }
        assert_ne!(generate(&cfg, 8).gt, a.gt);
    }

    #[test]
    fn corrupted_proposals_keep_segments() {
        let ds = generate(
            &SynthConfig {
                videos: 5,
                ..Default::default()
            },
            1,
        );
        let cfg = CorruptionConfig::default();
        let p = corrupted_proposals(&ds, &cfg, 2);
        let samples = relation_samples(&ds, &p, &PoolConfig::default());
        assert_eq!(samples.len(), 5);
        for s in &samples {
            assert!(s.x.nrows() <= 20);
            assert_eq!(s.x.ncols(), 27);
            assert!(s.target.iter().any(|&t| t == 1.0 || t > 0.999_999));
        }
    }
}
