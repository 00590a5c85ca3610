use serde::{Deserialize, Serialize};

use super::attention::{attention_forward, RelationWeights};
use super::feature::{proposal_features, PoolConfig};
use crate::error::{Error, Result};
use crate::ingest::FeatureSequence;
use crate::segment::{sort_ranked, Proposal};

/// How the refined confidence enters the final proposal score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    Replace,
    #[default]
    Multiply,
    Average,
}

pub fn combine_scores(mode: CombineMode, original: f64, refined: f64) -> f64 {
    match mode {
        CombineMode::Replace => refined,
        CombineMode::Multiply => original * refined,
        CombineMode::Average => 0.5 * (original + refined),
    }
}

/// Runs the relation module over one video's proposals, stores the refined
/// confidence on each proposal, updates the score per `mode` and re-sorts.
pub fn rescore_proposals(
    proposals: &[Proposal],
    seq: &FeatureSequence,
    w: &RelationWeights,
    pool: &PoolConfig,
    mode: CombineMode,
) -> Result<Vec<Proposal>> {
    if proposals.is_empty() {
        return Ok(Vec::new());
    }
    if pool.dim() != w.d_in() {
        return Err(Error::ShapeMismatch(format!(
            "pooling with {} bins yields {} values, relation weights expect {}",
            pool.bins,
            pool.dim(),
            w.d_in()
        )));
    }
    let x = proposal_features(seq, proposals, pool);
    let (refined, _) = attention_forward(&x, w)?;
    Ok(apply_refined(proposals, refined.as_slice().expect("contiguous"), mode))
}

pub(crate) fn apply_refined(proposals: &[Proposal], refined: &[f64], mode: CombineMode) -> Vec<Proposal> {
    let mut out: Vec<Proposal> = proposals
        .iter()
        .zip(refined)
        .map(|(p, &r)| Proposal {
            score: combine_scores(mode, p.score, r),
            refined_score: Some(r),
            ..p.clone()
        })
        .collect();
    sort_ranked(&mut out);
    out
}
