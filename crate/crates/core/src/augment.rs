//! Temporal channel-shift augmentation.
//!
//! A leading block of channels is moved forward in time, the next block
//! backward, and the rest is left alone. Vacated rows are zero-filled.

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub forward_fraction: f64,
    pub backward_fraction: f64,
    pub step: usize,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            forward_fraction: 0.25,
            backward_fraction: 0.25,
            step: 1,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.forward_fraction) || !unit(self.backward_fraction) {
            return Err(Error::Value(format!(
                "shift fractions ({}, {}) must lie in [0, 1]",
                self.forward_fraction, self.backward_fraction
            )));
        }
        if self.forward_fraction + self.backward_fraction > 1.0 {
            return Err(Error::Value("shift fractions sum to more than 1".into()));
        }
        if self.step == 0 {
            return Err(Error::Value("shift step must be at least 1".into()));
        }
        Ok(())
    }

    /// Channel ranges `(forward, backward)` for `c` channels.
    pub fn channel_split(&self, c: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let fwd = (c as f64 * self.forward_fraction).floor() as usize;
        let bwd = ((c as f64 * (self.forward_fraction + self.backward_fraction)).floor() as usize).min(c);
        (0..fwd, fwd..bwd.max(fwd))
    }
}

/// Whether augmented sequences replace the originals or are added next to them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentMode {
    Replace,
    #[default]
    AppendAsExtraSample,
}

pub fn temporal_shift(seq: &FeatureSequence, spec: &ShiftSpec) -> Result<FeatureSequence> {
    spec.validate()?;
    let (t, c) = (seq.t(), seq.c());
    let step = spec.step;
    if step >= t {
        return Err(Error::StepTooLarge { step, t });
    }
    let x = seq.data();
    let (fwd, bwd) = spec.channel_split(c);
    let mut out = x.clone();
    if !fwd.is_empty() {
        out.slice_mut(s![.., fwd.clone()]).fill(0.0);
        out.slice_mut(s![step.., fwd.clone()])
            .assign(&x.slice(s![..t - step, fwd]));
    }
    if !bwd.is_empty() {
        out.slice_mut(s![.., bwd.clone()]).fill(0.0);
        out.slice_mut(s![..t - step, bwd.clone()])
            .assign(&x.slice(s![step.., bwd]));
    }
    FeatureSequence::new(seq.video_id.clone(), out)
}

/// Suffix appended to the id of a shifted copy kept next to its original.
pub const SHIFTED_SUFFIX: &str = "__shift";

/// Builds the training sample set for `mode`.
pub fn augment_samples(seqs: &[FeatureSequence], spec: &ShiftSpec, mode: AugmentMode) -> Result<Vec<FeatureSequence>> {
    let mut out = Vec::with_capacity(seqs.len() * 2);
    for seq in seqs {
        let mut shifted = temporal_shift(seq, spec)?;
        match mode {
            AugmentMode::Replace => out.push(shifted),
            AugmentMode::AppendAsExtraSample => {
                out.push(seq.clone());
                shifted.video_id = format!("{}{SHIFTED_SUFFIX}", seq.video_id);
                out.push(shifted);
            }
        }
    }
    Ok(out)
}
