//! Boundary-probability sequences, boundary-matching confidence maps, and
//! their decoding into scored proposals.
//!
//! Map cell `(d, i)` scores the candidate that starts at snippet `i` and
//! covers `d + 1` snippets, i.e. the normalized segment `[i/T, (i+d+1)/T]`.

mod decode;
mod head;

pub use decode::{decode_proposals, DecodeConfig, ScoreFusion};
pub use head::{forward_head, HeadWeights};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::segment::{tiou, TemporalSegment};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMaps {
    pub p_start: Array1<f64>,
    pub p_end: Array1<f64>,
    /// `d_max x t` classification confidence.
    pub m_cc: Array2<f64>,
    /// `d_max x t` regression confidence.
    pub m_cr: Array2<f64>,
}

impl ConfidenceMaps {
    pub fn zeros(t: usize, d_max: usize) -> Self {
        Self {
            p_start: Array1::zeros(t),
            p_end: Array1::zeros(t),
            m_cc: Array2::zeros((d_max, t)),
            m_cr: Array2::zeros((d_max, t)),
        }
    }

    pub fn t(&self) -> usize {
        self.p_start.len()
    }

    pub fn d_max(&self) -> usize {
        self.m_cc.nrows()
    }

    /// Whether cell `(d, i)` describes a segment inside the video.
    pub fn is_valid_cell(&self, d: usize, i: usize) -> bool {
        i + d < self.t()
    }

    /// Segment covered by map cell `(d, i)`.
    pub fn cell_segment(&self, d: usize, i: usize) -> TemporalSegment {
        let t = self.t() as f64;
        TemporalSegment::new(i as f64 / t, (i + d + 1) as f64 / t).expect("valid cell")
    }

    pub fn zero_invalid_cells(&mut self) {
        let t = self.t();
        for d in 0..self.d_max() {
            for i in t.saturating_sub(d)..t {
                self.m_cc[[d, i]] = 0.0;
                self.m_cr[[d, i]] = 0.0;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (t, d) = (self.t(), self.d_max());
        if t == 0 || self.p_end.len() != t || self.m_cc.dim() != (d, t) || self.m_cr.dim() != (d, t) {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent map shapes: p_start {}, p_end {}, m_cc {:?}, m_cr {:?}",
                t,
                self.p_end.len(),
                self.m_cc.dim(),
                self.m_cr.dim()
            )));
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !(self.p_start.iter().all(in_unit)
            && self.p_end.iter().all(in_unit)
            && self.m_cc.iter().all(in_unit)
            && self.m_cr.iter().all(in_unit))
        {
            return Err(Error::Value("confidence values must lie in [0, 1]".into()));
        }
        for dd in 0..d {
            for i in t.saturating_sub(dd)..t {
                if self.m_cc[[dd, i]] != 0.0 || self.m_cr[[dd, i]] != 0.0 {
                    return Err(Error::Value(format!("invalid map cell ({dd}, {i}) is non-zero")));
                }
            }
        }
        Ok(())
    }
}

/// Snippet index a normalized boundary falls on.
pub fn boundary_index(x: f64, t: usize) -> usize {
    ((x * t as f64).round() as usize).min(t - 1)
}

/// Ideal maps for a set of ground-truth segments: map cells hold the best
/// tIoU with any segment, boundary sequences hold triangular bumps (1 at the
/// boundary snippet, 0.5 at its neighbours).
pub fn oracle_confidence_maps(gt: &[TemporalSegment], t: usize, d_max: usize) -> ConfidenceMaps {
    let mut maps = ConfidenceMaps::zeros(t, d_max);
    if gt.is_empty() || t == 0 {
        return maps;
    }
    for g in gt {
        stamp_bump(&mut maps.p_start, boundary_index(g.start(), t));
        stamp_bump(&mut maps.p_end, boundary_index(g.end(), t));
    }
    for d in 0..d_max {
        for i in 0..t {
            if !maps.is_valid_cell(d, i) {
                continue;
            }
            let cell = maps.cell_segment(d, i);
            let best = gt.iter().map(|g| tiou(&cell, g)).fold(0.0, f64::max);
            maps.m_cc[[d, i]] = best;
            maps.m_cr[[d, i]] = best;
        }
    }
    maps
}

fn stamp_bump(seq: &mut Array1<f64>, center: usize) {
    let t = seq.len();
    seq[center] = seq[center].max(1.0);
    if center > 0 {
        seq[center - 1] = seq[center - 1].max(0.5);
    }
    if center + 1 < t {
        seq[center + 1] = seq[center + 1].max(0.5);
    }
}
