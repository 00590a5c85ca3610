//! One-to-one assignment of ranked predictions to ground-truth instances.
//!
//! Predictions are processed in rank order. Each one first takes the
//! unmatched instance of highest tIoU at or above the threshold. When every
//! qualifying instance is already taken, an augmenting path is searched so
//! that earlier predictions may move to other qualifying instances. Earlier
//! predictions never lose their match, and after `r` predictions the number
//! of matches equals the largest one-to-one matching among those `r`.

/// Incremental matcher over a fixed set of ground-truth instances.
#[derive(Debug, Clone)]
pub struct IncrementalMatcher {
    tau: f64,
    /// Qualifying instances per processed prediction, best tIoU first.
    candidates: Vec<Vec<usize>>,
    owner: Vec<Option<usize>>,
}

impl IncrementalMatcher {
    pub fn new(n_gt: usize, tau: f64) -> Self {
        Self {
            tau,
            candidates: Vec::new(),
            owner: vec![None; n_gt],
        }
    }

    /// Adds the next prediction given its tIoU with every instance. Returns
    /// whether the matching grew.
    pub fn push(&mut self, tious: &[f64]) -> bool {
        debug_assert_eq!(tious.len(), self.owner.len());
        let mut cand: Vec<usize> = (0..tious.len()).filter(|&g| tious[g] >= self.tau).collect();
        cand.sort_by(|&a, &b| tious[b].total_cmp(&tious[a]).then(a.cmp(&b)));
        let me = self.candidates.len();
        self.candidates.push(cand);

        if let Some(&g) = self.candidates[me].iter().find(|&&g| self.owner[g].is_none()) {
            self.owner[g] = Some(me);
            return true;
        }
        let mut visited = vec![false; self.owner.len()];
        self.augment(me, &mut visited)
    }

    fn augment(&mut self, pred: usize, visited: &mut [bool]) -> bool {
        for idx in 0..self.candidates[pred].len() {
            let g = self.candidates[pred][idx];
            if visited[g] {
                continue;
            }
            visited[g] = true;
            let free = match self.owner[g] {
                None => true,
                Some(other) => self.augment(other, visited),
            };
            if free {
                self.owner[g] = Some(pred);
                return true;
            }
        }
        false
    }

    pub fn matched(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }
}

/// True-positive flag per prediction, for predictions given in rank order
/// as rows of a tIoU matrix (`rows[p][g]`).
pub fn match_flags(rows: &[Vec<f64>], n_gt: usize, tau: f64) -> Vec<bool> {
    let mut m = IncrementalMatcher::new(n_gt, tau);
    rows.iter().map(|r| m.push(r)).collect()
}
