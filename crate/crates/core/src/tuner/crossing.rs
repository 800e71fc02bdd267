use serde::{Deserialize, Serialize};

use super::TuneError;
use crate::linalg::C64;
use crate::model::PoleSet;
use crate::spectral::OptimizationCurve;

/// Pole matching between two consecutive iterates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub crossed: bool,
    /// `(before, after)` for every pole, counted with multiplicity.
    pub pairs: Vec<(C64, C64)>,
}

/// Matches poles greedily by distance and flags any pair that changed side
/// of the curve.
pub fn detect_crossing(
    before: &PoleSet,
    after: &PoleSet,
    curve: &OptimizationCurve,
) -> Result<CrossingReport, TuneError> {
    let a = before.expanded();
    let b = after.expanded();
    if a.len() != b.len() {
        return Err(TuneError::PoleCount {
            before: a.len(),
            after: b.len(),
        });
    }
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(a.len() * b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            cand.push(((x - y).norm(), i, j));
        }
    }
    cand.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::with_capacity(a.len());
    for (_, i, j) in cand {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((a[i], b[j]));
        }
    }
    pairs.sort_by(|p, q| p.0.re.total_cmp(&q.0.re).then(p.0.im.total_cmp(&q.0.im)));
    let crossed = pairs
        .iter()
        .any(|(x, y)| (curve.side(*x) < 0.0) != (curve.side(*y) < 0.0));
    Ok(CrossingReport { crossed, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MULTIPLICITY_TOL;

    fn set(v: &[C64]) -> PoleSet {
        PoleSet::from_eigenvalues(v, MULTIPLICITY_TOL)
    }

    #[test]
    fn sign_flip_is_a_crossing() {
        let curve = OptimizationCurve::vertical(0.7);
        let r = detect_crossing(&set(&[C64::new(0.5, 0.0)]), &set(&[C64::new(0.9, 0.0)]), &curve).unwrap();
        assert!(r.crossed);
        let r = detect_crossing(&set(&[C64::new(0.5, 0.0)]), &set(&[C64::new(0.6, 0.0)]), &curve).unwrap();
        assert!(!r.crossed);
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let curve = OptimizationCurve::vertical(0.0);
        let r = detect_crossing(&set(&[C64::new(-1.0, 0.0)]), &set(&[]), &curve);
        assert!(matches!(r, Err(TuneError::PoleCount { .. })));
    }
}
