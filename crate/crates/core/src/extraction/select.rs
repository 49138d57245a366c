use super::plane::PlaneCandidate;
use super::{ExtractionError, ExtractionParams};
use crate::scalar::Real;

/// Keeps the candidates whose tilt does not exceed `theta_deg`, in order.
pub fn filter_planes<T: Real>(candidates: &[PlaneCandidate<T>], params: &ExtractionParams<T>) -> Vec<PlaneCandidate<T>> {
    candidates.iter().filter(|c| c.alpha_deg <= params.theta_deg).cloned().collect()
}

/// Outcome of choosing the board among filtered candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    /// Index into the candidate list passed in.
    pub index: usize,
    /// No candidate lay within the distance tolerance of the prior.
    pub low_confidence: bool,
}

/// Picks the board plane: among candidates whose distance lies within
/// `distance_tolerance` of the prior `l`, the densest one wins (ties go to the
/// closer distance). Without any such candidate the closest one is returned
/// and flagged as low confidence.
pub fn select_board_plane<T: Real>(
    filtered: &[PlaneCandidate<T>],
    l: T,
    params: &ExtractionParams<T>,
) -> Result<Selection, ExtractionError> {
    if filtered.is_empty() {
        return Err(ExtractionError::EmptyCandidates);
    }
    let gap = |c: &PlaneCandidate<T>| (c.distance - l).abs();
    let cmp_gap = |a: &PlaneCandidate<T>, b: &PlaneCandidate<T>| gap(a).partial_cmp(&gap(b)).unwrap_or(std::cmp::Ordering::Equal);

    let within = filtered
        .iter()
        .enumerate()
        .filter(|(_, c)| gap(c) <= params.distance_tolerance)
        .min_by(|(_, a), (_, b)| b.density.cmp(&a.density).then_with(|| cmp_gap(a, b)));
    if let Some((index, _)) = within {
        return Ok(Selection { index, low_confidence: false });
    }
    let (index, _) = filtered
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| cmp_gap(a, b))
        .expect("non-empty");
    Ok(Selection { index, low_confidence: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn cand(alpha: f64, distance: f64, density: usize) -> PlaneCandidate<f64> {
        PlaneCandidate {
            normal: -Vector3::z_axis(),
            offset: -distance,
            inliers: (0..density).collect(),
            representative_normal: -Vector3::z_axis(),
            alpha_deg: alpha,
            distance,
            density,
        }
    }

    fn params_theta(theta: f64) -> ExtractionParams<f64> {
        ExtractionParams { theta_deg: theta, ..ExtractionParams::default() }
    }

    #[test]
    fn filter_threshold_semantics() {
        let c: Vec<_> = [5.0, 29.0, 31.0, 80.0].iter().map(|&a| cand(a, 2.0, 10)).collect();
        let kept = filter_planes(&c, &params_theta(30.0));
        assert_eq!(kept.iter().map(|k| k.alpha_deg).collect::<Vec<_>>(), vec![5.0, 29.0]);
        // Boundary is inclusive.
        assert_eq!(filter_planes(&[cand(30.0, 2.0, 1)], &params_theta(30.0)).len(), 1);
    }

    #[test]
    fn filter_identity_and_idempotence() {
        let c: Vec<_> = [1.0, 10.0, 20.0].iter().map(|&a| cand(a, 2.0, 10)).collect();
        let p = params_theta(45.0);
        assert_eq!(filter_planes(&c, &p), c);
        let mixed: Vec<_> = [1.0, 60.0, 20.0, 89.0].iter().map(|&a| cand(a, 2.0, 10)).collect();
        let once = filter_planes(&mixed, &p);
        assert_eq!(filter_planes(&once, &p), once);
    }

    #[test]
    fn selection_examples() {
        let p = ExtractionParams { distance_tolerance: 0.5, ..ExtractionParams::default() };
        let one = [cand(0.0, 7.0, 3)];
        assert_eq!(select_board_plane(&one, 2.0, &p).unwrap().index, 0);

        let two = [cand(0.0, 2.0, 100), cand(0.0, 3.5, 100)];
        assert_eq!(select_board_plane(&two, 2.1, &p).unwrap(), Selection { index: 0, low_confidence: false });

        let dense = [cand(0.0, 2.05, 400), cand(0.0, 2.1, 2500)];
        assert_eq!(select_board_plane(&dense, 2.1, &p).unwrap().index, 1);
    }

    #[test]
    fn density_ties_break_on_distance() {
        let p = ExtractionParams::default();
        let c = [cand(0.0, 2.2, 500), cand(0.0, 2.02, 500), cand(0.0, 1.9, 500)];
        assert_eq!(select_board_plane(&c, 2.0, &p).unwrap().index, 1);
    }

    #[test]
    fn nothing_within_tolerance_is_low_confidence() {
        let p = ExtractionParams::default();
        let c = [cand(0.0, 4.0, 5000), cand(0.0, 3.0, 10)];
        let s = select_board_plane(&c, 2.0, &p).unwrap();
        assert_eq!(s, Selection { index: 1, low_confidence: true });
    }

    #[test]
    fn empty_is_an_error() {
        let p = ExtractionParams::<f64>::default();
        assert!(matches!(select_board_plane(&[], 2.0, &p), Err(ExtractionError::EmptyCandidates)));
    }
}
