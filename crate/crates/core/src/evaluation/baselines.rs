use rand::Rng;

/// Draws per alarm moment for the random explainer.
pub const RANDOM_DRAWS: usize = 10;
/// Selection cutoff, in percent of the maximum, used by both baselines.
pub const BASELINE_M_PERCENT: f64 = 30.0;

/// I.i.d. uniform importances in `[0, 1)`.
pub fn random_importance<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>()).collect()
}

/// Equal importance everywhere, so every feature (and every tau-segment)
/// is selected.
pub fn uniform_importance(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shap::select_by_importance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_and_in_range() {
        let a = random_importance(&mut ChaCha8Rng::seed_from_u64(4), 2400);
        let b = random_importance(&mut ChaCha8Rng::seed_from_u64(4), 2400);
        assert_eq!(a, b);
        assert!(a.iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn selected_fraction_near_seventy_percent() {
        // P(u >= 0.3 max) = 0.7 up to the max being slightly below one.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut total = 0.0;
        for _ in 0..50 {
            let v = random_importance(&mut rng, 2400);
            let sel = select_by_importance(&v, BASELINE_M_PERCENT).unwrap();
            total += sel.len() as f64 / 2400.0;
        }
        assert!((total / 50.0 - 0.7).abs() < 0.01);
        assert_eq!(select_by_importance(&uniform_importance(5), 30.0).unwrap().len(), 5);
    }
}
