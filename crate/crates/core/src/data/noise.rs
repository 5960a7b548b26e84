use rand::Rng;

use crate::error::{Error, Result};
use crate::losses::LabelProportions;

/// Redistributes roughly `budget` of the probability mass between random
/// class pairs, clamps at zero and renormalizes. A class that gave mass away
/// never receives any and vice versa, so moves do not cancel.
///
/// Returns the noisy proportions and the realized noise `½·‖p − noisy‖₁`.
pub fn inject_proportion_noise(
    p: &LabelProportions,
    budget: f64,
    rng: &mut impl Rng,
) -> Result<(LabelProportions, f64)> {
    if !(0.0..=1.0).contains(&budget) {
        return Err(Error::invalid(format!("noise budget {budget} outside [0, 1]")));
    }
    let base = p.as_slice();
    let classes = base.len();
    if budget == 0.0 || classes < 2 {
        return Ok((p.clone(), 0.0));
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Role {
        Free,
        Donor,
        Receiver,
    }
    let mut q = base.to_vec();
    let mut roles = vec![Role::Free; classes];
    let mut remaining = budget;
    while remaining > 0.0 {
        let donors: Vec<usize> = (0..classes).filter(|&i| roles[i] != Role::Receiver && q[i] > 0.0).collect();
        if donors.is_empty() {
            break;
        }
        let from = donors[rng.random_range(0..donors.len())];
        let receivers: Vec<usize> = (0..classes).filter(|&j| j != from && roles[j] != Role::Donor).collect();
        let to = receivers[rng.random_range(0..receivers.len())];
        let amount = if remaining < 0.01 * budget {
            remaining
        } else {
            rng.random_range(0.0..remaining)
        }
        .min(q[from]);
        roles[from] = Role::Donor;
        roles[to] = Role::Receiver;
        q[from] = (q[from] - amount).max(0.0);
        q[to] += amount;
        remaining -= amount;
    }
    let noisy = LabelProportions::from_counts(&q)?;
    let realized = 0.5
        * base
            .iter()
            .zip(noisy.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    Ok((noisy, realized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unbalanced() -> LabelProportions {
        LabelProportions::new(vec![0.35, 0.25, 0.15, 0.12, 0.08, 0.05]).unwrap()
    }

    #[test]
    fn zero_budget_is_identity() {
        let p = unbalanced();
        let (q, r) = inject_proportion_noise(&p, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(q, p);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn realized_noise_tracks_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for budget in [0.05, 0.1, 0.2, 0.4] {
            let mean = (0..100)
                .map(|_| inject_proportion_noise(&unbalanced(), budget, &mut rng).unwrap().1)
                .sum::<f64>()
                / 100.0;
            assert!((mean - budget).abs() <= 0.03, "budget {budget}: mean realized {mean}");
        }
    }

    #[test]
    fn rejects_out_of_range_budget() {
        assert!(inject_proportion_noise(&unbalanced(), 1.5, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn output_is_a_distribution(budget in 0.0f64..=1.0, seed in 0u64..1000) {
            let (q, r) = inject_proportion_noise(&unbalanced(), budget, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            proptest::prop_assert!(q.as_slice().iter().all(|v| *v >= 0.0));
            proptest::prop_assert!((q.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            proptest::prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
