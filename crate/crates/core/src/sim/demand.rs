use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use super::config::DemandProfile;

/// Smallest admissible gap between consecutive dispatches, seconds.
pub const MIN_DISPATCH_GAP: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passenger {
    pub origin: usize,
    pub destination: usize,
    pub arrive_time: f64,
    pub board_time: Option<f64>,
    pub alight_time: Option<f64>,
}

/// Terminal dispatch times: the first bus leaves at 0, later gaps follow a
/// normal law truncated below at [`MIN_DISPATCH_GAP`].
pub fn dispatch_times<R: Rng + ?Sized>(n: usize, mean: f64, std: f64, rng: &mut R) -> Vec<f64> {
    let mut times = Vec::with_capacity(n);
    if n == 0 {
        return times;
    }
    times.push(0.0);
    let normal = (std > 0.0).then(|| Normal::new(mean, std).expect("finite std"));
    for _ in 1..n {
        let gap = match &normal {
            None => mean.max(MIN_DISPATCH_GAP),
            Some(law) => truncated_draw(law, rng),
        };
        let last = *times.last().unwrap();
        times.push(last + gap);
    }
    times
}

fn truncated_draw<R: Rng + ?Sized>(law: &Normal<f64>, rng: &mut R) -> f64 {
    // Rejection sampling; a mean far below the floor falls back to the floor.
    for _ in 0..64 {
        let g = law.sample(rng);
        if g >= MIN_DISPATCH_GAP {
            return g;
        }
    }
    MIN_DISPATCH_GAP
}

/// Pre-generates every passenger arriving over `[0, horizon]`, grouped by
/// origin stop and sorted by arrival time within each stop.
pub fn generate_passengers<R: Rng + ?Sized>(
    demand: &DemandProfile,
    horizon: f64,
    rng: &mut R,
) -> Vec<Vec<Passenger>> {
    let n = demand.boarding_rate.len();
    let mut out = Vec::with_capacity(n);
    for origin in 0..n {
        let rate = demand.boarding_rate[origin];
        let mut queue = Vec::new();
        if rate > 0.0 && origin + 1 < n {
            let count = Poisson::new(rate * horizon)
                .expect("positive Poisson mean")
                .sample(rng) as usize;
            let when = Uniform::new_inclusive(0.0, horizon).expect("valid horizon");
            let mut times: Vec<f64> = (0..count).map(|_| when.sample(rng)).collect();
            times.sort_by(f64::total_cmp);
            let dest = WeightedIndex::new(&demand.alight_weights[origin])
                .expect("validated destination row");
            for t in times {
                queue.push(Passenger {
                    origin,
                    destination: dest.sample(rng),
                    arrive_time: t,
                    board_time: None,
                    alight_time: None,
                });
            }
        }
        out.push(queue);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_dispatch_is_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dispatch_times(1, 874.0, 302.0, &mut rng), vec![0.0]);
    }

    #[test]
    fn degenerate_dispatch_law_is_regular() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            dispatch_times(3, 600.0, 0.0, &mut rng),
            vec![0.0, 600.0, 1200.0]
        );
    }

    #[test]
    fn dispatch_gap_mean_within_three_sigma() {
        // 58 gaps of mean 874 and std 302: the sample mean lies within
        // 874 +- 3 * 302 / sqrt(58) except with probability ~0.3%.
        let bound = 3.0 * 302.0 / 58f64.sqrt();
        let mut inside = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = dispatch_times(59, 874.0, 302.0, &mut rng);
            assert_eq!(t[0], 0.0);
            assert!(t.windows(2).all(|w| w[1] - w[0] >= MIN_DISPATCH_GAP));
            let mean_gap = t[58] / 58.0;
            if (mean_gap - 874.0).abs() <= bound {
                inside += 1;
            }
        }
        assert!(inside >= 98, "{inside}/100 seeds inside the bound");
    }

    #[test]
    fn zero_rates_give_empty_queues() {
        let d = DemandProfile::empty(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = generate_passengers(&d, 3600.0, &mut rng);
        assert_eq!(q.len(), 4);
        assert!(q.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn poisson_counts_stay_in_band() {
        let mut d = DemandProfile::empty(3);
        d.boarding_rate[0] = 1.0 / 60.0;
        let mut ok = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = generate_passengers(&d, 3600.0, &mut rng);
            let n = q[0].len();
            if (30..=95).contains(&n) {
                ok += 1;
            }
            assert!(q[0]
                .windows(2)
                .all(|w| w[0].arrive_time <= w[1].arrive_time));
            assert!(q[0].iter().all(|p| (0.0..=3600.0).contains(&p.arrive_time)));
        }
        assert!(ok >= 99, "{ok}");
    }

    #[test]
    fn single_destination_row() {
        let mut d = DemandProfile::empty(4);
        d.boarding_rate[1] = 0.05;
        d.alight_weights[1] = vec![0.0, 0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = generate_passengers(&d, 3600.0, &mut rng);
        assert!(!q[1].is_empty());
        assert!(q[1].iter().all(|p| p.destination == 3 && p.origin == 1));
    }
}
