//! Periodic application traffic.

use rand::Rng;

use crate::time::{from_secs, SimTime};

/// Send times for one node: one packet per period starting at `start_s`,
/// each shifted by uniform jitter in `[-jitter_s, jitter_s]`.
pub fn app_traffic<R: Rng>(
    period_s: f64,
    jitter_s: f64,
    start_s: f64,
    duration_s: f64,
    rng: &mut R,
) -> Vec<SimTime> {
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let nominal = start_s + k as f64 * period_s;
        if nominal >= duration_s {
            break;
        }
        let j = if jitter_s > 0.0 { rng.gen_range(-jitter_s..=jitter_s) } else { 0.0 };
        let t = (nominal + j).clamp(0.0, duration_s - 1e-6);
        out.push(from_secs(t));
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn twenty_minutes_at_one_per_minute() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = app_traffic(60.0, 0.0, 60.0, 1200.0, &mut rng);
        assert_eq!(t.len(), 19);
        assert!(t.windows(2).all(|w| w[1] - w[0] == from_secs(60.0)));
        let t = app_traffic(60.0, 5.0, 0.0, 1200.0, &mut rng);
        assert_eq!(t.len(), 20);
    }
}
