use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use icu_risk::evaluate::{bootstrap_ci, Metric};

#[test]
fn auroc_interval_covers_binormal_truth() {
    let mu = 1.0;
    let truth = StdNormal::standard().cdf(mu / 2f64.sqrt());
    let (reps, n_pos, n_neg) = (200, 80, 120);
    let mut covered = 0;
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r);
        let pos = Normal::new(mu, 1.0).unwrap();
        let neg = Normal::new(0.0, 1.0).unwrap();
        let mut scores = Vec::with_capacity(n_pos + n_neg);
        let mut labels = Vec::with_capacity(n_pos + n_neg);
        for _ in 0..n_pos {
            scores.push(pos.sample(&mut rng));
            labels.push(true);
        }
        for _ in 0..n_neg {
            scores.push(neg.sample(&mut rng));
            labels.push(false);
        }
        let ci = bootstrap_ci(&scores, &labels, Metric::Auroc, 2000, 0.95, r).unwrap();
        if ci.lower <= truth && truth <= ci.upper {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    assert!((rate - 0.95).abs() <= 0.03, "coverage {rate}");
}
