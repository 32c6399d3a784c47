//! Metrics against a brute-force oracle on random instances.

use autous_core::train_eval::compute_metrics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Oracle {
    accuracy: f64,
    macro_recall: f64,
    macro_precision: f64,
    auc: Vec<Option<f64>>,
}

fn brute_force(labels: &[usize], probs: &[Vec<f64>], c: usize) -> Oracle {
    let pred: Vec<usize> = probs
        .iter()
        .map(|row| {
            // First index attaining the maximum.
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter().position(|&v| v == max).unwrap()
        })
        .collect();
    let n = labels.len();
    let correct = (0..n).filter(|&i| pred[i] == labels[i]).count();
    let mut recall = 0.0;
    let mut precision = 0.0;
    let mut auc = Vec::new();
    for k in 0..c {
        let tp = (0..n).filter(|&i| labels[i] == k && pred[i] == k).count();
        let actual = (0..n).filter(|&i| labels[i] == k).count();
        let predicted = (0..n).filter(|&i| pred[i] == k).count();
        recall += if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        precision += if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let (mut pairs, mut wins) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == k && labels[j] != k {
                    pairs += 2;
                    let (a, b) = (probs[i][k], probs[j][k]);
                    wins += if a > b { 2 } else if a == b { 1 } else { 0 };
                }
            }
        }
        auc.push((pairs > 0).then(|| wins as f64 / pairs as f64));
    }
    Oracle {
        accuracy: correct as f64 / n as f64,
        macro_recall: recall / c as f64,
        macro_precision: precision / c as f64,
        auc,
    }
}

#[test]
fn fifty_random_instances_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..80);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        // Coarse scores so ties occur.
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..c).map(|_| rng.random_range(0..6) as f64 / 5.0).collect())
            .collect();
        let m = compute_metrics(&labels, &probs, c).unwrap();
        let o = brute_force(&labels, &probs, c);
        assert_eq!(m.accuracy, o.accuracy);
        assert!((m.macro_recall - o.macro_recall).abs() < 1e-15);
        assert!((m.macro_precision - o.macro_precision).abs() < 1e-15);
        for (a, b) in m.per_class_auc.iter().zip(&o.auc) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => panic!("definedness differs: {other:?}"),
            }
        }
    }
}
