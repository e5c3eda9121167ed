use fastem::data::{gen_correlated_gaussian, mask_mcar};
use fastem::impute::{impute_global_mean, impute_knn, impute_mixture};
use fastem::{fit, Dataset, TrainConfig};

fn missing_mse(truth: &Dataset, masked: &Dataset, filled: &Dataset) -> f64 {
    let (mut acc, mut count) = (0.0, 0);
    for i in 0..masked.n() {
        for c in 0..masked.d() {
            if masked.is_missing(i, c) {
                acc += (filled.row(i)[c] - truth.row(i)[c]).powi(2);
                count += 1;
            }
        }
    }
    acc / count as f64
}

struct Errors {
    mixture: f64,
    mean: f64,
    knn: f64,
}

fn errors(fraction: f64) -> Errors {
    let seeds = 1..=5u64;
    let mut e = Errors { mixture: 0.0, mean: 0.0, knn: 0.0 };
    for seed in seeds.clone() {
        let truth = gen_correlated_gaussian(2000, 8, 0.7, seed).unwrap();
        let masked = mask_mcar(&truth, fraction, seed + 100).unwrap();
        let config = TrainConfig { components: 1, seed, ..TrainConfig::default() };
        let (model, _) = fit(&masked, &config).unwrap();
        e.mixture += missing_mse(&truth, &masked, &impute_mixture(&model, &masked).unwrap().filled);
        e.mean += missing_mse(&truth, &masked, &impute_global_mean(&masked, &masked).unwrap().filled);
        e.knn += missing_mse(&truth, &masked, &impute_knn(&masked, &truth, 10).unwrap().filled);
    }
    let k = seeds.count() as f64;
    Errors { mixture: e.mixture / k, mean: e.mean / k, knn: e.knn / k }
}

#[test]
fn mixture_beats_global_mean_on_correlated_gaussian() {
    let e = errors(0.2);
    println!("fraction 0.2: mixture {:.4} mean {:.4} knn {:.4}", e.mixture, e.mean, e.knn);
    assert!(e.mixture < 0.9 * e.mean);
}

/// Growth is compared as a ratio: the oracle neighbour search sees the true
/// value of the cell it fills, so its error starts far lower in absolute terms.
#[test]
fn knn_error_grows_faster_with_fraction() {
    let (lo, hi) = (errors(0.1), errors(0.5));
    println!(
        "mixture {:.4} -> {:.4}, knn {:.4} -> {:.4}",
        lo.mixture, hi.mixture, lo.knn, hi.knn
    );
    assert!(hi.knn / lo.knn > hi.mixture / lo.mixture);
}
