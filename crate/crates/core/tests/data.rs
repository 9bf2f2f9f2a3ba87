mod common;

use common::truth_mixture;
use demma_core::data_io::*;

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn predictors_lead_the_target() {
    let m = truth_mixture();
    let n = 100_000;
    let ds = generate_synthetic(&m, n, 11, 0.2 * m.gp.scale0, 12).unwrap();
    let next: Vec<f64> = ds.target[1..].to_vec();
    for j in 0..11 {
        let x: Vec<f64> = ds.predictors[..n - 1].iter().map(|r| r[j]).collect();
        let r = correlation(&x, &next);
        assert!(r > 0.9, "predictor {j}: r = {r}");
    }
    let zeros = ds.target.iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
    assert!((zeros - m.p0).abs() < 4.0 * (m.p0 * (1.0 - m.p0) / n as f64).sqrt());
}

#[test]
fn generator_is_seeded() {
    let m = truth_mixture();
    let a = generate_synthetic(&m, 500, 3, 0.5, 9).unwrap();
    let b = generate_synthetic(&m, 500, 3, 0.5, 9).unwrap();
    let c = generate_synthetic(&m, 500, 3, 0.5, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.target, c.target);
}

#[test]
fn csv_round_trip_and_split() {
    let m = truth_mixture();
    let ds = generate_synthetic(&m, 400, 2, 0.5, 3).unwrap();
    let path = std::env::temp_dir().join(format!("demma-data-it-{}.csv", std::process::id()));
    write_csv(&ds, &path).unwrap();
    let back = load_csv(&path, "y", None).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back.target, ds.target);
    assert_eq!(back.predictors, ds.predictors);

    let cfg = SplitConfig { ratios: [0.7, 0.2, 0.1], window: 7, offset: 50 };
    let s = split_and_standardize(&back, &cfg).unwrap();
    let rows: usize = [&s.info.train, &s.info.validation, &s.info.test]
        .iter()
        .flat_map(|r| r.iter())
        .map(|(a, b)| b - a)
        .sum();
    assert_eq!(rows, 400);
    // each chunk yields (length − T) windows, none spanning the seam
    let expected: usize = s.info.train.iter().map(|(a, b)| b - a - 7).sum();
    assert_eq!(s.train.len(), expected);
    for w in &s.train.windows {
        assert_eq!((w.x.rows(), w.x.cols()), (2, 7));
    }
}
