use std::collections::BTreeSet;

use pocketnet::data::{
    export, gen_blobs, gen_twoclass, import, kfold_split, window, zscore, ClassBalance, Dataset, Manifest, FOREGROUND,
};
use pocketnet::tensor::Tensor;
use proptest::prelude::*;

#[test]
fn generators_are_deterministic() {
    assert_eq!(gen_blobs(7, 5, 32, 0.2).unwrap(), gen_blobs(7, 5, 32, 0.2).unwrap());
    assert_ne!(gen_blobs(7, 5, 32, 0.2).unwrap(), gen_blobs(8, 5, 32, 0.2).unwrap());
    assert_eq!(
        gen_twoclass(3, 9, 16, ClassBalance::Balanced).unwrap(),
        gen_twoclass(3, 9, 16, ClassBalance::Balanced).unwrap()
    );
}

#[test]
fn noiseless_images_are_constant_per_tile_and_region() {
    for s in gen_blobs(11, 10, 32, 0.0).unwrap() {
        let img = s.image.values();
        let mask = s.mask.values();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 1.0));
        for ty in 0..4 {
            for tx in 0..4 {
                let mut bg = BTreeSet::new();
                let mut fg = BTreeSet::new();
                for y in ty * 8..ty * 8 + 8 {
                    for x in tx * 8..tx * 8 + 8 {
                        let i = y * 32 + x;
                        let set = if mask[i] == 1.0 { &mut fg } else { &mut bg };
                        set.insert(img[i].to_bits());
                    }
                }
                assert!(bg.len() <= 1 && fg.len() <= 1);
                if let (Some(b), Some(f)) = (bg.first(), fg.first()) {
                    assert!((f32::from_bits(*f) - f32::from_bits(*b) - FOREGROUND).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn mean_foreground_fraction_is_moderate() {
    let samples = gen_blobs(1, 100, 64, 0.2).unwrap();
    let total: f64 = samples.iter().map(|s| s.mask.values().iter().map(|&m| m as f64).sum::<f64>()).sum();
    let fraction = total / (100.0 * 64.0 * 64.0);
    assert!((0.05..=0.5).contains(&fraction), "{fraction}");
    assert!(samples.iter().all(|s| s.mask.values().iter().any(|&m| m == 1.0)));
}

#[test]
fn class_balance_options() {
    let balanced = gen_twoclass(2, 40, 16, ClassBalance::Balanced).unwrap();
    let pos = balanced.iter().filter(|s| s.label == 1).count();
    assert_eq!(pos, 20);

    // 15,952 images at the COVIDx ratio reproduce its class counts exactly.
    assert_eq!(ClassBalance::COVIDX.positives(15_952).unwrap(), 2_158);
    let scaled = gen_twoclass(2, 736, 8, ClassBalance::COVIDX).unwrap();
    let pos = scaled.iter().filter(|s| s.label == 1).count();
    assert_eq!(pos, 100);
    let ratio = (736 - pos) as f64 / pos as f64;
    assert!((ratio - 13_794.0 / 2_158.0).abs() < 0.05, "{ratio}");
}

#[test]
fn labels_are_recoverable_from_blurred_brightness() {
    let samples = gen_twoclass(5, 400, 32, ClassBalance::Balanced).unwrap();
    let mut agree = 0;
    for s in &samples {
        let img = s.image.values();
        let mut peak = f32::MIN;
        for y in 1..31 {
            for x in 1..31 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += img[(y + dy - 1) * 32 + x + dx - 1];
                    }
                }
                peak = peak.max(acc / 9.0);
            }
        }
        if u8::from(peak > 0.5) == s.label {
            agree += 1;
        }
    }
    assert!(agree as f64 / samples.len() as f64 >= 0.99, "{agree}/400");
}

#[test]
fn zscore_examples() {
    let t = Tensor::from_vec(&[2], vec![0.0f64, 2.0]).unwrap();
    assert_eq!(zscore(&t).unwrap().values(), &[-1.0, 1.0]);
    assert!(zscore(&Tensor::<f32>::full(&[4], 3.0)).is_err());
}

#[test]
fn window_examples() {
    let t = Tensor::from_vec(&[4], vec![-500.0f32, 0.0, 150.0, 900.0]).unwrap();
    let w = window(&t, -100.0, 200.0).unwrap();
    assert_eq!(w.values(), &[-100.0, 0.0, 150.0, 200.0]);
    assert!(window(&t, 1.0, 1.0).is_err());
}

#[test]
fn kfold_examples() {
    let folds = kfold_split(10, 5, 0).unwrap();
    assert!(folds.iter().all(|f| f.len() == 2));
    let sizes: Vec<usize> = kfold_split(11, 5, 0).unwrap().iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![3, 2, 2, 2, 2]);
    assert_eq!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 9).unwrap());
}

#[test]
fn export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let seg = Dataset::Segmentation(gen_blobs(4, 3, 16, 0.1).unwrap());
    let manifest = Manifest {
        kind: String::new(),
        generator: "blobs".into(),
        seed: 4,
        count: 0,
        size: 16,
        params: serde_json::json!({"noise_sigma": 0.1}),
        labels: None,
    };
    export(dir.path(), &seg, manifest.clone()).unwrap();
    let (back, m) = import(dir.path()).unwrap();
    assert_eq!(back, seg);
    assert_eq!((m.kind.as_str(), m.count), ("segmentation", 3));

    let dir2 = tempfile::tempdir().unwrap();
    let cls = Dataset::Classification(gen_twoclass(4, 5, 16, ClassBalance::Balanced).unwrap());
    export(dir2.path(), &cls, manifest).unwrap();
    assert_eq!(import(dir2.path()).unwrap().0, cls);
}

fn sample_moments(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

proptest! {
    #[test]
    fn zscore_moments_and_idempotence(values in prop::collection::vec(-1000.0f32..1000.0, 2..200)) {
        let t = Tensor::from_vec(&[values.len()], values.clone()).unwrap();
        prop_assume!(sample_moments(&values).1 > 1e-3);
        let z = zscore(&t).unwrap();
        let (m, s) = sample_moments(z.values());
        prop_assert!(m.abs() <= 1e-6);
        prop_assert!((s - 1.0).abs() <= 1e-6);
        let zz = zscore(&z).unwrap();
        for (a, b) in z.values().iter().zip(zz.values()) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn kfold_partitions(count in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(count >= k);
        let folds = kfold_split(count, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..count).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn samples_fit_any_depth_up_to_three(tiles in 1usize..6, seed in any::<u64>()) {
        let size = 8 * tiles;
        for s in gen_blobs(seed, 2, size, 0.1).unwrap() {
            prop_assert_eq!(s.image.shape(), &[1, size, size]);
            prop_assert!(s.image.shape()[1] % 8 == 0);
        }
    }
}
