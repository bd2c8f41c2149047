//! Competitor feature extractors against hand computations and dense oracles.

use approx::assert_abs_diff_eq;
use eigencoin::baselines::{
    bdpca_features, bdpca_reconstruct, bdpca_scatters, bdpca_train, harris_corners, harris_features, wavelet_features,
    wavelet_packet, HarrisConfig,
};
use eigencoin::dataset::{synthesize, SynthConfig};
use eigencoin::imaging::{extract_roi, GrayImage, PreprocessConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GrayImage<f64> {
    GrayImage::from_fn(h, w, |_, _| rng.random_range(0.0..1.0)).unwrap()
}

fn as_matrix(img: &GrayImage<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(img.height(), img.width(), img.pixels())
}

#[test]
fn wavelet_lengths_per_level() {
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(0), 64, 64);
    let lens: Vec<usize> = (1..=4)
        .map(|l| wavelet_features(&img, l).unwrap().values.len())
        .collect();
    assert_eq!(lens, vec![5, 17, 65, 257]);
    assert!(wavelet_features(&random_image(&mut ChaCha8Rng::seed_from_u64(0), 12, 12), 3).is_err());
}

#[test]
fn wavelet_packet_preserves_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let img = random_image(&mut rng, 32, 48);
        let energy: f64 = img.pixels().iter().map(|v| v * v).sum();
        for level in 1..=4 {
            let bands = wavelet_packet(&img, level).unwrap();
            assert_eq!(bands.len(), 1 << (2 * level));
            let e: f64 = bands.iter().map(|b| b.energy()).sum();
            assert!((e - energy).abs() < 1e-9, "level {level}: {e} vs {energy}");
        }
    }
}

#[test]
fn wavelet_level_one_by_hand() {
    // 2×2 blocks of 1..16/16; LL = [7, 11, 23, 27]/16, LH = −1/16, HL = −4/16, HH = 0
    let img = GrayImage::from_fn(4, 4, |r, c| (r * 4 + c + 1) as f64 / 16.0).unwrap();
    let bands = wavelet_packet(&img, 1).unwrap();
    let want_ll = [7.0, 11.0, 23.0, 27.0].map(|v| v / 16.0);
    for (a, b) in bands[0].data.iter().zip(want_ll) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
    }
    assert!(bands[1].data.iter().all(|&v| (v + 1.0 / 16.0).abs() < 1e-15));
    assert!(bands[2].data.iter().all(|&v| (v + 4.0 / 16.0).abs() < 1e-15));
    assert!(bands[3].data.iter().all(|&v| v.abs() < 1e-15));
    let f = wavelet_features(&img, 1).unwrap().values;
    assert_abs_diff_eq!(f[0], 17.0 / 16.0, epsilon = 1e-12);
    assert_abs_diff_eq!(f[1], 68f64.sqrt() / 16.0, epsilon = 1e-12);
    assert!(f[2..].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn wavelet_stds_survive_half_turn() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let img = random_image(&mut rng, 16, 16);
        let rot = GrayImage::from_fn(16, 16, |r, c| img.get(15 - r, 15 - c)).unwrap();
        let sorted = |img: &GrayImage<f64>| {
            let mut v = wavelet_features(img, 1).unwrap().values[1..].to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v
        };
        for (a, b) in sorted(&img).iter().zip(sorted(&rot)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }
}

#[test]
fn bdpca_scatters_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let images: Vec<_> = (0..5).map(|_| random_image(&mut rng, 8, 8)).collect();
    let (sr, sc) = bdpca_scatters(&images).unwrap();
    let (h, w, m) = (8, 8, 5);
    let mut mean = vec![0.0; h * w];
    for img in &images {
        for (a, v) in mean.iter_mut().zip(img.pixels()) {
            *a += v / m as f64;
        }
    }
    for i in 0..h {
        for j in 0..h {
            let mut s = 0.0;
            for img in &images {
                for c in 0..w {
                    s += (img.get(i, c) - mean[i * w + c]) * (img.get(j, c) - mean[j * w + c]);
                }
            }
            assert_abs_diff_eq!(sr[i * h + j], s / (m * w) as f64, epsilon = 1e-10);
        }
    }
    for i in 0..w {
        for j in 0..w {
            let mut s = 0.0;
            for img in &images {
                for r in 0..h {
                    s += (img.get(r, i) - mean[r * w + i]) * (img.get(r, j) - mean[r * w + j]);
                }
            }
            assert_abs_diff_eq!(sc[i * w + j], s / (m * h) as f64, epsilon = 1e-10);
        }
    }
    let model = bdpca_train(&images, 2, 2).unwrap();
    for proj in [model.row_projector(), model.col_projector()] {
        for (a, u) in proj.iter().enumerate() {
            for (b, v) in proj.iter().enumerate() {
                let d: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                assert_abs_diff_eq!(d, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-8);
            }
        }
    }
}

#[test]
fn bdpca_features_match_triple_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let images: Vec<_> = (0..6).map(|_| random_image(&mut rng, 10, 7)).collect();
    let model = bdpca_train(&images, 3, 4).unwrap();
    let wr = DMatrix::from_fn(10, 3, |r, c| model.row_projector()[c][r]);
    let wc = DMatrix::from_fn(7, 4, |r, c| model.col_projector()[c][r]);
    let mean = DMatrix::from_row_slice(10, 7, model.mean());
    let query = random_image(&mut rng, 10, 7);
    let want = wr.transpose() * (as_matrix(&query) - &mean) * wc;
    let y = bdpca_features(&model, &query).unwrap();
    for r in 0..3 {
        for c in 0..4 {
            assert_abs_diff_eq!(y.get(r, c), want[(r, c)], epsilon = 1e-10);
        }
    }
    let mean_img = GrayImage::new(10, 7, model.mean().to_vec()).unwrap();
    assert!(bdpca_features(&model, &mean_img)
        .unwrap()
        .data()
        .iter()
        .all(|v| v.abs() < 1e-12));
}

#[test]
fn complete_bdpca_bases_are_invertible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let images: Vec<_> = (0..12).map(|_| random_image(&mut rng, 6, 5)).collect();
    let model = bdpca_train(&images, 6, 5).unwrap();
    for img in &images {
        let y = bdpca_features(&model, img).unwrap();
        let back = bdpca_reconstruct(&model, &y).unwrap();
        for (a, b) in back.iter().zip(img.pixels()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }
}

#[test]
fn harris_output_is_sorted_and_above_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = HarrisConfig::default();
    for _ in 0..10 {
        let img = random_image(&mut rng, 24, 24);
        let corners = harris_corners(&img, &cfg).unwrap();
        let again = harris_corners(&img, &cfg).unwrap();
        assert_eq!(corners, again);
        if let Some(top) = corners.first() {
            for c in &corners {
                assert!(c.response > cfg.threshold_fraction * top.response);
            }
        }
        for w in corners.windows(2) {
            assert!(
                w[0].response > w[1].response
                    || (w[0].response == w[1].response && (w[0].row, w[0].col) < (w[1].row, w[1].col))
            );
        }
        assert_eq!(harris_features(&img, &cfg).unwrap().values.len(), cfg.top_count);
    }
}

/// Unpadded corner counts on synthetic coins, for comparison with the
/// 103–184 range reported for real coins. Informational only.
#[test]
fn harris_corner_counts_on_synthetic_coins() {
    let ds = synthesize::<f64>(&SynthConfig::preset("balanced-small").unwrap()).unwrap();
    let pre = PreprocessConfig::default();
    let counts: Vec<usize> = ds.classes()[0]
        .images
        .iter()
        .map(|img| {
            harris_features(&extract_roi(img, &pre).unwrap(), &HarrisConfig::default())
                .unwrap()
                .corner_count
        })
        .collect();
    eprintln!("harris corner counts on synthetic coins: {counts:?}");
    assert!(counts.iter().all(|&c| c > 0));
}
