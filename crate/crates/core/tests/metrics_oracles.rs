//! Metric checks against straightforward reference implementations.

use clip_core::metrics::{game, ssim};
use clip_core::DensityGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Two-pass SSIM over each 11x11 window: weighted means first, then centered moments.
#[allow(clippy::needless_range_loop)]
fn reference_ssim(a: &DensityGrid, b: &DensityGrid) -> f64 {
    let (h, w) = (a.height(), a.width());
    let mut weights = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            norm += *v;
        }
    }
    let range = a.max().max(b.max()).max(1e-12);
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let mut acc = 0.0;
    let mut windows = 0.0;
    for top in 0..=h - 11 {
        for left in 0..=w - 11 {
            let mut mean_a = 0.0;
            let mut mean_b = 0.0;
            for i in 0..11 {
                for j in 0..11 {
                    let k = weights[i][j] / norm;
                    mean_a += k * a.get(top + i, left + j);
                    mean_b += k * b.get(top + i, left + j);
                }
            }
            let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = weights[i][j] / norm;
                    let da = a.get(top + i, left + j) - mean_a;
                    let db = b.get(top + i, left + j) - mean_b;
                    var_a += k * da * da;
                    var_b += k * db * db;
                    cov += k * da * db;
                }
            }
            acc += (2.0 * mean_a * mean_b + c1) * (2.0 * cov + c2)
                / ((mean_a * mean_a + mean_b * mean_b + c1) * (var_a + var_b + c2));
            windows += 1.0;
        }
    }
    acc / windows
}

fn random_grid(h: usize, w: usize, rng: &mut ChaCha8Rng) -> DensityGrid {
    DensityGrid::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn ssim_matches_two_pass_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let a = random_grid(16, 19, &mut rng);
        let b = random_grid(16, 19, &mut rng);
        let got = ssim(&a, &b).unwrap();
        let want = reference_ssim(&a, &b);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn ssim_of_constant_against_noisy_constant_is_low() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 2.0).unwrap();
    let base = vec![5.0; 32 * 32];
    let noisy: Vec<f64> = base
        .iter()
        .map(|v: &f64| (v + noise.sample(&mut rng)).max(0.0))
        .collect();
    let a = DensityGrid::new(32, 32, base).unwrap();
    let b = DensityGrid::new(32, 32, noisy).unwrap();
    let reference = reference_ssim(&a, &b);
    let value = ssim(&a, &b).unwrap();
    assert!((value - reference).abs() < 1e-9);
    assert!(value < 0.5, "ssim {value}");
}

#[test]
fn game_matches_patch_enumeration_on_odd_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (h, w) = (rng.random_range(8..20), rng.random_range(8..20));
        let a = random_grid(h, w, &mut rng);
        let b = random_grid(h, w, &mut rng);
        for level in 0..=3u32 {
            let parts = 1usize << level;
            let bounds = |extent: usize, p: usize| {
                let base = extent / parts;
                (
                    p * base,
                    if p + 1 == parts {
                        extent
                    } else {
                        (p + 1) * base
                    },
                )
            };
            let mut want = 0.0;
            for pr in 0..parts {
                for pc in 0..parts {
                    let ((r0, r1), (c0, c1)) = (bounds(h, pr), bounds(w, pc));
                    let (mut sa, mut sb) = (0.0, 0.0);
                    for r in r0..r1 {
                        for c in c0..c1 {
                            sa += a.get(r, c);
                            sb += b.get(r, c);
                        }
                    }
                    want += (sa - sb).abs();
                }
            }
            assert_eq!(game(&a, &b, level).unwrap(), want);
        }
    }
}
