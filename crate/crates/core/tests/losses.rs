use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spine_enhance::grid::Features;
use spine_enhance::losses::*;
use spine_enhance::{Grid, ImageGrid};

fn random(h: usize, w: usize, rng: &mut impl Rng) -> ImageGrid {
    Grid::from_fn(h, w, |_, _| rng.gen::<f64>())
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// 3x3 Sobel responses over the interior, by direct correlation.
fn sobel_oracle(img: &ImageGrid) -> (Vec<f64>, Vec<f64>) {
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let (h, w) = img.shape();
    let (mut gx, mut gy) = (Vec::new(), Vec::new());
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let (mut sx, mut sy) = (0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    let v = img.get(r + i - 1, c + j - 1);
                    sx += kx[i][j] * v;
                    sy += kx[j][i] * v;
                }
            }
            gx.push(sx);
            gy.push(sy);
        }
    }
    (gx, gy)
}

fn gc_oracle(x: &ImageGrid, y: &ImageGrid) -> f64 {
    let (ax, ay) = sobel_oracle(x);
    let (bx, by) = sobel_oracle(y);
    0.5 * (pearson(&ax, &bx) + pearson(&ay, &by))
}

fn entropy_oracle(g: &ImageGrid) -> f64 {
    let (lo, hi) = (g.min(), g.max());
    let mut hist = [0.0; 256];
    for &v in g.as_slice() {
        let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        hist[(u * 255.0).round() as usize] += 1.0;
    }
    let n = g.len() as f64;
    hist.iter().filter(|&&k| k > 0.0).map(|&k| -(k / n) * (k / n).log2()).sum()
}

#[test]
fn selection_prefers_the_uniform_histogram() {
    let uniform = Grid::from_fn(16, 16, |r, c| (r * 16 + c) as f64 / 255.0);
    let stack = Features::from_grids(&[Grid::filled(16, 16, 0.3), uniform.clone()]).unwrap();
    assert_eq!(select_max_entropy_feature(&stack).unwrap(), uniform);
    let single = Features::from_grids(&[uniform.map(|v| 2.0 * v + 1.0)]).unwrap();
    let picked = select_max_entropy_feature(&single).unwrap();
    assert!(picked.as_slice().iter().zip(uniform.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!(select_max_entropy_feature(&Features::<f64>::zeros(0, 4, 4)).is_err());
}

#[test]
fn selection_matches_exhaustive_entropy_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let maps: Vec<ImageGrid> = (0..4)
            .map(|_| {
                let levels = rng.gen_range(2..200);
                Grid::from_fn(12, 12, |_, _| rng.gen_range(0..levels) as f64)
            })
            .collect();
        let scores: Vec<f64> = maps.iter().map(entropy_oracle).collect();
        let best = (0..4).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let got = select_max_entropy_feature(&Features::from_grids(&maps).unwrap()).unwrap();
        let lo = maps[best].min();
        let hi = maps[best].max();
        let want = maps[best].map(|v| (v - lo) / (hi - lo));
        assert_eq!(got, want);
    }
}

#[test]
fn detail_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random(8, 8, &mut rng);
    assert_eq!(detail_enhancement_loss(&f, &f).unwrap(), 0.0);
    assert!((detail_enhancement_loss(&f.map(|v| v + 0.5), &f).unwrap() - 0.25).abs() < 1e-15);
    let x = random(8, 8, &mut rng);
    let mut sum = 0.0;
    for r in 0..8 {
        for c in 0..8 {
            sum += (x.get(r, c) - f.get(r, c)).powi(2);
        }
    }
    assert!((detail_enhancement_loss(&x, &f).unwrap() - sum / 64.0).abs() < 1e-12);
    assert!(detail_enhancement_loss(&x, &random(8, 7, &mut rng)).is_err());
}

#[test]
fn ncc_examples_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(4, 4, &mut rng);
    assert!((ncc(&x, &x).unwrap().value - 1.0).abs() < 1e-12);
    assert!((ncc(&x, &x.map(|v| 2.5 * v + 1.0)).unwrap().value - 1.0).abs() < 1e-12);
    assert!((ncc(&x, &x.map(|v| -0.7 * v + 3.0)).unwrap().value + 1.0).abs() < 1e-12);
    for _ in 0..100 {
        let (a, b) = (random(4, 4, &mut rng), random(4, 4, &mut rng));
        let got = ncc(&a, &b).unwrap();
        assert!(!got.degenerate);
        assert!((got.value - pearson(a.as_slice(), b.as_slice())).abs() < 1e-12);
    }
    let flat = ncc(&Grid::filled(4, 4, 0.2), &x).unwrap();
    assert!(flat.degenerate && flat.value == 0.0);
}

#[test]
fn ncc_stays_in_range_over_fuzzed_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let (h, w) = (rng.gen_range(1..7), rng.gen_range(2..7));
        let scale = 10f64.powi(rng.gen_range(-6..7));
        let a = Grid::from_fn(h, w, |_, _| scale * rng.gen_range(-1.0..1.0));
        let b = Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0) + 1e3);
        let v = ncc(&a, &b).unwrap();
        assert!(v.value.abs() <= 1.0);
        assert!(v.value.is_finite());
    }
}

#[test]
fn gradient_correlation_examples_and_oracle() {
    let ramp_a = Grid::from_fn(8, 8, |r, c| 0.1 * c as f64 + 0.03 * r as f64 + 0.01 * ((r * c) as f64).sin());
    let ramp_b = Grid::from_fn(8, 8, |r, c| 0.02 * c as f64 - 0.08 * r as f64 + 0.01 * ((r + 2 * c) as f64).cos());
    assert!((gradient_correlation(&ramp_a, &ramp_b).unwrap() - gc_oracle(&ramp_a, &ramp_b)).abs() < 1e-12);
    assert!((gradient_correlation(&ramp_a, &ramp_a).unwrap() - 1.0).abs() < 1e-12);
    assert!((gradient_correlation(&ramp_a, &ramp_a.map(|v| v + 4.0)).unwrap() - 1.0).abs() < 1e-12);
    assert!(gradient_correlation(&Grid::<f64>::zeros(2, 8), &Grid::zeros(2, 8)).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (x, y) = (random(8, 8, &mut rng), random(8, 8, &mut rng));
        assert!((gc_loss(&x, &y).unwrap() - (1.0 - gc_oracle(&x, &y))).abs() < 1e-12);
    }
    let x = random(8, 8, &mut rng);
    assert!(gc_loss(&x, &x).unwrap().abs() < 1e-12);
    assert!((gc_loss(&x, &x.map(|v| -v)).unwrap() - 2.0).abs() < 1e-12);
    // flat prediction: both axes degenerate, maximal penalty of 1
    assert_eq!(gc_loss(&Grid::filled(8, 8, 0.5), &x).unwrap(), 1.0);
}

#[test]
fn total_loss_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, f, y) = (random(8, 8, &mut rng), random(8, 8, &mut rng), random(8, 8, &mut rng));
    let only1 = LossWeights { lambda1: 1.0, lambda2: 0.0 };
    let only2 = LossWeights { lambda1: 0.0, lambda2: 1.0 };
    assert_eq!(total_loss(&x, &x, &y, &only1).unwrap().total, 0.0);
    assert!(total_loss(&x, &f, &x, &only2).unwrap().total.abs() < 1e-12);
    let w = LossWeights::default();
    assert_eq!((w.lambda1, w.lambda2), (1.0, 0.001));
    let mse: f64 = x.as_slice().iter().zip(f.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 64.0;
    let want = mse + 0.001 * (1.0 - gc_oracle(&x, &y));
    let got = total_loss(&x, &f, &y, &w).unwrap();
    assert!((got.total - want).abs() < 1e-12);
}

#[test]
fn total_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = LossWeights::default();
    for _ in 0..20 {
        let (x, f, y) = (random(8, 8, &mut rng), random(8, 8, &mut rng), random(8, 8, &mut rng));
        let (_, g) = total_loss_grad(&x, &f, &y, &w).unwrap();
        let h = 1e-6;
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for i in 0..64 {
            let mut up = x.clone();
            up.as_mut_slice()[i] += h;
            let mut down = x.clone();
            down.as_mut_slice()[i] -= h;
            let numeric = (total_loss(&up, &f, &y, &w).unwrap().total - total_loss(&down, &f, &y, &w).unwrap().total) / (2.0 * h);
            diff2 += (numeric - g.as_slice()[i]).powi(2);
            norm2 += numeric.powi(2);
        }
        assert!((diff2 / norm2).sqrt() < 1e-4);
    }
}

fn pair(h: usize, w: usize) -> impl Strategy<Value = (ImageGrid, ImageGrid)> {
    let cells = prop::collection::vec(-1.0f64..1.0, h * w);
    (cells.clone(), cells).prop_map(move |(a, b)| (Grid::from_vec(h, w, a).unwrap(), Grid::from_vec(h, w, b).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn correlations_are_symmetric((x, y) in pair(6, 7)) {
        prop_assert_eq!(ncc(&x, &y).unwrap().value, ncc(&y, &x).unwrap().value);
        prop_assert_eq!(gradient_correlation(&x, &y).unwrap(), gradient_correlation(&y, &x).unwrap());
    }

    #[test]
    fn positive_scaling_of_the_reference_is_invisible((x, y) in pair(6, 6), a in 0.01f64..100.0, k in -8i32..8) {
        let p = 2f64.powi(k);
        let ys = y.map(|v| p * v);
        prop_assert_eq!(ncc(&x, &ys).unwrap().value, ncc(&x, &y).unwrap().value);
        prop_assert_eq!(gradient_correlation(&x, &ys).unwrap(), gradient_correlation(&x, &y).unwrap());
        prop_assert_eq!(gc_loss(&x, &ys).unwrap(), gc_loss(&x, &y).unwrap());
        let ya = y.map(|v| a * v);
        prop_assert!((ncc(&x, &ya).unwrap().value - ncc(&x, &y).unwrap().value).abs() < 1e-12);
        prop_assert!((gc_loss(&x, &ya).unwrap() - gc_loss(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn gc_loss_is_bounded((x, y) in pair(5, 9)) {
        let l = gc_loss(&x, &y).unwrap();
        prop_assert!((0.0..=2.0).contains(&l));
        prop_assert!(gc_loss(&x, &x).unwrap().abs() < 1e-12);
    }

    #[test]
    fn detail_loss_vanishes_only_on_equality((x, y) in pair(4, 4)) {
        let l = detail_enhancement_loss(&x, &y).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, x == y);
    }
}
