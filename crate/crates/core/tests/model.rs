use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spine_enhance::model::{NetParams, NetSpec, UNet};
use spine_enhance::{Error, Grid};

fn texture(h: usize, w: usize, seed: u64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(h, w, |_, _| rng.gen::<f64>())
}

fn spec(depth: usize, base: usize) -> NetSpec {
    NetSpec {
        depth,
        base_channels: base,
        ..NetSpec::default()
    }
}

#[test]
fn output_keeps_shape_and_is_finite() {
    let net = UNet::new(spec(4, 8));
    let params: NetParams<f64> = net.init_params(3);
    for (h, w) in [(64, 64), (40, 72), (17, 23)] {
        let out = net.forward(&texture(h, w, 1), &params).unwrap();
        assert_eq!(out.shape(), (h, w));
        assert!(out.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}

#[test]
fn forward_is_deterministic() {
    let net = UNet::new(spec(3, 8));
    let params: NetParams<f32> = net.init_params(8);
    let x = texture(32, 32, 2).cast::<f32>();
    let a = net.forward(&x, &params).unwrap();
    let b = net.forward(&x, &net.init_params(8)).unwrap();
    assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn zero_fusion_weight_matches_ablated_network() {
    let full = UNet::new(NetSpec {
        fusion_beta: 0.0,
        ..spec(3, 8)
    });
    let ablated = UNet::new(NetSpec {
        fusion_beta: 0.0,
        guidance: false,
        ..spec(3, 8)
    });
    let p_full: NetParams<f64> = full.init_params(21);
    let p_abl: NetParams<f64> = ablated.init_params(21);
    // guidance tensors come last, so the shared prefix draws identical values
    for t in p_abl.tensors() {
        assert_eq!(p_full.get(&t.name).unwrap(), t);
    }
    let x = texture(32, 32, 4);
    let a = full.forward(&x, &p_full).unwrap();
    let b = ablated.forward(&x, &p_abl).unwrap();
    assert_eq!(a, b);

    let mut zeroed = p_full.clone();
    zeroed.zero_prefix("guide");
    assert_eq!(full.forward(&x, &zeroed).unwrap(), a);
}

#[test]
fn zero_head_is_identity() {
    let net = UNet::new(spec(2, 8));
    let mut params: NetParams<f64> = net.init_params(5);
    params.zero_prefix("head");
    let x = texture(24, 24, 6);
    assert_eq!(net.forward(&x, &params).unwrap(), x);
}

#[test]
fn mismatched_params_are_rejected() {
    let a = UNet::new(spec(2, 8));
    let b = UNet::new(spec(3, 8));
    let p: NetParams<f64> = a.init_params(0);
    match b.forward(&texture(16, 16, 0), &p) {
        Err(Error::SpecMismatch { expected, found }) => {
            assert_eq!(expected, b.spec_hash());
            assert_eq!(found, a.spec_hash());
        }
        other => panic!("expected spec mismatch, got {other:?}"),
    }
}

#[test]
fn guidance_shapes_follow_decoder_levels() {
    let s = spec(4, 8);
    let net = UNet::new(s.clone());
    let params: NetParams<f64> = net.init_params(1);
    let x = texture(64, 64, 3);
    for level in 1..=4 {
        let g = net.guidance_features(&x, level, &params).unwrap();
        let side = 64 >> (level - 1);
        assert_eq!(g.shape(), (s.channels(level), side, side));
    }
    assert!(net.guidance_features(&x, 0, &params).is_err());
    assert!(net.guidance_features(&x, 5, &params).is_err());
}

#[test]
fn guidance_of_zero_input_is_zero() {
    let net = UNet::new(spec(3, 8));
    let params: NetParams<f64> = net.init_params(2);
    let g = net.guidance_features(&Grid::zeros(32, 32), 2, &params).unwrap();
    assert!(g.data.iter().all(|&v| v == 0.0));
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    j as usize
}

/// Leaky rectifier, 3x3 reflect-padded convolution, k x k max-pool, all by direct loops.
fn guidance_oracle(x: &Grid<f64>, w: &[f64], b: &[f64], ch: usize, slope: f64, k: usize) -> Vec<f64> {
    let (h, wd) = x.shape();
    let act = x.map(|v| if v >= 0.0 { v } else { slope * v });
    let mut out = Vec::new();
    for co in 0..ch {
        let conv = Grid::from_fn(h, wd, |r, c| {
            let mut s = b[co];
            for ky in 0..3 {
                for kx in 0..3 {
                    let rr = reflect(r as isize + ky as isize - 1, h);
                    let cc = reflect(c as isize + kx as isize - 1, wd);
                    s += w[co * 9 + ky * 3 + kx] * act.get(rr, cc);
                }
            }
            s
        });
        for r in 0..h / k {
            for c in 0..wd / k {
                let mut m = f64::NEG_INFINITY;
                for dr in 0..k {
                    for dc in 0..k {
                        m = m.max(conv.get(r * k + dr, c * k + dc));
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

#[test]
fn guidance_matches_direct_evaluation_on_negative_input() {
    let s = spec(3, 8);
    let net = UNet::new(s.clone());
    let mut params: NetParams<f64> = net.init_params(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for t in params.tensors_mut().iter_mut().filter(|t| t.name.ends_with(".conv.bias")) {
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    let x = Grid::from_fn(32, 32, |r, c| -0.5 - 0.4 * ((r * 3 + c * 7) as f64 * 0.21).sin().abs());
    for level in 1..=3 {
        let w = &params.get(&format!("guide{level}.conv.weight")).unwrap().data;
        let b = &params.get(&format!("guide{level}.conv.bias")).unwrap().data;
        let want = guidance_oracle(&x, w, b, s.channels(level), s.activation_slope, 1 << (level - 1));
        let got = net.guidance_features(&x, level, &params).unwrap();
        for (g, o) in got.data.iter().zip(&want) {
            assert!((g - o).abs() < 1e-12, "level {level}: {g} vs {o}");
        }
    }
}

#[test]
fn first_layer_shape_and_zero_input() {
    let net = UNet::new(NetSpec::default());
    let params: NetParams<f32> = net.init_params(0);
    let x = texture(40, 40, 1).cast::<f32>();
    let f = net.first_layer_features(&x, &params).unwrap();
    assert_eq!(f.shape(), (32, 40, 40));
    assert_eq!(f, net.first_layer_features(&x, &params).unwrap());
    let z = net.first_layer_features(&Grid::zeros(40, 40), &params).unwrap();
    assert!(z.data.iter().all(|&v| v == 0.0));
}

/// Weighted-sum loss so every output pixel carries a distinct gradient.
fn probe_loss(net: &UNet, x: &Grid<f64>, params: &NetParams<f64>, probe: &Grid<f64>) -> f64 {
    let out = net.forward(x, params).unwrap();
    out.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
}

#[test]
fn backward_matches_central_differences() {
    // toy topology below the validated minimum width
    let net = UNet::new(NetSpec {
        depth: 2,
        base_channels: 4,
        ..NetSpec::default()
    });
    let mut params: NetParams<f64> = net.init_params(17);
    // nonzero biases and a larger head so every tensor sees gradient
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for t in params.tensors_mut() {
        if t.name.ends_with("bias") || t.name.starts_with("head") {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    let x = texture(16, 16, 19);
    let probe = texture(16, 16, 20).map(|v| v - 0.5);
    let cache = net.forward_train(&x, &params).unwrap();
    let mut grads = params.zeros_like();
    net.backward(&cache, &probe, &params, &mut grads).unwrap();

    let h = 1e-4;
    let central = |ti: usize, i: usize, step: f64| {
        let mut p = params.clone();
        p.tensors_mut()[ti].data[i] += step;
        let up = probe_loss(&net, &x, &p, &probe);
        p.tensors_mut()[ti].data[i] -= 2.0 * step;
        let down = probe_loss(&net, &x, &p, &probe);
        (up - down) / (2.0 * step)
    };
    let (mut smooth, mut drawn) = (0, 0);
    for (ti, t) in params.tensors().iter().enumerate() {
        let n = t.data.len();
        let picks: Vec<usize> = if n <= 24 { (0..n).collect() } else { (0..24).map(|_| rng.gen_range(0..n)).collect() };
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for &i in &picks {
            drawn += 1;
            let numeric = central(ti, i, h);
            // a rectifier or pooling switch inside the stencil shows up as
            // disagreement with the half step, far beyond O(h^2)
            let half = central(ti, i, h / 2.0);
            if (numeric - half).abs() > 1e-6 * numeric.abs().max(half.abs()).max(1e-3) {
                continue;
            }
            smooth += 1;
            let analytic = grads.tensors()[ti].data[i];
            diff2 += (numeric - analytic).powi(2);
            norm2 += numeric.powi(2).max(analytic.powi(2));
        }
        // biases feeding straight into instance norm have exactly zero gradient
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-6);
        assert!(rel < 1e-4, "{}: relative error {rel:e}", t.name);
    }
    assert!(smooth * 10 >= drawn * 9, "only {smooth} of {drawn} samples away from kinks");
}

