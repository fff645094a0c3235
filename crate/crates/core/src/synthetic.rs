//! Procedural test imagery: frontal chest phantoms with a vertebral column,
//! textured scenes, and the blur / noise / JPEG distortions applied to them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::grid::{reflect_index, Grid};
use crate::preprocess::normalize_minmax;
use crate::ImageGrid;

/// Separable Gaussian blur with reflect padding; `sigma <= 0` is the identity.
pub fn gaussian_blur(img: &ImageGrid, sigma: f64) -> ImageGrid {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (h, w) = img.shape();
    let rows = Grid::from_fn(h, w, |r, c| {
        (-radius..=radius)
            .map(|d| k[(d + radius) as usize] * img.get(r, reflect_index(c as isize + d, w as isize)))
            .sum::<f64>()
    });
    Grid::from_fn(h, w, |r, c| {
        (-radius..=radius)
            .map(|d| k[(d + radius) as usize] * rows.get(reflect_index(r as isize + d, h as isize), c))
            .sum::<f64>()
    })
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` (intensity units).
pub fn add_gaussian_noise(img: &ImageGrid, sigma: f64, rng: &mut impl Rng) -> ImageGrid {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let data = img.as_slice().iter().map(|&v| v + normal.sample(rng)).collect();
    Grid::from_vec(img.height(), img.width(), data).expect("same shape")
}

/// Round trip through 8-bit JPEG at the given quality (1-100).
pub fn jpeg_round_trip(img: &ImageGrid, quality: u8) -> Result<ImageGrid> {
    let gray = crate::io::to_gray8(img);
    let mut bytes = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut bytes, quality).encode_image(&gray)?;
    Ok(crate::io::from_dynamic(image::load_from_memory(&bytes)?))
}

/// Clamps to `[0, 1]` and quantizes to 256 levels.
pub fn quantize8(img: &ImageGrid) -> ImageGrid {
    img.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Gaussian random field with a `1/f^beta` amplitude spectrum, normalized to `[0, 1]`.
pub fn power_law_field(h: usize, w: usize, beta: f64, rng: &mut impl Rng) -> ImageGrid {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data: Vec<Complex<f64>> = (0..h * w).map(|_| Complex::new(normal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    let (row_f, col_f) = (planner.plan_fft_forward(w), planner.plan_fft_forward(h));
    let (row_i, col_i) = (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h));
    let transform = |data: &mut Vec<Complex<f64>>, row: &dyn rustfft::Fft<f64>, col: &dyn rustfft::Fft<f64>| {
        for r in data.chunks_exact_mut(w) {
            row.process(r);
        }
        let mut buf = vec![Complex::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                buf[r] = data[r * w + c];
            }
            col.process(&mut buf);
            for r in 0..h {
                data[r * w + c] = buf[r];
            }
        }
    };
    transform(&mut data, row_f.as_ref(), col_f.as_ref());
    let freq = |k: usize, n: usize| {
        let k = k as f64;
        if k < n as f64 / 2.0 {
            k / n as f64
        } else {
            (k - n as f64) / n as f64
        }
    };
    for (i, v) in data.iter_mut().enumerate() {
        let f = (freq(i / w, h).powi(2) + freq(i % w, w).powi(2)).sqrt();
        *v *= if f > 0.0 { f.powf(-beta) } else { 0.0 };
    }
    transform(&mut data, row_i.as_ref(), col_i.as_ref());
    normalize_minmax(&Grid::from_vec(h, w, data.iter().map(|c| c.re).collect()).expect("sized"))
}

/// Controls for [`chest_phantom`].
#[derive(Debug, Clone)]
pub struct PhantomOptions {
    /// Point-spread blur in pixels at this output size.
    pub blur: f64,
    /// Additive noise standard deviation.
    pub noise: f64,
    /// Output contrast is squeezed into `[floor, floor + span]`.
    pub floor: f64,
    pub span: f64,
}

impl Default for PhantomOptions {
    fn default() -> Self {
        Self {
            blur: 1.2,
            noise: 0.012,
            floor: 0.15,
            span: 0.6,
        }
    }
}

fn smoothstep(edge: f64, softness: f64, d: f64) -> f64 {
    // 1 inside (d < edge), 0 outside, with a linear ramp of width `softness`
    ((edge - d) / softness + 0.5).clamp(0.0, 1.0)
}

/// Frontal chest radiograph phantom (bone bright), quantized to 8 bits.
///
/// The vertebral column runs down the centre column; its exact position,
/// the vertebra spacing, rib phase and all textures vary with `seed`.
pub fn chest_phantom(h: usize, w: usize, seed: u64, opts: &PhantomOptions) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let cx = wf / 2.0 + rng.gen_range(-0.01..0.01) * wf;
    let texture = power_law_field(h, w, 1.6, &mut rng);
    let fine = power_law_field(h, w, 0.9, &mut rng);

    let body_rx = wf * rng.gen_range(0.42..0.48);
    let lung_rx = wf * rng.gen_range(0.16..0.2);
    let lung_ry = hf * rng.gen_range(0.36..0.42);
    let lung_dx = wf * rng.gen_range(0.2..0.24);
    let lung_cy = hf * rng.gen_range(0.45..0.52);
    let spine_half = wf * rng.gen_range(0.035..0.045);
    let vert_pitch = hf * rng.gen_range(0.065..0.08);
    let vert_phase = rng.gen_range(0.0..vert_pitch);
    let disc = vert_pitch * rng.gen_range(0.16..0.22);
    let rib_pitch = hf * rng.gen_range(0.085..0.1);
    let rib_phase = rng.gen_range(0.0..rib_pitch);
    let rib_width = hf * rng.gen_range(0.014..0.02);
    let tilt = rng.gen_range(-0.02..0.02);
    let soft = (wf / 256.0).max(0.5);

    let img = Grid::from_fn(h, w, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let xs = x - cx - tilt * (y - hf / 2.0);
        // soft tissue silhouette
        let body = smoothstep(body_rx, 2.0 * soft, xs.abs());
        let mut v = 0.05 + 0.5 * body;
        // lungs
        let mut lung: f64 = 0.0;
        for side in [-1.0, 1.0] {
            let ex = (xs - side * lung_dx) / lung_rx;
            let ey = (y - lung_cy) / lung_ry;
            lung = lung.max(smoothstep(1.0, 0.08, (ex * ex + ey * ey).sqrt()));
        }
        v -= 0.28 * lung * body;
        // mediastinum
        v += 0.1 * smoothstep(lung_dx - lung_rx * 0.6, 3.0 * soft, xs.abs()) * body;
        // vessels and parenchyma
        v += 0.08 * (texture.get(r, c) - 0.5) * lung;
        // ribs: arcs leaving the spine, fading laterally
        let arc = y - 0.35 * xs.abs() - 0.0015 * xs * xs / wf * 256.0;
        let rib_pos = (arc - rib_phase).rem_euclid(rib_pitch);
        let rib = smoothstep(rib_width, soft, (rib_pos - rib_width).abs());
        let lateral = (xs.abs() > spine_half * 1.6) as u8 as f64 * smoothstep(body_rx * 0.95, 6.0 * soft, xs.abs());
        v += 0.12 * rib * lateral * body;
        // clavicles
        let clav_y = hf * 0.1 + 0.12 * xs.abs();
        if xs.abs() > spine_half * 1.5 && xs.abs() < wf * 0.32 {
            v += 0.12 * smoothstep(hf * 0.012, soft, (y - clav_y).abs());
        }
        // vertebral bodies with cortical rims and disc spaces
        let pos = (y - vert_phase).rem_euclid(vert_pitch);
        let in_body = pos > disc;
        let column = smoothstep(spine_half, soft, xs.abs());
        if in_body {
            let edge_dist = (spine_half - xs.abs()).min(pos - disc).min(vert_pitch - pos);
            let rim = smoothstep(1.5 * soft, soft, edge_dist);
            v += column * (0.16 + 0.08 * rim);
            // pedicles
            for side in [-1.0, 1.0] {
                let px = (xs - side * spine_half * 0.7) / (spine_half * 0.22);
                let py = (pos - disc - vert_pitch * 0.35) / (vert_pitch * 0.16);
                v += 0.05 * smoothstep(1.0, 0.3, (px * px + py * py).sqrt()) * column;
            }
        } else {
            v += 0.06 * column;
        }
        // spinous process shadow down the midline
        v += 0.04 * smoothstep(spine_half * 0.15, soft, xs.abs()) * in_body as u8 as f64;
        v + 0.02 * (fine.get(r, c) - 0.5)
    });
    let img = gaussian_blur(&img, opts.blur);
    let img = add_gaussian_noise(&img, opts.noise, &mut rng);
    let lo = 0.0;
    let hi = 0.8;
    quantize8(&img.map(|v| opts.floor + opts.span * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)))
}

/// Piecewise-smooth scene of overlapping shapes over a power-law background.
pub fn shapes_scene(h: usize, w: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = rng.gen_range(1.2..2.0);
    let mut img = power_law_field(h, w, beta, &mut rng).map(|v| 0.2 + 0.5 * v);
    let n = rng.gen_range(4..12);
    for _ in 0..n {
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let (ry, rx) = (rng.gen_range(3.0..h as f64 / 3.0), rng.gen_range(3.0..w as f64 / 3.0));
        let value = rng.gen_range(0.0..1.0);
        let rect = rng.gen_bool(0.4);
        img = Grid::from_fn(h, w, |r, c| {
            let dy = (r as f64 - cy) / ry;
            let dx = (c as f64 - cx) / rx;
            let inside = if rect { dy.abs().max(dx.abs()) < 1.0 } else { dy * dy + dx * dx < 1.0 };
            if inside {
                0.3 * img.get(r, c) + 0.7 * value
            } else {
                img.get(r, c)
            }
        });
    }
    quantize8(&gaussian_blur(&img, 0.5))
}

/// A degradation applied to a pristine source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distortion {
    Blur(f64),
    Noise(f64),
    Jpeg(u8),
}

/// The distortion families, in the order they are stacked.
pub const DISTORTION_KINDS: usize = 3;

impl Distortion {
    /// Family `kind` at severity `u` in `[0, 1]`.
    pub fn at(kind: usize, u: f64) -> Self {
        let u = u.clamp(0.0, 1.0);
        match kind {
            0 => Distortion::Blur(0.2 + 4.0 * u),
            1 => Distortion::Noise(0.1 * u),
            _ => Distortion::Jpeg((60.0 - 56.0 * u).round() as u8),
        }
    }

    pub fn apply(&self, img: &ImageGrid, rng: &mut impl Rng) -> Result<ImageGrid> {
        match *self {
            Distortion::Blur(s) => Ok(quantize8(&gaussian_blur(img, s))),
            Distortion::Noise(s) => Ok(quantize8(&add_gaussian_noise(img, s, rng))),
            Distortion::Jpeg(q) => jpeg_round_trip(img, q),
        }
    }
}

/// Quality score for stacked severities in `[0, 1]`: 10 for a pristine image,
/// 90 when any distortion is at full strength. Severities combine like
/// independent losses.
pub fn distortion_score(severities: &[f64]) -> f64 {
    let kept: f64 = severities.iter().map(|&u| 1.0 - u.clamp(0.0, 1.0)).product();
    10.0 + 80.0 * (1.0 - kept)
}

const SAMPLES_PER_SOURCE: usize = 27;

/// Pristine sources (sharp chest phantoms and textured scenes), each followed
/// by randomly distorted copies labelled by [`distortion_score`].
///
/// Copies carry one, two or three distortion families at uniform severities,
/// stacked blur, then noise, then compression.
pub fn distortion_corpus(sources: usize, size: usize, seed: u64) -> Result<Vec<(ImageGrid, f64)>> {
    let sharp = PhantomOptions {
        blur: 0.0,
        noise: 0.0,
        floor: 0.05,
        span: 0.9,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sources * (1 + SAMPLES_PER_SOURCE));
    for k in 0..sources {
        let s = rng.gen::<u64>();
        let pristine = if k % 2 == 0 {
            // phantoms are rendered large and cropped so anatomy scales vary
            let big = chest_phantom(2 * size, 2 * size, s, &sharp);
            let top = rng.gen_range(0..=size);
            let left = rng.gen_range(size / 2..=size / 2 + size / 4);
            big.crop(top, left, size, size)?
        } else {
            shapes_scene(size, size, s)
        };
        out.push((pristine.clone(), distortion_score(&[])));
        for _ in 0..SAMPLES_PER_SOURCE {
            let count = match rng.gen_range(0..10) {
                0..=5 => 1,
                6..=8 => 2,
                _ => 3,
            };
            let mut kinds: Vec<usize> = (0..DISTORTION_KINDS).collect();
            kinds.shuffle(&mut rng);
            kinds.truncate(count);
            kinds.sort_unstable();
            let mut img = pristine.clone();
            let mut severities = Vec::with_capacity(count);
            for kind in kinds {
                let u = rng.gen_range(0.0..1.0);
                img = Distortion::at(kind, u).apply(&img, &mut rng)?;
                severities.push(u);
            }
            out.push((img, distortion_score(&severities)));
        }
    }
    Ok(out)
}
