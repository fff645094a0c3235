use crate::error::{Error, Result};
use crate::grid::{Features, Grid};
use crate::scalar::{lit, Scalar};

use super::layers::{self, *};
use super::params::{Init, NetParams};
use super::{fuse_into, NetSpec};

/// Slope of the leaky rectifiers inside encoder/decoder blocks.
const BLOCK_SLOPE: f64 = 0.01;


/// Smallest side the network accepts.
const MIN_SIDE: usize = 8;

#[derive(Debug, Clone)]
struct DecoderIdx {
    up_w: usize,
    up_b: usize,
    conv: [usize; 2],
}

#[derive(Debug, Clone)]
struct GuideIdx {
    w: usize,
    b: usize,
}

/// Compiled network: spec plus the index of every parameter tensor.
#[derive(Debug, Clone)]
pub struct UNet {
    spec: NetSpec,
    hash: String,
    decls: Vec<(String, Vec<usize>, Init)>,
    enc: Vec<[usize; 2]>,
    bottleneck: [usize; 2],
    dec: Vec<DecoderIdx>,
    guide: Vec<GuideIdx>,
    head_w: usize,
    head_b: usize,
}

struct DeclBuilder(Vec<(String, Vec<usize>, Init)>);

impl DeclBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.0.push((name, shape, init));
        self.0.len() - 1
    }

    fn conv3x3(&mut self, name: String, in_ch: usize, out_ch: usize) -> usize {
        let std = (2.0 / (in_ch * 9) as f64).sqrt();
        self.push(name, vec![out_ch, in_ch, 3, 3], Init::Normal(std))
    }
}

impl UNet {
    pub fn new(spec: NetSpec) -> Self {
        let depth = spec.depth;
        let mut b = DeclBuilder(Vec::new());
        let mut enc = Vec::with_capacity(depth);
        let mut in_ch = 1;
        for level in 1..=depth {
            let ch = spec.channels(level);
            enc.push([
                b.conv3x3(format!("enc{level}.conv1.weight"), in_ch, ch),
                b.conv3x3(format!("enc{level}.conv2.weight"), ch, ch),
            ]);
            in_ch = ch;
        }
        let bott_ch = spec.base_channels << depth;
        let bottleneck = [
            b.conv3x3("bottleneck.conv1.weight".into(), in_ch, bott_ch),
            b.conv3x3("bottleneck.conv2.weight".into(), bott_ch, bott_ch),
        ];
        let mut dec_rev = Vec::with_capacity(depth);
        let mut below = bott_ch;
        for level in (1..=depth).rev() {
            let ch = spec.channels(level);
            let up_std = (2.0 / below as f64).sqrt();
            let up_w = b.push(format!("dec{level}.up.weight"), vec![ch, 2, 2, below], Init::Normal(up_std));
            let up_b = b.push(format!("dec{level}.up.bias"), vec![ch], Init::Zero);
            let conv = [
                b.conv3x3(format!("dec{level}.conv1.weight"), 2 * ch, ch),
                b.conv3x3(format!("dec{level}.conv2.weight"), ch, ch),
            ];
            dec_rev.push(DecoderIdx { up_w, up_b, conv });
            below = ch;
        }
        dec_rev.reverse();
        let c1 = spec.channels(1);
        let head_w = b.push("head.weight".into(), vec![1, c1], Init::Normal(0.1 / (c1 as f64).sqrt()));
        let head_b = b.push("head.bias".into(), vec![1], Init::Zero);
        let mut guide = Vec::new();
        if spec.guidance {
            for level in 1..=depth {
                let ch = spec.channels(level);
                guide.push(GuideIdx {
                    w: b.conv3x3(format!("guide{level}.conv.weight"), 1, ch),
                    b: b.push(format!("guide{level}.conv.bias"), vec![ch], Init::Zero),
                });
            }
        }
        let hash = spec.hash();
        Self {
            spec,
            hash,
            decls: b.0,
            enc,
            bottleneck,
            dec: dec_rev,
            guide,
            head_w,
            head_b,
        }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn spec_hash(&self) -> &str {
        &self.hash
    }

    /// Fresh parameters drawn from a seeded stream.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> NetParams<T> {
        NetParams::initialize(self.hash.clone(), &self.decls, seed)
    }

    /// Names and shapes of every tensor, in storage order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        self.decls.iter().map(|(n, s, _)| (n.clone(), s.clone())).collect()
    }

    pub fn check_params<T: Scalar>(&self, params: &NetParams<T>) -> Result<()> {
        if params.spec_hash != self.hash {
            return Err(Error::SpecMismatch {
                expected: self.hash.clone(),
                found: params.spec_hash.clone(),
            });
        }
        params.check_layout(&self.decls)
    }

    fn beta<T: Scalar>(&self) -> T {
        lit(self.spec.fusion_beta)
    }

    fn multiple(&self) -> usize {
        1 << self.spec.depth
    }

    fn check_input<T: Scalar>(&self, x: &Grid<T>) -> Result<()> {
        if x.height() < MIN_SIDE || x.width() < MIN_SIDE {
            return Err(Error::Contract(format!(
                "network input must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// Reflect-pads so both sides are divisible by `2^depth`.
    fn pad_input<T: Scalar>(&self, x: &Grid<T>) -> (Features<T>, Padding) {
        let m = self.multiple();
        let ph = x.height().div_ceil(m) * m - x.height();
        let pw = x.width().div_ceil(m) * m - x.width();
        let pad = Padding {
            top: ph / 2,
            left: pw / 2,
            height: x.height(),
            width: x.width(),
        };
        let padded = if ph == 0 && pw == 0 {
            x.clone()
        } else {
            x.pad_reflect(pad.top, ph - pad.top, pad.left, pw - pad.left)
        };
        (Features::from_grid(&padded), pad)
    }

    fn unit_forward<T: Scalar>(&self, x: &Features<T>, weight: &[T], out_ch: usize) -> (Features<T>, UnitCache<T>) {
        let col = im2col3x3(x);
        let pre = conv3x3_from_col(&col, weight, None, out_ch, x.height, x.width);
        let (xhat, inv_std) = instance_norm(&pre);
        let act = leaky_features(&xhat, lit(BLOCK_SLOPE));
        (
            act,
            UnitCache {
                col,
                xhat,
                inv_std,
                in_ch: x.channels,
            },
        )
    }

    fn unit_backward<T: Scalar>(
        &self,
        mut dact: Features<T>,
        cache: &UnitCache<T>,
        weight: &[T],
        dweight: &mut [T],
        need_dx: bool,
    ) -> Option<Features<T>> {
        leaky_backward_inplace(&mut dact, &cache.xhat, lit(BLOCK_SLOPE));
        let dpre = instance_norm_backward(&dact, &cache.xhat, &cache.inv_std);
        let dcol = conv_backward(&dpre, &cache.col, weight, dweight, None, need_dx)?;
        Some(col2im3x3(&dcol, cache.in_ch, dpre.height, dpre.width))
    }

    fn block_forward<T: Scalar>(
        &self,
        x: &Features<T>,
        idx: [usize; 2],
        out_ch: usize,
        params: &NetParams<T>,
    ) -> (Features<T>, [UnitCache<T>; 2]) {
        let (a, c0) = self.unit_forward(x, params.data(idx[0]), out_ch);
        let (b, c1) = self.unit_forward(&a, params.data(idx[1]), out_ch);
        (b, [c0, c1])
    }

    fn block_backward<T: Scalar>(
        &self,
        dy: Features<T>,
        caches: &[UnitCache<T>; 2],
        idx: [usize; 2],
        params: &NetParams<T>,
        grads: &mut NetParams<T>,
        need_dx: bool,
    ) -> Option<Features<T>> {
        let da = self
            .unit_backward(dy, &caches[1], params.data(idx[1]), grads.data_mut(idx[1]), true)
            .expect("inner unit always propagates");
        self.unit_backward(da, &caches[0], params.data(idx[0]), grads.data_mut(idx[0]), need_dx)
    }

    /// Patches of `leaky(x)` shared by every guidance level.
    fn guide_col<T: Scalar>(&self, x: &Features<T>) -> Vec<T> {
        im2col3x3(&leaky_features(x, lit(self.spec.activation_slope)))
    }

    fn guide_level<T: Scalar>(
        &self,
        col: &[T],
        level: usize,
        h: usize,
        w: usize,
        params: &NetParams<T>,
    ) -> (Features<T>, Vec<u32>) {
        let g = &self.guide[level - 1];
        let ch = self.spec.channels(level);
        let full = conv3x3_from_col(col, params.data(g.w), Some(params.data(g.b)), ch, h, w);
        max_pool(&full, 1 << (level - 1))
    }

    /// Full forward pass retaining everything the backward pass needs.
    pub fn forward_train<T: Scalar>(&self, x: &Grid<T>, params: &NetParams<T>) -> Result<ForwardCache<T>> {
        self.check_params(params)?;
        self.check_input(x)?;
        let depth = self.spec.depth;
        let (input, pad) = self.pad_input(x);
        let (h, w) = (input.height, input.width);

        let mut enc = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        let mut pools = Vec::with_capacity(depth);
        let mut cur = input.clone();
        for level in 1..=depth {
            let (a, caches) = self.block_forward(&cur, self.enc[level - 1], self.spec.channels(level), params);
            let (pooled, arg) = max_pool(&a, 2);
            pools.push(arg);
            enc.push(caches);
            skips.push(a);
            cur = pooled;
        }
        let (mut cur, bottleneck) = self.block_forward(&cur, self.bottleneck, self.spec.base_channels << depth, params);

        let guide_col = (!self.guide.is_empty()).then(|| self.guide_col(&input));
        let beta = self.beta::<T>();
        let mut dec: Vec<Option<DecoderCache<T>>> = (0..depth).map(|_| None).collect();
        for level in (1..=depth).rev() {
            let d = &self.dec[level - 1];
            let ch = self.spec.channels(level);
            let mut up = upconv2x2(&cur, params.data(d.up_w), params.data(d.up_b), ch);
            let guide_arg = guide_col.as_ref().map(|col| {
                let (g, arg) = self.guide_level(col, level, h, w, params);
                fuse_into(&mut up, &g, beta);
                arg
            });
            let cat = concat(&skips[level - 1], &up);
            let (out, units) = self.block_forward(&cat, d.conv, ch, params);
            dec[level - 1] = Some(DecoderCache {
                up_in: cur,
                guide_arg,
                units,
            });
            cur = out;
        }
        let dec: Vec<DecoderCache<T>> = dec.into_iter().map(|d| d.expect("filled")).collect();

        let head = conv1x1(&cur, params.data(self.head_w), params.data(self.head_b), 1);
        let mut output = head.clone();
        for (y, (&z, &xv)) in output.data.iter_mut().zip(head.data.iter().zip(&input.data)) {
            let xc = unit_clamp(xv);
            let gate = lit::<T>(2.0) * sigmoid(z) - T::one();
            *y = xc + gate * residual_room(z, xc);
        }
        Ok(ForwardCache {
            pad,
            input,
            enc,
            pools,
            bottleneck,
            dec,
            guide_col,
            head_in: cur,
            head,
            output,
        })
    }

    /// Inference forward pass.
    pub fn forward<T: Scalar>(&self, x: &Grid<T>, params: &NetParams<T>) -> Result<Grid<T>> {
        Ok(self.forward_train(x, params)?.output())
    }

    /// Accumulates `d loss / d params` into `grads`, given `d loss / d output`.
    pub fn backward<T: Scalar>(
        &self,
        cache: &ForwardCache<T>,
        doutput: &Grid<T>,
        params: &NetParams<T>,
        grads: &mut NetParams<T>,
    ) -> Result<()> {
        doutput.check_same_shape(&Grid::zeros(cache.pad.height, cache.pad.width))?;
        let depth = self.spec.depth;
        let (h, w) = (cache.input.height, cache.input.width);

        // output gate and un-crop
        let mut dz = Features::zeros(1, h, w);
        for r in 0..cache.pad.height {
            for c in 0..cache.pad.width {
                let i = (r + cache.pad.top) * w + c + cache.pad.left;
                let z = cache.head.data[i];
                let s = sigmoid(z);
                let room = residual_room(z, unit_clamp(cache.input.data[i]));
                dz.data[i] = doutput.get(r, c) * lit::<T>(2.0) * s * (T::one() - s) * room;
            }
        }
        let (hw, hb) = two_mut(grads, self.head_w, self.head_b);
        let mut dcur = conv1x1_backward(&dz, &cache.head_in, params.data(self.head_w), hw, hb);

        let beta = self.beta::<T>();
        let keep = T::one() - beta;
        let mut dskips = Vec::with_capacity(depth);
        for level in 1..=depth {
            let d = &self.dec[level - 1];
            let dc = &cache.dec[level - 1];
            let ch = self.spec.channels(level);
            let dcat = self
                .block_backward(dcur, &dc.units, d.conv, params, grads, true)
                .expect("decoder blocks propagate");
            let (dskip, mut dup) = layers::split(&dcat, ch);
            dskips.push(dskip);
            if let (Some(col), Some(arg)) = (cache.guide_col.as_ref(), dc.guide_arg.as_ref()) {
                let g = &self.guide[level - 1];
                let mut dg = dup.clone();
                for v in dg.data.iter_mut() {
                    *v *= beta;
                }
                for v in dup.data.iter_mut() {
                    *v *= keep;
                }
                let dfull = max_pool_backward(&dg, arg, h, w);
                let (gw, gb) = two_mut(grads, g.w, g.b);
                conv_backward(&dfull, col, params.data(g.w), gw, Some(gb), false);
            }
            let (dw, db) = two_mut(grads, d.up_w, d.up_b);
            dcur = upconv2x2_backward(&dup, &dc.up_in, params.data(d.up_w), dw, db);
        }
        dcur = self
            .block_backward(dcur, &cache.bottleneck, self.bottleneck, params, grads, true)
            .expect("bottleneck propagates");
        for level in (1..=depth).rev() {
            let skip_shape = &cache.enc[level - 1][1].xhat;
            let mut da = max_pool_backward(&dcur, &cache.pools[level - 1], skip_shape.height, skip_shape.width);
            for (a, &s) in da.data.iter_mut().zip(&dskips[level - 1].data) {
                *a += s;
            }
            match self.block_backward(da, &cache.enc[level - 1], self.enc[level - 1], params, grads, level > 1) {
                Some(next) => dcur = next,
                None => break,
            }
        }
        Ok(())
    }

    /// Guidance features for decoder level `level` (1-based).
    pub fn guidance_features<T: Scalar>(
        &self,
        x: &Grid<T>,
        level: usize,
        params: &NetParams<T>,
    ) -> Result<Features<T>> {
        self.check_params(params)?;
        self.check_input(x)?;
        if !self.spec.guidance {
            return Err(Error::Config("network was built without a guidance branch".into()));
        }
        if level == 0 || level > self.spec.depth {
            return Err(Error::Contract(format!(
                "guidance level must be in 1..={}, got {level}",
                self.spec.depth
            )));
        }
        let (input, _) = self.pad_input(x);
        let col = self.guide_col(&input);
        Ok(self.guide_level(&col, level, input.height, input.width, params).0)
    }

    /// Post-activation maps of the first encoder convolution, one per channel.
    pub fn first_layer_features<T: Scalar>(&self, x: &Grid<T>, params: &NetParams<T>) -> Result<Features<T>> {
        self.check_params(params)?;
        self.check_input(x)?;
        let (input, pad) = self.pad_input(x);
        let (act, _) = self.unit_forward(&input, params.data(self.enc[0][0]), self.spec.channels(1));
        Ok(pad.crop_features(&act))
    }
}

fn two_mut<T: Scalar>(p: &mut NetParams<T>, a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b, "tensor indices must be ordered");
    let (lo, hi) = p.tensors_mut().split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

#[inline]
fn unit_clamp<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

/// Distance the gated residual may move `x`: towards 1 for a nonnegative
/// head value, towards 0 otherwise.
#[inline]
fn residual_room<T: Scalar>(z: T, x: T) -> T {
    if z >= T::zero() {
        T::one() - x
    } else {
        x
    }
}

#[derive(Debug, Clone, Copy)]
struct Padding {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

impl Padding {
    fn crop_features<T: Scalar>(&self, f: &Features<T>) -> Features<T> {
        if f.height == self.height && f.width == self.width {
            return f.clone();
        }
        let mut out = Features::zeros(f.channels, self.height, self.width);
        for c in 0..f.channels {
            let src = f.plane(c);
            let dst = out.plane_mut(c);
            for r in 0..self.height {
                let s = (r + self.top) * f.width + self.left;
                dst[r * self.width..(r + 1) * self.width].copy_from_slice(&src[s..s + self.width]);
            }
        }
        out
    }
}

struct UnitCache<T> {
    col: Vec<T>,
    xhat: Features<T>,
    inv_std: Vec<T>,
    in_ch: usize,
}

struct DecoderCache<T> {
    up_in: Features<T>,
    guide_arg: Option<Vec<u32>>,
    units: [UnitCache<T>; 2],
}

/// Activations retained by [`UNet::forward_train`].
pub struct ForwardCache<T> {
    pad: Padding,
    input: Features<T>,
    enc: Vec<[UnitCache<T>; 2]>,
    pools: Vec<Vec<u32>>,
    bottleneck: [UnitCache<T>; 2],
    dec: Vec<DecoderCache<T>>,
    guide_col: Option<Vec<T>>,
    head_in: Features<T>,
    head: Features<T>,
    output: Features<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Network output at the caller's resolution.
    pub fn output(&self) -> Grid<T> {
        let f = self.pad.crop_features(&self.output);
        Grid::from_vec(f.height, f.width, f.data).expect("consistent shape")
    }

    /// Post-activation maps of the first encoder convolution.
    pub fn first_layer(&self) -> Features<T> {
        let act = leaky_features(&self.enc[0][0].xhat, lit(BLOCK_SLOPE));
        self.pad.crop_features(&act)
    }
}

/// One-shot forward pass for callers holding only a spec.
pub fn forward<T: Scalar>(x: &Grid<T>, params: &NetParams<T>, spec: &NetSpec) -> Result<Grid<T>> {
    UNet::new(spec.clone()).forward(x, params)
}

pub fn guidance_features<T: Scalar>(
    x: &Grid<T>,
    level: usize,
    params: &NetParams<T>,
    spec: &NetSpec,
) -> Result<Features<T>> {
    UNet::new(spec.clone()).guidance_features(x, level, params)
}

pub fn first_layer_features<T: Scalar>(x: &Grid<T>, params: &NetParams<T>, spec: &NetSpec) -> Result<Features<T>> {
    UNet::new(spec.clone()).first_layer_features(x, params)
}
