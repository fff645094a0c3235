use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::{self, combine, LossValue};
use crate::model::{NetParams, NetSpec, UNet};
use crate::preprocess::{compose_enhanced, details_layer, normalize_minmax, PreprocessParams};
use crate::scalar::{lit, Scalar};

use super::optim::Adam;
use super::{DelVariant, GclVariant, TrainConfig};

/// Per-epoch means over all samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    #[serde(rename = "L")]
    pub total: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2")]
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IterationStatus {
    Completed,
    /// A non-finite loss or update stopped training; parameters are the last finite ones.
    Aborted { epoch: usize, step: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct IterationResult<T> {
    /// Enhancement iteration `t` (1-based).
    pub iteration: usize,
    pub params: NetParams<T>,
    pub trace: Vec<TraceRow>,
    pub status: IterationStatus,
}

impl<T> IterationResult<T> {
    pub fn completed(&self) -> bool {
        self.status == IterationStatus::Completed
    }
}

/// One trained enhancement step.
#[derive(Debug, Clone)]
pub struct Stage<T> {
    pub net: UNet,
    pub params: NetParams<T>,
}

/// Network inputs for one iteration and their detail-layer targets.
#[derive(Debug, Clone)]
pub struct TrainingSet<T> {
    pub inputs: Vec<Grid<T>>,
    pub details: Vec<Grid<T>>,
}

impl<T: Scalar> TrainingSet<T> {
    pub fn new(inputs: Vec<Grid<T>>, prep: &PreprocessParams) -> Result<Self> {
        let details = inputs.iter().map(|x| details_layer(x, prep)).collect::<Result<_>>()?;
        Ok(Self { inputs, details })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Seed for the parameters and sample order of iteration `t`.
pub fn iteration_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Starting image of the chain: normalized, then detail-boosted when `prep` is given.
pub fn initial_input<T: Scalar>(img: &Grid<T>, prep: Option<&PreprocessParams>) -> Result<Grid<T>> {
    let x = normalize_minmax(img);
    match prep {
        Some(p) => compose_enhanced(&x, p),
        None => Ok(x),
    }
}

/// Builds the network a config trains: the spec with the guidance branch
/// removed when the ablation flag disables it.
pub(crate) fn network_for(spec: &NetSpec, cfg: &TrainConfig) -> UNet {
    UNet::new(NetSpec {
        guidance: spec.guidance && cfg.ablation.guidance,
        ..spec.clone()
    })
}

fn sample_loss<T: Scalar>(
    net: &UNet,
    params: &NetParams<T>,
    input: &Grid<T>,
    detail: &Grid<T>,
    cfg: &TrainConfig,
) -> Result<(LossValue<T>, crate::model::ForwardCache<T>, Grid<T>)> {
    let cache = net.forward_train(input, params)?;
    let out = cache.output();
    let (l1, g1) = match cfg.ablation.del_variant {
        DelVariant::Del => {
            let target = losses::select_max_entropy_feature(&cache.first_layer())?;
            (losses::detail_enhancement_loss(&out, &target)?, losses::mse_grad(&out, &target)?)
        }
        DelVariant::L2ToOriginal => (losses::mse(&out, input)?, losses::mse_grad(&out, input)?),
    };
    let (l2, g2) = match cfg.ablation.gcl_variant {
        GclVariant::Gcl => losses::gc_loss_grad(&out, detail)?,
        GclVariant::L2ToDetail => (losses::mse(&out, detail)?, losses::mse_grad(&out, detail)?),
    };
    let w = &cfg.loss_weights;
    let (w1, w2) = (lit::<T>(w.lambda1), lit::<T>(w.lambda2));
    let grad = g1.zip_map(&g2, |a, b| w1 * a + w2 * b)?;
    Ok((combine(l1, l2, w), cache, grad))
}

/// Optimises one network for `cfg.epochs` epochs on `set`.
///
/// `start` defaults to fresh parameters seeded from `cfg.seed` and `t`.
pub fn train_iteration<T: Scalar>(
    net: &UNet,
    set: &TrainingSet<T>,
    start: Option<NetParams<T>>,
    t: usize,
    cfg: &TrainConfig,
) -> Result<IterationResult<T>> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if set.details.len() != set.inputs.len() {
        return Err(Error::Config("every input needs a detail target".into()));
    }
    let seed = iteration_seed(cfg.seed, t);
    let mut params = match start {
        Some(p) => {
            net.check_params(&p)?;
            p
        }
        None => net.init_params(seed),
    };
    let mut grads = params.zeros_like();
    let mut adam = Adam::new(&params, cfg.learn_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum1, mut sum2) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            grads.fill_zero();
            let scale = lit::<T>(1.0 / batch.len() as f64);
            let (mut b1, mut b2) = (0.0, 0.0);
            for &i in batch {
                let (loss, cache, grad) = sample_loss(net, &params, &set.inputs[i], &set.details[i], cfg)?;
                let (l1, l2, total) = (loss.l1.to_f64_lossy(), loss.l2.to_f64_lossy(), loss.total.to_f64_lossy());
                if !(l1.is_finite() && l2.is_finite() && total.is_finite()) {
                    return Ok(aborted(t, params, trace, epoch, step, format!("non-finite loss on sample {i}")));
                }
                b1 += l1;
                b2 += l2;
                net.backward(&cache, &grad.map(|g| g * scale), &params, &mut grads)?;
            }
            if !grads.all_finite() {
                return Ok(aborted(t, params, trace, epoch, step, "non-finite gradient".into()));
            }
            let last_good = params.clone();
            adam.update(&mut params, &grads);
            if !params.all_finite() {
                return Ok(aborted(t, last_good, trace, epoch, step, "non-finite parameter update".into()));
            }
            sum1 += b1;
            sum2 += b2;
        }
        let n = set.len() as f64;
        let (l1, l2) = (sum1 / n, sum2 / n);
        trace.push(TraceRow {
            epoch,
            total: cfg.loss_weights.lambda1 * l1 + cfg.loss_weights.lambda2 * l2,
            l1,
            l2,
        });
    }
    Ok(IterationResult {
        iteration: t,
        params,
        trace,
        status: IterationStatus::Completed,
    })
}

fn aborted<T>(
    t: usize,
    params: NetParams<T>,
    trace: Vec<TraceRow>,
    epoch: usize,
    step: usize,
    reason: String,
) -> IterationResult<T> {
    IterationResult {
        iteration: t,
        params,
        trace,
        status: IterationStatus::Aborted { epoch, step, reason },
    }
}

/// Trains iterations `resume.len() + 1 ..= cfg.iterations` on a raw corpus.
///
/// `resume` holds parameters of already finished iterations; they are replayed
/// to rebuild the corpus of the next iteration. `on_iteration` sees every new
/// result (including an aborted one, after which the run stops).
pub fn train_run<T: Scalar>(
    raw: &[Grid<T>],
    spec: &NetSpec,
    cfg: &TrainConfig,
    prep: &PreprocessParams,
    resume: &[NetParams<T>],
    mut on_iteration: impl FnMut(&IterationResult<T>) -> Result<()>,
) -> Result<Vec<IterationResult<T>>> {
    cfg.validate()?;
    spec.validate()?;
    prep.validate()?;
    if raw.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if resume.len() > cfg.iterations {
        return Err(Error::Config(format!(
            "{} finished iterations exceed the configured {}",
            resume.len(),
            cfg.iterations
        )));
    }
    let net = network_for(spec, cfg);
    let prep_opt = cfg.ablation.preprocessing.then_some(prep);
    let mut inputs = raw.iter().map(|img| initial_input(img, prep_opt)).collect::<Result<Vec<_>>>()?;
    for params in resume {
        inputs = inputs.iter().map(|x| net.forward(x, params)).collect::<Result<_>>()?;
    }
    let mut results = Vec::new();
    for t in resume.len() + 1..=cfg.iterations {
        let set = TrainingSet::new(inputs, prep)?;
        let result = train_iteration(&net, &set, None, t, cfg)?;
        on_iteration(&result)?;
        let done = result.completed();
        if done && t < cfg.iterations {
            inputs = set.inputs.iter().map(|x| net.forward(x, &result.params)).collect::<Result<_>>()?;
        } else {
            inputs = Vec::new();
        }
        results.push(result);
        if !done {
            break;
        }
    }
    Ok(results)
}

/// `x^0` is the (optionally detail-boosted) normalized image; each of the
/// first `t` stages maps `x^(k-1)` to `x^k`.
pub fn iterative_enhance<T: Scalar>(
    img: &Grid<T>,
    stages: &[Stage<T>],
    t: usize,
    prep: Option<&PreprocessParams>,
) -> Result<Grid<T>> {
    if t > stages.len() {
        return Err(Error::Config(format!(
            "iteration {} requested but only {} checkpoints are available",
            t,
            stages.len()
        )));
    }
    let mut x = initial_input(img, prep)?;
    for stage in &stages[..t] {
        x = stage.net.forward(&x, &stage.params)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossWeights;

    fn toy_corpus(n: usize, size: usize) -> Vec<Grid<f64>> {
        (0..n)
            .map(|k| {
                Grid::from_fn(size, size, |r, c| {
                    let f = 0.2 + 0.05 * k as f64;
                    0.5 + 0.3 * ((r as f64 * f).sin() * (c as f64 * 0.3).cos()) + 0.1 * ((r + c) % 3) as f64
                })
            })
            .collect()
    }

    fn toy_spec() -> NetSpec {
        NetSpec {
            depth: 2,
            base_channels: 8,
            ..NetSpec::default()
        }
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 3,
            iterations: 1,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_weights_leave_parameters_unchanged() {
        let net = UNet::new(toy_spec());
        let set = TrainingSet::new(toy_corpus(4, 16), &PreprocessParams::default()).unwrap();
        let cfg = TrainConfig {
            loss_weights: LossWeights {
                lambda1: 0.0,
                lambda2: 0.0,
            },
            ..toy_cfg()
        };
        let start: NetParams<f64> = net.init_params(1);
        let r = train_iteration(&net, &set, Some(start.clone()), 1, &cfg).unwrap();
        assert_eq!(r.params, start);
        assert!(r.completed());
    }

    #[test]
    fn trace_rows_satisfy_weighting() {
        let net = UNet::new(toy_spec());
        let set = TrainingSet::new(toy_corpus(4, 16), &PreprocessParams::default()).unwrap();
        let r = train_iteration::<f64>(&net, &set, None, 1, &toy_cfg()).unwrap();
        assert_eq!(r.trace.len(), 2);
        for row in &r.trace {
            assert!((row.total - (row.l1 + 0.001 * row.l2)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let net = UNet::new(toy_spec());
        let set = TrainingSet::<f64> {
            inputs: vec![],
            details: vec![],
        };
        assert!(matches!(train_iteration(&net, &set, None, 1, &toy_cfg()), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_start_parameters() {
        let net = UNet::new(toy_spec());
        let mut set = TrainingSet::new(toy_corpus(2, 16), &PreprocessParams::default()).unwrap();
        set.details[1].set(3, 3, f64::NAN);
        let start: NetParams<f64> = net.init_params(4);
        let cfg = TrainConfig {
            batch_size: 2,
            ..toy_cfg()
        };
        let r = train_iteration(&net, &set, Some(start.clone()), 1, &cfg).unwrap();
        assert!(matches!(r.status, IterationStatus::Aborted { epoch: 1, step: 1, .. }));
        assert_eq!(r.params, start);
    }

    #[test]
    fn enhance_zero_stages_returns_initial_input() {
        let img = toy_corpus(1, 16).remove(0);
        let p = PreprocessParams::default();
        let x0 = initial_input(&img, Some(&p)).unwrap();
        assert_eq!(iterative_enhance(&img, &[], 0, Some(&p)).unwrap(), x0);
        assert!(matches!(iterative_enhance(&img, &[], 1, Some(&p)), Err(Error::Config(_))));
    }
}
