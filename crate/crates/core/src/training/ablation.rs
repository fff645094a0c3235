//! Ablation studies: each cell retrains with modified flags and is scored on
//! the held-out evaluation crops, with paired tests against the full setup.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::{MetricReport, MetricSuite};
use crate::model::NetSpec;
use crate::preprocess::PreprocessParams;
use crate::scalar::Scalar;

use super::train::{network_for, train_run, Stage};
use super::{crop_spine_patch, iterative_enhance, AblationFlags, CropMode, DelVariant, GclVariant, PatchSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Guidance,
    LossVariants,
    Iterations,
    Preprocessing,
}

impl Study {
    pub const ALL: [Study; 4] = [Study::Guidance, Study::LossVariants, Study::Iterations, Study::Preprocessing];
}

/// One trained-and-evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub flags: AblationFlags,
    /// Number of enhancement iterations applied at evaluation.
    pub iterations: usize,
}

impl AblationCell {
    pub fn full(base: &TrainConfig) -> Self {
        Self {
            name: "full".into(),
            flags: AblationFlags::default(),
            iterations: base.iterations,
        }
    }

    pub fn for_study(study: Study, base: &TrainConfig) -> Vec<Self> {
        let full = AblationFlags::default();
        let cell = |name: &str, flags: AblationFlags, iterations: usize| Self {
            name: name.into(),
            flags,
            iterations,
        };
        let t = base.iterations;
        match study {
            Study::Guidance => vec![
                cell("without guidance", AblationFlags { guidance: false, ..full }, t),
                cell("with guidance", full, t),
            ],
            Study::LossVariants => vec![
                cell("l2+DEL", AblationFlags { gcl_variant: GclVariant::L2ToDetail, ..full }, t),
                cell("GCL+l2", AblationFlags { del_variant: DelVariant::L2ToOriginal, ..full }, t),
                cell("GCL+DEL", full, t),
            ],
            Study::Iterations => (1..=3)
                .map(|k| cell(&format!("{k} iteration{}", if k > 1 { "s" } else { "" }), full, k))
                .collect(),
            Study::Preprocessing => vec![
                cell("without preprocessing", AblationFlags { preprocessing: false, ..full }, t),
                cell("with preprocessing", full, t),
            ],
        }
    }
}

/// Raw training patches and raw held-out patches.
pub struct AblationData<'a, T> {
    pub train: &'a [Grid<T>],
    pub eval: &'a [(String, Grid<T>)],
    pub spec: &'a NetSpec,
    pub prep: &'a PreprocessParams,
    pub patch: &'a PatchSpec,
}

type Trained<T> = HashMap<AblationFlags, Vec<Stage<T>>>;

fn stages_for<T: Scalar>(
    data: &AblationData<'_, T>,
    base: &TrainConfig,
    flags: AblationFlags,
    iterations: usize,
    cache: &mut Trained<T>,
) -> Result<Vec<Stage<T>>> {
    if let Some(s) = cache.get(&flags) {
        if s.len() >= iterations {
            return Ok(s[..iterations].to_vec());
        }
    }
    let cfg = TrainConfig {
        ablation: flags,
        iterations,
        ..base.clone()
    };
    let net = network_for(data.spec, &cfg);
    let results = train_run(data.train, data.spec, &cfg, data.prep, &[], |_| Ok(()))?;
    if let Some(bad) = results.iter().find(|r| !r.completed()) {
        return Err(Error::Config(format!(
            "ablation training aborted at iteration {}: {:?}",
            bad.iteration, bad.status
        )));
    }
    let stages: Vec<Stage<T>> = results
        .into_iter()
        .map(|r| Stage {
            net: net.clone(),
            params: r.params,
        })
        .collect();
    cache.insert(flags, stages.clone());
    Ok(stages)
}

fn evaluate_cell<T: Scalar>(
    data: &AblationData<'_, T>,
    stages: &[Stage<T>],
    cell: &AblationCell,
    suite: &MetricSuite,
) -> Result<MetricReport> {
    let prep = cell.flags.preprocessing.then_some(data.prep);
    let items = data
        .eval
        .iter()
        .map(|(id, img)| {
            let out = iterative_enhance(img, stages, cell.iterations, prep)?;
            let crop = crop_spine_patch(&out, data.patch, CropMode::Eval, None)?;
            Ok((id.clone(), crop.cast::<f64>()))
        })
        .collect::<Result<Vec<_>>>()?;
    suite.report(&cell.name, &items)
}

/// Trains and scores every cell, then attaches paired Wilcoxon comparisons
/// against the full configuration. Cells sharing flags share training.
pub fn run_ablation<T: Scalar>(
    data: &AblationData<'_, T>,
    base: &TrainConfig,
    cells: &[AblationCell],
    suite: &MetricSuite,
) -> Result<Vec<MetricReport>> {
    base.validate()?;
    let mut cache = Trained::new();
    let needed = |flags: AblationFlags| cells.iter().filter(|c| c.flags == flags).map(|c| c.iterations).max();
    let mut reports = Vec::with_capacity(cells.len());
    for cell in cells {
        let train_to = needed(cell.flags).unwrap_or(cell.iterations);
        let stages = stages_for(data, base, cell.flags, train_to, &mut cache)?;
        reports.push(evaluate_cell(data, &stages, cell, suite)?);
    }
    let full = AblationCell::full(base);
    let reference = match cells.iter().position(|c| c.flags == full.flags && c.iterations == full.iterations) {
        Some(i) => reports[i].clone(),
        None => {
            let stages = stages_for(data, base, full.flags, full.iterations, &mut cache)?;
            evaluate_cell(data, &stages, &full, suite)?
        }
    };
    for (report, cell) in reports.iter_mut().zip(cells) {
        if cell.flags == full.flags && cell.iterations == full.iterations {
            continue;
        }
        report.comparisons = report.compare(&reference)?;
    }
    Ok(reports)
}
