use std::collections::BTreeMap;

use rand::Rng;

use super::{Trained, UnlearnOutcome};
use crate::datasets::{ClassId, LabeledDataset, SampleId, UnlearnRequest};
use crate::error::{invalid, Result};
use crate::nnet::{train, Model, TrainConfig};
use crate::seed;

/// New labels for every requested sample, each drawn uniformly from the
/// classes other than its own.
pub fn amnesiac_relabel(
    data: &LabeledDataset,
    request: &UnlearnRequest,
    seed: u64,
) -> Result<BTreeMap<SampleId, ClassId>> {
    request.validate(data)?;
    let classes = data.num_classes();
    let mut rng = seed::derived_rng(seed, &[seed::TAG_RELABEL]);
    let mut out = BTreeMap::new();
    for (&c, ids) in request.per_class() {
        for &id in ids {
            // Draw from the C-1 other classes by skipping over `c`.
            let r = rng.random_range(0..classes - 1);
            out.insert(id, if r >= c { r + 1 } else { r });
        }
    }
    Ok(out)
}

/// Relabels the requested samples at random and keeps training `model_o` on
/// the relabeled full dataset.
pub fn amnesiac_unlearn(
    model_o: &Model,
    data: &LabeledDataset,
    request: &UnlearnRequest,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<UnlearnOutcome> {
    if model_o.spec().num_classes < 2 {
        return Err(invalid("relabeling needs at least two classes"));
    }
    let labels = amnesiac_relabel(data, request, seed)?;
    let model_u = if cfg.epochs == 0 {
        model_o.clone()
    } else {
        train(model_o, &data.relabel(&labels)?, cfg)?
    };
    Ok(UnlearnOutcome {
        model_o: Trained::Single(model_o.clone()),
        model_u: Trained::Single(model_u),
        executed_request: request.clone(),
    })
}
