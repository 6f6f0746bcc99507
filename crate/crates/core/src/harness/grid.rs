use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate_accuracy_with, init_model, train, ModelSpec, TrainConfig};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub val_acc: f64,
}

/// Axes of the search; every combination is trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Every point, learning rate major.
    pub points: Vec<GridPoint>,
    pub best: GridPoint,
}

/// Exhaustive learning-rate x weight-decay search. Every point trains from
/// the same initialization and shuffle seed; the best point has the highest
/// validation accuracy, ties going to the earlier point.
pub fn grid_search(
    train_set: &TabularDataset,
    val_set: &TabularDataset,
    spec: &ModelSpec,
    base: &TrainConfig,
    grid: &SearchGrid,
    init_seed: u64,
    exec: Execution,
) -> Result<GridResult> {
    if grid.learning_rates.is_empty() || grid.weight_decays.is_empty() {
        return Err(Error::InvalidArgument("empty search grid".into()));
    }
    let init = init_model(spec, init_seed)?;
    let combos: Vec<(f64, f64)> = grid
        .learning_rates
        .iter()
        .flat_map(|&lr| grid.weight_decays.iter().map(move |&wd| (lr, wd)))
        .collect();
    let points = par::map(&combos, exec, |&(lr, wd)| -> Result<GridPoint> {
        let cfg = TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..base.clone()
        };
        let model = train(&init, train_set, &cfg)?;
        Ok(GridPoint {
            learning_rate: lr,
            weight_decay: wd,
            val_acc: evaluate_accuracy_with(&model, val_set, Execution::Sequential)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut best = points[0];
    for p in &points[1..] {
        if p.val_acc > best.val_acc {
            best = *p;
        }
    }
    Ok(GridResult { points, best })
}
