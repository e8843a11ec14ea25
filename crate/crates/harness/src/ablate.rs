//! Trains and evaluates every registered strategy with shared settings.

use std::fmt::Write as _;

use loga_core::StrategyRegistry;
use loga_datagen::Dataset;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::Result;
use crate::eval::{evaluate, EvalResult};
use crate::train::train;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub result: EvalResult,
    pub final_loss: f64,
}

/// Names of all strategies in registry order.
pub fn strategy_names() -> Vec<&'static str> {
    StrategyRegistry::<f32>::with_defaults().names()
}

/// One training run per strategy; only `config.strategy` varies.
pub fn ablate(config: &TrainConfig, dataset: &Dataset, strategies: &[&str]) -> Result<Vec<AblationRow>> {
    strategies
        .iter()
        .map(|&name| {
            let config = TrainConfig {
                strategy: name.to_string(),
                ..config.clone()
            };
            log::info!("training `{name}`");
            let outcome = train(config, dataset)?;
            let result = evaluate(&outcome.checkpoint, dataset, 0)?;
            Ok(AblationRow {
                strategy: name.to_string(),
                final_loss: outcome.steps.last().map_or(f64::NAN, |s| s.total),
                result,
            })
        })
        .collect()
}

pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<16} {:>8} {:>8} {:>8} {:>8}", "strategy", "mAP", "rank-1", "rank-5", "rank-20").unwrap();
    for r in rows {
        let rank = |k| r.result.rank(k).unwrap_or(f64::NAN) * 100.0;
        writeln!(
            out,
            "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            r.strategy,
            r.result.map * 100.0,
            rank(1),
            rank(5),
            rank(20)
        )
        .unwrap();
    }
    out
}
