//! Experiment harness: layer-count sweeps and the ablation table, one
//! train+eval per grid point under a fixed seed.

use serde::Serialize;

use crate::databench::VideoSample;
use crate::error::Result;
use crate::eval::EvalReport;
use crate::model::SailConfig;
use crate::train::{evaluate_model, train, TrainOptions};

#[derive(Clone, Debug)]
pub enum ExperimentGrid {
    Layers(Vec<usize>),
    Ablations,
}

pub const ABLATION_LABELS: [&str; 5] = ["full", "w/o RS", "w/o ML", "w/o LS", "w/o BA"];

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRow {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentReport {
    pub fn row(&self, label: &str) -> Option<&ExperimentRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.rows.first() {
            out.push_str(&first.report.table_header());
            out.push('\n');
        }
        for row in &self.rows {
            out.push_str(&row.report.render_row(&row.label));
            out.push('\n');
        }
        out
    }
}

fn grid_configs(grid: &ExperimentGrid, base: &SailConfig) -> Vec<(String, SailConfig)> {
    match grid {
        ExperimentGrid::Layers(counts) => counts
            .iter()
            .map(|&l| (format!("layers={l}"), SailConfig { layers: l, ..base.clone() }))
            .collect(),
        ExperimentGrid::Ablations => vec![
            ("full".to_string(), base.clone()),
            ("w/o RS".to_string(), SailConfig { no_region_self_attention: true, ..base.clone() }),
            ("w/o ML".to_string(), SailConfig { no_multilevel_cross: true, ..base.clone() }),
            ("w/o LS".to_string(), SailConfig { no_local_attention: true, ..base.clone() }),
            ("w/o BA".to_string(), SailConfig { no_bidirectional: true, ..base.clone() }),
        ],
    }
}

/// One train+eval per grid point. Every point runs from the same seed
/// (carried in the base config), so rows differ only by the grid variable.
pub fn run_experiment(
    grid: &ExperimentGrid,
    base: &SailConfig,
    train_set: &[VideoSample],
    valid_set: &[VideoSample],
    test_set: &[VideoSample],
    opts: TrainOptions,
) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    for (label, cfg) in grid_configs(grid, base) {
        let (model, _log) = train(train_set, valid_set, &cfg, opts)?;
        let test_refs: Vec<&VideoSample> = test_set.iter().collect();
        let report = evaluate_model(&model, &test_refs)?;
        rows.push(ExperimentRow { label, report });
    }
    Ok(ExperimentReport { rows })
}
