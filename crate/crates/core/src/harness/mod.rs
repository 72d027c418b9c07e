//! Scenario files, sweep orchestration and result output.
//!
//! A scenario is a flat TOML or JSON table, optionally based on a bundled
//! preset and optionally expanded into a grid through its `vary` table. Runs
//! are deterministic in `(config, master_seed)` regardless of thread count.

mod config;
mod output;
mod run;

pub use config::{
    load_config, parse_vary_values, preset, preset_names, resolve, Alpha, Cell, Eta, Experiment, ScenarioConfig,
};
pub use output::{
    emit_outputs, read_results, render_svg, summarize, write_results, SummaryPoint, MANIFEST_FILE, RESULTS_FILE,
    SUMMARY_FILE,
};
pub use run::{
    classify_task, predict_class, predict_mean, run_scenario, run_scenario_with_workers, ClassPredictionReport,
    MeanPrediction, ResultRow, AGG_DEVIATION, SQUARED_ERROR, TEST_ACCURACY, TEST_LOSS, TRAIN_INTERP_LOSS,
};
