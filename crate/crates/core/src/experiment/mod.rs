//! Experiment driver: configs, training runs, evaluation, comparison tables
//! and the command-line interface.

pub mod cli;
mod compare;
mod config;
mod eval;
mod run;

pub use compare::{
    cmd_compare, compare_rows, median, method_name, render_table, scheme_label, CompareRow, COMPARE_JSON,
    COMPARE_TXT,
};
pub use config::{set_key, DataConfig, ExperimentConfig, Splits, TransplantConfig, SPLIT_NAMES};
pub use eval::{
    cmd_eval, eval_paths, evaluate_split, reference, Decoded, EvalDirection, EvalOutput, EvalRequest,
};
pub use run::{
    cmd_generate_data, cmd_train, cmd_transplant, initialize, load_summary, train_seed, FinalScores, RunRecord,
    RunSummary, CONFIG_FILE, SUMMARY_FILE, TRANSPLANT_FILE,
};
