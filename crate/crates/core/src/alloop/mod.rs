//! The active-learning protocol: seed a labeled pool, train in two stages,
//! score the unlabeled clips, label the chosen batch, retrain, and stop at
//! the budget cap or when a paired test shows no further gain.

mod experiment;
mod output;
mod stats;
mod train;

pub use experiment::{
    check_budget, clean_fraction, pairwise_tests, predict_video, run_active_learning, AnnotationProvider, Evaluation,
    Evaluator, ExperimentConfig, ModelEvaluator, NoopObserver, OracleAnnotator, PairwiseTest, RoundObserver,
    RoundRecord, Split, StopMode, StopRule, StopSplit, VideoPredictions,
};
pub use output::{
    comparison_report, curve_points, read_predictions_tsv, run_comparison, run_experiment, write_file, write_json,
    write_predictions_tsv, write_summary_csv, OutputWriter,
};
pub use stats::{betainc, ln_gamma, paired_significance, student_t_cdf, SD_FLOOR};
pub use train::{accuracy, examples, lr_at, train_model, EpochLog, Example, Stage, TrainConfig};
