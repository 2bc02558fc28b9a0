//! Datasets, configuration, the training loop, persistence and benchmarks.

mod bench;
mod config;
mod data;
mod model_io;
mod run;

pub use crate::optim::{adam_step, AdamConfig, AdamState};
pub use bench::{bench_barrier, bench_csv, parse_sizes, BenchConfig, BenchRow, BENCH_HEADER};
pub use config::{ConfigError, TrainConfig, TrainMode};
pub use data::{
    gen_blobs_2d, load_csv, load_idx, load_idx_limited, load_mnist_dir, parse_csv,
    to_csv_string, write_csv, DataError, Dataset, Split, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use model_io::{
    load_model, model_from_str, model_to_string, save_model, ModelIoError, ModelMeta,
    FORMAT_VERSION,
};
pub use run::{train, EpochMetrics, RunMetrics, TrainError, METRICS_HEADER};
