//! Regression and classification on compact-domain data.

pub mod data;
pub mod train;

pub use data::{gen_blobs, gen_regression, load_csv, CsvSchema, Dataset, Targets};
pub use train::{
    epoch_permutation, evaluate, split, train_classification, train_regression,
    train_regression_from, EpochRow, Metric, TrainConfig, EPOCH_COLUMNS,
};
