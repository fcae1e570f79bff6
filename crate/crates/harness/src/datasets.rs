//! Training and test sets for the configured task.

use std::path::{Path, PathBuf};

use dplis_core::data::{flip_labels, synthesize_blobs_scaled, Dataset};
use dplis_core::rng::RngSeed;

use crate::config::{DatasetKind, ExperimentConfig, Task};
use crate::error::{HarnessError, Result};
use crate::idx::load_mnist_idx;

/// `name` or `name.gz` inside `dir`, whichever exists.
fn find(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(HarnessError::io(plain, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file (also tried .gz)")))
}

fn keep(data: Dataset, n: usize) -> Dataset {
    if n == 0 || n >= data.len() {
        data
    } else {
        data.take(n)
    }
}

pub fn load_mnist(dir: &Path, train_n: usize, test_n: usize) -> Result<(Dataset, Dataset)> {
    let train = load_mnist_idx(find(dir, "train-images-idx3-ubyte")?, find(dir, "train-labels-idx1-ubyte")?)?;
    let test = load_mnist_idx(find(dir, "t10k-images-idx3-ubyte")?, find(dir, "t10k-labels-idx1-ubyte")?)?;
    Ok((keep(train, train_n), keep(test, test_n)))
}

/// Train/test split of the configured data. Label flipping, when requested,
/// touches only the training part and is keyed by the master seed.
pub fn load_task_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    if matches!(cfg.task, Task::Toy | Task::Accountant) {
        return Err(HarnessError::Invalid("this task has no dataset".into()));
    }
    let (train, test) = match cfg.dataset_kind() {
        DatasetKind::Mnist => load_mnist(&cfg.data_dir, cfg.subset_size, cfg.test_subset)?,
        DatasetKind::Blobs => {
            let b = &cfg.blobs;
            synthesize_blobs_scaled(b.n, b.classes, b.dim, b.spread, b.scale, RngSeed(cfg.seed))?
        }
    };
    let train = if cfg.flip_rate > 0.0 { flip_labels(&train, cfg.flip_rate, RngSeed(cfg.seed))? } else { train };
    Ok((train, test))
}
