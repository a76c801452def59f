//! Dataset selection shared by the commands.

use std::path::Path;

use certlab::data::{build_toy_pca, load_mnist, synth, Dataset};
use clap::{Args, ValueEnum};

use crate::CliResult;

/// Source of examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Source {
    /// MNIST IDX files from the data directory.
    Mnist,
    /// PCA projection of sampled MNIST training examples.
    PcaToy,
    /// Two Gaussian classes; needs no files.
    Synth,
}

/// Which part of the source to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

/// Dataset flags.
#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long, value_enum, default_value_t = Source::Mnist)]
    pub dataset: Source,
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    /// Keep only the first `n` examples.
    #[arg(long)]
    pub n: Option<usize>,
    /// Examples sampled to fit the PCA (pca-toy).
    #[arg(long, default_value_t = 1024)]
    pub pca_samples: usize,
    /// Principal components kept (pca-toy).
    #[arg(long, default_value_t = 16)]
    pub pca_dims: usize,
    /// Examples generated per split (synth).
    #[arg(long, default_value_t = 1000)]
    pub synth_n: usize,
    /// Input dimension (synth).
    #[arg(long, default_value_t = 2)]
    pub synth_dim: usize,
    /// Seed for sampling and generation (default: the global seed, else 0).
    #[arg(long)]
    pub data_seed: Option<u64>,
}

impl DatasetArgs {
    /// Loads the selected examples.
    ///
    /// For `pca-toy` the training split is the PCA sample itself and the
    /// test split is the MNIST test set projected with the same fit.
    pub fn load(&self, data_dir: &Path, global_seed: Option<u64>) -> CliResult<Dataset> {
        let seed = self.data_seed.or(global_seed).unwrap_or(0);
        let train = self.split == Split::Train;
        let data = match self.dataset {
            Source::Mnist => load_mnist(data_dir, train)?,
            Source::PcaToy => {
                let (sample, pca) = build_toy_pca(&load_mnist(data_dir, true)?, self.pca_samples, self.pca_dims, seed)?;
                if train {
                    sample
                } else {
                    pca.project_dataset(&load_mnist(data_dir, false)?, "pca-test")
                }
            }
            Source::Synth => {
                let seed = if train { seed } else { seed ^ 0x5eed_7e57 };
                let mut d = synth(self.synth_n, self.synth_dim, seed);
                d.split = if train { "synth-train" } else { "synth-test" }.into();
                d
            }
        };
        Ok(match self.n {
            Some(n) => data.head(n),
            None => data,
        })
    }
}
