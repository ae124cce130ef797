use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use atk_core::data::{load_cifar10, load_mnist_idx, synth_shapes, Dataset};
use atk_core::{Error, Result};

use crate::args::DataArgs;

/// Synthetic splits when no subset is requested.
pub const SYNTH_TRAIN: usize = 2000;
pub const SYNTH_TEST: usize = 500;
const SYNTH_TRAIN_SEED: u64 = 1;
const SYNTH_TEST_SEED: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Cifar10(PathBuf),
    Mnist(PathBuf),
    Synth,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synth" {
            return Ok(DataSource::Synth);
        }
        match s.split_once(':') {
            Some(("cifar10", p)) if !p.is_empty() => Ok(DataSource::Cifar10(p.into())),
            Some(("mnist", p)) if !p.is_empty() => Ok(DataSource::Mnist(p.into())),
            _ => Err(Error::Config(format!(
                "bad --data `{s}` (expected cifar10:PATH, mnist:PATH or synth)"
            ))),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Cifar10(p) => write!(f, "cifar10:{}", p.display()),
            DataSource::Mnist(p) => write!(f, "mnist:{}", p.display()),
            DataSource::Synth => f.write_str("synth"),
        }
    }
}

/// Loads the train and test splits, applying the requested subsets.
pub fn load(args: &DataArgs) -> Result<(Dataset, Dataset)> {
    let source: DataSource = args.data.parse()?;
    let (train, test) = match &source {
        DataSource::Synth => {
            let train = synth_shapes(args.subset.unwrap_or(SYNTH_TRAIN), SYNTH_TRAIN_SEED)?;
            let test = synth_shapes(args.test_subset.unwrap_or(SYNTH_TEST), SYNTH_TEST_SEED)?;
            return Ok((train, test));
        }
        DataSource::Cifar10(dir) => load_cifar10(dir)?,
        DataSource::Mnist(dir) => load_mnist_idx(dir)?,
    };
    let train = match args.subset {
        Some(n) => train.stratified_subset(n)?,
        None => train,
    };
    let test = match args.test_subset {
        Some(n) => test.stratified_subset(n)?,
        None => test,
    };
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_round_trip() {
        for s in ["synth", "cifar10:/data/cifar", "mnist:rel/dir"] {
            assert_eq!(s.parse::<DataSource>().unwrap().to_string(), s);
        }
        assert!("cifar10:".parse::<DataSource>().is_err());
        assert!("imagenet:/x".parse::<DataSource>().is_err());
    }
}
