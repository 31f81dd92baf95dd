//! HR@10 of CADC as the training log shrinks, on a synthetic dataset.
//! Ratios follow the full-to-selected convention: 10 keeps a tenth.

use std::sync::Arc;

use cadc::config::RunConfig;
use cadc::pipeline::{sweep_csv, sweep_on, Experiment};
use cadc::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate(&SyntheticConfig {
        n_users: 400,
        n_items: 300,
        ..SyntheticConfig::default()
    });
    let config = RunConfig {
        epochs: 15,
        pretrain_epochs: 15,
        batch_size: 256,
        out: std::env::temp_dir().join("cadc-example-sweep"),
        ..RunConfig::default()
    };
    std::fs::create_dir_all(&config.out)?;
    let exp = Experiment::from_dataset(&config, Arc::new(ds))?;
    print!("{}", sweep_csv(&sweep_on(&exp, &[1.0, 5.0, 10.0, 50.0])?));
    Ok(())
}
