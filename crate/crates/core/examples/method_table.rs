//! Every method at 10% of a synthetic train split, formatted with the
//! relative loss against the model trained on everything.

use std::sync::Arc;

use cadc::config::RunConfig;
use cadc::pipeline::{table1_csv, table1_on, Experiment};
use cadc::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let users = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let ds = generate(&SyntheticConfig {
        n_users: users,
        n_items: users * 3 / 4,
        latent_dim: 16,
        ..SyntheticConfig::default()
    });
    let config = RunConfig {
        epochs: 20,
        pretrain_epochs: 20,
        batch_size: 256,
        out: std::env::temp_dir().join("cadc-example-table"),
        ..RunConfig::default()
    };
    std::fs::create_dir_all(&config.out)?;
    let exp = Experiment::from_dataset(&config, Arc::new(ds))?;
    print!("{}", table1_csv(&table1_on(&exp)?));
    Ok(())
}
