//! Trains the two-tower model on 10% of a synthetic train split with every
//! way of bringing in pretrained MF ids, and prints HR@10 / NDCG@10.

use std::sync::Arc;

use cadc::config::{Method, RunConfig};
use cadc::pipeline::Experiment;
use cadc::synthetic::{generate, SyntheticConfig};
use cadc::ttnn::StrategyKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = generate(&SyntheticConfig {
        n_users: 400,
        n_items: 300,
        latent_dim: 16,
        ..SyntheticConfig::default()
    });
    let config = RunConfig {
        epochs: 20,
        pretrain_epochs: 20,
        batch_size: 256,
        out: std::env::temp_dir().join("cadc-example-strategies"),
        ..RunConfig::default()
    };
    let exp = Experiment::from_dataset(&config, Arc::new(ds))?;
    println!("{:<9} {:>6} {:>7}", "strategy", "HR@10", "NDCG@10");
    for kind in StrategyKind::ALL {
        let method = if kind == StrategyKind::Random { Method::Random } else { Method::Cadc };
        let r = exp.run(method, config.ratio, kind)?.report;
        println!("{:<9} {:>6.2} {:>7.2}", kind.to_string(), r.hr_at_10, r.ndcg_at_10);
    }
    Ok(())
}
