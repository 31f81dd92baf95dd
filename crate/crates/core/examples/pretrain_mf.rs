//! Pretrains biased MF on a synthetic log and shows the loss curve and the
//! top recommendations for one user.

use std::sync::Arc;

use cadc::dataset::split_leave_last_two;
use cadc::mf::{train_mf, MfConfig};
use cadc::nn::AdamConfig;
use cadc::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = Arc::new(generate(&SyntheticConfig {
        n_users: 300,
        n_items: 200,
        ..SyntheticConfig::default()
    }));
    let split = split_leave_last_two(Arc::clone(&ds))?;
    let config = MfConfig {
        dim: 16,
        epochs: 20,
        batch_size: 256,
        adam: AdamConfig { lr: 0.01, ..AdamConfig::default() },
        ..MfConfig::default()
    };
    let trained = train_mf(&split.train, &ds, &config)?;
    for (epoch, loss) in trained.epoch_losses.iter().enumerate().step_by(4) {
        println!("epoch {epoch:>2}: loss {loss:.4}");
    }
    let user = split.test[0].user;
    let mut scored: Vec<(u32, f64)> =
        (0..ds.n_items() as u32).map(|i| (i, trained.model.predict(user, i).unwrap())).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("user {user}, held-out item {}", split.test[0].item);
    for (item, p) in scored.iter().take(5) {
        println!("  item {item:>3}  p = {p:.3}");
    }
    let tables = trained.model.export_embeddings();
    println!("exported {}x{} user and {}x{} item tables", tables.user.rows(), tables.width(), tables.item.rows(), tables.width());
    Ok(())
}
