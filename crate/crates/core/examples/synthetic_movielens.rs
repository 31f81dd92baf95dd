//! Writes a synthetic MovieLens-1M-shaped dataset for trying the CLI.
//!
//!     cargo run --release --example synthetic_movielens -- /tmp/synth [users] [items] [median]

use std::path::PathBuf;

use cadc::synthetic::{generate, write_movielens, SyntheticConfig};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic-ml".into()));
    let mut next = |default: f64| args.next().and_then(|a| a.parse().ok()).unwrap_or(default);
    let config = SyntheticConfig {
        n_users: next(1000.0) as usize,
        n_items: next(800.0) as usize,
        median_interactions: next(60.0),
        latent_dim: 16,
        ..SyntheticConfig::default()
    };
    let ds = generate(&config);
    write_movielens(&ds, &dir)?;
    println!(
        "{} users, {} items, {} interactions -> {}",
        ds.n_users(),
        ds.n_items(),
        ds.interactions().len(),
        dir.display()
    );
    Ok(())
}
