//! Parses a ratings file and prints the leave-last-two split.
//!
//!     cargo run --example ingest_split -- path/to/ratings.dat [movielens-dat|tsv]
//!
//! Without arguments a small synthetic log is used.

use std::path::Path;
use std::sync::Arc;

use cadc::dataset::{parse_interactions, split_leave_last_two, InteractionFormat};
use cadc::synthetic::{generate, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let ds = match args.next() {
        Some(path) => {
            let format: InteractionFormat = args.next().as_deref().unwrap_or("movielens-dat").parse()?;
            parse_interactions(Path::new(&path), format)?
        }
        None => generate(&SyntheticConfig::default()),
    };
    println!("{} users, {} items, {} interactions", ds.n_users(), ds.n_items(), ds.interactions().len());
    let split = split_leave_last_two(Arc::new(ds))?;
    println!(
        "train {}, validation {}, test {}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    if let Some(first) = split.test.first() {
        let history: Vec<u32> = split.train.iter().filter(|i| i.user == first.user).map(|i| i.item).collect();
        println!("user {}: train items {:?}, test item {}", first.user, history, first.item);
    }
    Ok(())
}
