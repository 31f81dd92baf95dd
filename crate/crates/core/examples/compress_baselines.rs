//! Compares the training subsets each method builds from one train split.

use std::collections::HashMap;
use std::sync::Arc;

use cadc::dataset::{
    item_frequency, oversample_tail, sample_uniform, split_leave_last_two, undersample_head, Interaction,
};
use cadc::synthetic::{generate, SyntheticConfig};

fn describe(name: &str, rows: &[Interaction]) {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for r in rows {
        *counts.entry(r.item).or_default() += 1;
    }
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable();
    println!(
        "{name:<8} {:>6} rows, {:>4} items, per-item min {} / median {} / max {}",
        rows.len(),
        c.len(),
        c[0],
        c[(c.len() - 1) / 2],
        c[c.len() - 1]
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = Arc::new(generate(&SyntheticConfig {
        n_users: 500,
        n_items: 300,
        popularity_skew: 1.5,
        ..SyntheticConfig::default()
    }));
    let split = split_leave_last_two(Arc::clone(&ds))?;
    let seed = 0;
    describe("train", &split.train);
    let sample = sample_uniform(&split.train, 0.1, seed)?;
    describe("random", &sample);
    describe("over", &oversample_tail(&sample, seed)?);
    describe("under", &undersample_head(&sample, seed)?);
    let q = item_frequency(&sample, ds.n_items());
    let (top, p) = q.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    println!("logq: most frequent item {top} has q = {p:.4}, correction {:.2}", -p.ln());
    Ok(())
}
