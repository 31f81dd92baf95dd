//! HR@10 and NDCG@10 for a hand-written scorer on a tiny split.

use std::collections::HashSet;
use std::sync::Arc;

use cadc::dataset::{split_leave_last_two, Interaction, InteractionDataset};
use cadc::eval::{evaluate, hr_at_k, ndcg_at_k, rank_of_target};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let flat = |_: u32, _: u32| 0.0;
    let excluded: HashSet<u32> = [0, 1].into();
    println!("all ties, target 5 of 8 with 2 excluded: rank {}", rank_of_target(&flat, 0, 5, 8, &excluded)?);
    let ranks = [1, 2, 5, 11, 40];
    println!("ranks {ranks:?}: HR@10 {:.1}, NDCG@10 {:.2}", hr_at_k(&ranks, 10)?, ndcg_at_k(&ranks, 10)?);

    // three users, each with four interactions over twelve items
    let rows = (0..3u32)
        .flat_map(|u| (0..4u32).map(move |t| Interaction::positive(u, (u * 3 + t) % 12, i64::from(t))))
        .collect();
    let split = split_leave_last_two(Arc::new(InteractionDataset::from_interactions(rows, 3, 12)?))?;
    // prefers items close to 3·user + 3, the test item
    let scorer = |u: u32, i: u32| -((i as f64) - f64::from(u * 3 + 3)).abs();
    let m = evaluate(&scorer, &split, 10)?;
    println!("scorer ranks {:?}: HR@10 {:.1}, NDCG@10 {:.2}", m.ranks, m.hr, m.ndcg);
    Ok(())
}
