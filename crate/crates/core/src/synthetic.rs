//! Synthetic implicit-feedback logs with MovieLens-shaped side features.
//!
//! Users and items get latent factors; each user consumes the items with
//! the highest `affinity · ⟨z_u, w_i⟩ + ln(popularity_i) + Gumbel` score, so
//! the log carries real collaborative structure, a long popularity tail and
//! features that are weakly informative about the latent factors.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use crate::dataset::{FeatureTable, Interaction, InteractionDataset, MOVIELENS_AGE_CODES, MOVIELENS_GENRES};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    /// Median interactions per user (log-normally distributed).
    pub median_interactions: f64,
    /// Every user gets at least this many interactions.
    pub min_interactions: usize,
    /// Weight of the latent match against popularity and noise.
    pub affinity: f64,
    /// Log-normal sigma of item popularity; larger means a longer tail.
    pub popularity_skew: f64,
    /// Attach MovieLens-layout user (30-wide) and item (18-wide) features.
    pub with_features: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 150,
            latent_dim: 8,
            median_interactions: 20.0,
            min_interactions: 5,
            affinity: 3.0,
            popularity_skew: 1.0,
            with_features: true,
            seed: 0,
        }
    }
}

fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    -(-u.ln()).ln()
}

pub fn generate(config: &SyntheticConfig) -> InteractionDataset {
    let mut rng = seeded(config.seed);
    let k = config.latent_dim.max(1);
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let users: Vec<Vec<f64>> = (0..config.n_users).map(|_| (0..k).map(|_| normal(&mut rng)).collect()).collect();
    let items: Vec<Vec<f64>> = (0..config.n_items).map(|_| (0..k).map(|_| normal(&mut rng)).collect()).collect();
    let pop = LogNormal::new(0.0, config.popularity_skew.max(1e-6)).expect("valid sigma");
    let log_pop: Vec<f64> = (0..config.n_items).map(|_| pop.sample(&mut rng).ln()).collect();
    let activity = LogNormal::new(config.median_interactions.max(1.0).ln(), 0.8).expect("valid sigma");
    let scale = config.affinity / (k as f64).sqrt();

    let mut rows = Vec::new();
    let mut clock = 0i64;
    let mut scores: Vec<(f64, u32)> = Vec::with_capacity(config.n_items);
    for (u, zu) in users.iter().enumerate() {
        let n = (activity.sample(&mut rng).round() as usize)
            .max(config.min_interactions)
            .min(config.n_items);
        scores.clear();
        for (i, wi) in items.iter().enumerate() {
            let m: f64 = zu.iter().zip(wi).map(|(a, b)| a * b).sum();
            scores.push((scale * m + log_pop[i] + gumbel(&mut rng), i as u32));
        }
        scores.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<u32> = scores[..n].iter().map(|s| s.1).collect();
        // consumption order is random, timestamps increase within the user
        for j in (1..chosen.len()).rev() {
            let swap = rng.random_range(0..=j);
            chosen.swap(j, swap);
        }
        for item in chosen {
            clock += rng.random_range(1..600);
            rows.push(Interaction::positive(u as u32, item, 978_300_000 + clock));
        }
    }

    let dataset = InteractionDataset::from_interactions(rows, config.n_users, config.n_items)
        .expect("generated rows are in range and nonempty");
    if !config.with_features {
        return dataset;
    }

    let n_age = MOVIELENS_AGE_CODES.len();
    let user_dim = 2 + n_age + 21;
    let mut user_feat = FeatureTable::zeros(config.n_users, user_dim);
    for (u, zu) in users.iter().enumerate() {
        let row = user_feat.row_mut(u);
        row[usize::from(zu[0] > 0.0)] = 1.0;
        let age = ((zu[k.min(2) - 1].tanh() + 1.0) / 2.0 * n_age as f64) as usize;
        row[2 + age.min(n_age - 1)] = 1.0;
        row[2 + n_age + rng.random_range(0..21)] = 1.0;
    }
    let n_genres = MOVIELENS_GENRES.len();
    let mut item_feat = FeatureTable::zeros(config.n_items, n_genres);
    for (i, wi) in items.iter().enumerate() {
        let row = item_feat.row_mut(i);
        for (g, slot) in row.iter_mut().enumerate() {
            if wi[g % k] > 1.0 && rng.random_bool(0.7) {
                *slot = 1.0;
            }
        }
        if row.iter().all(|v| *v == 0.0) {
            row[rng.random_range(0..n_genres)] = 1.0;
        }
    }
    dataset
        .with_features(user_feat, item_feat)
        .expect("feature tables match the id spaces")
}

/// Writes `ratings.dat`, `users.dat` and `movies.dat` in MovieLens-1M
/// layout. Raw ids are `dense + 1`. Feature files are written only when the
/// dataset carries MovieLens-shaped features.
pub fn write_movielens(dataset: &InteractionDataset, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut ratings = BufWriter::new(fs::File::create(dir.join("ratings.dat"))?);
    for it in dataset.interactions() {
        writeln!(ratings, "{}::{}::5::{}", it.user + 1, it.item + 1, it.timestamp)?;
    }
    ratings.flush()?;

    let n_age = MOVIELENS_AGE_CODES.len();
    if dataset.user_features().dim() == 2 + n_age + 21 {
        let mut users = BufWriter::new(fs::File::create(dir.join("users.dat"))?);
        for u in 0..dataset.n_users() {
            let row = dataset.user_features().row(u);
            let hot = |from: usize, len: usize| row[from..from + len].iter().position(|v| *v > 0.0).unwrap_or(0);
            let gender = if hot(0, 2) == 0 { "F" } else { "M" };
            let age = MOVIELENS_AGE_CODES[hot(2, n_age)];
            let occupation = hot(2 + n_age, 21);
            writeln!(users, "{}::{gender}::{age}::{occupation}::00000", u + 1)?;
        }
        users.flush()?;
    }
    if dataset.item_features().dim() == MOVIELENS_GENRES.len() {
        let mut movies = BufWriter::new(fs::File::create(dir.join("movies.dat"))?);
        for i in 0..dataset.n_items() {
            let genres: Vec<&str> = dataset
                .item_features()
                .row(i)
                .iter()
                .zip(MOVIELENS_GENRES)
                .filter_map(|(v, g)| (*v > 0.0).then_some(g))
                .collect();
            writeln!(movies, "{}::Movie {} (2000)::{}", i + 1, i + 1, genres.join("|"))?;
        }
        movies.flush()?;
    }
    Ok(())
}
