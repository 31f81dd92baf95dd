use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;

use super::{DatasetError, FeatureTable, IdMap, Interaction, InteractionDataset, Result};

/// On-disk layout of an interaction log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionFormat {
    /// `user::item::rating::timestamp` (MovieLens 1M/10M `ratings.dat`).
    MovielensDat,
    /// `user<TAB>item<TAB>timestamp`, `#` comment lines ignored.
    Tsv,
}

impl FromStr for InteractionFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "movielens-dat" => Ok(Self::MovielensDat),
            "tsv" => Ok(Self::Tsv),
            other => Err(format!("unknown interaction format '{other}' (expected movielens-dat or tsv)")),
        }
    }
}

impl std::fmt::Display for InteractionFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MovielensDat => "movielens-dat",
            Self::Tsv => "tsv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSchema {
    /// `users.dat` (gender, age, occupation) and `movies.dat` (genres).
    Movielens,
    /// Id-only towers.
    None,
}

impl FromStr for FeatureSchema {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "movielens" => Ok(Self::Movielens),
            "none" => Ok(Self::None),
            other => Err(format!("unknown feature schema '{other}' (expected movielens or none)")),
        }
    }
}

impl std::fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Movielens => "movielens",
            Self::None => "none",
        })
    }
}

/// Age bucket codes used by MovieLens `users.dat`, in one-hot order.
pub const MOVIELENS_AGE_CODES: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];
const N_OCCUPATIONS: usize = 21;
const N_GENDERS: usize = 2;

/// MovieLens genre vocabulary, in multi-hot order.
pub const MOVIELENS_GENRES: [&str; 18] = [
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Iterates lines as lossily-decoded text; MovieLens ships Latin-1 titles.
fn for_each_line<R: BufRead>(
    mut reader: R,
    mut f: impl FnMut(usize, &str) -> Result<()>,
) -> std::io::Result<Result<()>> {
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(Ok(()));
        }
        line_no += 1;
        let text = String::from_utf8_lossy(&buf);
        let text = text.trim_end_matches(['\n', '\r']);
        if let Err(e) = f(line_no, text) {
            return Ok(Err(e));
        }
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        line,
        reason: reason.into(),
    }
}

pub fn parse_interactions(path: &Path, format: InteractionFormat) -> Result<InteractionDataset> {
    let reader = open(path)?;
    parse_interactions_from(reader, format).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Reads every row as a positive interaction, assigning dense ids in
/// first-occurrence order. Duplicate (user, item) rows are kept.
pub fn parse_interactions_from<R: BufRead>(reader: R, format: InteractionFormat) -> Result<InteractionDataset> {
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut rows = Vec::new();
    let outcome = for_each_line(reader, |line, text| {
        if text.trim().is_empty() {
            return Ok(());
        }
        let (user, item, ts) = match format {
            InteractionFormat::MovielensDat => {
                let fields: Vec<&str> = text.split("::").collect();
                if fields.len() != 4 {
                    return Err(malformed(line, format!("expected 4 '::'-separated fields, found {}", fields.len())));
                }
                fields[2]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| malformed(line, format!("bad rating '{}'", fields[2])))?;
                (fields[0], fields[1], fields[3])
            }
            InteractionFormat::Tsv => {
                if text.starts_with('#') {
                    return Ok(());
                }
                let fields: Vec<&str> = text.split('\t').collect();
                if fields.len() != 3 {
                    return Err(malformed(line, format!("expected 3 tab-separated fields, found {}", fields.len())));
                }
                (fields[0], fields[1], fields[2])
            }
        };
        let (user, item) = (user.trim(), item.trim());
        if user.is_empty() || item.is_empty() {
            return Err(malformed(line, "empty user or item id"));
        }
        let timestamp = ts
            .trim()
            .parse::<i64>()
            .map_err(|_| malformed(line, format!("bad timestamp '{}'", ts.trim())))?;
        rows.push(Interaction::positive(users.get_or_insert(user), items.get_or_insert(item), timestamp));
        Ok(())
    })
    .map_err(|source| DatasetError::Io {
        path: Default::default(),
        source,
    })?;
    outcome?;
    if rows.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(InteractionDataset::from_parts(rows, users, items))
}

/// Attaches side features. With [`FeatureSchema::Movielens`] users get a
/// 30-wide one-hot (gender ⊕ age bucket ⊕ occupation) and items an 18-wide
/// genre multi-hot. Rows for unknown raw ids are skipped; entities without
/// a row keep a zero vector. Either path may be omitted (ML-10M has no
/// `users.dat`).
pub fn parse_side_features(
    dataset: InteractionDataset,
    users_path: Option<&Path>,
    items_path: Option<&Path>,
    schema: FeatureSchema,
) -> Result<InteractionDataset> {
    let users = users_path.map(open).transpose()?;
    let items = items_path.map(open).transpose()?;
    parse_side_features_from(dataset, users, items, schema)
}

pub fn parse_side_features_from<U: BufRead, I: BufRead>(
    dataset: InteractionDataset,
    users: Option<U>,
    items: Option<I>,
    schema: FeatureSchema,
) -> Result<InteractionDataset> {
    if schema == FeatureSchema::None {
        return dataset.with_features(FeatureTable::empty(), FeatureTable::empty());
    }
    let io_err = |source| DatasetError::Io {
        path: Default::default(),
        source,
    };

    let user_dim = N_GENDERS + MOVIELENS_AGE_CODES.len() + N_OCCUPATIONS;
    let mut user_table = FeatureTable::zeros(dataset.n_users(), user_dim);
    if let Some(reader) = users {
        let mut skipped = 0usize;
        for_each_line(reader, |line, text| {
            if text.trim().is_empty() {
                return Ok(());
            }
            let fields: Vec<&str> = text.split("::").collect();
            if fields.len() < 4 {
                return Err(malformed(line, "expected UserID::Gender::Age::Occupation::Zip"));
            }
            let Some(dense) = dataset.user_ids().dense(fields[0].trim()) else {
                skipped += 1;
                return Ok(());
            };
            let gender = match fields[1].trim() {
                "F" => 0,
                "M" => 1,
                g => return Err(malformed(line, format!("unknown gender '{g}'"))),
            };
            let age_code: u32 = fields[2]
                .trim()
                .parse()
                .map_err(|_| malformed(line, format!("bad age '{}'", fields[2])))?;
            let age = MOVIELENS_AGE_CODES
                .iter()
                .position(|&c| c == age_code)
                .ok_or_else(|| malformed(line, format!("unknown age code {age_code}")))?;
            let occupation: usize = fields[3]
                .trim()
                .parse()
                .ok()
                .filter(|&o: &usize| o < N_OCCUPATIONS)
                .ok_or_else(|| malformed(line, format!("bad occupation '{}'", fields[3])))?;
            let row = user_table.row_mut(dense as usize);
            row.iter_mut().for_each(|v| *v = 0.0);
            row[gender] = 1.0;
            row[N_GENDERS + age] = 1.0;
            row[N_GENDERS + MOVIELENS_AGE_CODES.len() + occupation] = 1.0;
            Ok(())
        })
        .map_err(io_err)??;
        if skipped > 0 {
            warn!("skipped {skipped} user feature rows with unknown ids");
        }
    }

    let mut item_table = FeatureTable::zeros(dataset.n_items(), MOVIELENS_GENRES.len());
    if let Some(reader) = items {
        let mut skipped = 0usize;
        for_each_line(reader, |line, text| {
            if text.trim().is_empty() {
                return Ok(());
            }
            let fields: Vec<&str> = text.split("::").collect();
            if fields.len() < 3 {
                return Err(malformed(line, "expected MovieID::Title::Genres"));
            }
            let Some(dense) = dataset.item_ids().dense(fields[0].trim()) else {
                skipped += 1;
                return Ok(());
            };
            let row = item_table.row_mut(dense as usize);
            row.iter_mut().for_each(|v| *v = 0.0);
            // Genres that are not in the vocabulary ("IMAX", "(no genres listed)") are ignored.
            for genre in fields[fields.len() - 1].trim().split('|') {
                if let Some(g) = MOVIELENS_GENRES.iter().position(|&n| n == genre) {
                    row[g] = 1.0;
                }
            }
            Ok(())
        })
        .map_err(io_err)??;
        if skipped > 0 {
            warn!("skipped {skipped} item feature rows with unknown ids");
        }
    }

    dataset.with_features(user_table, item_table)
}
