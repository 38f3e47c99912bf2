use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, DataError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    /// Ratings in `[1, 5]`.
    Explicit,
    /// Binary interactions in `{0, 1}`.
    Implicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// MovieLens `u.data`: `user \t item \t rating \t timestamp`, 1-based ids.
    Ml100kUdata,
    /// Header `user_id,item_id,rating,timestamp`; timestamp column optional.
    GenericCsv,
}

impl FromStr for DataFormat {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ml100k_udata" => Ok(DataFormat::Ml100kUdata),
            "generic_csv" => Ok(DataFormat::GenericCsv),
            other => Err(ConfigError::invalid("data.format", format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
    pub timestamp: Option<i64>,
}

/// Sparse observations of a user × item matrix with dense 0-based indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub ratings: Vec<Rating>,
    pub feedback: Feedback,
    /// Raw id for each dense user index.
    pub user_ids: Vec<String>,
    /// Raw id for each dense item index.
    pub item_ids: Vec<String>,
}

impl RatingDataset {
    pub fn empty(feedback: Feedback) -> Self {
        RatingDataset { num_users: 0, num_items: 0, ratings: Vec::new(), feedback, user_ids: Vec::new(), item_ids: Vec::new() }
    }

    /// Builds a dataset from dense triples; raw ids are the decimal indices.
    pub fn from_triples(num_users: usize, num_items: usize, ratings: Vec<Rating>, feedback: Feedback) -> Result<Self, DataError> {
        let ds = RatingDataset {
            num_users,
            num_items,
            ratings,
            feedback,
            user_ids: (0..num_users).map(|u| u.to_string()).collect(),
            item_ids: (0..num_items).map(|i| i.to_string()).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// Checks index bounds, value ranges and pair uniqueness.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::with_capacity(self.ratings.len());
        for (k, r) in self.ratings.iter().enumerate() {
            if r.user >= self.num_users || r.item >= self.num_items {
                return Err(DataError::Invalid(format!("rating {k}: index ({}, {}) out of range", r.user, r.item)));
            }
            let ok = match self.feedback {
                Feedback::Explicit => (1.0..=5.0).contains(&r.value),
                Feedback::Implicit => r.value == 0.0 || r.value == 1.0,
            };
            if !ok {
                return Err(DataError::Invalid(format!("rating {k}: value {} invalid for {:?} feedback", r.value, self.feedback)));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(DataError::Invalid(format!("duplicate pair ({}, {})", r.user, r.item)));
            }
        }
        Ok(())
    }

    pub fn mean_value(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        indices.iter().map(|&k| self.ratings[k].value).sum::<f64>() / indices.len() as f64
    }

    /// Rating indices grouped by user, each list in ascending order.
    pub fn by_user(&self, indices: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &k in indices {
            out[self.ratings[k].user].push(k);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.user_ids.iter().position(|u| u == raw)
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == raw)
    }
}

/// Loads an explicit-feedback rating file.
pub fn load_movielens(path: impl AsRef<Path>, format: DataFormat) -> Result<RatingDataset, DataError> {
    load_ratings(path, format, Feedback::Explicit)
}

pub fn load_ratings(path: impl AsRef<Path>, format: DataFormat, feedback: Feedback) -> Result<RatingDataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
    let reader = BufReader::new(file);
    let mut raw: Vec<RawRow> = Vec::new();
    let mut header_seen = false;
    let mut has_timestamp = true;
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |message: String| DataError::Parse { path: path.to_path_buf(), line: line_no, message };
        let fields: Vec<&str> = match format {
            DataFormat::Ml100kUdata => trimmed.split('\t').collect(),
            DataFormat::GenericCsv => {
                if !header_seen {
                    header_seen = true;
                    let cols: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                    match cols.as_slice() {
                        ["user_id", "item_id", "rating", "timestamp"] => has_timestamp = true,
                        ["user_id", "item_id", "rating"] => has_timestamp = false,
                        _ => return Err(parse_err(format!("expected header `user_id,item_id,rating,timestamp`, got `{trimmed}`"))),
                    }
                    continue;
                }
                trimmed.split(',').map(str::trim).collect()
            }
        };
        let expected = match format {
            DataFormat::Ml100kUdata => 4,
            DataFormat::GenericCsv if has_timestamp => 4,
            DataFormat::GenericCsv => 3,
        };
        if fields.len() != expected && !(format == DataFormat::GenericCsv && has_timestamp && fields.len() == 3) {
            return Err(parse_err(format!("expected {expected} fields, found {}", fields.len())));
        }
        let value: f64 = fields[2].parse().map_err(|_| parse_err(format!("bad rating `{}`", fields[2])))?;
        if !value.is_finite() {
            return Err(parse_err(format!("bad rating `{}`", fields[2])));
        }
        let timestamp = match fields.get(3) {
            Some(t) if !t.is_empty() => Some(t.parse::<i64>().map_err(|_| parse_err(format!("bad timestamp `{t}`")))?),
            _ => None,
        };
        if format == DataFormat::Ml100kUdata {
            for (name, f) in [("user", fields[0]), ("item", fields[1])] {
                let id: i64 = f.parse().map_err(|_| parse_err(format!("bad {name} id `{f}`")))?;
                if id < 1 {
                    return Err(parse_err(format!("{name} id `{f}` is not 1-based")));
                }
            }
        }
        match feedback {
            Feedback::Explicit if !(1.0..=5.0).contains(&value) => {
                return Err(DataError::RatingOutOfRange { path: path.to_path_buf(), line: line_no, value });
            }
            Feedback::Implicit if value != 0.0 && value != 1.0 => {
                return Err(parse_err(format!("implicit value {value} not in {{0, 1}}")));
            }
            _ => {}
        }
        raw.push(RawRow { user: fields[0].to_string(), item: fields[1].to_string(), value, timestamp });
    }
    Ok(build_dataset(raw, feedback))
}

struct RawRow {
    user: String,
    item: String,
    value: f64,
    timestamp: Option<i64>,
}

/// Ids that all parse as integers sort numerically, otherwise lexically.
fn dense_ids<'a>(ids: impl Iterator<Item = &'a str>) -> (Vec<String>, HashMap<String, usize>) {
    let mut uniq: Vec<String> = ids.map(str::to_string).collect();
    uniq.sort();
    uniq.dedup();
    if uniq.iter().all(|s| s.parse::<i64>().is_ok()) {
        uniq.sort_by_key(|s| s.parse::<i64>().unwrap());
    }
    let map = uniq.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    (uniq, map)
}

fn build_dataset(raw: Vec<RawRow>, feedback: Feedback) -> RatingDataset {
    let (user_ids, user_map) = dense_ids(raw.iter().map(|r| r.user.as_str()));
    let (item_ids, item_map) = dense_ids(raw.iter().map(|r| r.item.as_str()));
    let mut ratings: Vec<Rating> = Vec::with_capacity(raw.len());
    let mut slot: HashMap<(usize, usize), usize> = HashMap::with_capacity(raw.len());
    for r in raw {
        let rating = Rating { user: user_map[&r.user], item: item_map[&r.item], value: r.value, timestamp: r.timestamp };
        match slot.get(&(rating.user, rating.item)) {
            // Duplicate pair: the later timestamp wins; equal timestamps keep the later line.
            Some(&k) => {
                if rating.timestamp >= ratings[k].timestamp {
                    ratings[k] = rating;
                }
            }
            None => {
                slot.insert((rating.user, rating.item), ratings.len());
                ratings.push(rating);
            }
        }
    }
    RatingDataset { num_users: user_ids.len(), num_items: item_ids.len(), ratings, feedback, user_ids, item_ids }
}
