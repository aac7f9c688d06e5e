//! Topic taxonomy and the core trace types.

use std::fmt;
use std::path::Path;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedHasher, SeededRng};

/// A topic id: a dense 1-based integer in `[1, taxonomy size]`.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TopicId(u16);

impl TopicId {
    pub fn new(id: u16) -> Self {
        TopicId(id)
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// Zero-based index into per-topic arrays.
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The topic taxonomy: a size and optional display names.
///
/// Ids are the consecutive integers `1..=size`. The full-scale interest
/// taxonomy has 469 topics; tests and desk-scale runs use smaller ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub size: usize,
    pub names: Option<Vec<String>>,
}

/// Default full-scale taxonomy size (v2 interest taxonomy).
pub const FULL_TAXONOMY_SIZE: usize = 469;

impl Taxonomy {
    pub fn of_size(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Taxonomy(format!(
                "taxonomy size must be at least 2, got {size}"
            )));
        }
        if size > u16::MAX as usize {
            return Err(Error::Taxonomy(format!(
                "taxonomy size {size} exceeds supported maximum {}",
                u16::MAX
            )));
        }
        Ok(Taxonomy { size, names: None })
    }

    pub fn contains(&self, topic: TopicId) -> bool {
        topic.get() >= 1 && (topic.get() as usize) <= self.size
    }

    pub fn name(&self, topic: TopicId) -> Option<&str> {
        self.names
            .as_ref()
            .and_then(|n| n.get(topic.index()))
            .map(String::as_str)
    }

    pub fn topics(&self) -> impl Iterator<Item = TopicId> {
        (1..=self.size as u16).map(TopicId::new)
    }
}

/// Load a taxonomy from a text file.
///
/// Accepted forms: one line per topic (`id<TAB>name` or a bare id), with ids
/// forming the dense range `1..=n` in any order, or a single line holding the
/// taxonomy size.
pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(Error::parse(path, "empty taxonomy file"));
    }

    // bare-size form: a single integer line
    if lines.len() == 1 && !lines[0].contains('\t') {
        let size: usize = lines[0]
            .parse()
            .map_err(|_| Error::parse(path, format!("not an integer: {:?}", lines[0])))?;
        return Taxonomy::of_size(size);
    }

    let mut entries: Vec<(usize, Option<String>)> = Vec::with_capacity(lines.len());
    for line in &lines {
        let (id_part, name) = match line.split_once('\t') {
            Some((id, name)) => (id, Some(name.trim().to_string())),
            None => (*line, None),
        };
        let id: usize = id_part
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, format!("bad topic id: {id_part:?}")))?;
        entries.push((id, name));
    }

    let size = entries.len();
    let mut seen = vec![false; size + 1];
    for (id, _) in &entries {
        if *id < 1 || *id > size {
            return Err(Error::Taxonomy(format!(
                "ids must be dense 1..={size}, found {id}"
            )));
        }
        if seen[*id] {
            return Err(Error::Taxonomy(format!("duplicate topic id {id}")));
        }
        seen[*id] = true;
    }

    let taxonomy = Taxonomy::of_size(size)?;
    let has_names = entries.iter().any(|(_, n)| n.is_some());
    if !has_names {
        return Ok(taxonomy);
    }
    let mut names = vec![String::new(); size];
    for (id, name) in entries {
        names[id - 1] = name.unwrap_or_default();
    }
    Ok(Taxonomy {
        names: Some(names),
        ..taxonomy
    })
}

/// A week's top-topic set. Stored sorted and duplicate-free.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicSet {
    topics: Vec<TopicId>,
}

impl TopicSet {
    pub fn empty() -> Self {
        TopicSet { topics: Vec::new() }
    }

    /// Build from any list of ids; sorts and removes duplicates.
    pub fn from_ids(ids: impl IntoIterator<Item = u16>) -> Self {
        let mut topics: Vec<TopicId> = ids.into_iter().map(TopicId::new).collect();
        topics.sort_unstable();
        topics.dedup();
        TopicSet { topics }
    }

    pub fn from_topics(mut topics: Vec<TopicId>) -> Self {
        topics.sort_unstable();
        topics.dedup();
        TopicSet { topics }
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn contains(&self, topic: TopicId) -> bool {
        self.topics.binary_search(&topic).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = TopicId> + '_ {
        self.topics.iter().copied()
    }

    pub fn as_slice(&self) -> &[TopicId] {
        &self.topics
    }
}

/// Pad a set up to exactly `k` topics with uniform draws (without
/// replacement) from the taxonomy topics not already present.
pub fn pad_topic_set(
    partial: &TopicSet,
    k: usize,
    taxonomy: &Taxonomy,
    rng: &mut SeededRng,
) -> Result<TopicSet> {
    if partial.len() > k {
        return Err(Error::InvalidArgument(format!(
            "set has {} topics, more than k = {k}",
            partial.len()
        )));
    }
    if k > taxonomy.size {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds taxonomy size {}",
            taxonomy.size
        )));
    }
    if partial.len() == k {
        return Ok(partial.clone());
    }

    // Uniform without replacement from the complement, by rejection; the
    // complement is large relative to k in every realistic configuration.
    let mut topics: Vec<TopicId> = partial.iter().collect();
    while topics.len() < k {
        let candidate = TopicId::new(rng.random_range(1..=taxonomy.size as u16));
        if !topics.contains(&candidate) {
            topics.push(candidate);
        }
    }
    Ok(TopicSet::from_topics(topics))
}

/// One user's weekly top-topic sets, `S_0..S_{r-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSetSequence {
    pub user: String,
    pub sets: Vec<TopicSet>,
}

impl TopicSetSequence {
    pub fn weeks(&self) -> usize {
        self.sets.len()
    }
}

/// The trace a single site observes for one user: one topic per week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub user: String,
    pub site: String,
    pub outputs: Vec<TopicId>,
}

impl Trace {
    pub fn weeks(&self) -> usize {
        self.outputs.len()
    }
}

/// Deterministic seed for one API call, from the site, week, and user that
/// identify it. Any two distinct triples map to distinct seeds up to hash
/// collisions.
pub fn derive_call_seed(site: &str, week: u32, user: &str) -> u64 {
    SeedHasher::new()
        .write_str(site)
        .write_u64(u64::from(week))
        .write_str(user)
        .finish()
}
