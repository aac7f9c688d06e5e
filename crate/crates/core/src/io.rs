//! File formats.
//!
//! - Sequences: JSON Lines, one `{"user": .., "sets": [[ids..], ..]}` per user.
//! - Traces: JSON Lines, one `{"user": .., "site": .., "outputs": [ids..]}`.
//! - Statistics: a directory of three CSV tables (`q_single.csv`,
//!   `q_within.csv`, `q_across.csv`) plus a `dp_meta.json` sidecar recording
//!   the privacy parameters, noise scales, released user count, and seed.
//!
//! All writers emit bytes that depend only on their inputs, so a replayed
//! run produces identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{Provenance, StatisticsBundle};
use crate::tables::{sq_pair_at, tri_len, tri_pair_at};
use crate::taxonomy::{TopicSetSequence, Trace};
use crate::trainer::EpochRecord;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Write topic-set sequences as JSON Lines.
pub fn write_sequences(path: impl AsRef<Path>, sequences: &[TopicSetSequence]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for seq in sequences {
        serde_json::to_writer(&mut out, seq)
            .map_err(|e| Error::parse(path, format!("serialize: {e}")))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read topic-set sequences from JSON Lines.
pub fn read_sequences(path: impl AsRef<Path>) -> Result<Vec<TopicSetSequence>> {
    let path = path.as_ref();
    let mut sequences = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: TopicSetSequence = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        if seq.sets.is_empty() {
            return Err(Error::parse(
                path,
                format!("line {}: user {} has no sets", lineno + 1, seq.user),
            ));
        }
        for set in &seq.sets {
            if set.iter().any(|t| t.get() == 0) {
                return Err(Error::parse(
                    path,
                    format!("line {}: topic ids are 1-based", lineno + 1),
                ));
            }
        }
        sequences.push(seq);
    }
    Ok(sequences)
}

/// Write traces as JSON Lines.
pub fn write_traces(path: impl AsRef<Path>, traces: &[Trace]) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for t in traces {
        serde_json::to_writer(&mut out, t)
            .map_err(|e| Error::parse(path, format!("serialize: {e}")))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read traces from JSON Lines.
pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>> {
    let path = path.as_ref();
    let mut traces = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trace = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        traces.push(t);
    }
    Ok(traces)
}

/// Sidecar metadata of a statistics directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatsMeta {
    pub taxonomy_size: usize,
    pub k: usize,
    pub n_users: f64,
    pub provenance: Provenance,
}

pub const Q_SINGLE_FILE: &str = "q_single.csv";
pub const Q_WITHIN_FILE: &str = "q_within.csv";
pub const Q_ACROSS_FILE: &str = "q_across.csv";
pub const META_FILE: &str = "dp_meta.json";

/// Write a statistics bundle as the three CSV tables plus the sidecar.
pub fn write_statistics(dir: impl AsRef<Path>, bundle: &StatisticsBundle, n_users: f64) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = bundle.m;

    let path = dir.join(Q_SINGLE_FILE);
    let mut out = create(&path)?;
    out.write_all(b"topic,value\n").map_err(|e| Error::io(&path, e))?;
    for (i, v) in bundle.q_single.iter().enumerate() {
        writeln!(out, "{},{v}", i + 1).map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(Q_WITHIN_FILE);
    let mut out = create(&path)?;
    out.write_all(b"topic_a,topic_b,value\n")
        .map_err(|e| Error::io(&path, e))?;
    for (idx, v) in bundle.q_within.iter().enumerate() {
        let (a, b) = tri_pair_at(m, idx);
        writeln!(out, "{a},{b},{v}").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(Q_ACROSS_FILE);
    let mut out = create(&path)?;
    out.write_all(b"topic_week1,topic_week2,value\n")
        .map_err(|e| Error::io(&path, e))?;
    for (idx, v) in bundle.q_across.iter().enumerate() {
        let (a, b) = sq_pair_at(m, idx);
        writeln!(out, "{a},{b},{v}").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;

    let meta = StatsMeta {
        taxonomy_size: m,
        k: bundle.k,
        n_users,
        provenance: bundle.provenance.clone(),
    };
    let path = dir.join(META_FILE);
    let mut out = create(&path)?;
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::parse(&path, format!("serialize: {e}")))?;
    out.write_all(json.as_bytes()).map_err(|e| Error::io(&path, e))?;
    out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn parse_csv_rows(path: &Path, expect_cols: usize) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 0 || line.trim().is_empty() {
            continue; // header
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != expect_cols {
            return Err(Error::parse(
                path,
                format!("line {}: expected {expect_cols} fields", lineno + 1),
            ));
        }
        rows.push(fields);
    }
    Ok(rows)
}

/// Load a statistics directory back into a bundle plus its metadata.
pub fn load_statistics(dir: impl AsRef<Path>) -> Result<(StatisticsBundle, StatsMeta)> {
    let dir = dir.as_ref();
    refuse_population_input(dir)?;
    let meta_path = dir.join(META_FILE);
    let meta: StatsMeta = serde_json::from_reader(open(&meta_path)?)
        .map_err(|e| Error::parse(&meta_path, format!("{e}")))?;
    let m = meta.taxonomy_size;

    let single_rows = parse_csv_rows(&dir.join(Q_SINGLE_FILE), 2)?;
    if single_rows.len() != m {
        return Err(Error::parse(
            dir.join(Q_SINGLE_FILE),
            format!("expected {m} rows, found {}", single_rows.len()),
        ));
    }
    let mut q_single = vec![0.0f64; m];
    for row in single_rows {
        let topic: usize = row[0]
            .parse()
            .map_err(|_| Error::parse(dir.join(Q_SINGLE_FILE), format!("bad topic {:?}", row[0])))?;
        let value: f64 = row[1]
            .parse()
            .map_err(|_| Error::parse(dir.join(Q_SINGLE_FILE), format!("bad value {:?}", row[1])))?;
        if topic < 1 || topic > m {
            return Err(Error::parse(dir.join(Q_SINGLE_FILE), "topic out of range"));
        }
        q_single[topic - 1] = value;
    }

    let within_rows = parse_csv_rows(&dir.join(Q_WITHIN_FILE), 3)?;
    if within_rows.len() != tri_len(m) {
        return Err(Error::parse(
            dir.join(Q_WITHIN_FILE),
            format!("expected {} rows, found {}", tri_len(m), within_rows.len()),
        ));
    }
    let mut q_within = vec![0.0f64; tri_len(m)];
    for row in within_rows {
        let a: u16 = row[0].parse().map_err(|_| {
            Error::parse(dir.join(Q_WITHIN_FILE), format!("bad topic {:?}", row[0]))
        })?;
        let b: u16 = row[1].parse().map_err(|_| {
            Error::parse(dir.join(Q_WITHIN_FILE), format!("bad topic {:?}", row[1]))
        })?;
        let value: f64 = row[2].parse().map_err(|_| {
            Error::parse(dir.join(Q_WITHIN_FILE), format!("bad value {:?}", row[2]))
        })?;
        if a >= b || b as usize > m {
            return Err(Error::parse(
                dir.join(Q_WITHIN_FILE),
                "pairs must satisfy topic_a < topic_b within range",
            ));
        }
        q_within[crate::tables::tri_index(
            m,
            crate::taxonomy::TopicId::new(a),
            crate::taxonomy::TopicId::new(b),
        )] = value;
    }

    let across_rows = parse_csv_rows(&dir.join(Q_ACROSS_FILE), 3)?;
    if across_rows.len() != m * m {
        return Err(Error::parse(
            dir.join(Q_ACROSS_FILE),
            format!("expected {} rows, found {}", m * m, across_rows.len()),
        ));
    }
    let mut q_across = vec![0.0f64; m * m];
    for row in across_rows {
        let a: u16 = row[0].parse().map_err(|_| {
            Error::parse(dir.join(Q_ACROSS_FILE), format!("bad topic {:?}", row[0]))
        })?;
        let b: u16 = row[1].parse().map_err(|_| {
            Error::parse(dir.join(Q_ACROSS_FILE), format!("bad topic {:?}", row[1]))
        })?;
        let value: f64 = row[2].parse().map_err(|_| {
            Error::parse(dir.join(Q_ACROSS_FILE), format!("bad value {:?}", row[2]))
        })?;
        if a < 1 || a as usize > m || b < 1 || b as usize > m {
            return Err(Error::parse(dir.join(Q_ACROSS_FILE), "topic out of range"));
        }
        q_across[crate::tables::sq_index(
            m,
            crate::taxonomy::TopicId::new(a),
            crate::taxonomy::TopicId::new(b),
        )] = value;
    }

    let bundle = StatisticsBundle {
        m,
        k: meta.k,
        q_single,
        q_within,
        q_across,
        provenance: meta.provenance.clone(),
    };
    Ok((bundle, meta))
}

/// True when the file's first non-empty line parses as a topic-set-sequence
/// record: the raw population format.
pub fn looks_like_population_file(path: &Path) -> bool {
    let Ok(reader) = File::open(path).map(BufReader::new) else {
        return false;
    };
    for line in reader.lines().take(5) {
        let Ok(line) = line else { return false };
        if line.trim().is_empty() {
            continue;
        }
        return serde_json::from_str::<TopicSetSequence>(&line).is_ok();
    }
    false
}

/// Guard for the DP boundary: the model-fitting and sampling stages accept
/// statistics directories and model checkpoints only. Pointing them at a
/// raw population file is a hard error with its own exit code.
pub fn refuse_population_input(path: &Path) -> Result<()> {
    if path.is_file() && looks_like_population_file(path) {
        return Err(Error::DpBoundaryViolation(format!(
            "{} is a raw topic-set-sequence file",
            path.display()
        )));
    }
    if path.is_dir() && !path.join(META_FILE).exists() {
        // a directory without the sidecar that holds population JSONL files
        // is someone passing raw data by mistake
        if let Ok(entries) = std::fs::read_dir(path) {
            for entry in entries.flatten() {
                let p = entry.path();
                if p.extension().is_some_and(|e| e == "jsonl") && looks_like_population_file(&p) {
                    return Err(Error::DpBoundaryViolation(format!(
                        "{} contains raw topic-set-sequence files",
                        path.display()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Write the training log CSV. `include_seconds` is disabled in
/// deterministic mode so replayed runs stay byte-identical.
pub fn write_training_log(
    path: impl AsRef<Path>,
    records: &[EpochRecord],
    include_seconds: bool,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    out.write_all(b"epoch,loss,seconds\n")
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let secs = if include_seconds { r.seconds } else { 0.0 };
        writeln!(out, "{},{},{:.3}", r.epoch, r.loss, secs).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// SHA-256 digest of a file, hex-encoded.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    use sha2::{Digest, Sha256};
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Write simple rows of (label, value) CSV.
pub fn write_csv_rows(
    path: impl AsRef<Path>,
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(out, "{row}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Resolved output paths of a statistics directory.
pub fn stats_dir_files(dir: &Path) -> Vec<PathBuf> {
    vec![
        dir.join(Q_SINGLE_FILE),
        dir.join(Q_WITHIN_FILE),
        dir.join(Q_ACROSS_FILE),
        dir.join(META_FILE),
    ]
}
