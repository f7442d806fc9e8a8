//! Manifest ingestion, validation, augmentation, bucketing and sharding.

mod shard;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

pub use shard::{
    bench_read, encode_record, list_shards, read_shard, read_shards, write_bucketed_shards,
    write_shards, write_utterance_shards, ReadStats, RecordStream, Shard, ShardReader, ShardWriter,
    SHARD_EXTENSION, SHARD_INDEX, SHARD_MAGIC, SHARD_VERSION,
};

pub const DEFAULT_MAX_DURATION_S: f64 = 30.0;

#[derive(Debug, Error)]
pub enum PipeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Manifest {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("{path}: corrupt record at byte {offset}: {reason}")]
    CorruptRecord {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("{0}: not a shard file")]
    BadMagic(PathBuf),
    #[error("{path}: unsupported shard version {version}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("invalid truncation parameters: p={p}, max_fraction={max_fraction}")]
    InvalidFraction { p: f64, max_fraction: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl PipeError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| PipeError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, PipeError>;

/// Raw audio attached to a record; the payload travels as a separate blob.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioInfo {
    pub sample_rate: u32,
    pub num_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub audio_path: String,
    pub duration_s: f64,
    pub text: String,
    #[serde(default)]
    pub dialect: String,
    #[serde(default)]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioInfo>,
}

/// A record plus its optional 16-bit PCM payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub record: ManifestRecord,
    pub samples: Option<Vec<i16>>,
}

impl From<ManifestRecord> for Utterance {
    fn from(record: ManifestRecord) -> Self {
        Self { record, samples: None }
    }
}

/// Reads a JSON Lines manifest. Blank lines are skipped; ids must be unique.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(PipeError::io(path))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(PipeError::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|source| PipeError::Manifest {
            path: path.to_owned(),
            line: n + 1,
            source,
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(PipeError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(PipeError::io(path))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| PipeError::io(path)(e.into()))?;
        w.write_all(b"\n").map_err(PipeError::io(path))?;
    }
    w.flush().map_err(PipeError::io(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    TooLong,
    EmptyAudio,
    EmptyText,
    InvalidDuration,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Validated {
    pub accepted: Vec<ManifestRecord>,
    pub rejected: Vec<(ManifestRecord, RejectReason)>,
}

pub fn check_record(rec: &ManifestRecord, max_duration_s: f64) -> Option<RejectReason> {
    let d = rec.duration_s;
    if d.is_nan() || (d.is_infinite() && d > 0.0) {
        Some(RejectReason::InvalidDuration)
    } else if d <= 0.0 {
        Some(RejectReason::EmptyAudio)
    } else if d > max_duration_s {
        Some(RejectReason::TooLong)
    } else if rec.text.trim().is_empty() {
        Some(RejectReason::EmptyText)
    } else {
        None
    }
}

/// Splits records into accepted and rejected; accepted records are untouched.
pub fn validate<I>(records: I, max_duration_s: f64) -> Validated
where
    I: IntoIterator<Item = ManifestRecord>,
{
    let mut out = Validated::default();
    for rec in records {
        match check_record(&rec, max_duration_s) {
            None => out.accepted.push(rec),
            Some(reason) => out.rejected.push((rec, reason)),
        }
    }
    out
}

/// End-of-utterance random truncation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    /// Probability that a record is truncated at all.
    pub p: f64,
    /// Upper bound of the removed fraction, in `(0, 1]`.
    pub max_fraction: f64,
}

impl Truncation {
    pub fn new(p: f64, max_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !(max_fraction > 0.0 && max_fraction <= 1.0) {
            return Err(PipeError::InvalidFraction { p, max_fraction });
        }
        Ok(Self { p, max_fraction })
    }

    /// New duration for a record of `duration_s`, deterministic in `seed`.
    /// Always in `(0, duration_s]`.
    pub fn truncated_duration(&self, duration_s: f64, seed: u64) -> f64 {
        let mut rng = SeededRng::new(seed);
        if rng.unit() >= self.p {
            return duration_s;
        }
        let cut = self.max_fraction * duration_s * rng.open_unit();
        let d = duration_s - cut;
        if d > 0.0 {
            d
        } else {
            duration_s * f64::EPSILON
        }
    }
}

/// Applies [`Truncation`] to one record; attached audio metadata follows
/// as `round(duration * rate)` samples.
pub fn truncate_augment(rec: &ManifestRecord, cfg: Truncation, seed: u64) -> ManifestRecord {
    let mut out = rec.clone();
    let d = cfg.truncated_duration(rec.duration_s, seed);
    if d != rec.duration_s {
        out.duration_s = d;
        if let Some(audio) = out.audio.as_mut() {
            let n = (d * audio.sample_rate as f64).round() as u64;
            audio.num_samples = n.min(audio.num_samples);
        }
    }
    out
}

/// [`truncate_augment`] that also cuts the attached PCM payload.
pub fn truncate_utterance(utt: &Utterance, cfg: Truncation, seed: u64) -> Utterance {
    let record = truncate_augment(&utt.record, cfg, seed);
    let samples = utt.samples.as_ref().map(|s| match record.audio {
        Some(a) => s[..(a.num_samples as usize).min(s.len())].to_vec(),
        None => s.clone(),
    });
    Utterance { record, samples }
}

/// Truncates every record, each with its own derived seed.
pub fn augment_all(records: &[ManifestRecord], cfg: Truncation, seed: u64) -> Vec<ManifestRecord> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = SeededRng::derived(seed, i as u64).next_u64();
            truncate_augment(r, cfg, s)
        })
        .collect()
}

/// Appends duplicates of records shorter than `threshold_s` until they make
/// up at least `target_fraction` of the output. Duplicated ids get a
/// `#os<k>` suffix.
pub fn oversample_short(
    records: &[ManifestRecord],
    threshold_s: f64,
    target_fraction: f64,
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    if !(0.0..1.0).contains(&target_fraction) {
        return Err(PipeError::InvalidParameter(format!(
            "target fraction {target_fraction} outside [0, 1)"
        )));
    }
    let short: Vec<&ManifestRecord> = records.iter().filter(|r| r.duration_s < threshold_s).collect();
    let mut out = records.to_vec();
    let (n, s) = (records.len() as f64, short.len() as f64);
    if short.is_empty() || s >= target_fraction * n {
        return Ok(out);
    }
    let extra = ((target_fraction * n - s) / (1.0 - target_fraction)).ceil() as usize;
    let mut rng = SeededRng::new(seed);
    for k in 0..extra {
        let mut dup = short[rng.below(short.len() as u64) as usize].clone();
        dup.id = format!("{}#os{k}", dup.id);
        out.push(dup);
    }
    Ok(out)
}

/// Assigns records to `n_buckets` contiguous duration-quantile buckets.
///
/// Records are ranked by `(duration, original position)`; rank `r` of `N`
/// goes to bucket `r * n_buckets / N`, so populations differ by at most one.
pub fn bucket(records: &[ManifestRecord], n_buckets: usize) -> Vec<usize> {
    let n_buckets = n_buckets.max(1);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .duration_s
            .total_cmp(&records[b].duration_s)
            .then(a.cmp(&b))
    });
    let mut assignment = vec![0; records.len()];
    let n = records.len();
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = rank * n_buckets / n;
    }
    assignment
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestStats {
    pub records: usize,
    pub total_duration_s: f64,
    pub per_dialect: BTreeMap<String, usize>,
    pub per_dataset: BTreeMap<String, usize>,
    pub duration_histogram: Vec<HistogramBin>,
}

/// Per-dialect/per-dataset counts and a fixed-width duration histogram.
pub fn stats(records: &[ManifestRecord], bin_width_s: f64) -> ManifestStats {
    let bin_width_s = if bin_width_s > 0.0 { bin_width_s } else { 1.0 };
    let mut per_dialect = BTreeMap::new();
    let mut per_dataset = BTreeMap::new();
    let mut bins: BTreeMap<u64, usize> = BTreeMap::new();
    let mut total = 0.0;
    for r in records {
        *per_dialect.entry(r.dialect.clone()).or_insert(0) += 1;
        *per_dataset.entry(r.dataset.clone()).or_insert(0) += 1;
        if r.duration_s.is_finite() && r.duration_s >= 0.0 {
            total += r.duration_s;
            *bins.entry((r.duration_s / bin_width_s).floor() as u64).or_insert(0) += 1;
        }
    }
    let duration_histogram = match (bins.keys().next(), bins.keys().last()) {
        (Some(&first), Some(&last)) => (first..=last)
            .map(|k| HistogramBin {
                lo: k as f64 * bin_width_s,
                hi: (k + 1) as f64 * bin_width_s,
                count: bins.get(&k).copied().unwrap_or(0),
            })
            .collect(),
        _ => Vec::new(),
    };
    ManifestStats {
        records: records.len(),
        total_duration_s: total,
        per_dialect,
        per_dataset,
        duration_histogram,
    }
}

#[cfg(test)]
pub(crate) fn test_record(id: &str, duration_s: f64) -> ManifestRecord {
    ManifestRecord {
        id: id.to_owned(),
        audio_path: format!("/audio/{id}.wav"),
        duration_s,
        text: "你好".to_owned(),
        dialect: "SICHUAN".to_owned(),
        dataset: "d0".to_owned(),
        audio: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_reasons() {
        let mut empty_text = test_record("c", 3.0);
        empty_text.text = "  ".into();
        let recs = vec![
            test_record("a", 66.0),
            test_record("b", 0.0),
            empty_text,
            test_record("d", 30.0),
            test_record("e", f64::NAN),
            test_record("f", -1.0),
        ];
        let v = validate(recs, DEFAULT_MAX_DURATION_S);
        let reasons: Vec<_> = v.rejected.iter().map(|(r, why)| (r.id.as_str(), *why)).collect();
        assert_eq!(
            reasons,
            vec![
                ("a", RejectReason::TooLong),
                ("b", RejectReason::EmptyAudio),
                ("c", RejectReason::EmptyText),
                ("e", RejectReason::InvalidDuration),
                ("f", RejectReason::EmptyAudio),
            ]
        );
        assert_eq!(v.accepted, vec![test_record("d", 30.0)]);
    }

    #[test]
    fn all_short_accepted() {
        let recs: Vec<_> = (0..10).map(|i| test_record(&i.to_string(), 1.0 + i as f64)).collect();
        let v = validate(recs.clone(), 30.0);
        assert_eq!(v.accepted, recs);
        assert!(v.rejected.is_empty());
    }

    #[test]
    fn truncation_bounds() {
        let t = Truncation::new(1.0, 0.5).unwrap();
        for seed in 0..10_000 {
            let d = t.truncated_duration(10.0, seed);
            assert!((5.0..10.0).contains(&d), "{d}");
            assert_eq!(d, t.truncated_duration(10.0, seed));
        }
        let full = Truncation::new(1.0, 1.0).unwrap();
        for seed in 0..10_000 {
            let d = full.truncated_duration(10.0, seed);
            assert!(d > 0.0 && d < 10.0);
        }
        let never = Truncation::new(0.0, 0.5).unwrap();
        let rec = test_record("x", 7.5);
        assert_eq!(truncate_augment(&rec, never, 3), rec);
    }

    #[test]
    fn truncation_rejects_bad_params() {
        assert!(Truncation::new(0.5, 0.0).is_err());
        assert!(Truncation::new(0.5, 1.5).is_err());
        assert!(Truncation::new(-0.1, 0.5).is_err());
        assert!(Truncation::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn truncation_cuts_samples() {
        let mut rec = test_record("x", 2.0);
        rec.audio = Some(AudioInfo { sample_rate: 100, num_samples: 200 });
        let utt = Utterance { record: rec, samples: Some((0..200).collect()) };
        let t = Truncation::new(1.0, 0.5).unwrap();
        let out = truncate_utterance(&utt, t, 5);
        let a = out.record.audio.unwrap();
        assert_eq!(a.num_samples, (out.record.duration_s * 100.0).round() as u64);
        assert_eq!(out.samples.unwrap().len() as u64, a.num_samples);
    }

    #[test]
    fn bucket_quantiles() {
        let recs: Vec<_> = (1..=8).map(|i| test_record(&i.to_string(), i as f64)).collect();
        assert_eq!(bucket(&recs, 2), vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(bucket(&recs, 1), vec![0; 8]);
        let mut shuffled = recs.clone();
        shuffled.reverse();
        assert_eq!(bucket(&shuffled, 2), vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let equal: Vec<_> = (0..6).map(|i| test_record(&i.to_string(), 2.0)).collect();
        assert_eq!(bucket(&equal, 3), vec![0, 0, 1, 1, 2, 2]);
        assert!(bucket(&[], 3).is_empty());
    }

    #[test]
    fn oversampling_reaches_target() {
        let mut recs: Vec<_> = (0..9).map(|i| test_record(&i.to_string(), 10.0)).collect();
        recs.push(test_record("s", 1.0));
        let out = oversample_short(&recs, 2.0, 0.5, 1).unwrap();
        let short = out.iter().filter(|r| r.duration_s < 2.0).count();
        assert!(short as f64 / out.len() as f64 >= 0.5);
        assert_eq!(out.len(), 18);
        assert!(out[10].id.starts_with("s#os"));
        assert!(oversample_short(&recs, 2.0, 1.0, 1).is_err());
    }

    #[test]
    fn stats_histogram() {
        let recs = vec![test_record("a", 1.0), test_record("b", 11.0), test_record("c", 2.0)];
        let s = stats(&recs, 5.0);
        assert_eq!(s.records, 3);
        assert_eq!(s.per_dialect["SICHUAN"], 3);
        let counts: Vec<_> = s.duration_histogram.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 0, 1]);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let recs = vec![test_record("a", 1.0), test_record("b", 2.5)];
        write_manifest(&path, &recs).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), recs);
        write_manifest(&path, &[test_record("a", 1.0), test_record("a", 2.0)]).unwrap();
        assert!(matches!(read_manifest(&path), Err(PipeError::DuplicateId(_))));
    }
}
