use std::collections::HashMap;

use dolphin_core::datapipe::{
    bucket, check_record, list_shards, read_manifest, read_shards, validate, write_manifest, write_shards, AudioInfo,
    ManifestRecord, RejectReason, ShardReader, ShardWriter, Truncation, DEFAULT_MAX_DURATION_S,
};
use proptest::prelude::*;

fn record(i: usize, duration_s: f64) -> ManifestRecord {
    ManifestRecord {
        id: format!("utt{i:06}"),
        audio_path: format!("audio/{i}.wav"),
        duration_s,
        text: format!("文本 {i}"),
        dialect: ["MANDARIN", "SICHUAN", "CANTONESE"][i % 3].to_owned(),
        dataset: format!("set{}", i % 5),
        audio: None,
    }
}

#[test]
fn sixty_six_seconds_rejected_at_default_cap() {
    assert_eq!(check_record(&record(0, 66.0), DEFAULT_MAX_DURATION_S), Some(RejectReason::TooLong));
    assert_eq!(check_record(&record(0, 30.0), DEFAULT_MAX_DURATION_S), None);
    assert_eq!(check_record(&record(0, 66.0), 66.0), None);
}

#[test]
fn hundred_thousand_records_survive_sharding() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<ManifestRecord> = (0..100_000).map(|i| record(i, 1.0 + (i % 29) as f64)).collect();
    let shards = write_shards(&records, 4096, dir.path()).unwrap();
    assert_eq!(shards.iter().map(|s| s.record_count).sum::<u64>(), 100_000);
    let paths = list_shards(dir.path()).unwrap();
    assert_eq!(paths.len(), shards.len());

    let mut want: HashMap<String, usize> = HashMap::new();
    for r in &records {
        *want.entry(serde_json::to_string(r).unwrap()).or_default() += 1;
    }
    let mut got: HashMap<String, usize> = HashMap::new();
    for u in read_shards(&paths, 4) {
        *got.entry(serde_json::to_string(&u.unwrap().record).unwrap()).or_default() += 1;
    }
    assert_eq!(got, want);
}

#[test]
fn audio_blobs_round_trip() {
    let mut buf = Vec::new();
    let mut w = ShardWriter::new(&mut buf).unwrap();
    let mut rec = record(1, 0.5);
    rec.audio = Some(AudioInfo { sample_rate: 16_000, num_samples: 4 });
    w.push(&rec, Some(&[1, -2, i16::MAX, i16::MIN])).unwrap();
    w.push(&record(2, 1.0), None).unwrap();
    w.finish().unwrap();
    let items: Vec<_> = ShardReader::new(buf.as_slice(), "mem").unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(items[0].samples.as_deref(), Some(&[1, -2, i16::MAX, i16::MIN][..]));
    assert_eq!(items[1].samples, None);
    assert_eq!(items[1].record, record(2, 1.0));
}

#[test]
fn truncated_shard_is_reported() {
    let mut buf = Vec::new();
    let mut w = ShardWriter::new(&mut buf).unwrap();
    w.push(&record(1, 1.0), None).unwrap();
    w.finish().unwrap();
    buf.truncate(buf.len() - 3);
    let items: Vec<_> = ShardReader::new(buf.as_slice(), "mem").unwrap().collect();
    assert_eq!(items.len(), 1);
    assert!(items[0].is_err());
}

#[test]
fn manifest_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    let records: Vec<_> = (0..50).map(|i| record(i, 2.5)).collect();
    write_manifest(&path, &records).unwrap();
    assert_eq!(read_manifest(&path).unwrap(), records);
}

proptest! {
    #[test]
    fn validation_partitions_input(durations in prop::collection::vec(-1.0f64..80.0, 0..50)) {
        let recs: Vec<_> = durations.iter().enumerate().map(|(i, &d)| record(i, d)).collect();
        let v = validate(recs.clone(), DEFAULT_MAX_DURATION_S);
        prop_assert_eq!(v.accepted.len() + v.rejected.len(), recs.len());
        prop_assert!(v.accepted.iter().all(|r| r.duration_s > 0.0 && r.duration_s <= DEFAULT_MAX_DURATION_S));
    }

    #[test]
    fn truncation_never_lengthens(d in 0.1f64..30.0, p in 0.0f64..=1.0, frac in 0.0f64..1.0, seed: u64) {
        let t = Truncation::new(p, frac).unwrap();
        let out = t.truncated_duration(d, seed);
        prop_assert!(out <= d && out >= d * (1.0 - frac) - 1e-12);
        prop_assert_eq!(out, t.truncated_duration(d, seed));
    }

    #[test]
    fn buckets_are_duration_ordered(durations in prop::collection::vec(0.1f64..30.0, 1..60), n in 1usize..6) {
        let recs: Vec<_> = durations.iter().enumerate().map(|(i, &d)| record(i, d)).collect();
        let b = bucket(&recs, n);
        prop_assert!(b.iter().all(|&x| x < n));
        for i in 0..recs.len() {
            for j in 0..recs.len() {
                if recs[i].duration_s < recs[j].duration_s {
                    prop_assert!(b[i] <= b[j]);
                }
            }
        }
    }
}
