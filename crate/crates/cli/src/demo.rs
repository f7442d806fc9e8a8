//! Deterministic end-to-end run: synthetic manifest, validation,
//! augmentation, sampling, sharding, tokenizer, planted posteriorgrams,
//! hotword filtering, biased decoding, rescoring and scoring.
//!
//! Every random choice is derived from the global seed; per-utterance work
//! runs in parallel but is collected in input order, so output does not
//! depend on the thread count.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use dolphin_core::biasing::{inference_prompt, two_stage_filter, FilterConfig, HotwordList, Posteriorgram};
use dolphin_core::datapipe::{self, ManifestRecord, ShardReader, ShardWriter, Truncation};
use dolphin_core::decoder::{attention_rescore, build_context_trie, ctc_prefix_beam_search, BigramPromptScorer, ContextTrie};
use dolphin_core::metrics::{evaluate_corpus, rer, tag_biased, EvalReport, EvalUnits};
use dolphin_core::rng::SeededRng;
use dolphin_core::sampler::{draw_stream, sampling_probabilities, DatasetSize, SamplingSpec};
use dolphin_core::tokenizer::TokenKind;
use dolphin_core::{TokenId, TokenizerConfig, TokenizerModel};
use rayon::prelude::*;
use serde_json::json;

use crate::{emit, Ctx};

const HOTWORDS: &[&str] = &["北京", "上海", "长江大桥", "西湖", "成都", "广州塔", "黄山", "洱海"];
const TEMPLATES: &[&str] = &[
    "我们明天去{}看看",
    "{}今天的天气很好",
    "他在{}工作了三年",
    "请把{}的资料发给我",
    "听说{}下雨了",
    "用 python 整理{}的 report",
];
const DATASETS: &[(&str, &str, usize)] = &[("corpus_a", "MANDARIN", 90), ("corpus_b", "SICHUAN", 30), ("corpus_c", "CANTONESE", 12)];

fn synth_manifest(seed: u64) -> Vec<ManifestRecord> {
    let mut rng = SeededRng::derived(seed, 0);
    let mut out = Vec::new();
    for &(dataset, dialect, n) in DATASETS {
        for i in 0..n {
            let template = TEMPLATES[rng.below(TEMPLATES.len() as u64) as usize];
            let hotword = HOTWORDS[rng.below(HOTWORDS.len() as u64) as usize];
            // A few over-long records exercise validation.
            let duration_s = match i {
                7 => 66.0,
                19 => 41.5,
                _ => 1.0 + (24.0 * rng.unit() * 100.0).round() / 100.0,
            };
            out.push(ManifestRecord {
                id: format!("{dataset}-{i:04}"),
                audio_path: format!("synthetic/{dataset}/{i:04}.wav"),
                duration_s,
                text: template.replace("{}", hotword),
                dialect: dialect.to_owned(),
                dataset: dataset.to_owned(),
                audio: None,
            });
        }
    }
    out
}

/// Token frame + blank frame per reference token. Hotword tokens lose to a
/// confuser by a per-token log-odds margin below `max_margin`; other tokens
/// are clean with a little noise.
fn plant(ref_ids: &[TokenId], biased: &[bool], confusers: &[TokenId], vocab: usize, max_margin: f64, seed: u64) -> Result<Posteriorgram<f64>> {
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::with_capacity(2 * ref_ids.len());
    for (k, &tok) in ref_ids.iter().enumerate() {
        let mut row = vec![0.0; vocab];
        row[0] = 0.02;
        if biased[k] {
            let mut c = confusers[rng.below(confusers.len() as u64) as usize];
            if c == tok {
                c = confusers[(confusers.iter().position(|&x| x == c).unwrap() + 1) % confusers.len()];
            }
            let margin = max_margin * (0.2 + 0.6 * rng.unit());
            let b = 0.98 / (1.0 + margin.exp());
            row[tok as usize] += b;
            row[c as usize] += 0.98 - b;
        } else {
            let noise = confusers[rng.below(confusers.len() as u64) as usize];
            row[tok as usize] += 0.93;
            row[noise as usize] += 0.05;
        }
        rows.push(row);
        let mut gap = vec![0.0; vocab];
        gap[0] = 0.97;
        gap[tok as usize] += 0.03;
        rows.push(gap);
    }
    Ok(Posteriorgram::from_probs(&rows, 0)?)
}

struct Decoded {
    id: String,
    reference: String,
    unbiased: String,
    biased: String,
    rescored: String,
    kept: Vec<String>,
    prompt: String,
    pg: Posteriorgram<f64>,
}

fn report_line(system: &str, r: &EvalReport) -> serde_json::Value {
    json!({ "stage": "eval", "system": system, "wer": r.wer, "bwer": r.bwer, "uwer": r.uwer, "table": r.table() })
}

pub fn run(ctx: &Ctx, out: Option<&Path>, n_utts: usize) -> Result<()> {
    let seed = ctx.seed;
    let cfg = &ctx.cfg;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let manifest = synth_manifest(seed);
    let validated = datapipe::validate(manifest.clone(), cfg.pipe.max_duration_s);
    let rejected: Vec<_> = validated.rejected.iter().map(|(r, why)| json!({ "id": r.id, "reason": why })).collect();
    emit(&json!({ "stage": "validate", "records": manifest.len(), "accepted": validated.accepted.len(), "rejected": rejected }))?;

    let trunc = Truncation::new(0.5, 0.3)?;
    let augmented = datapipe::augment_all(&validated.accepted, trunc, seed);
    let hours = |rs: &[ManifestRecord]| rs.iter().map(|r| r.duration_s).sum::<f64>() / 3600.0;
    emit(&json!({ "stage": "augment", "hours_before": hours(&validated.accepted), "hours_after": hours(&augmented) }))?;
    let stats = datapipe::stats(&augmented, 5.0);
    emit(&json!({ "stage": "stats", "per_dialect": stats.per_dialect, "histogram": stats.duration_histogram }))?;

    let mut by_dataset: BTreeMap<&str, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in &augmented {
        by_dataset.entry(r.dataset.as_str()).or_default().push(r);
    }
    let sizes: Vec<DatasetSize<f64>> =
        by_dataset.iter().map(|(n, rs)| DatasetSize { name: n.to_string(), size: rs.len() as f64 }).collect();
    let plan = sampling_probabilities(&SamplingSpec::new(sizes, cfg.sample.alpha))?.with_seed(seed);
    let counts: Vec<u64> = by_dataset.values().map(|rs| rs.len() as u64).collect();
    let draws = draw_stream(&plan, &counts, n_utts)?;
    let groups: Vec<&Vec<&ManifestRecord>> = by_dataset.values().collect();
    let eval_set: Vec<&ManifestRecord> = draws.iter().map(|&(d, i)| groups[d][i as usize]).collect();
    let mut drawn = vec![0usize; counts.len()];
    draws.iter().for_each(|&(d, _)| drawn[d] += 1);
    emit(&json!({ "stage": "sample", "alpha": plan.alpha, "p": plan.probabilities(), "drawn": drawn }))?;

    let assignment = datapipe::bucket(&augmented, 3);
    let (shards, shard_records, shard_bytes) = match out {
        Some(dir) => {
            let shards = datapipe::write_bucketed_shards(&augmented, &assignment, 16, dir.join("shards"))?;
            let paths: Vec<_> = shards.iter().map(|s| s.path.clone()).collect();
            let mut back: Vec<String> = datapipe::read_shards(&paths, 2).map(|u| u.map(|u| u.record.id)).collect::<Result<_, _>>()?;
            back.sort();
            let mut want: Vec<String> = augmented.iter().map(|r| r.id.clone()).collect();
            want.sort();
            ensure!(back == want, "shard round trip lost records");
            (shards.len(), back.len(), shards.iter().map(|s| s.byte_length).sum::<u64>())
        }
        None => {
            let mut buf = Vec::new();
            let mut w = ShardWriter::new(&mut buf)?;
            for r in &augmented {
                w.push(r, None)?;
            }
            let (_, n, bytes) = w.finish()?;
            let back = ShardReader::new(buf.as_slice(), "memory")?.collect::<Result<Vec<_>, _>>()?;
            ensure!(back.iter().map(|u| &u.record).eq(augmented.iter()), "shard round trip changed records");
            (1, n as usize, bytes)
        }
    };
    emit(&json!({ "stage": "shard", "shards": shards, "records": shard_records, "bytes": shard_bytes }))?;

    let texts: Vec<&str> = augmented.iter().map(|r| r.text.as_str()).chain(HOTWORDS.iter().copied()).collect();
    let model = TokenizerModel::build(texts, &TokenizerConfig { target_vocab_size: 400, ..Default::default() })?;
    emit(&json!({ "stage": "tokenizer", "vocab_size": model.vocab_size(), "breakdown": model.breakdown() }))?;

    let hotwords = HotwordList::from_texts(HOTWORDS, &model)?;
    let confusers: Vec<TokenId> = (0..model.vocab_size() as TokenId)
        .filter(|&id| {
            let s = model.token_str(id).unwrap_or("");
            let mut cs = s.chars();
            matches!((cs.next(), cs.next()), (Some(c), None) if model.cjk_ranges().contains(c))
        })
        .collect();
    let filter_cfg = FilterConfig { psc_threshold: cfg.bias.psc_threshold, soc_threshold: cfg.bias.soc_threshold, scale: cfg.bias.scale };
    let prompt_cfg = FilterConfig { scale: cfg.bias.scale, ..FilterConfig::uniform(cfg.bias.prompt_threshold) };
    let hotword_ids: Vec<&[TokenId]> = hotwords.token_sequences();

    let decoded: Vec<Decoded> = eval_set
        .par_iter()
        .enumerate()
        .map(|(i, rec)| -> Result<Decoded> {
            let seq = model.encode(&rec.text);
            ensure!(!seq.kinds.contains(&TokenKind::Unk), "unknown token in {}", rec.id);
            let mask = tag_biased(&seq.ids, &hotword_ids);
            let pg = plant(&seq.ids, &mask, &confusers, model.vocab_size(), 1.5 * cfg.decode.lambda, SeededRng::derived(seed, 1000 + i as u64).next_u64())?;

            let kept = two_stage_filter(&pg, &hotwords, &filter_cfg)?;
            let trie = build_context_trie(&kept, cfg.decode.lambda)?;
            let unbiased = ctc_prefix_beam_search(&pg, cfg.decode.beam, &ContextTrie::empty())?;
            let biased = ctc_prefix_beam_search(&pg, cfg.decode.beam, &trie)?;

            let prompt = inference_prompt(&two_stage_filter(&pg, &hotwords, &prompt_cfg)?, None, &model)?;
            let scorer = BigramPromptScorer::new(seed, cfg.decode.prompt_bonus, model.prompt_delimiters());
            let rescored = attention_rescore(&biased, &scorer, &prompt.ids, cfg.decode.ctc_weight)?;

            Ok(Decoded {
                id: rec.id.clone(),
                reference: rec.text.clone(),
                unbiased: model.decode(&unbiased[0].tokens)?,
                biased: model.decode(&biased[0].tokens)?,
                rescored: model.decode(&rescored[0].hypothesis.tokens)?,
                kept: kept.texts().into_iter().map(str::to_owned).collect(),
                prompt: model.decode(&prompt.ids)?,
                pg,
            })
        })
        .collect::<Result<_>>()?;

    for d in &decoded {
        emit(&json!({
            "stage": "decode",
            "id": d.id,
            "ref": d.reference,
            "unbiased": d.unbiased,
            "biased": d.biased,
            "rescored": d.rescored,
            "kept": d.kept,
            "prompt": d.prompt,
        }))?;
    }

    let units = EvalUnits::new(model.cjk_ranges().clone());
    let hw_units: Vec<Vec<String>> = HOTWORDS.iter().map(|h| units.split(h)).collect();
    let refs: Vec<Vec<String>> = decoded.iter().map(|d| units.split(&d.reference)).collect();
    let score = |pick: fn(&Decoded) -> &str| -> Result<EvalReport> {
        let hyps: Vec<Vec<String>> = decoded.iter().map(|d| units.split(pick(d))).collect();
        Ok(evaluate_corpus(refs.iter().zip(&hyps).map(|(r, h)| (r.as_slice(), h.as_slice())), &hw_units)?)
    };
    let base = score(|d| &d.unbiased)?;
    let biased = score(|d| &d.biased)?;
    let rescored = score(|d| &d.rescored)?;
    emit(&report_line("unbiased", &base))?;
    emit(&report_line("biased", &biased))?;
    emit(&report_line("rescored", &rescored))?;
    let rer_of = |a: Option<f64>, b: Option<f64>| a.zip(b).and_then(|(a, b)| rer(a, b).ok());
    emit(&json!({
        "stage": "rer",
        "wer": rer_of(Some(base.wer), Some(biased.wer)),
        "bwer": rer_of(base.bwer, biased.bwer),
        "uwer": rer_of(base.uwer, biased.uwer),
    }))?;

    if let Some(dir) = out {
        datapipe::write_manifest(dir.join("manifest.jsonl"), &manifest)?;
        datapipe::write_manifest(dir.join("accepted.jsonl"), &augmented)?;
        std::fs::write(dir.join("plan.json"), serde_json::to_string_pretty(&plan)?)?;
        model.save(dir.join("model.json"))?;
        std::fs::write(dir.join("hotwords.txt"), HOTWORDS.join("\n") + "\n")?;
        let lines = |f: fn(&Decoded) -> &str| decoded.iter().map(|d| format!("{}\n", f(d))).collect::<String>();
        std::fs::write(dir.join("ref.txt"), lines(|d| &d.reference))?;
        std::fs::write(dir.join("hyp_unbiased.txt"), lines(|d| &d.unbiased))?;
        std::fs::write(dir.join("hyp_biased.txt"), lines(|d| &d.biased))?;
        let pg_dir = dir.join("posteriorgrams");
        std::fs::create_dir_all(&pg_dir)?;
        for d in &decoded {
            let pg32 = Posteriorgram::<f32>::new(
                d.pg.frames(),
                d.pg.vocab(),
                d.pg.as_slice().iter().map(|&x| x as f32).collect(),
                d.pg.blank(),
            )?;
            std::fs::write(pg_dir.join(format!("{}.post", d.id)), pg32.to_bytes())?;
        }
        emit(&json!({ "stage": "written", "files": ["manifest.jsonl", "accepted.jsonl", "plan.json", "model.json", "hotwords.txt", "ref.txt", "hyp_unbiased.txt", "hyp_biased.txt", "shards/", "posteriorgrams/"] }))?;
    }
    Ok(())
}
