use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use dolphin_core::biasing::{
    self, build_prompt, context_fuse, filter_with_trace, inference_prompt, two_stage_filter, ContextFusionParams,
    FilterConfig, HotwordList, Matrix, PromptConfig,
};
use dolphin_core::datapipe::{self, Truncation};
use dolphin_core::decoder::{self, attention_rescore, BigramPromptScorer, ContextTrie, Hypothesis, NbestEntry};
use dolphin_core::metrics::{evaluate_corpus, rer, EvalUnits};
use dolphin_core::rng::SeededRng;
use dolphin_core::sampler::{draw_stream, sampling_probabilities, DatasetSize, SamplingPlan, SamplingSpec};
use dolphin_core::tokenizer::CjkRanges;
use dolphin_core::{TokenId, TokenizerConfig, TokenizerModel};
use serde_json::json;

use crate::{emit, usage, BiasCmd, Ctx, DecodeCmd, EvalCmd, Format, PgArgs, PipeCmd, SampleCmd, TokCmd};

fn load_model(path: &Path) -> Result<TokenizerModel> {
    TokenizerModel::load(path).with_context(|| format!("loading tokenizer {}", path.display()))
}

fn load_pg(args: &PgArgs) -> Result<biasing::Posteriorgram<f64>> {
    let f = File::open(&args.pg).with_context(|| format!("opening {}", args.pg.display()))?;
    let pg32 = biasing::Posteriorgram::<f32>::read_from(BufReader::new(f), args.blank)
        .with_context(|| format!("reading {}", args.pg.display()))?;
    let data = pg32.as_slice().iter().map(|&x| x as f64).collect();
    Ok(biasing::Posteriorgram::new(pg32.frames(), pg32.vocab(), data, args.blank)?)
}

fn load_hotwords(path: &Path, model: &TokenizerModel) -> Result<HotwordList> {
    HotwordList::read_file(path, model).with_context(|| format!("reading hotwords {}", path.display()))
}

fn parse_ids(s: &str) -> Result<Vec<TokenId>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| usage(format!("bad token id {t:?}"))))
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn tok(_ctx: &Ctx, cmd: TokCmd) -> Result<()> {
    match cmd {
        TokCmd::Build { corpus, vocab_size, reserved, out } => {
            let lines = read_lines(&corpus)?;
            let cfg = TokenizerConfig { target_vocab_size: vocab_size, reserved_dialect_count: reserved, ..Default::default() };
            let model = TokenizerModel::build(lines.iter().map(String::as_str), &cfg)?;
            model.save(&out)?;
            emit(&json!({ "vocab_size": model.vocab_size(), "breakdown": model.breakdown(), "out": out }))
        }
        TokCmd::Encode { model, text } => {
            let seq = load_model(&model)?.encode(&text);
            emit(&json!({ "ids": seq.ids, "kinds": seq.kinds }))
        }
        TokCmd::Decode { model, ids } => {
            let text = load_model(&model)?.decode(&parse_ids(&ids)?)?;
            emit(&json!({ "text": text }))
        }
    }
}

fn manifest_sizes(dir: &Path, hours: bool) -> Result<Vec<DatasetSize<f64>>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no *.jsonl manifests in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let records = datapipe::read_manifest(p)?;
            let size = if hours {
                records.iter().map(|r| r.duration_s).sum::<f64>() / 3600.0
            } else {
                records.len() as f64
            };
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(DatasetSize { name, size })
        })
        .collect()
}

fn parse_sizes(s: &str) -> Result<Vec<DatasetSize<f64>>> {
    s.split(',')
        .map(|kv| {
            let (name, size) = kv.split_once('=').ok_or_else(|| usage(format!("expected name=size, got {kv:?}")))?;
            let size = size.trim().parse().map_err(|_| usage(format!("bad size {size:?}")))?;
            Ok(DatasetSize { name: name.trim().to_owned(), size })
        })
        .collect()
}

pub fn sample(ctx: &Ctx, cmd: SampleCmd) -> Result<()> {
    match cmd {
        SampleCmd::Plan { manifest_dir, sizes, alpha, hours, out } => {
            let hours = hours || ctx.cfg.sample.hours;
            let datasets = match (manifest_dir, sizes) {
                (Some(dir), None) => manifest_sizes(&dir, hours)?,
                (None, Some(s)) => parse_sizes(&s)?,
                _ => return Err(usage("give --manifest-dir or --sizes")),
            };
            let spec = SamplingSpec::new(datasets, alpha.unwrap_or(ctx.cfg.sample.alpha));
            let plan = sampling_probabilities(&spec)?.with_seed(ctx.seed);
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&plan)?)
                    .with_context(|| format!("writing {}", out.display()))?;
            }
            emit(&plan)
        }
        SampleCmd::Draw { plan, length, counts } => {
            let text = std::fs::read_to_string(&plan).with_context(|| format!("reading {}", plan.display()))?;
            let plan: SamplingPlan<f64> = serde_json::from_str(&text)?;
            let counts: Vec<u64> = match counts {
                Some(c) => c
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| usage(format!("bad count {x:?}"))))
                    .collect::<Result<_>>()?,
                None => plan.datasets.iter().map(|d| d.size.round().max(1.0) as u64).collect(),
            };
            for (dataset, item) in draw_stream(&plan, &counts, length)? {
                emit(&json!({ "dataset": dataset, "name": plan.datasets[dataset].name, "item": item }))?;
            }
            Ok(())
        }
    }
}

pub fn pipe(ctx: &Ctx, cmd: PipeCmd) -> Result<()> {
    match cmd {
        PipeCmd::Validate { input, max_dur, out } => {
            let max = max_dur.unwrap_or(ctx.cfg.pipe.max_duration_s);
            let v = datapipe::validate(datapipe::read_manifest(&input)?, max);
            for (rec, reason) in &v.rejected {
                emit(&json!({ "rejected": rec.id, "reason": reason, "duration_s": rec.duration_s }))?;
            }
            if let Some(out) = out {
                datapipe::write_manifest(out, &v.accepted)?;
            }
            emit(&json!({ "accepted": v.accepted.len(), "rejected": v.rejected.len(), "max_duration_s": max }))
        }
        PipeCmd::Shard { input, shard_size, buckets, out } => {
            let records = datapipe::read_manifest(&input)?;
            let size = shard_size.unwrap_or(ctx.cfg.pipe.shard_size);
            let shards = match buckets {
                Some(n) => datapipe::write_bucketed_shards(&records, &datapipe::bucket(&records, n), size, &out)?,
                None => datapipe::write_shards(&records, size, &out)?,
            };
            for s in &shards {
                emit(s)?;
            }
            Ok(())
        }
        PipeCmd::Bench { dir, readers } => {
            let paths = datapipe::list_shards(&dir)?;
            if paths.is_empty() {
                bail!("no shards in {}", dir.display());
            }
            emit(&datapipe::bench_read(&paths, readers.unwrap_or(ctx.cfg.pipe.readers))?)
        }
        PipeCmd::Stats { input, bin_width } => {
            if !(bin_width > 0.0) {
                return Err(usage("--bin-width must be positive"));
            }
            emit(&datapipe::stats(&datapipe::read_manifest(&input)?, bin_width))
        }
        PipeCmd::Augment { input, p, max_fraction, out } => {
            let cfg = Truncation::new(p, max_fraction).map_err(|e| usage(e.to_string()))?;
            let records = datapipe::augment_all(&datapipe::read_manifest(&input)?, cfg, ctx.seed);
            datapipe::write_manifest(&out, &records)?;
            emit(&json!({ "records": records.len(), "out": out }))
        }
    }
}

fn separator_id(ctx: &Ctx, model: &TokenizerModel) -> Result<Option<TokenId>> {
    match &ctx.cfg.bias.separator {
        None => Ok(None),
        Some(name) => model
            .special_id(name)
            .map(Some)
            .ok_or_else(|| usage(format!("separator {name:?} is not a special token"))),
    }
}

pub fn bias(ctx: &Ctx, cmd: BiasCmd) -> Result<()> {
    let b = &ctx.cfg.bias;
    match cmd {
        BiasCmd::Filter { pg, hotwords, model, psc, soc } => {
            let model = load_model(&model)?;
            let list = load_hotwords(&hotwords, &model)?;
            let pg = load_pg(&pg)?;
            let cfg = FilterConfig {
                psc_threshold: psc.unwrap_or(b.psc_threshold),
                soc_threshold: soc.unwrap_or(b.soc_threshold),
                scale: b.scale,
            };
            for d in filter_with_trace(&pg, &list, &cfg)? {
                // -inf is not valid JSON; report it as null.
                let soc = d.soc.filter(|s| s.is_finite());
                emit(&json!({ "text": d.text, "psc": d.psc, "soc": soc, "kept": d.kept }))?;
            }
            Ok(())
        }
        BiasCmd::Prompt { model, hotwords, transcript, pg, distractors } => {
            let model = load_model(&model)?;
            let list = load_hotwords(&hotwords, &model)?;
            let separator = separator_id(ctx, &model)?;
            let (prompt, list) = match (transcript, pg) {
                (Some(t), None) => {
                    let cfg = PromptConfig { n_distractors: distractors.unwrap_or(b.distractors), separator };
                    (build_prompt(&t, &list, &cfg, ctx.seed, &model)?, list)
                }
                (None, Some(path)) => {
                    let pg = load_pg(&PgArgs { pg: path, blank: model.blank_id() })?;
                    let kept = two_stage_filter(&pg, &list, &FilterConfig { scale: b.scale, ..FilterConfig::uniform(b.prompt_threshold) })?;
                    (inference_prompt(&kept, separator, &model)?, kept)
                }
                _ => return Err(usage("give exactly one of --transcript or --pg")),
            };
            let phrases: Vec<&str> = prompt.phrases.iter().map(|&i| list.phrases()[i].text.as_str()).collect();
            emit(&json!({ "ids": prompt.ids, "text": model.decode(&prompt.ids)?, "phrases": phrases }))
        }
        BiasCmd::Fuse { model, hotwords, frames, dim, heads } => {
            let model = load_model(&model)?;
            let list = load_hotwords(&hotwords, &model)?;
            let params = ContextFusionParams::<f64>::random(model.vocab_size(), dim, dim, heads, ctx.seed)
                .map_err(|e| usage(e.to_string()))?;
            let mut rng = SeededRng::derived(ctx.seed, 1);
            let hidden = Matrix::glorot(frames, dim, &mut rng);
            let fused = context_fuse(&hidden, &list, &params)?;
            let weights = if list.is_empty() { Vec::new() } else { biasing::attention_weights(&hidden, &list, &params)? };
            let delta: f64 = fused.as_slice().iter().zip(hidden.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let attention: Vec<Vec<Vec<f64>>> =
                weights.iter().map(|w| (0..w.rows()).map(|t| w.row(t).to_vec()).collect()).collect();
            let context: Vec<&str> = std::iter::once("<no-bias>").chain(list.texts()).collect();
            emit(&json!({ "context": context, "attention": attention, "max_abs_delta": delta }))
        }
    }
}

pub fn decode(ctx: &Ctx, cmd: DecodeCmd) -> Result<()> {
    let d = &ctx.cfg.decode;
    match cmd {
        DecodeCmd::Ctc { pg, beam, hotwords, model, lambda } => {
            let pg = load_pg(&pg)?;
            let model = model.as_deref().map(load_model).transpose()?;
            let trie = match (&hotwords, &model) {
                (Some(h), Some(m)) => {
                    let list = load_hotwords(h, m)?;
                    decoder::build_context_trie(&list, lambda.unwrap_or(d.lambda)).map_err(|e| usage(e.to_string()))?
                }
                _ => ContextTrie::empty(),
            };
            let beam = beam.unwrap_or(d.beam);
            let nbest = decoder::ctc_prefix_beam_search(&pg, beam, &trie).map_err(|e| match e {
                decoder::DecodeError::InvalidBeam => usage(e.to_string()),
                e => e.into(),
            })?;
            for h in &nbest {
                let entry = NbestEntry::from(h);
                match &model {
                    Some(m) => emit(&json!({ "tokens": entry.tokens, "log_score": entry.log_score, "bonus": entry.bonus, "text": m.decode(&h.tokens)? }))?,
                    None => emit(&entry)?,
                }
            }
            Ok(())
        }
        DecodeCmd::Rescore { nbest, prompt, model, ctc_weight } => {
            let text = std::fs::read_to_string(&nbest).with_context(|| format!("reading {}", nbest.display()))?;
            let entries: Vec<NbestEntry> = if text.trim_start().starts_with('[') {
                serde_json::from_str(&text)?
            } else {
                text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?
            };
            if entries.is_empty() {
                bail!("empty n-best list");
            }
            let model = model.as_deref().map(load_model).transpose()?;
            let (prompt_ids, delimiters) = match &model {
                Some(m) => (m.encode(&prompt).ids, m.prompt_delimiters()),
                None => (parse_ids(&prompt)?, None),
            };
            let hyps: Vec<Hypothesis<f64>> = entries.iter().map(Hypothesis::from).collect();
            let scorer = BigramPromptScorer::new(ctx.seed, d.prompt_bonus, delimiters);
            let w = ctc_weight.unwrap_or(d.ctc_weight);
            let out = attention_rescore(&hyps, &scorer, &prompt_ids, w).map_err(|e| usage(e.to_string()))?;
            for r in out {
                emit(&json!({
                    "tokens": r.hypothesis.tokens,
                    "log_score": r.hypothesis.log_score,
                    "bonus": r.hypothesis.accumulated_bonus,
                    "attention_score": r.attention_score,
                    "combined": r.combined,
                }))?;
            }
            Ok(())
        }
    }
}

pub fn eval(ctx: &Ctx, cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Wer { reference, hyp, hotwords, model, format } => {
            let cjk = match &model {
                Some(m) => load_model(m)?.cjk_ranges().clone(),
                None => CjkRanges::default(),
            };
            let units = EvalUnits::new(cjk);
            let refs = read_lines(&reference)?;
            let hyps = read_lines(&hyp)?;
            if refs.len() != hyps.len() {
                bail!("{} reference lines but {} hypothesis lines", refs.len(), hyps.len());
            }
            let hw: Vec<Vec<String>> = match &hotwords {
                Some(p) => biasing::parse_hotword_lines(&std::fs::read_to_string(p)?).into_iter().map(|h| units.split(h)).collect(),
                None => Vec::new(),
            };
            let r: Vec<Vec<String>> = refs.iter().map(|l| units.split(l)).collect();
            let h: Vec<Vec<String>> = hyps.iter().map(|l| units.split(l)).collect();
            let report = evaluate_corpus(r.iter().zip(&h).map(|(a, b)| (a.as_slice(), b.as_slice())), &hw)?;
            if format == Format::Table && !ctx.json {
                println!("{}", report.table());
                Ok(())
            } else {
                emit(&report)
            }
        }
        EvalCmd::Rer { before, after } => {
            let value = rer(before, after).map_err(|e| usage(e.to_string()))?;
            emit(&json!({ "before": before, "after": after, "rer": value }))
        }
    }
}
