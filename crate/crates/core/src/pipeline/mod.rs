//! End-to-end experiment driver: data → alignment → pretraining →
//! adjustment → fine-tuning → evaluation → analyses → statistics, written to
//! one reproducible run directory.

mod config;
mod manifest;
mod summary;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::adjuster::{adjust_against, write_loss_trace, AdjustConfig, AnchorModel};
use crate::aligner::{
    alignment_error_rate, extract_word_pairs, symmetrize, train_model2, AlignmentLinkSet, Direction, WordPairSet,
};
use crate::analysis::{sample_distance_pairs, scenario_suite, write_suite, CorpusContexts, OccurrencePair, Scenario};
use crate::corpus::synthetic::{Lexicon, OUTSIDE_TAG};
use crate::corpus::{
    load_labeled_pairs, load_parallel, load_tagged, make_cipher_corpus, make_mixed_pairs, write_labeled_pairs,
    write_tagged, Cipher, LabeledPair, ParallelCorpus, SubwordVocab, TaggedSentence,
};
use crate::encoder::{pretrain_mlm, save_checkpoint, EncoderWeights};
use crate::error::{Error, Result};
use crate::finetuner::{
    encode_classification, encode_tagging, evaluate_classification, evaluate_tagging, finetune, finetune_continual,
    prediction_dump_csv, FinetuneConfig, HeadKind, TaskExample, TaskHead,
};
use crate::retrieval::{best_layer, LayerSweep};
use crate::stats::{parse_prediction_dump, DumpRow};

pub use config::{AlignConfig, CipherData, DataConfig, FileData, RunConfig, Stages, StatsConfig, STAGE_ORDER};
pub use manifest::{sha256_hex, FileEntry, Manifest, StageState, MANIFEST_FILE};
pub use summary::{MetricSummary, Summary, TaskSummary};

/// Execution options that do not affect results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Seeds processed concurrently.
    pub jobs: usize,
    pub verbose: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { jobs: 1, verbose: false }
    }
}

/// Train/test material for one task. `test_target` is the zero-shot set.
#[derive(Debug, Clone)]
pub struct TaskSplits<T> {
    pub train: Vec<T>,
    pub test_source: Option<Vec<T>>,
    pub test_target: Vec<T>,
    pub test_mixed: Option<Vec<T>>,
}

/// Everything derived from the data configuration.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: ParallelCorpus,
    /// Leading sentence pairs used for adjustment; the rest are held out.
    pub n_adjust: usize,
    pub gold: Option<AlignmentLinkSet>,
    pub cipher: Option<Cipher>,
    pub vocab: SubwordVocab,
    pub classification: Option<TaskSplits<LabeledPair>>,
    pub tagging: Option<TaskSplits<TaggedSentence>>,
}

fn cipher_pairs(cipher: &Cipher, data: &[LabeledPair]) -> Result<Vec<LabeledPair>> {
    data.iter()
        .map(|p| {
            Ok(LabeledPair {
                premise: cipher.apply_sentence(&p.premise)?,
                hypothesis: cipher.apply_sentence(&p.hypothesis)?,
                label: p.label.clone(),
            })
        })
        .collect()
}

fn cipher_tagged(cipher: &Cipher, data: &[TaggedSentence]) -> Result<Vec<TaggedSentence>> {
    data.iter()
        .map(|s| {
            Ok(TaggedSentence {
                words: cipher.apply_sentence(&s.words)?,
                tags: s.tags.clone(),
            })
        })
        .collect()
}

pub fn prepare_data(config: &RunConfig) -> Result<Dataset> {
    let (corpus, n_adjust, gold, cipher, classification, tagging) = match &config.data {
        DataConfig::Cipher(c) => {
            let lex = Lexicon::generate(&c.lexicon, c.seed)?;
            let cipher = lex.cipher(c.seed + 1);
            let source = lex.sentences(c.parallel_sentences + c.heldout_sentences, c.seed + 2);
            let (corpus, gold) = make_cipher_corpus(&source, &cipher, c.reorder, c.seed + 3)?;
            let classification = if c.classification_train > 0 && c.classification_test > 0 {
                let train = lex.classification(c.classification_train, c.seed + 4);
                let test_source = lex.classification(c.classification_test, c.seed + 5);
                let test_target = cipher_pairs(&cipher, &test_source)?;
                let mixed = make_mixed_pairs(&test_target, &test_source, c.seed + 6)?;
                Some(TaskSplits {
                    train,
                    test_source: Some(test_source),
                    test_target,
                    test_mixed: Some(mixed.into_iter().map(|m| m.pair).collect()),
                })
            } else {
                None
            };
            let tagging = if c.tagging_train > 0 && c.tagging_test > 0 {
                let train = lex.tagging(c.tagging_train, c.seed + 7);
                let test_source = lex.tagging(c.tagging_test, c.seed + 8);
                let test_target = cipher_tagged(&cipher, &test_source)?;
                Some(TaskSplits {
                    train,
                    test_source: Some(test_source),
                    test_target,
                    test_mixed: None,
                })
            } else {
                None
            };
            (corpus, c.parallel_sentences, Some(gold), Some(cipher), classification, tagging)
        }
        DataConfig::Files(f) => {
            let corpus = load_parallel(&f.parallel)?;
            if f.heldout_sentences >= corpus.len() {
                return Err(Error::Config(format!(
                    "heldout_sentences {} leaves no pairs for adjustment out of {}",
                    f.heldout_sentences,
                    corpus.len()
                )));
            }
            let n_adjust = corpus.len() - f.heldout_sentences;
            let classification = match (&f.classification_train, &f.classification_test) {
                (Some(train), Some(test)) => Some(TaskSplits {
                    train: load_labeled_pairs(train)?,
                    test_source: None,
                    test_target: load_labeled_pairs(test)?,
                    test_mixed: None,
                }),
                _ => None,
            };
            let tagging = match (&f.tagging_train, &f.tagging_test) {
                (Some(train), Some(test)) => Some(TaskSplits {
                    train: load_tagged(train)?,
                    test_source: None,
                    test_target: load_tagged(test)?,
                    test_mixed: None,
                }),
                _ => None,
            };
            (corpus, n_adjust, None, None, classification, tagging)
        }
    };
    let vocab = SubwordVocab::train(
        corpus
            .pairs
            .iter()
            .flat_map(|p| [&p.src, &p.tgt])
            .map(|s| s.iter().map(String::as_str)),
        config.vocab_size,
        0,
    )?;
    Ok(Dataset {
        corpus,
        n_adjust,
        gold,
        cipher,
        vocab,
        classification,
        tagging,
    })
}

fn write_data(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    data.corpus.write(&dir.join("parallel.txt"))?;
    data.vocab.save(&dir.join("vocab.txt"))?;
    if let Some(gold) = &data.gold {
        gold.save(&dir.join("gold.pharaoh"))?;
    }
    if let Some(cipher) = &data.cipher {
        let text: String = cipher.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect();
        fs::write(dir.join("cipher.tsv"), text)?;
    }
    if let Some(c) = &data.classification {
        write_labeled_pairs(&dir.join("classification_train.tsv"), &c.train)?;
        write_labeled_pairs(&dir.join("classification_test_target.tsv"), &c.test_target)?;
        if let Some(s) = &c.test_source {
            write_labeled_pairs(&dir.join("classification_test_source.tsv"), s)?;
        }
        if let Some(m) = &c.test_mixed {
            write_labeled_pairs(&dir.join("classification_test_mixed.tsv"), m)?;
        }
    }
    if let Some(t) = &data.tagging {
        write_tagged(&dir.join("tagging_train.txt"), &t.train)?;
        write_tagged(&dir.join("tagging_test_target.txt"), &t.test_target)?;
        if let Some(s) = &t.test_source {
            write_tagged(&dir.join("tagging_test_source.txt"), s)?;
        }
    }
    Ok(())
}

/// Symmetrized Model 2 alignment of the whole corpus.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub forward: AlignmentLinkSet,
    pub reverse: AlignmentLinkSet,
    pub links: AlignmentLinkSet,
    pub aer: Option<f64>,
    pub nll_forward: Vec<f64>,
    pub nll_reverse: Vec<f64>,
}

pub fn align(data: &Dataset, config: &AlignConfig) -> Result<Alignment> {
    let fwd = train_model2(&data.corpus, config.iterations, Direction::Forward, 0)?;
    let rev = train_model2(&data.corpus, config.iterations, Direction::Reverse, 0)?;
    let forward = fwd.align_corpus(&data.corpus);
    let reverse = rev.align_corpus(&data.corpus);
    let links: AlignmentLinkSet = forward
        .iter()
        .zip(reverse.iter())
        .map(|(f, r)| symmetrize(f, r, config.heuristic))
        .collect();
    let aer = data.gold.as_ref().map(|g| alignment_error_rate(&links, g)).transpose()?;
    Ok(Alignment {
        forward,
        reverse,
        links,
        aer,
        nll_forward: fwd.nll_trace,
        nll_reverse: rev.nll_trace,
    })
}

fn write_alignment(dir: &Path, a: &Alignment) -> Result<()> {
    fs::create_dir_all(dir)?;
    a.forward.save(&dir.join("forward.pharaoh"))?;
    a.reverse.save(&dir.join("reverse.pharaoh"))?;
    a.links.save(&dir.join("symmetrized.pharaoh"))?;
    let report = serde_json::json!({
        "aer": a.aer,
        "nll_forward": a.nll_forward,
        "nll_reverse": a.nll_reverse,
    });
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(())
}

fn split_corpus(corpus: &ParallelCorpus, links: &AlignmentLinkSet, at: usize) -> (ParallelCorpus, AlignmentLinkSet, ParallelCorpus, AlignmentLinkSet) {
    let head = ParallelCorpus {
        pairs: corpus.pairs[..at].to_vec(),
    }
    .renumbered();
    let tail = ParallelCorpus {
        pairs: corpus.pairs[at..].to_vec(),
    }
    .renumbered();
    let head_links = AlignmentLinkSet::new(links.iter().take(at).cloned().collect());
    let tail_links = AlignmentLinkSet::new(links.iter().skip(at).cloned().collect());
    (head, head_links, tail, tail_links)
}

fn pretraining_corpus(vocab: &SubwordVocab, corpus: &ParallelCorpus, max_len: usize) -> Vec<Vec<u32>> {
    corpus
        .source_sentences()
        .chain(corpus.target_sentences())
        .map(|s| vocab.tokenize_with_spans(s).with_cls().truncated(max_len).subword_ids)
        .collect()
}

fn stage_err(stage: &str, seed: u64) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.to_owned(),
            seed,
            source: Box::new(e),
        },
    }
}

fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = labels.map(str::to_owned).collect();
    v.sort();
    v.dedup();
    v
}

/// Encoded material for one task.
struct TaskInputs {
    name: &'static str,
    kind: HeadKind,
    labels: Vec<String>,
    outside: Option<usize>,
    train: Vec<TaskExample>,
    tests: Vec<(&'static str, Vec<TaskExample>)>,
}

fn task_inputs(data: &Dataset) -> Result<Vec<TaskInputs>> {
    let mut out = Vec::new();
    if let Some(c) = &data.classification {
        let labels = sorted_labels(c.train.iter().map(|p| p.label.as_str()));
        let head = TaskHead::zeros(HeadKind::PairClassification, labels.clone(), 1)?;
        let mut tests = vec![("target", encode_classification(&data.vocab, &c.test_target, &head)?)];
        if let Some(s) = &c.test_source {
            tests.push(("source", encode_classification(&data.vocab, s, &head)?));
        }
        if let Some(m) = &c.test_mixed {
            tests.push(("mixed", encode_classification(&data.vocab, m, &head)?));
        }
        out.push(TaskInputs {
            name: "classification",
            kind: HeadKind::PairClassification,
            train: encode_classification(&data.vocab, &c.train, &head)?,
            labels,
            outside: None,
            tests,
        });
    }
    if let Some(t) = &data.tagging {
        let labels = sorted_labels(t.train.iter().flat_map(|s| s.tags.iter().map(String::as_str)));
        let outside = labels
            .iter()
            .position(|l| l == OUTSIDE_TAG)
            .ok_or_else(|| Error::Config(format!("tagging data has no `{OUTSIDE_TAG}` tag")))?;
        let head = TaskHead::zeros(HeadKind::TokenTagging, labels.clone(), 1)?;
        let mut tests = vec![("target", encode_tagging(&data.vocab, &t.test_target, &head)?)];
        if let Some(s) = &t.test_source {
            tests.push(("source", encode_tagging(&data.vocab, s, &head)?));
        }
        out.push(TaskInputs {
            name: "tagging",
            kind: HeadKind::TokenTagging,
            train: encode_tagging(&data.vocab, &t.train, &head)?,
            labels,
            outside: Some(outside),
            tests,
        });
    }
    Ok(out)
}

/// Inputs shared by every seed.
struct Shared<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    original: &'a EncoderWeights,
    anchor: &'a AnchorModel,
    pairs: &'a WordPairSet,
    tasks: &'a [TaskInputs],
    heldout_contexts: &'a CorpusContexts,
    distance_sample: &'a [OccurrencePair],
    xsr_queries: &'a [Vec<u32>],
    xsr_corpus: &'a [Vec<u32>],
    last: usize,
}

/// Evaluation of the three fine-tuned scenarios on one task.
#[derive(Debug, Clone, Default)]
pub struct TaskResult {
    /// `split → scenario → metric`.
    pub metrics: BTreeMap<String, BTreeMap<Scenario, f64>>,
    /// Target-split prediction rows per scenario.
    pub dumps: BTreeMap<Scenario, Vec<DumpRow>>,
}

#[derive(Debug, Clone, Default)]
pub struct SeedResult {
    pub seed: u64,
    pub tasks: BTreeMap<String, TaskResult>,
    pub overlap: BTreeMap<Scenario, f64>,
    pub separation: BTreeMap<Scenario, f64>,
    pub related_mean: BTreeMap<Scenario, f64>,
    pub xsr: BTreeMap<Scenario, LayerSweep>,
}

const FINETUNED: [Scenario; 3] = [
    Scenario::OriginalFinetuned,
    Scenario::AdjustedFinetuned,
    Scenario::AdjustedContinual,
];

fn file_stem(s: Scenario) -> String {
    s.name().replace('+', "_")
}

fn stage_index(name: &str) -> usize {
    STAGE_ORDER.iter().position(|s| *s == name).expect("known stage")
}

fn run_seed(sh: &Shared, seed: u64, verbose: bool) -> Result<SeedResult> {
    let st = &sh.config.stages;
    let dir = sh.out.join(format!("seed-{seed}"));
    let mut result = SeedResult {
        seed,
        ..Default::default()
    };
    let log = |msg: &str| {
        if verbose {
            eprintln!("[seed {seed}] {msg}");
        }
    };

    log("adjust");
    let adjust_cfg = AdjustConfig {
        seed,
        ..sh.config.adjust.clone()
    };
    let (adjusted, trace) = adjust_against(sh.original, sh.anchor, sh.pairs, &adjust_cfg).map_err(stage_err("adjust", seed))?;
    if st.adjust {
        let d = dir.join("adjust");
        fs::create_dir_all(&d)?;
        save_checkpoint(&adjusted, &d.join("adjusted.ckpt"))?;
        write_loss_trace(&d.join("loss_trace.csv"), &trace)?;
    }
    if sh.last < stage_index("finetune") {
        return Ok(result);
    }

    if sh.tasks.is_empty() {
        return Err(stage_err("finetune", seed)(Error::Config("no task data configured".into())));
    }
    let ft_cfg = FinetuneConfig {
        seed,
        ..sh.config.finetune.clone()
    };
    let dim = sh.original.config.model_dim;
    let mut finetuned: BTreeMap<&str, BTreeMap<Scenario, (EncoderWeights, TaskHead)>> = BTreeMap::new();
    for task in sh.tasks {
        log(&format!("finetune {}", task.name));
        let run = || -> Result<BTreeMap<Scenario, (EncoderWeights, TaskHead, Vec<f64>)>> {
            let head = TaskHead::init(task.kind, task.labels.clone(), dim, seed)?;
            let a = finetune(sh.original, &head, &task.train, &ft_cfg)?;
            let b = finetune(&adjusted, &head, &task.train, &ft_cfg)?;
            let c = finetune_continual(&adjusted, &head, &task.train, sh.pairs, sh.anchor, &ft_cfg)?;
            Ok([a, b, c]
                .into_iter()
                .zip(FINETUNED)
                .map(|(o, s)| (s, (o.model, o.head, o.loss_trace)))
                .collect())
        };
        let models = run().map_err(stage_err("finetune", seed))?;
        if st.finetune {
            let d = dir.join("finetune").join(task.name);
            fs::create_dir_all(&d)?;
            for (s, (m, h, trace)) in &models {
                let stem = file_stem(*s);
                save_checkpoint(m, &d.join(format!("{stem}.ckpt")))?;
                fs::write(d.join(format!("{stem}_head.json")), serde_json::to_string(h)? + "\n")?;
                let csv: String = std::iter::once("step,loss\n".to_owned())
                    .chain(trace.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")))
                    .collect();
                fs::write(d.join(format!("{stem}_loss.csv")), csv)?;
            }
        }
        finetuned.insert(task.name, models.into_iter().map(|(s, (m, h, _))| (s, (m, h))).collect());
    }

    if sh.last >= stage_index("evaluate") {
        log("evaluate");
        for task in sh.tasks {
            let mut tr = TaskResult::default();
            for (split, data) in &task.tests {
                for s in FINETUNED {
                    let (m, h) = &finetuned[task.name][&s];
                    let (metric, preds) = match task.outside {
                        None => {
                            let e = evaluate_classification(m, h, data).map_err(stage_err("evaluate", seed))?;
                            (e.accuracy, e.predictions.into_iter().map(|p| vec![p]).collect::<Vec<_>>())
                        }
                        Some(o) => {
                            let e = evaluate_tagging(m, h, data, o).map_err(stage_err("evaluate", seed))?;
                            (e.f1, e.predictions)
                        }
                    };
                    tr.metrics.entry(split.to_string()).or_default().insert(s, metric);
                    let csv = prediction_dump_csv(seed, data, &preds);
                    if *split == "target" {
                        tr.dumps.insert(s, parse_prediction_dump(&csv, Path::new("memory"))?);
                    }
                    if st.evaluate {
                        let d = dir.join("evaluate");
                        fs::create_dir_all(&d)?;
                        fs::write(d.join(format!("{}_{}_{split}.csv", task.name, file_stem(s))), csv)?;
                    }
                }
            }
            result.tasks.insert(task.name.to_owned(), tr);
        }
        if st.evaluate {
            let metrics: BTreeMap<&String, &BTreeMap<String, BTreeMap<Scenario, f64>>> =
                result.tasks.iter().map(|(k, v)| (k, &v.metrics)).collect();
            fs::write(
                dir.join("evaluate").join("metrics.json"),
                serde_json::to_string_pretty(&metrics)? + "\n",
            )?;
        }
    }

    // Scenario models for the analyses come from the first task.
    let first = &finetuned[sh.tasks[0].name];
    let models: Vec<(Scenario, &EncoderWeights)> = vec![
        (Scenario::Original, sh.original),
        (Scenario::Adjusted, &adjusted),
        (Scenario::OriginalFinetuned, &first[&Scenario::OriginalFinetuned].0),
        (Scenario::AdjustedFinetuned, &first[&Scenario::AdjustedFinetuned].0),
        (Scenario::AdjustedContinual, &first[&Scenario::AdjustedContinual].0),
    ];

    if sh.last >= stage_index("analyze") {
        log("analyze");
        let suite = scenario_suite(&models, sh.heldout_contexts, sh.distance_sample, &sh.config.analysis)
            .map_err(stage_err("analyze", seed))?;
        for s in &suite.scenarios {
            result.overlap.insert(s.scenario, s.report.overlap);
            result.separation.insert(s.scenario, s.report.separation());
            result.related_mean.insert(s.scenario, s.report.related.mean);
        }
        if st.analyze {
            write_suite(&dir.join("analyze"), &suite)?;
        }
    }

    if sh.last >= stage_index("xsr") {
        log("xsr");
        for (s, m) in &models {
            let sweep = best_layer(*m, sh.xsr_queries, sh.xsr_corpus, &(0..sh.xsr_queries.len()).collect::<Vec<_>>())
                .map_err(stage_err("xsr", seed))?;
            result.xsr.insert(*s, sweep);
        }
        if st.xsr {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("xsr.json"), serde_json::to_string_pretty(&result.xsr)? + "\n")?;
        }
    }
    Ok(result)
}

fn run_seeds(sh: &Shared, seeds: &[u64], options: RunOptions) -> Result<Vec<SeedResult>> {
    let jobs = options.jobs.max(1);
    if jobs == 1 {
        return seeds.iter().map(|&s| run_seed(sh, s, options.verbose)).collect();
    }
    let mut slots: Vec<Option<Result<SeedResult>>> = (0..seeds.len()).map(|_| None).collect();
    for (chunk_seeds, chunk_slots) in seeds.chunks(jobs).zip(slots.chunks_mut(jobs)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk_seeds
                .iter()
                .map(|&s| scope.spawn(move || run_seed(sh, s, options.verbose)))
                .collect();
            for (slot, h) in chunk_slots.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("seed worker panicked"));
            }
        });
    }
    slots.into_iter().map(|r| r.expect("every seed ran")).collect()
}

/// Outcome of [`run_pipeline`]; the run directory holds the artifacts.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Option<Summary>,
    pub manifest: Manifest,
}

/// Runs every enabled stage (computing disabled prerequisites in memory
/// without writing them) and records a MANIFEST, also on failure.
pub fn run_pipeline(config: &RunConfig, out: &Path, options: RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), config.to_json())?;
    let mut states: BTreeMap<String, StageState> =
        STAGE_ORDER.iter().map(|s| (s.to_string(), StageState::NotRun)).collect();
    let result = execute(config, out, options, &mut states);
    let error = result.as_ref().err().map(|e| e.to_string());
    if let Err(Error::Stage { stage, .. }) = &result {
        states.insert(stage.clone(), StageState::Failed);
    }
    let manifest = Manifest::scan(out, states, error)?;
    manifest.write(out)?;
    result.map(|summary| RunOutcome { summary, manifest })
}

fn execute(
    config: &RunConfig,
    out: &Path,
    options: RunOptions,
    states: &mut BTreeMap<String, StageState>,
) -> Result<Option<Summary>> {
    let st = config.stages;
    let Some(last) = st.last() else {
        return Ok(None);
    };
    let base_seed = config.seeds[0];
    let log = |msg: &str| {
        if options.verbose {
            eprintln!("{msg}");
        }
    };
    let done = |name: &str, states: &mut BTreeMap<String, StageState>| {
        if st.enabled(name) {
            states.insert(name.to_owned(), StageState::Complete);
        }
    };

    log("generate");
    let data = prepare_data(config).map_err(stage_err("generate", base_seed))?;
    if st.generate {
        write_data(&out.join("data"), &data)?;
    }
    done("generate", states);
    if last < stage_index("align") {
        return Ok(None);
    }

    log("align");
    let alignment = align(&data, &config.align).map_err(stage_err("align", base_seed))?;
    if st.align {
        write_alignment(&out.join("align"), &alignment)?;
    }
    done("align", states);
    if last < stage_index("pretrain") {
        return Ok(None);
    }

    log("pretrain");
    let max_len = config.encoder.max_positions;
    let (adjust_corpus, adjust_links, heldout, heldout_links) = split_corpus(&data.corpus, &alignment.links, data.n_adjust);
    let pretrain = || -> Result<(EncoderWeights, Vec<f64>)> {
        let init = EncoderWeights::init(config.encoder, config.pretrain.seed)?;
        let (w, report) = pretrain_mlm(&init, &pretraining_corpus(&data.vocab, &adjust_corpus, max_len), &config.pretrain)?;
        Ok((w, report.loss_trace))
    };
    let (original, mlm_trace) = pretrain().map_err(stage_err("pretrain", base_seed))?;
    if st.pretrain {
        let d = out.join("pretrain");
        fs::create_dir_all(&d)?;
        save_checkpoint(&original, &d.join("original.ckpt"))?;
        let csv: String = std::iter::once("step,loss\n".to_owned())
            .chain(mlm_trace.iter().enumerate().map(|(i, l)| format!("{i},{l}\n")))
            .collect();
        fs::write(d.join("loss_trace.csv"), csv)?;
    }
    done("pretrain", states);
    if last < stage_index("adjust") {
        return Ok(None);
    }

    let prepare_pairs = || -> Result<(WordPairSet, AnchorModel)> {
        let mut pairs = extract_word_pairs(&adjust_corpus, &adjust_links, &data.vocab, config.align.max_pairs, base_seed)?;
        pairs.retain_within(max_len);
        if pairs.is_empty() {
            return Err(Error::invalid("alignment produced no usable word pairs"));
        }
        let layer = config.adjust.resolved_layer(&original);
        let anchor = AnchorModel::with_cached_sources(original.clone(), layer, config.adjust.pooling, &pairs)?;
        Ok((pairs, anchor))
    };
    let (pairs, anchor) = prepare_pairs().map_err(stage_err("adjust", base_seed))?;
    let tasks = if last >= stage_index("finetune") {
        task_inputs(&data).map_err(stage_err("finetune", base_seed))?
    } else {
        Vec::new()
    };
    let heldout_contexts = CorpusContexts::new(&data.vocab, &heldout);
    let distance_sample = if last >= stage_index("analyze") {
        sample_distance_pairs(
            &heldout,
            &heldout_links,
            config.analysis.n_related,
            config.analysis.n_unrelated,
            base_seed,
        )
        .map_err(stage_err("analyze", base_seed))?
    } else {
        Vec::new()
    };
    let xsr_queries: Vec<Vec<u32>> = heldout_contexts.src.iter().map(|c| c.truncated(max_len).subword_ids).collect();
    let xsr_corpus: Vec<Vec<u32>> = heldout_contexts.tgt.iter().map(|c| c.truncated(max_len).subword_ids).collect();

    let shared = Shared {
        config,
        out,
        original: &original,
        anchor: &anchor,
        pairs: &pairs,
        tasks: &tasks,
        heldout_contexts: &heldout_contexts,
        distance_sample: &distance_sample,
        xsr_queries: &xsr_queries,
        xsr_corpus: &xsr_corpus,
        last,
    };
    let seeds = run_seeds(&shared, &config.seeds, options)?;
    for name in ["adjust", "finetune", "evaluate", "analyze", "xsr"] {
        done(name, states);
    }

    if last < stage_index("evaluate") {
        return Ok(None);
    }
    log("summarize");
    let summary = summary::summarize(config, &tasks_meta(&tasks), &seeds).map_err(stage_err("stats", base_seed))?;
    if st.stats {
        fs::write(out.join("stats.json"), serde_json::to_string_pretty(&summary.tests_only())? + "\n")?;
    }
    done("stats", states);
    fs::write(out.join("summary.json"), summary.to_json()?)?;
    Ok(Some(summary))
}

fn tasks_meta(tasks: &[TaskInputs]) -> Vec<(String, Option<usize>)> {
    tasks.iter().map(|t| (t.name.to_owned(), t.outside)).collect()
}
