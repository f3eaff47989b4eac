//! The five subcommands.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::anyhow;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use amrberger::aligner::corpus_stats;
use amrberger::classifiers::{
    dataset_from_samples, random_search, train, write_jsonl, ClassifierModel, Dataset, SearchSpace,
    TrainConfig, TrialRecord,
};
use amrberger::concepts::ConceptTable;
use amrberger::corpus::{
    load_amr_file, load_conllu_annotations, read_archive, write_amr_bank, write_archive,
    zip_examples, AlignmentSource, IngestErrors, TokenizedSentence,
};
use amrberger::embeddings::{ContextualStore, Embeddings, StaticTable, WordSource};
use amrberger::features::{manifest_hash, FeatureExtractor, FeatureLayout, FeatureTemplate};
use amrberger::oracle::{run_oracle, LossReport};
use amrberger::parser::{Models, Parser};
use amrberger::samples::{collect_sets, emit_training_samples, ClassifierId, SampleSet, Vocab};
use amrberger::smatch::{corpus_score, Metric};

use crate::run::RunDir;
use crate::{
    data, internal, Cli, CliError, Command, EmbeddingArgs, Encoding, EvaluateArgs, OracleArgs,
    ParseArgs, PreprocessArgs, TrainArgs, Which, WordVectors,
};

pub const ARCHIVE: &str = "examples.jsonl";
pub const CONCEPTS: &str = "concepts.tsv";
pub const LAYOUT: &str = "layout.json";
pub const FEATURES: &str = "features.manifest";
pub const PARSED: &str = "parsed.amr";

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Preprocess(a) => preprocess(cli, a),
        Command::Oracle(a) => oracle(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Parse(a) => parse(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| data(anyhow!("cannot read {}: {e}", path.display())))
}

/// An input named on the command line that does not exist is a usage error.
fn require_file(flag: &str, path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!(
            "--{flag}: {} does not exist",
            path.display()
        )))
    }
}

fn template(cli: &Cli) -> FeatureTemplate {
    FeatureTemplate {
        use_dependency: !cli.no_dependency_features,
        ..FeatureTemplate::default()
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(internal)
}

fn preprocess(cli: &Cli, a: &PreprocessArgs) -> Result<(), CliError> {
    require_file("amr", &a.amr)?;
    require_file("conllu", &a.conllu)?;
    let bank = load_amr_file(&a.amr).map_err(data)?;
    if !bank.errors.is_empty() {
        return Err(data(IngestErrors(bank.errors)));
    }
    let annotations = load_conllu_annotations(&a.conllu).map_err(data)?;
    let external = match &a.alignments {
        Some(path) => {
            require_file("alignments", path)?;
            let mut map = HashMap::new();
            for (i, line) in read_text(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (id, jamr) = line.split_once('\t').ok_or_else(|| {
                    data(anyhow!(
                        "{} line {}: expected id<TAB>alignment",
                        path.display(),
                        i + 1
                    ))
                })?;
                map.insert(id.to_string(), jamr.to_string());
            }
            Some(map)
        }
        None => None,
    };
    let source = match (&external, a.heuristic_alignments) {
        (Some(map), _) => AlignmentSource::External(map),
        (None, true) => AlignmentSource::Heuristic,
        (None, false) => AlignmentSource::Jamr,
    };
    let examples = zip_examples(&bank.records, &annotations, source).map_err(data)?;
    let table = ConceptTable::build(&examples);
    let stats = corpus_stats(&examples);
    let frac = |k: usize| {
        if stats.sentences == 0 {
            0.0
        } else {
            k as f64 / stats.sentences as f64
        }
    };
    info!(
        "{} sentences, alignment coverage {:.3}, reentrant {:.1}%, non-projective {:.1}%",
        stats.sentences,
        stats.alignment_coverage,
        100.0 * frac(stats.reentrant_sentences),
        100.0 * frac(stats.non_projective_sentences)
    );

    let mut run = RunDir::create(&a.out)?;
    let mut archive = Vec::new();
    write_archive(&mut archive, &examples).map_err(internal)?;
    run.write(ARCHIVE, &archive)?;
    run.write(CONCEPTS, table.to_tsv().as_bytes())?;
    let summary = json!({
        "stats": stats,
        "reentrant_fraction": frac(stats.reentrant_sentences),
        "non_projective_fraction": frac(stats.non_projective_sentences),
        "concept_entries": table.len(),
    });
    run.write("stats.json", format!("{:#}\n", summary).as_bytes())?;
    run.finish(cli, summary)
}

/// Loads the vectors a run asks for. Sentences the contextual store cannot
/// cover are named in the error.
fn load_embeddings<'a>(
    args: &EmbeddingArgs,
    sentences: impl IntoIterator<Item = &'a TokenizedSentence>,
) -> Result<Embeddings, CliError> {
    let table = match &args.vectors {
        Some(path) => {
            require_file("vectors", path)?;
            Some(StaticTable::load(path).map_err(data)?)
        }
        None => None,
    };
    let emb = match args.embeddings {
        WordVectors::Static => {
            let table = table.ok_or_else(|| usage("--embeddings static needs --vectors"))?;
            Embeddings::static_only(table, !args.no_concept_embeddings)
        }
        WordVectors::Contextual => {
            let sentences: Vec<&TokenizedSentence> = sentences.into_iter().collect();
            let Some(path) = &args.store else {
                return Err(usage(format!(
                    "--embeddings contextual needs --store; no contextual vectors for {}",
                    list_ids(sentences.iter().map(|s| s.id.as_str()))
                )));
            };
            require_file("store", path)?;
            let store = ContextualStore::load(path).map_err(data)?;
            let gaps: Vec<&str> = sentences
                .iter()
                .filter(|s| store.token_count(&s.id) != Some(s.len()))
                .map(|s| s.id.as_str())
                .collect();
            if !gaps.is_empty() {
                return Err(data(anyhow!(
                    "{} lacks vectors (or has the wrong token count) for {}",
                    path.display(),
                    list_ids(gaps.into_iter())
                )));
            }
            let concepts = if args.no_concept_embeddings {
                None
            } else {
                table
            };
            Embeddings::contextual(store, concepts, 0)
        }
    };
    emb.check().map_err(data)?;
    Ok(emb)
}

fn list_ids<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let ids: Vec<&str> = ids.collect();
    let shown = ids.iter().take(20).copied().collect::<Vec<_>>().join(", ");
    match ids.len() {
        0 => "no sentences".to_string(),
        n if n > 20 => format!("{n} sentences: {shown}, ..."),
        n => format!("{n} sentence(s): {shown}"),
    }
}

/// How oracle samples were laid out; read back by `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLayout {
    pub stack_slots: usize,
    pub buffer_slots: usize,
    pub use_dependency: bool,
    pub word_source: WordSource,
    pub word_dim: usize,
    pub concept_dim: usize,
    pub indexed: bool,
}

impl SampleLayout {
    fn template(&self) -> FeatureTemplate {
        FeatureTemplate {
            stack_slots: self.stack_slots,
            buffer_slots: self.buffer_slots,
            use_dependency: self.use_dependency,
        }
    }

    fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(
            self.template(),
            self.word_dim,
            self.concept_dim,
            self.indexed,
        )
    }

    /// Manifest of the dense vectors the classifiers see.
    fn dense_manifest(&self) -> String {
        FeatureLayout::new(self.template(), self.word_dim, self.concept_dim, false)
            .manifest(self.word_source)
    }
}

fn sample_file(c: ClassifierId) -> String {
    format!("{}.samples", c.name())
}

fn vocab_file(c: ClassifierId) -> String {
    format!("{}.vocab", c.name())
}

fn oracle(cli: &Cli, a: &OracleArgs) -> Result<(), CliError> {
    require_file("archive", &a.archive)?;
    let examples = read_archive(&read_text(&a.archive)?).map_err(data)?;
    let emb = load_embeddings(&a.embedding, examples.iter().map(|e| &e.sentence))?;
    let indexed = a.encoding == Encoding::Indexed;
    if indexed && emb.config.word_source != WordSource::Static {
        return Err(usage("--encoding indexed needs --embeddings static"));
    }
    let template = template(cli);
    let fx = FeatureExtractor::new(template, &emb, indexed).map_err(data)?;
    let layout = SampleLayout {
        stack_slots: template.stack_slots,
        buffer_slots: template.buffer_slots,
        use_dependency: template.use_dependency,
        word_source: emb.config.word_source,
        word_dim: emb.config.word_dim,
        concept_dim: emb.config.concept_dim,
        indexed,
    };
    if layout.layout().width() != fx.width() {
        return Err(internal(anyhow!(
            "layout width {} != extractor width {}",
            layout.layout().width(),
            fx.width()
        )));
    }

    let results: Vec<_> = pool(cli.jobs)?.install(|| {
        examples
            .par_iter()
            .map(|ex| {
                let r = run_oracle(ex).map_err(|e| e.to_string())?;
                let s =
                    emit_training_samples(ex, &r, &fx).map_err(|e| format!("{}: {e}", ex.id()))?;
                Ok::<_, String>((r, s))
            })
            .collect()
    });
    let mut samples = Vec::new();
    let mut loss = LossReport::default();
    let mut skipped = Vec::new();
    let mut lossy = Vec::new();
    let mut rebuilt = Vec::new();
    for (ex, r) in examples.iter().zip(results) {
        match r {
            Ok((result, s)) => {
                loss += result.loss;
                if !result.loss.is_zero() {
                    lossy.push(json!({"id": ex.id(), "loss": result.loss}));
                }
                samples.extend(s);
                rebuilt.push((ex, result.reconstructed));
            }
            Err(reason) => {
                warn!("skipping {}", reason);
                skipped.push(json!({"id": ex.id(), "reason": reason}));
            }
        }
    }
    let sets = collect_sets(&samples, indexed, fx.width()).map_err(internal)?;

    let mut run = RunDir::create(&a.out)?;
    let mut counts = serde_json::Map::new();
    for (set, vocab) in &sets {
        run.write(&sample_file(set.classifier), &set.to_bytes())?;
        run.write(&vocab_file(set.classifier), vocab.to_text().as_bytes())?;
        counts.insert(set.classifier.name().to_string(), json!(set.len()));
    }
    run.write(LAYOUT, format!("{:#}\n", json!(layout)).as_bytes())?;
    run.write(
        FEATURES,
        layout.layout().manifest(layout.word_source).as_bytes(),
    )?;
    let mut amr = Vec::new();
    let texts: Vec<String> = rebuilt.iter().map(|(ex, _)| ex.sentence.text()).collect();
    write_amr_bank(
        &mut amr,
        rebuilt
            .iter()
            .zip(&texts)
            .map(|((ex, g), t)| (ex.id(), t.as_str(), g)),
    )
    .map_err(internal)?;
    run.write("oracle.amr", &amr)?;
    let report = json!({
        "sentences": examples.len(),
        "skipped": skipped,
        "loss": loss,
        "lossy_sentences": lossy,
    });
    run.write("loss.json", format!("{:#}\n", report).as_bytes())?;
    let summary = json!({
        "sentences": examples.len(),
        "skipped": report["skipped"].as_array().map_or(0, Vec::len),
        "samples": counts,
        "width": fx.width(),
        "loss": loss,
    });
    run.finish(cli, summary)
}

fn read_layout(dir: &Path) -> Result<SampleLayout, CliError> {
    let path = dir.join(LAYOUT);
    serde_json::from_str(&read_text(&path)?).map_err(|e| data(anyhow!("{}: {e}", path.display())))
}

fn load_samples(dir: &Path, c: ClassifierId) -> Result<(SampleSet, Vocab), CliError> {
    let set = SampleSet::load(dir.join(sample_file(c))).map_err(data)?;
    let vocab = Vocab::from_text(&read_text(&dir.join(vocab_file(c)))?);
    Ok((set, vocab))
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    require_file("samples", &a.samples)?;
    let layout = read_layout(&a.samples)?;
    if layout.use_dependency == cli.no_dependency_features {
        let (was, flag) = if layout.use_dependency {
            ("with", "drop --no-dependency-features")
        } else {
            ("without", "pass --no-dependency-features")
        };
        return Err(usage(format!(
            "samples in {} were extracted {was} dependency features; {flag} or rerun the oracle",
            a.samples.display()
        )));
    }
    let manifest = layout.dense_manifest();
    let hash = manifest_hash(&manifest);
    let dev_layout = match &a.dev {
        Some(dir) => {
            require_file("dev", dir)?;
            let d = read_layout(dir)?;
            if d.dense_manifest() != manifest {
                return Err(data(anyhow!(
                    "dev samples in {} use a different feature layout than {}; run the oracle on both splits with the same flags",
                    dir.display(),
                    a.samples.display()
                )));
            }
            Some(d)
        }
        None => None,
    };
    if a.search.is_some() && a.dev.is_none() {
        return Err(usage("--search needs --dev"));
    }
    let table = if layout.indexed || dev_layout.as_ref().is_some_and(|d| d.indexed) {
        let path = a
            .vectors
            .as_ref()
            .ok_or_else(|| usage("indexed samples need --vectors to expand word slots"))?;
        require_file("vectors", path)?;
        let t = StaticTable::load(path).map_err(data)?;
        if t.dim() != layout.word_dim {
            return Err(data(anyhow!(
                "{} has dimension {}, samples were indexed against dimension {}",
                path.display(),
                t.dim(),
                layout.word_dim
            )));
        }
        Some(t)
    } else {
        None
    };
    let to_dataset = |l: &SampleLayout, set: &SampleSet, source: &Vocab, target: &Vocab| {
        let expand = table.as_ref().map(|t| (l.layout(), t));
        dataset_from_samples(set, expand.as_ref().map(|(l, t)| (l, *t)), source, target)
            .map_err(data)
    };

    let chosen: Vec<ClassifierId> = match a.classifier {
        Which::All => ClassifierId::ALL.to_vec(),
        Which::Transition => vec![ClassifierId::Transition],
        Which::Label => vec![ClassifierId::Label],
        Which::Reentrancy => vec![ClassifierId::Reentrancy],
    };
    let cfg = TrainConfig {
        hidden_layers: a.hidden_layers,
        hidden_width: a.hidden_width,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        batch_size: a.batch_size,
        epochs: a.epochs,
        patience: a.patience,
        seed: cli.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let mut run = RunDir::create(&a.out)?;
    let mut summary = serde_json::Map::new();
    for c in chosen {
        let (set, vocab) = load_samples(&a.samples, c)?;
        if set.is_empty() || vocab.is_empty() {
            return Err(data(anyhow!("no {c} samples in {}", a.samples.display())));
        }
        let d = to_dataset(&layout, &set, &vocab, &vocab)?;
        let dev: Option<Dataset> = match (&a.dev, &dev_layout) {
            (Some(dir), Some(dl)) => {
                let (dset, dvocab) = load_samples(dir, c)?;
                Some(to_dataset(dl, &dset, &dvocab, &vocab)?).filter(|d| !d.is_empty())
            }
            _ => None,
        };
        let (used, outcome, trials): (TrainConfig, _, Vec<TrialRecord>) = match a.search {
            Some(trials) => {
                let dev = dev
                    .as_ref()
                    .ok_or_else(|| data(anyhow!("--search needs {c} dev samples, found none")))?;
                let space = SearchSpace {
                    hidden_layers: vec![a.hidden_layers],
                    hidden_width: vec![a.hidden_width],
                    momentum: vec![a.momentum],
                    batch_size: vec![a.batch_size],
                    epochs: a.epochs,
                    patience: a.patience,
                    trials,
                    ..SearchSpace::default()
                };
                random_search(&space, &d, dev, vocab.len(), cli.seed).map_err(data)?
            }
            None => {
                let o = train(&d, dev.as_ref(), vocab.len(), &cfg).map_err(data)?;
                (cfg.clone(), o, Vec::new())
            }
        };
        info!(
            "{c}: best epoch {} dev accuracy {:?}",
            outcome.best_epoch, outcome.best_dev_accuracy
        );
        let model =
            ClassifierModel::new(c, hash.clone(), outcome.model, vocab).map_err(internal)?;
        model.save(&a.out).map_err(data)?;
        run.adopt(&format!("{}.model", c.name()))?;
        run.adopt(&vocab_file(c))?;
        let mut metrics = Vec::new();
        write_jsonl(&mut metrics, &outcome.metrics).map_err(internal)?;
        run.write(&format!("{}.metrics.jsonl", c.name()), &metrics)?;
        if !trials.is_empty() {
            let mut t = Vec::new();
            write_jsonl(&mut t, &trials).map_err(internal)?;
            run.write(&format!("{}.search.jsonl", c.name()), &t)?;
        }
        summary.insert(
            c.name().to_string(),
            json!({
                "samples": d.len(),
                "best_epoch": outcome.best_epoch,
                "best_dev_accuracy": outcome.best_dev_accuracy,
                "config": used,
            }),
        );
    }
    run.write(FEATURES, manifest.as_bytes())?;
    run.finish(
        cli,
        json!({ "manifest_hash": hash, "classifiers": summary }),
    )
}

fn parse(cli: &Cli, a: &ParseArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.reentrancy_threshold) {
        return Err(usage("--reentrancy-threshold must lie in [0, 1]"));
    }
    require_file("models", &a.models)?;
    require_file("concepts", &a.concepts)?;
    require_file("input", &a.input)?;
    let table = ConceptTable::from_tsv(&read_text(&a.concepts)?).map_err(data)?;
    let sentences = load_conllu_annotations(&a.input).map_err(data)?;
    let emb = load_embeddings(&a.embedding, &sentences)?;
    let template = template(cli);
    let layout = FeatureLayout::dense(template, &emb);
    let hash = manifest_hash(&layout.manifest(emb.config.word_source));
    let loaded = ClassifierId::ALL
        .into_iter()
        .map(|c| ClassifierModel::load(&a.models, c).map_err(data))
        .collect::<Result<Vec<_>, _>>()?;
    let models = Models::checked([&loaded[0], &loaded[1], &loaded[2]], &hash).map_err(data)?;
    let mut parser = Parser::new(models, &table, &emb, template).map_err(data)?;
    parser.reentrancy_threshold = a.reentrancy_threshold;
    let out = parser.parse_corpus(&sentences, cli.jobs);

    let texts: HashMap<&str, String> = sentences
        .iter()
        .map(|s| (s.id.as_str(), s.text()))
        .collect();
    let mut amr = Vec::new();
    write_amr_bank(
        &mut amr,
        out.graphs
            .iter()
            .map(|(id, g)| (id.as_str(), texts[id.as_str()].as_str(), g)),
    )
    .map_err(internal)?;
    let mut run = RunDir::create(&a.out)?;
    run.write(PARSED, &amr)?;
    let failures: Vec<String> = out.failures.iter().map(ToString::to_string).collect();
    if !failures.is_empty() {
        run.write("failures.txt", (failures.join("\n") + "\n").as_bytes())?;
    }
    let summary = json!({
        "sentences": sentences.len(),
        "parsed": out.graphs.len(),
        "failures": failures.len(),
        "repairs": out.repairs,
    });
    run.finish(cli, summary)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(data(anyhow!(
            "{} of {} sentences failed to parse; see {}",
            failures.len(),
            sentences.len(),
            a.out.join("failures.txt").display()
        )))
    }
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    require_file("pred", &a.pred)?;
    require_file("gold", &a.gold)?;
    let metrics = if a.metrics.is_empty() {
        Metric::ALL.to_vec()
    } else {
        a.metrics
            .iter()
            .map(|m| {
                Metric::from_name(m).ok_or_else(|| {
                    let known: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
                    usage(format!("unknown metric `{m}`; known: {}", known.join(", ")))
                })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let gold = load_amr_file(&a.gold).map_err(data)?;
    if !gold.errors.is_empty() {
        return Err(data(IngestErrors(gold.errors)));
    }
    let pred = load_amr_file(&a.pred).map_err(data)?;
    for e in &pred.errors {
        warn!("prediction skipped: {e}");
    }
    let pairs = |bank: amrberger::corpus::AmrBank| -> Vec<_> {
        bank.records.into_iter().map(|r| (r.id, r.graph)).collect()
    };
    let report = corpus_score(&pairs(pred), &pairs(gold), &metrics, a.restarts, cli.seed);
    let text = report.to_text();
    print!("{text}");
    let mut run = RunDir::create(&a.out)?;
    run.write("report.txt", text.as_bytes())?;
    let mut scores = Vec::new();
    report.write_jsonl(&mut scores).map_err(internal)?;
    run.write("scores.jsonl", &scores)?;
    let summary = json!({
        "sentences": report.sentences,
        "missing_predictions": report.missing_predictions,
        "unknown_predictions": report.unknown_predictions,
        "scores": report.lines(),
    });
    run.finish(cli, summary)
}
