//! Acceptance checks. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use amrberger::classifiers::{train, ClassifierModel, Dataset, Mlp, TrainConfig};
use amrberger::corpus::{load_amr_file, parse_jamr_alignment, AnnotatedExample, TokenizedSentence};
use amrberger::embeddings::{ContextualStore, Embeddings, StaticTable};
use amrberger::features::{FeatureExtractor, FeatureLayout, FeatureTemplate};
use amrberger::graph::isomorphic;
use amrberger::oracle::run_oracle;
use amrberger::samples::{
    collect_sets, emit_training_samples, ClassifierId, SampleSet, Vocab, HEADER_BYTES,
};
use amrberger::smatch::{corpus_score, metric_score, smatch, smatch_exact, Metric};
use amrberger::{parse_penman, serialize_penman};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, fuzz_sequence, random_graph, toy_examples};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..1000 {
        let g = random_graph(&mut rng, 8);
        let text = serialize_penman(&g).map_err(|e| format!("graph {i}: {e}"))?;
        let back = parse_penman(&text).map_err(|e| format!("graph {i}: {e}"))?;
        check(isomorphic(&g, &back), || {
            format!("graph {i} changed: {text}")
        })?;
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!("1000 graphs isomorphic in {:.2}s", t.as_secs_f64()))
}

fn smatch_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for i in 0..500u64 {
        let a = random_graph(&mut rng, 6);
        let b = random_graph(&mut rng, 6);
        let hill = smatch(&a, &b, 8, i);
        let exact = smatch_exact(&a, &b).map_err(|e| e.to_string())?;
        check(hill.f1() == exact.f1(), || {
            format!(
                "pair {i}: hill-climb F1 {} != exact F1 {}",
                hill.f1(),
                exact.f1()
            )
        })?;
        for g in [&a, &b] {
            check(smatch(g, g, 8, i).f1() == 1.0, || {
                format!("pair {i}: smatch(g, g) != 1")
            })?;
        }
    }
    Ok("500 pairs: hill-climb (8 restarts) == exact; smatch(g,g) = 1".into())
}

fn fine_grained_contrasts() -> Outcome {
    let base = "(w / want-01 :polarity - :ARG0 (p / person :wiki \"Alan_Turing\" :name (n / name :op1 \"Alan\")) \
                :ARG1 (v / visit-01 :ARG0 p :ARG1 (c / city :name (n2 / name :op1 \"Trieste\"))))";
    let relabeled = base.replace(":ARG1 (c / city", ":location (c / city");
    let resensed = base.replace("visit-01", "visit-02");
    let g = |s: &str| parse_penman(s).unwrap();
    let score = |m, a: &str, b: &str| metric_score(m, &g(a), &g(b), 4, 0).f1();
    check(score(Metric::Unlabeled, &relabeled, base) == 1.0, || {
        "edge-label diff: Unlabeled != 1".into()
    })?;
    check(score(Metric::Smatch, &relabeled, base) < 1.0, || {
        "edge-label diff: Smatch == 1".into()
    })?;
    check(score(Metric::NoWsd, &resensed, base) == 1.0, || {
        "sense diff: No WSD != 1".into()
    })?;
    check(score(Metric::Smatch, &resensed, base) < 1.0, || {
        "sense diff: Smatch == 1".into()
    })?;
    for m in Metric::ALL {
        check(score(m, base, base) == 1.0, || {
            format!("identical: {m} != 1")
        })?;
    }
    Ok("label-only -> Unlabeled 1.0; sense-only -> No WSD 1.0; identical -> all 1.0".into())
}

fn dog_wants() -> AnnotatedExample {
    let graph = parse_penman("(w / want-01 :ARG0 (d / dog) :ARG1 (e / eat-01 :ARG0 d))").unwrap();
    let sentence = TokenizedSentence::from_whitespace("dog-wants", "The dog wants to eat");
    let alignment = parse_jamr_alignment("dog-wants", "1-2|0.0 2-3|0 4-5|0.1", &graph, 5).unwrap();
    AnnotatedExample {
        sentence,
        graph,
        alignment,
    }
}

fn oracle_fidelity() -> Outcome {
    let mut examples = toy_examples("train");
    examples.extend(toy_examples("dev"));
    let (mut reentrant, mut named, mut negated) = (false, false, false);
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for ex in &examples {
        let r = run_oracle(ex).map_err(|e| e.to_string())?;
        reentrant |= !ex.graph.reentrant_nodes().is_empty();
        named |= ex.graph.nodes().iter().any(|n| n.label == "name");
        negated |= ex.graph.edges().iter().any(|e| e.label == ":polarity");
        pred.push((ex.id().to_string(), r.reconstructed));
        gold.push((ex.id().to_string(), ex.graph.clone()));
    }
    check(
        examples.len() >= 10 && reentrant && named && negated,
        || "toy corpus lacks coverage".into(),
    )?;
    let report = corpus_score(&pred, &gold, &[Metric::Smatch], 8, 0);
    let f1 = report.scores[&Metric::Smatch].f1();
    check(f1 >= 0.90, || format!("toy replay Smatch {f1:.4} < 0.90"))?;
    let ex = dog_wants();
    let r = run_oracle(&ex).map_err(|e| e.to_string())?;
    let worked = smatch_exact(&r.reconstructed, &ex.graph)
        .map_err(|e| e.to_string())?
        .f1();
    check(worked == 1.0, || {
        format!("worked example replay Smatch {worked}")
    })?;
    Ok(format!(
        "{} toy sentences replay at Smatch {f1:.4}; worked example at {worked:.1}",
        examples.len()
    ))
}

fn transition_progress() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut steps = 0;
    for i in 0..10_000 {
        steps += fuzz_sequence(&mut rng).map_err(|e| format!("sequence {i}: {e}"))?;
    }
    Ok(format!(
        "10000 random legal sequences ({steps} steps) terminate with valid rooted graphs"
    ))
}

/// Central differences on every parameter of a fresh net.
fn worst_gradient_error(dims: &[usize], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mlp::new(dims, &mut rng).unwrap();
    for b in &mut m.biases {
        b.mapv_inplace(|_| rng.gen_range(-0.2..0.2));
    }
    let x = Array2::from_shape_fn((4, dims[0]), |_| rng.gen_range(-1.0..1.0));
    let classes = dims[dims.len() - 1];
    let y: Vec<usize> = (0..4).map(|i| i % classes).collect();
    let (_, g) = m.loss_and_gradients(&x, &y);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut rel =
        |a: f64, n: f64| worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
    for l in 0..m.weights.len() {
        let cols = m.weights[l].ncols();
        for k in 0..m.weights[l].len() {
            let idx = [k / cols, k % cols];
            let w = m.weights[l][idx];
            m.weights[l][idx] = w + h;
            let up = m.loss_and_gradients(&x, &y).0;
            m.weights[l][idx] = w - h;
            let down = m.loss_and_gradients(&x, &y).0;
            m.weights[l][idx] = w;
            rel(g.weights[l][idx], (up - down) / (2.0 * h));
        }
        for k in 0..m.biases[l].len() {
            let b = m.biases[l][k];
            m.biases[l][k] = b + h;
            let up = m.loss_and_gradients(&x, &y).0;
            m.biases[l][k] = b - h;
            let down = m.loss_and_gradients(&x, &y).0;
            m.biases[l][k] = b;
            rel(g.biases[l][k], (up - down) / (2.0 * h));
        }
    }
    worst
}

fn classifier_numerics() -> Outcome {
    let mut errors = Vec::new();
    for hidden in [1usize, 2, 6] {
        let mut dims = vec![5];
        dims.extend(std::iter::repeat_n(6, hidden));
        dims.push(3);
        let e = worst_gradient_error(&dims, hidden as u64);
        check(e < 1e-4, || {
            format!("{hidden} hidden layers: relative error {e:.2e}")
        })?;
        errors.push(format!("{e:.1e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = Mlp::new(&[8, 16, 16, 5], &mut rng).unwrap();
    for _ in 0..200 {
        let x: Vec<f32> = (0..8).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let s: f64 = m.forward(&x).map_err(|e| e.to_string())?.iter().sum();
        check((s - 1.0).abs() <= 1e-6, || format!("softmax sums to {s}"))?;
    }
    let mut data = Dataset::new(6);
    for i in 0..90 {
        let row: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        data.push(&row, i % 3);
    }
    let cfg = TrainConfig {
        hidden_layers: 2,
        hidden_width: 12,
        epochs: 4,
        batch_size: 8,
        seed: 42,
        ..TrainConfig::default()
    };
    let vocab = Vocab::new(["a", "b", "c"].map(String::from));
    let bytes = || {
        let o = train(&data, Some(&data), 3, &cfg).unwrap();
        ClassifierModel::new(ClassifierId::Label, "0".repeat(64), o.model, vocab.clone())
            .unwrap()
            .to_bytes()
    };
    check(bytes() == bytes(), || {
        "two runs with one seed differ".into()
    })?;
    Ok(format!(
        "gradient relative errors {} (1/2/6 hidden); softmax within 1e-6; seeded training bit-exact",
        errors.join("/")
    ))
}

fn bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_amrberger"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn dev_smatch(eval_dir: &Path) -> Result<f64, String> {
    let text = std::fs::read_to_string(eval_dir.join("scores.jsonl")).map_err(|e| e.to_string())?;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if v["metric"] == "Smatch" {
            return Ok(v["f1"].as_f64().unwrap_or(0.0) / 100.0);
        }
    }
    Err("no Smatch line".into())
}

fn transition_dev_accuracy(model_dir: &Path) -> Result<f64, String> {
    let text =
        std::fs::read_to_string(model_dir.join("manifest.json")).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["summary"]["classifiers"]["transition"]["best_dev_accuracy"]
        .as_f64()
        .ok_or_else(|| "no transition dev accuracy".into())
}

/// Frozen after the first measurement (0.849 with the default network and
/// seed 1), leaving room for platform-level float differences.
const DEV_SMATCH_FLOOR: f64 = 0.80;

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).display().to_string();
    let toy = |name: &str| fixture(&format!("toy/{name}")).display().to_string();
    let vectors = toy("vectors.txt");
    let mut train_time = Duration::ZERO;
    let mut run = |tag: &str, ablate: bool| -> Result<f64, String> {
        let mut g: Vec<&str> = vec!["--seed", "1", "--jobs", "2"];
        if ablate {
            g.push("--no-dependency-features");
        }
        let with = |rest: &[&str]| -> Vec<String> {
            g.iter()
                .copied()
                .chain(rest.iter().copied())
                .map(String::from)
                .collect()
        };
        let call = |args: Vec<String>| bin(&args.iter().map(String::as_str).collect::<Vec<_>>());
        for split in ["train", "dev"] {
            call(with(&[
                "preprocess",
                "--amr",
                &toy(&format!("{split}.amr")),
                "--conllu",
                &toy(&format!("{split}.conllu")),
                "--out",
                &p(&format!("{tag}pre-{split}")),
            ]))?;
            call(with(&[
                "oracle",
                "--archive",
                &p(&format!("{tag}pre-{split}/examples.jsonl")),
                "--vectors",
                &vectors,
                "--out",
                &p(&format!("{tag}or-{split}")),
            ]))?;
        }
        let t = Instant::now();
        call(with(&[
            "train",
            "--samples",
            &p(&format!("{tag}or-train")),
            "--dev",
            &p(&format!("{tag}or-dev")),
            "--out",
            &p(&format!("{tag}model")),
        ]))?;
        train_time += t.elapsed();
        call(with(&[
            "parse",
            "--models",
            &p(&format!("{tag}model")),
            "--concepts",
            &p(&format!("{tag}pre-train/concepts.tsv")),
            "--input",
            &toy("dev.conllu"),
            "--vectors",
            &vectors,
            "--out",
            &p(&format!("{tag}parse")),
        ]))?;
        let parsed =
            load_amr_file(p(&format!("{tag}parse/parsed.amr"))).map_err(|e| e.to_string())?;
        check(
            parsed.errors.is_empty() && parsed.records.len() == 8,
            || format!("{tag}: parse output is not 8 valid graphs"),
        )?;
        call(with(&[
            "evaluate",
            "--pred",
            &p(&format!("{tag}parse/parsed.amr")),
            "--gold",
            &toy("dev.amr"),
            "--out",
            &p(&format!("{tag}eval")),
        ]))?;
        dev_smatch(Path::new(&p(&format!("{tag}eval"))))
    };
    let full = run("", false)?;
    let ablated = run("ablate-", true)?;
    check(train_time <= Duration::from_secs(300), || {
        format!("training took {train_time:?}")
    })?;
    check(full >= 0.5, || format!("dev Smatch {full:.3} < 0.5"))?;
    check(full >= DEV_SMATCH_FLOOR, || {
        format!("dev Smatch {full:.3} below the frozen floor {DEV_SMATCH_FLOOR}")
    })?;
    let theta = transition_dev_accuracy(Path::new(&p("model")))?;
    check(theta >= 0.7, || {
        format!("transition dev accuracy {theta:.3} < 0.7")
    })?;

    // the ablation touches dependency coordinates only
    let a = SampleSet::load(p("or-train/transition.samples")).map_err(|e| e.to_string())?;
    let b = SampleSet::load(p("ablate-or-train/transition.samples")).map_err(|e| e.to_string())?;
    check(a.width == b.width && a.labels == b.labels, || {
        "ablation changed the sample shape or labels".into()
    })?;
    let table = StaticTable::load(&vectors).map_err(|e| e.to_string())?;
    let layout = FeatureLayout::new(FeatureTemplate::default(), table.dim(), table.dim(), false);
    let mut changed = 0;
    for (i, (x, y)) in a.features.iter().zip(&b.features).enumerate() {
        if x.to_bits() != y.to_bits() {
            let col = i % a.width;
            check(layout.is_dependency_coordinate(col), || {
                format!("ablation changed non-dependency coordinate {col}")
            })?;
            changed += 1;
        }
    }
    check(changed > 0, || "ablation changed nothing".into())?;
    // models trained with dependency features refuse an ablated runtime
    let mismatch = Command::new(env!("CARGO_BIN_EXE_amrberger"))
        .args([
            "--no-dependency-features",
            "parse",
            "--models",
            &p("model"),
            "--concepts",
            &p("pre-train/concepts.tsv"),
            "--input",
            &toy("dev.conllu"),
            "--vectors",
            &vectors,
            "--out",
            &p("mismatch"),
        ])
        .output()
        .map_err(|e| e.to_string())?;
    check(mismatch.status.code() == Some(2), || {
        "manifest mismatch was not rejected".into()
    })?;
    Ok(format!(
        "dev Smatch {full:.3} (floor {DEV_SMATCH_FLOOR}), transition dev accuracy {theta:.3}, training {:.1}s; ablation dev Smatch {ablated:.3}, {changed} dependency values changed",
        train_time.as_secs_f64()
    ))
}

fn size_arithmetic() -> Outcome {
    let examples = toy_examples("train");
    let table = StaticTable::load(fixture("toy/vectors.txt")).map_err(|e| e.to_string())?;
    let d = 1024;
    let mut store = ContextualStore::new(d);
    for ex in &examples {
        let values = (0..ex.sentence.len() * d)
            .map(|i| (i % 97) as f32 / 97.0)
            .collect();
        store.insert(ex.id(), values).map_err(|e| e.to_string())?;
    }
    let indexed_emb = Embeddings::static_only(table.clone(), true);
    let contextual_emb = Embeddings::contextual(store, Some(table), 0);
    let template = FeatureTemplate::default();
    let n = template.stack_slots + template.buffer_slots;
    let sets = |emb: &Embeddings, indexed: bool| -> Result<Vec<SampleSet>, String> {
        let fx = FeatureExtractor::new(template, emb, indexed).map_err(|e| e.to_string())?;
        let mut samples = Vec::new();
        for ex in &examples {
            let r = run_oracle(ex).map_err(|e| e.to_string())?;
            samples.extend(emit_training_samples(ex, &r, &fx).map_err(|e| e.to_string())?);
        }
        Ok(collect_sets(&samples, indexed, fx.width())
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(s, _)| s)
            .collect())
    };
    let small = sets(&indexed_emb, true)?;
    let large = sets(&contextual_emb, false)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rows = 0;
    for (s, l) in small.iter().zip(&large) {
        check(s.len() == l.len(), || "row counts differ".into())?;
        check(l.width - s.width == (d - 1) * n, || {
            format!("row widths differ by {}", l.width - s.width)
        })?;
        let size = |set: &SampleSet, tag: &str| -> Result<usize, String> {
            let path = dir
                .path()
                .join(format!("{tag}-{}.samples", set.classifier.name()));
            std::fs::write(&path, set.to_bytes()).map_err(|e| e.to_string())?;
            Ok(std::fs::metadata(&path).map_err(|e| e.to_string())?.len() as usize)
        };
        let (a, b) = (size(s, "indexed")?, size(l, "contextual")?);
        // header, then per row: width f32 values and a u32 label
        check(a == HEADER_BYTES + s.len() * (s.width * 4 + 4), || {
            format!("indexed file is {a} bytes")
        })?;
        check(b - a == s.len() * (d - 1) * n * 4, || {
            format!("{} file grew by {} bytes", s.classifier, b - a)
        })?;
        rows += s.len();
    }
    Ok(format!(
        "{rows} rows: contextual files exactly (d-1)*n = {}*{n} floats per row larger",
        d - 1
    ))
}

fn amre_golden() -> Outcome {
    let store = ContextualStore::load(fixture("dog_wants.amre")).map_err(|e| e.to_string())?;
    check(store.dim() == 1024 && store.len() == 2, || {
        "wrong header or record count".into()
    })?;
    check(store.token_count("dog-wants") == Some(5), || {
        "dog_wants should have 5 tokens".into()
    })?;
    for t in 0..5 {
        let v = store.get("dog-wants", t).ok_or("missing dog_wants token")?;
        for (k, x) in v.iter().enumerate() {
            let i = t * 1024 + k;
            check(
                x.to_bits() == ((((i % 256) as i32 - 128) as f32) / 64.0).to_bits(),
                || format!("dog_wants[{t}][{k}] = {x}"),
            )?;
        }
    }
    let edges: [u32; 8] = [
        0x7F7FFFFF, 0x00000001, 0x80000000, 0x40490FDB, 0xFF7FFFFF, 0x3F800000, 0x00800000,
        0x3EAAAAAB,
    ];
    for t in 0..2 {
        let v = store.get("edé-2", t).ok_or("missing edé-2 token")?;
        for (k, x) in v.iter().enumerate() {
            check(x.to_bits() == edges[(t * 1024 + k) % 8], || {
                format!("edé-2[{t}][{k}] has bits {:#x}", x.to_bits())
            })?;
        }
    }
    let bytes = std::fs::read(fixture("dog_wants.amre")).map_err(|e| e.to_string())?;
    check(
        store.to_bytes().map_err(|e| e.to_string())? == bytes,
        || "re-encoding differs from the golden file".into(),
    )?;
    Ok("golden AMRE file loads bit-exact (incl. subnormal, -0, extremes) and re-encodes identically".into())
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("PRIMARY   penman round trip", round_trip),
        ("PRIMARY   smatch correctness", smatch_correctness),
        ("PRIMARY   fine-grained metrics", fine_grained_contrasts),
        ("PRIMARY   oracle fidelity", oracle_fidelity),
        ("PRIMARY   transition progress", transition_progress),
        ("PRIMARY   classifier numerics", classifier_numerics),
        ("PRIMARY   end-to-end desk run", end_to_end),
        ("PRIMARY   sample size arithmetic", size_arithmetic),
        ("SECONDARY embedding file boundary", amre_golden),
    ];
    let mut failed = Vec::new();
    // written straight to stderr so the lines show without --nocapture
    let mut err = std::io::stderr();
    writeln!(err).unwrap();
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let line = match &outcome {
            Ok(detail) => format!("PASS  {name}: {detail}"),
            Err(why) => {
                failed.push(name);
                format!("FAIL  {name}: {why}")
            }
        };
        writeln!(err, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
