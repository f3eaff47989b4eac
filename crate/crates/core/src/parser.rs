//! Greedy parsing: query the action classifier on every configuration, take
//! the best legal action, fill in labels and reentrancies, then build the
//! graph once stack and buffer are empty.

use log::{debug, warn};
use rayon::prelude::*;
use thiserror::Error;

use crate::classifiers::{argmax, Classifier, ClassifierModel, MlpError, ModelError};
use crate::concepts::ConceptTable;
use crate::corpus::TokenizedSentence;
use crate::embeddings::Embeddings;
use crate::features::{FeatureError, FeatureExtractor, FeatureTemplate};
use crate::graph::AmrGraph;
use crate::oracle::OracleResult;
use crate::samples::{ClassifierId, Vocab};
use crate::transition::{
    build_graph, Action, ActionKind, Configuration, StackItem, TransitionError, REPAIR_LABEL,
    TOP_LABEL,
};

pub const DEFAULT_REENTRANCY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{id}: sentence has no tokens")]
    EmptySentence { id: String },
    #[error("{id}: {source}")]
    Feature {
        id: String,
        #[source]
        source: FeatureError,
    },
    #[error("{id}: {classifier} classifier: {source}")]
    Classifier {
        id: String,
        classifier: ClassifierId,
        #[source]
        source: MlpError,
    },
    #[error("{id}: {source}")]
    Transition {
        id: String,
        #[source]
        source: TransitionError,
    },
    #[error("{id}: no legal action in a non-terminal configuration")]
    Stuck { id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The three classifiers a parse consults.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub transition: &'a dyn Classifier,
    pub label: &'a dyn Classifier,
    pub reentrancy: &'a dyn Classifier,
}

impl<'a> Models<'a> {
    /// Fails unless every trained model was built for `manifest_hash`.
    pub fn checked(
        models: [&'a ClassifierModel; 3],
        manifest_hash: &str,
    ) -> Result<Self, ModelError> {
        for m in models {
            m.check_manifest(manifest_hash)?;
        }
        Ok(Models {
            transition: models[0],
            label: models[1],
            reentrancy: models[2],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseOutput {
    pub graph: AmrGraph,
    pub actions: Vec<Action>,
    /// Stranded components attached to the root by `build_graph`.
    pub repairs: usize,
}

#[derive(Debug, Default)]
pub struct CorpusParse {
    /// Parsed graphs in input order, failures skipped.
    pub graphs: Vec<(String, AmrGraph)>,
    pub failures: Vec<ParseError>,
    pub repairs: usize,
}

pub struct Parser<'a> {
    pub models: Models<'a>,
    pub concepts: &'a ConceptTable,
    pub features: FeatureExtractor<'a>,
    /// Reduce creates the candidate edge when P(reentrant) reaches this.
    pub reentrancy_threshold: f64,
}

impl<'a> Parser<'a> {
    pub fn new(
        models: Models<'a>,
        concepts: &'a ConceptTable,
        embeddings: &'a Embeddings,
        template: FeatureTemplate,
    ) -> Result<Self, FeatureError> {
        Ok(Parser {
            models,
            concepts,
            features: FeatureExtractor::new(template, embeddings, false)?,
            reentrancy_threshold: DEFAULT_REENTRANCY_THRESHOLD,
        })
    }

    pub fn parse(&self, sentence: &TokenizedSentence) -> Result<ParseOutput, ParseError> {
        let id = || sentence.id.clone();
        if sentence.is_empty() {
            return Err(ParseError::EmptySentence { id: id() });
        }
        let templates = self.concepts.lookup_sentence(sentence);
        let mut c = Configuration::new(&templates)
            .map_err(|source| ParseError::Transition { id: id(), source })?;
        let mut actions = Vec::new();
        while !c.is_terminal() {
            let x = self
                .features
                .extract(&c, sentence)
                .map_err(|source| ParseError::Feature { id: id(), source })?;
            let query = |classifier: ClassifierId, m: &dyn Classifier| {
                m.probabilities(&c, &x)
                    .map_err(|source| ParseError::Classifier {
                        id: id(),
                        classifier,
                        source,
                    })
            };
            let p = query(ClassifierId::Transition, self.models.transition)?;
            let kind = best_legal(&c, self.models.transition.vocab(), &p)
                .ok_or_else(|| ParseError::Stuck { id: id() })?;
            let label = || -> Result<String, ParseError> {
                let p = query(ClassifierId::Label, self.models.label)?;
                Ok(self
                    .models
                    .label
                    .vocab()
                    .label(argmax(&p) as u32)
                    .unwrap_or(REPAIR_LABEL)
                    .to_string())
            };
            let action = match kind {
                ActionKind::Shift => Action::Shift,
                ActionKind::LArc => Action::LArc(label()?),
                ActionKind::RArc if c.s0() == Some(StackItem::Root) => {
                    Action::RArc(TOP_LABEL.to_string())
                }
                ActionKind::RArc => Action::RArc(label()?),
                ActionKind::Reduce => {
                    let mut edge = None;
                    if c.reentrancy_candidate().is_some() {
                        let p = query(ClassifierId::Reentrancy, self.models.reentrancy)?;
                        let yes = self
                            .models
                            .reentrancy
                            .vocab()
                            .id("1")
                            .map_or(0.0, |i| p[i as usize]);
                        if yes >= self.reentrancy_threshold {
                            edge = Some(label()?);
                        }
                    }
                    Action::Reduce(edge)
                }
            };
            c.apply_mut(&action)
                .map_err(|source| ParseError::Transition { id: id(), source })?;
            actions.push(action);
        }
        let built = build_graph(&c);
        if built.repairs > 0 {
            debug!(
                "{}: {} stranded component(s) attached with {REPAIR_LABEL}",
                sentence.id, built.repairs
            );
        }
        Ok(ParseOutput {
            graph: built.graph,
            actions,
            repairs: built.repairs,
        })
    }

    /// Parses every sentence on `jobs` worker threads. Output order follows
    /// the input and does not depend on `jobs`.
    pub fn parse_corpus(&self, sentences: &[TokenizedSentence], jobs: usize) -> CorpusParse {
        let run = || {
            sentences
                .par_iter()
                .map(|s| self.parse(s))
                .collect::<Vec<_>>()
        };
        let results = match rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
        {
            Ok(pool) => pool.install(run),
            Err(e) => {
                warn!("could not start {jobs} workers ({e}); parsing sequentially");
                sentences.iter().map(|s| self.parse(s)).collect()
            }
        };
        let mut out = CorpusParse::default();
        for (s, r) in sentences.iter().zip(results) {
            match r {
                Ok(p) => {
                    out.repairs += p.repairs;
                    out.graphs.push((s.id.clone(), p.graph));
                }
                Err(e) => {
                    warn!("{e}");
                    out.failures.push(e);
                }
            }
        }
        out
    }
}

/// Highest-probability legal action; ties go to the lowest label id.
fn best_legal(c: &Configuration, vocab: &Vocab, p: &[f64]) -> Option<ActionKind> {
    let mut best: Option<(ActionKind, f64)> = None;
    for (i, &prob) in p.iter().enumerate() {
        let Some(kind) = vocab.label(i as u32).and_then(ActionKind::from_name) else {
            continue;
        };
        if c.is_legal(kind) && best.is_none_or(|(_, b)| prob > b) {
            best = Some((kind, prob));
        }
    }
    // a vocabulary missing a legal action still must not stall the parse
    best.map(|(k, _)| k)
        .or_else(|| c.legal_actions().first().copied())
}

/// Test double that replays an oracle run: in a configuration the oracle
/// visited it puts all probability on the gold decision, elsewhere it is
/// uniform. Configurations are matched on stack, buffer, edges and root, so
/// templates only need the same node counts as the oracle's.
pub struct GoldReplay {
    classifier: ClassifierId,
    vocab: Vocab,
    steps: Vec<(Configuration, Action)>,
}

impl GoldReplay {
    pub fn new(classifier: ClassifierId, runs: &[OracleResult]) -> Result<Self, TransitionError> {
        let mut steps = Vec::new();
        for r in runs {
            steps.extend(
                r.configurations()?
                    .into_iter()
                    .zip(r.actions.iter().cloned()),
            );
        }
        let vocab = Vocab::fixed(classifier).unwrap_or_else(|| {
            let mut labels: Vec<String> = steps
                .iter()
                .filter_map(|(_, a)| match a {
                    Action::LArc(l) | Action::RArc(l) | Action::Reduce(Some(l)) => Some(l.clone()),
                    _ => None,
                })
                .collect();
            labels.sort();
            Vocab::new(labels)
        });
        Ok(GoldReplay {
            classifier,
            vocab,
            steps,
        })
    }

    fn decision(&self, action: &Action) -> Option<String> {
        match (self.classifier, action) {
            (ClassifierId::Transition, a) => Some(a.kind().as_str().to_string()),
            (ClassifierId::Label, Action::LArc(l) | Action::RArc(l) | Action::Reduce(Some(l))) => {
                Some(l.clone())
            }
            (ClassifierId::Reentrancy, Action::Reduce(r)) => {
                Some(if r.is_some() { "1" } else { "0" }.to_string())
            }
            _ => None,
        }
    }
}

fn same_state(a: &Configuration, b: &Configuration) -> bool {
    a.stack() == b.stack()
        && a.buffer() == b.buffer()
        && a.edges() == b.edges()
        && a.designated_root() == b.designated_root()
}

impl Classifier for GoldReplay {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn probabilities(&self, c: &Configuration, _features: &[f32]) -> Result<Vec<f64>, MlpError> {
        let n = self.vocab.len().max(1);
        let mut p = vec![1.0 / n as f64; n];
        let gold = self
            .steps
            .iter()
            .find(|(g, _)| same_state(g, c))
            .and_then(|(_, a)| self.decision(a))
            .and_then(|l| self.vocab.id(&l));
        if let Some(i) = gold {
            p.fill(0.0);
            p[i as usize] = 1.0;
        }
        Ok(p)
    }
}

/// Classifier with the same output for every input.
pub struct Constant {
    pub vocab: Vocab,
    pub probabilities: Vec<f64>,
}

impl Classifier for Constant {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn probabilities(&self, _c: &Configuration, _features: &[f32]) -> Result<Vec<f64>, MlpError> {
        Ok(self.probabilities.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_jamr_alignment, AnnotatedExample};
    use crate::embeddings::{ContextualStore, StaticTable};
    use crate::oracle::run_oracle;
    use crate::penman::{parse_penman, serialize_penman};

    const DOG_WANTS: &str = "(w / want-01 :ARG0 (d / dog) :ARG1 (e / eat-01 :ARG0 d))";

    fn dog_wants() -> AnnotatedExample {
        let graph = parse_penman(DOG_WANTS).unwrap();
        let sentence = TokenizedSentence::from_whitespace("dog-wants", "The dog wants to eat");
        let alignment =
            parse_jamr_alignment("dog-wants", "1-2|0.0 2-3|0 4-5|0.1", &graph, 5).unwrap();
        AnnotatedExample {
            sentence,
            graph,
            alignment,
        }
    }

    fn emb() -> Embeddings {
        Embeddings::static_only(
            StaticTable::parse("the 1 0\ndog 0 1\nwant 1 1\n").unwrap(),
            true,
        )
    }

    fn replay_models(ex: &AnnotatedExample) -> [GoldReplay; 3] {
        let r = run_oracle(ex).unwrap();
        let runs = std::slice::from_ref(&r);
        [
            GoldReplay::new(ClassifierId::Transition, runs).unwrap(),
            GoldReplay::new(ClassifierId::Label, runs).unwrap(),
            GoldReplay::new(ClassifierId::Reentrancy, runs).unwrap(),
        ]
    }

    fn models(m: &[GoldReplay; 3]) -> Models<'_> {
        Models {
            transition: &m[0],
            label: &m[1],
            reentrancy: &m[2],
        }
    }

    #[test]
    fn gold_replay_recovers_dog_wants() {
        let ex = dog_wants();
        let table = ConceptTable::build(std::slice::from_ref(&ex));
        let m = replay_models(&ex);
        let e = emb();
        let p = Parser::new(models(&m), &table, &e, FeatureTemplate::default()).unwrap();
        let out = p.parse(&ex.sentence).unwrap();
        assert_eq!(out.actions, run_oracle(&ex).unwrap().actions);
        assert!(crate::graph::isomorphic(&out.graph, &ex.graph));
        assert_eq!(out.repairs, 0);
        // deterministic bytes
        let again = p.parse(&ex.sentence).unwrap();
        assert_eq!(serialize_penman(&out.graph), serialize_penman(&again.graph));
    }

    #[test]
    fn reduce_everywhere_still_terminates() {
        let ex = dog_wants();
        let table = ConceptTable::build(std::slice::from_ref(&ex));
        let theta = Constant {
            vocab: Vocab::fixed(ClassifierId::Transition).unwrap(),
            probabilities: vec![0.0, 0.0, 0.0, 1.0],
        };
        let lambda = Constant {
            vocab: Vocab::new([":ARG0".to_string()]),
            probabilities: vec![1.0],
        };
        let rho = Constant {
            vocab: Vocab::fixed(ClassifierId::Reentrancy).unwrap(),
            probabilities: vec![0.0, 1.0],
        };
        let e = emb();
        let models = Models {
            transition: &theta,
            label: &lambda,
            reentrancy: &rho,
        };
        let p = Parser::new(models, &table, &e, FeatureTemplate::default()).unwrap();
        for text in [
            "The dog wants to eat",
            "dog dog dog",
            "the",
            "eat want dog the dog eat",
        ] {
            let s = TokenizedSentence::from_whitespace("x", text);
            let out = p.parse(&s).unwrap();
            assert!(out.graph.validate().is_ok());
            assert!(out.actions.len() <= 2 * s.len() + 1);
        }
        let empty = TokenizedSentence::from_whitespace("e", "");
        assert!(matches!(
            p.parse(&empty),
            Err(ParseError::EmptySentence { .. })
        ));
    }

    #[test]
    fn corpus_isolates_failures_and_ignores_worker_count() {
        let ex = dog_wants();
        let table = ConceptTable::build(std::slice::from_ref(&ex));
        let m = replay_models(&ex);
        let mut store = ContextualStore::new(2);
        store.insert("a", vec![0.5; 10]).unwrap();
        store.insert("c", vec![0.25; 6]).unwrap();
        let e = Embeddings::contextual(store, Some(StaticTable::parse("dog 0 1\n").unwrap()), 2);
        let p = Parser::new(models(&m), &table, &e, FeatureTemplate::default()).unwrap();
        let sentences = vec![
            TokenizedSentence::from_whitespace("a", "The dog wants to eat"),
            TokenizedSentence::from_whitespace("b", "dog wants"),
            TokenizedSentence::from_whitespace("c", "dog wants eat"),
        ];
        let one = p.parse_corpus(&sentences, 1);
        let four = p.parse_corpus(&sentences, 4);
        let ids: Vec<&str> = one.graphs.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert_eq!(one.failures.len(), 1);
        assert!(one.failures[0].to_string().starts_with("b:"));
        assert_eq!(one.graphs, four.graphs);
        assert!(p.parse_corpus(&[], 2).graphs.is_empty());
    }
}
