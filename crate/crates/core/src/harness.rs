//! Runs every (condition, size, seed, corpus) cell of an experiment, writes
//! run directories and assembles the reports.
//!
//! Layout under the run root:
//!
//! ```text
//! manifest.json  report.tsv  report_corpora.tsv  report_groups.tsv  significance.tsv
//! <condition>/<size>/<seed>/<corpus>/
//!     manifest.json  metrics.json  model.txt  train.log  predictions.tsv
//!     aux_model.txt  aux_train.log  silver.tsv        (Aux-ST only)
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::conditions::{Condition, ExperimentPlan, FREQBIN_TASK};
use crate::config::{ExperimentConfig, LoadedCorpus};
use crate::corpus::{write_tagged_tsv, Corpus};
use crate::error::{Error, Result};
use crate::evaluation::{bootstrap_p, sentence_scores, size_label};
use crate::model::{write_model, ModelConfig, TaskRole, TaskSpec};
use crate::report::{macro_row, render, ConditionScore, ReportRow};
use crate::self_training::{
    train_condition_model, transductive_aux_self_train, PipelineSettings, SilverCorpus,
};
use crate::trainer::{TrainConfig, TrainOutcome};
use crate::vocab::{build_vocab, Vocabulary};
use crate::Model64;

/// Environment variable naming the run-directory root.
pub const RUN_ROOT_ENV: &str = "AUXST_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
const BOOTSTRAP_SEED: u64 = 0;

/// Per-seed, per-sentence (correct, total) counts.
type SeedScores = Vec<Vec<(usize, usize)>>;

/// The run root from the environment, or `runs`.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub corpus: String,
    pub size: usize,
    pub seed: u64,
    pub condition: Condition,
}

impl CellKey {
    /// Directory relative to the run root.
    pub fn dir(&self) -> PathBuf {
        [
            self.condition.key().to_string(),
            self.size.to_string(),
            self.seed.to_string(),
            self.corpus.clone(),
        ]
        .iter()
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellOutcome {
    Done {
        accuracy: f64,
        /// Per test sentence (correct, total) main-task tokens.
        scores: Vec<(usize, usize)>,
    },
    Unavailable(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    pub outcome: CellOutcome,
}

/// Everything an experiment produced, also written under the run root.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub cells: Vec<CellResult>,
    pub report: String,
    pub corpus_report: String,
    pub group_report: Option<String>,
    pub significance: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn checksum_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &std::fs::read(path).map_err(|e| Error::io(path, e))?,
    ))
}

#[derive(Serialize)]
struct CellMetrics<'a> {
    corpus: &'a str,
    condition: &'a str,
    size: usize,
    seed: u64,
    accuracy: f64,
    correct: usize,
    tokens: usize,
    sentences: usize,
    best_epoch: usize,
    best_dev_accuracy: f64,
}

#[derive(Serialize)]
struct CellManifest<'a> {
    tool_version: &'a str,
    corpus: &'a str,
    condition: &'a str,
    size: usize,
    seed: u64,
    aux_seed: u64,
    mtl_seed: u64,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    inputs: &'a BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct RootManifest<'a> {
    tool_version: &'a str,
    seeds: &'a [u64],
    inputs: BTreeMap<&'a str, &'a BTreeMap<String, String>>,
    cells: Vec<BTreeMap<&'static str, String>>,
    reports: BTreeMap<String, String>,
    config: &'a ExperimentConfig,
}

/// Final model of one cell, with the Aux-ST intermediates.
pub enum CellRun {
    Trained {
        outcome: Box<TrainOutcome<f64>>,
        aux_model: Option<Box<TrainOutcome<f64>>>,
        silver: Option<SilverCorpus>,
    },
    Unavailable(String),
}

/// What a cell needs besides its condition, size and seed.
#[derive(Clone, Copy, Debug)]
pub struct CellSetup<'a> {
    pub plan: &'a ExperimentPlan,
    pub main_spec: &'a TaskSpec,
    pub aux_spec: &'a TaskSpec,
    pub model: &'a ModelConfig,
    pub trainer: &'a TrainConfig,
    pub min_count: usize,
}

impl<'a> CellSetup<'a> {
    pub fn new(cfg: &'a ExperimentConfig, lc: &'a LoadedCorpus) -> Self {
        CellSetup {
            plan: &lc.plan,
            main_spec: &lc.main_spec,
            aux_spec: &lc.aux_spec,
            model: &cfg.model,
            trainer: &cfg.trainer,
            min_count: cfg.min_count,
        }
    }

    fn settings<'b>(
        &self,
        aux_task: &'b TaskSpec,
        vocab: &'b Vocabulary,
        seed: u64,
    ) -> PipelineSettings<'b>
    where
        'a: 'b,
    {
        PipelineSettings {
            main_task: self.main_spec,
            aux_task,
            vocab,
            model: self.model,
            train: self.trainer,
            run_seed: seed,
        }
    }
}

/// Trains one cell. The vocabulary covers the main data, the aux data
/// without appended test sentences, and the test inputs, so it is the same
/// for Aux-ST, its ceiling and the baseline.
pub fn train_condition(
    setup: &CellSetup<'_>,
    condition: Condition,
    size: usize,
    seed: u64,
) -> Result<CellRun> {
    let plan = setup.plan;
    let inputs = plan.test_inputs();
    if condition == Condition::AuxSt {
        let base = plan.build_condition(Condition::MtlBaseline, size, seed, None)?;
        let vocab = build_vocab(&[&base.main, &base.aux, &inputs], setup.min_count)?;
        let st = setup.settings(setup.aux_spec, &vocab, seed);
        let out = transductive_aux_self_train::<f64>(&base.aux, &base.main, &inputs, &st)?;
        return Ok(CellRun::Trained {
            outcome: Box::new(out.mtl),
            aux_model: out.aux_model.map(Box::new),
            silver: Some(out.silver),
        });
    }
    let m = match plan.build_condition(condition, size, seed, None) {
        Ok(m) => m,
        Err(Error::Unavailable(_, why)) => return Ok(CellRun::Unavailable(why)),
        Err(e) => return Err(e),
    };
    let freqbin;
    let aux_spec = if condition == Condition::FreqBinBaseline {
        let tags = m.aux.label_set(FREQBIN_TASK).into_iter().collect();
        freqbin = TaskSpec::new(FREQBIN_TASK, tags, TaskRole::Auxiliary)?;
        &freqbin
    } else {
        setup.aux_spec
    };
    let vocab = build_vocab(&[&m.main, &m.aux_base(), &inputs], setup.min_count)?;
    let outcome =
        train_condition_model::<f64>(&m.aux, &m.main, &setup.settings(aux_spec, &vocab, seed))?;
    Ok(CellRun::Trained {
        outcome: Box::new(outcome),
        aux_model: None,
        silver: None,
    })
}

/// Labels the test inputs with a model's main-task predictions.
pub fn predict(model: &Model64, inputs: &Corpus, task: &str) -> Result<Corpus> {
    let mut pred = inputs.clone();
    for s in pred.sentences.iter_mut() {
        let tags = model.tag(s.tokens(), task)?;
        s.set_labels(task, tags)?;
    }
    Ok(pred)
}

fn run_cell(
    cfg: &ExperimentConfig,
    lc: &LoadedCorpus,
    inputs: &BTreeMap<String, String>,
    key: &CellKey,
    root: &Path,
) -> Result<CellResult> {
    let dir = root.join(key.dir());
    let run = train_condition(&CellSetup::new(cfg, lc), key.condition, key.size, key.seed)?;
    let mut artifacts = BTreeMap::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        write_file(&dir.join(name), text)?;
        artifacts.insert(name.to_string(), sha256_hex(text.as_bytes()));
        Ok(())
    };
    let outcome = match run {
        CellRun::Unavailable(why) => CellOutcome::Unavailable(why),
        CellRun::Trained {
            outcome: t,
            aux_model,
            silver,
        } => {
            let task = &cfg.main_task;
            let pred = predict(&t.model, &lc.plan.test_inputs(), task)?;
            let scores = sentence_scores(&pred, &lc.plan.test, task)?;
            let (correct, tokens) = scores.iter().fold((0, 0), |(c, n), s| (c + s.0, n + s.1));
            let accuracy = if tokens == 0 {
                0.0
            } else {
                correct as f64 / tokens as f64
            };
            if let Some(a) = aux_model {
                put("aux_model.txt", &write_model(&a.model))?;
                put("aux_train.log", &a.log_tsv())?;
            }
            if let Some(s) = silver {
                put("silver.tsv", &write_tagged_tsv(&s.corpus, &s.task)?)?;
            }
            put("model.txt", &write_model(&t.model))?;
            put("train.log", &t.log_tsv())?;
            put("predictions.tsv", &write_tagged_tsv(&pred, task)?)?;
            let metrics = CellMetrics {
                corpus: &key.corpus,
                condition: key.condition.key(),
                size: key.size,
                seed: key.seed,
                accuracy,
                correct,
                tokens,
                sentences: scores.len(),
                best_epoch: t.best_epoch,
                best_dev_accuracy: t.best_dev_accuracy,
            };
            put("metrics.json", &json(&metrics)?)?;
            CellOutcome::Done { accuracy, scores }
        }
    };
    let (status, reason) = match &outcome {
        CellOutcome::Done { .. } => ("done", None),
        CellOutcome::Unavailable(w) => ("unavailable", Some(w.as_str())),
    };
    let manifest = CellManifest {
        tool_version: TOOL_VERSION,
        corpus: &key.corpus,
        condition: key.condition.key(),
        size: key.size,
        seed: key.seed,
        aux_seed: key.seed,
        mtl_seed: key.seed.wrapping_add(1),
        status,
        reason,
        inputs,
        artifacts,
        config: cfg,
    };
    write_file(&dir.join("manifest.json"), &json(&manifest)?)?;
    Ok(CellResult {
        key: key.clone(),
        outcome,
    })
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("cannot serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Cells in run order: corpus, size, seed, then condition.
pub fn cell_keys(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut conds = cfg.conditions.clone();
    conds.sort();
    let mut keys = Vec::new();
    for c in &cfg.corpora {
        for &size in &cfg.sizes {
            for &seed in &cfg.seeds {
                for &condition in &conds {
                    keys.push(CellKey {
                        corpus: c.id.clone(),
                        size,
                        seed,
                        condition,
                    });
                }
            }
        }
    }
    keys
}

/// Runs a whole experiment and writes everything under `root`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let corpora = cfg.load_corpora()?;
    let mut inputs: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for c in &cfg.corpora {
        let sums = c
            .paths()
            .into_iter()
            .map(|p| Ok((p.display().to_string(), checksum_file(p)?)))
            .collect::<Result<_>>()?;
        inputs.insert(c.id.clone(), sums);
    }
    let by_id: BTreeMap<&str, &LoadedCorpus> =
        corpora.iter().map(|c| (c.entry.id.as_str(), c)).collect();
    let keys = cell_keys(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("parallelism: {e}")))?;
    let cells: Vec<CellResult> = pool.install(|| {
        keys.par_iter()
            .map(|k| run_cell(cfg, by_id[k.corpus.as_str()], &inputs[&k.corpus], k, root))
            .collect::<Result<_>>()
    })?;
    let output = assemble(cfg, cells)?;

    let mut reports = BTreeMap::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        write_file(&root.join(name), text)?;
        reports.insert(name.to_string(), sha256_hex(text.as_bytes()));
        Ok(())
    };
    put("report.tsv", &output.report)?;
    put("report_corpora.tsv", &output.corpus_report)?;
    if let Some(g) = &output.group_report {
        put("report_groups.tsv", g)?;
    }
    put("significance.tsv", &output.significance)?;
    let manifest = RootManifest {
        tool_version: TOOL_VERSION,
        seeds: &cfg.seeds,
        inputs: inputs.iter().map(|(k, v)| (k.as_str(), v)).collect(),
        cells: output
            .cells
            .iter()
            .map(|c| {
                let status = match c.outcome {
                    CellOutcome::Done { .. } => "done",
                    CellOutcome::Unavailable(_) => "unavailable",
                };
                BTreeMap::from([
                    ("dir", c.key.dir().display().to_string()),
                    ("status", status.to_string()),
                ])
            })
            .collect(),
        reports,
        config: cfg,
    };
    write_file(&root.join("manifest.json"), &json(&manifest)?)?;
    Ok(output)
}

/// Seed-averaged score of one condition on one (corpus, size), with the
/// bootstrap p-value against the baseline over (seed, sentence) pairs.
fn corpus_row(
    cfg: &ExperimentConfig,
    results: &BTreeMap<CellKey, &CellOutcome>,
    conditions: &[Condition],
    corpus: &str,
    size: usize,
) -> Result<ReportRow> {
    let outcome = |condition, seed| {
        results[&CellKey {
            corpus: corpus.to_string(),
            size,
            seed,
            condition,
        }]
    };
    let mean = |condition| -> Option<(f64, SeedScores)> {
        let mut acc = 0.0;
        let mut all = Vec::new();
        for &seed in &cfg.seeds {
            match outcome(condition, seed) {
                CellOutcome::Done { accuracy, scores } => {
                    acc += accuracy;
                    all.push(scores.clone());
                }
                CellOutcome::Unavailable(_) => return None,
            }
        }
        Some((acc / cfg.seeds.len() as f64, all))
    };
    let (baseline, base_scores) = mean(Condition::MtlBaseline)
        .ok_or_else(|| Error::Data("baseline cell unavailable".into()))?;
    let mut scores = Vec::new();
    for &c in conditions {
        scores.push(match mean(c) {
            None => None,
            Some((accuracy, cond_scores)) => {
                let diffs: Vec<i64> = cond_scores
                    .iter()
                    .zip(&base_scores)
                    .flat_map(|(c, b)| c.iter().zip(b).map(|(x, y)| x.0 as i64 - y.0 as i64))
                    .collect();
                let p = bootstrap_p(&diffs, cfg.bootstrap_resamples, BOOTSTRAP_SEED)?;
                Some(ConditionScore {
                    accuracy,
                    p_value: p,
                })
            }
        });
    }
    let row = ReportRow {
        lead: vec![corpus.to_string(), size_label(size)],
        baseline,
        scores,
    };
    Ok(row)
}

/// Builds the reports from finished cells; independent of cell order.
pub fn assemble(cfg: &ExperimentConfig, mut cells: Vec<CellResult>) -> Result<ExperimentOutput> {
    cells.sort_by(|a, b| a.key.cmp(&b.key));
    let results: BTreeMap<CellKey, &CellOutcome> =
        cells.iter().map(|c| (c.key.clone(), &c.outcome)).collect();
    let mut conditions: Vec<Condition> = cfg
        .conditions
        .iter()
        .copied()
        .filter(|&c| c != Condition::MtlBaseline)
        .collect();
    conditions.sort();

    let mut corpus_rows = Vec::new();
    let mut significance = String::from("corpus\tN Main\tcondition\tp\n");
    for c in &cfg.corpora {
        for &size in &cfg.sizes {
            let row = corpus_row(cfg, &results, &conditions, &c.id, size)?;
            for (cond, s) in conditions.iter().zip(&row.scores) {
                if let Some(s) = s {
                    significance.push_str(&format!(
                        "{}\t{}\t{}\t{}\n",
                        c.id,
                        size_label(size),
                        cond.label(),
                        s.p_value
                    ));
                }
            }
            corpus_rows.push((c, size, row));
        }
    }

    let macro_rows = |filter: &dyn Fn(&crate::config::CorpusEntry) -> bool,
                      lead: &dyn Fn(usize) -> Vec<String>| {
        cfg.sizes
            .iter()
            .map(|&size| {
                let rows: Vec<&ReportRow> = corpus_rows
                    .iter()
                    .filter(|(c, s, _)| *s == size && filter(c))
                    .map(|(_, _, r)| r)
                    .collect();
                macro_row(lead(size), &rows)
            })
            .collect::<Result<Vec<_>>>()
    };
    let main_rows = macro_rows(&|_| true, &|s| vec![size_label(s)])?;
    let report = render(&["N Main"], &conditions, &main_rows)?;
    let per_corpus: Vec<ReportRow> = corpus_rows.iter().map(|(_, _, r)| r.clone()).collect();
    let corpus_report = render(&["corpus", "N Main"], &conditions, &per_corpus)?;

    let mut groups: Vec<&str> = cfg
        .corpora
        .iter()
        .filter_map(|c| c.group.as_deref())
        .collect();
    groups.sort_unstable();
    groups.dedup();
    let group_report = if groups.is_empty() {
        None
    } else {
        let mut rows = Vec::new();
        for g in groups {
            rows.extend(macro_rows(&|c| c.group.as_deref() == Some(g), &|s| {
                vec![g.to_string(), size_label(s)]
            })?);
        }
        Some(render(&["group", "N Main"], &conditions, &rows)?)
    };
    Ok(ExperimentOutput {
        cells,
        report,
        corpus_report,
        group_report,
        significance,
    })
}
