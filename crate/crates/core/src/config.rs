//! Experiment configuration files (TOML).
//!
//! ```toml
//! main_task = "deprel"
//! aux_task = "pos"
//! sizes = [100, 500]
//! seeds = [1, 2, 3]
//! conditions = ["mtl-baseline", "aux-st", "aux-st-ceiling"]
//!
//! [trainer]
//! max_epochs = 10
//!
//! [[corpora]]
//! id = "en_ewt"
//! group = "Germanic"
//! main_train = "en_ewt-train.conllu"
//! test = "en_ewt-test.conllu"
//! ```
//!
//! Relative corpus paths are resolved against the config file's directory.
//! Files ending in `.conllu` are read as CoNLL-U (tasks `pos` and `deprel`);
//! anything else is tagged TSV labelled for the task its key implies.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::conditions::{AuxSource, Condition, ExperimentPlan};
use crate::corpus::{parse_conllu, parse_tagged_tsv, Corpus};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_RESAMPLES;
use crate::model::{ModelConfig, TaskRole, TaskSpec};
use crate::trainer::TrainConfig;

fn default_parallelism() -> usize {
    1
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

fn default_base() -> f64 {
    std::f64::consts::E
}

fn default_min_count() -> usize {
    1
}

fn conditions<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Condition>, D::Error> {
    let names = Vec::<String>::deserialize(d)?;
    names
        .iter()
        .map(|n| n.parse().map_err(serde::de::Error::custom))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub main_task: String,
    pub aux_task: String,
    /// Main-task training sizes in sentences.
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(deserialize_with = "conditions")]
    pub conditions: Vec<Condition>,
    /// Subsample a separate aux corpus to this many sentences per seed.
    #[serde(default)]
    pub aux_size: Option<usize>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_base")]
    pub freqbin_base: f64,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    /// Fixed tagsets by task name; otherwise each corpus's labels are used.
    #[serde(default)]
    pub tagsets: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub trainer: TrainConfig,
    pub corpora: Vec<CorpusEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    #[serde(default)]
    pub group: Option<String>,
    pub main_train: PathBuf,
    /// Separate aux training data; without it the main corpus's own aux
    /// labels are used.
    #[serde(default)]
    pub aux_train: Option<PathBuf>,
    pub test: PathBuf,
    /// Gold aux labels for the test sentences, when kept in a separate file.
    #[serde(default)]
    pub test_aux: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its corpus paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for c in cfg.corpora.iter_mut() {
            c.resolve(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.main_task == self.aux_task {
            return bad("main_task and aux_task must differ".into());
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a non-empty list of positive sentence counts".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !self.conditions.contains(&Condition::MtlBaseline) {
            return bad("conditions must include mtl-baseline".into());
        }
        let unique = |n: usize, set: usize, key: &str| {
            if n != set {
                Err(Error::Config(format!("{key} contains duplicates")))
            } else {
                Ok(())
            }
        };
        unique(
            self.sizes.len(),
            self.sizes.iter().collect::<BTreeSet<_>>().len(),
            "sizes",
        )?;
        unique(
            self.seeds.len(),
            self.seeds.iter().collect::<BTreeSet<_>>().len(),
            "seeds",
        )?;
        unique(
            self.conditions.len(),
            self.conditions.iter().collect::<BTreeSet<_>>().len(),
            "conditions",
        )?;
        if self.aux_size == Some(0) {
            return bad("aux_size must be positive".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if self.bootstrap_resamples == 0 {
            return bad("bootstrap_resamples must be at least 1".into());
        }
        if !(self.freqbin_base > 1.0 && self.freqbin_base.is_finite()) {
            return bad("freqbin_base must be a finite number above 1".into());
        }
        if self.min_count == 0 {
            return bad("min_count must be at least 1".into());
        }
        for (task, tags) in &self.tagsets {
            if tags.is_empty() {
                return bad(format!("tagsets.{task} is empty"));
            }
        }
        self.model.validate()?;
        self.trainer.validate()?;
        if self.corpora.is_empty() {
            return bad("at least one [[corpora]] entry is required".into());
        }
        let mut ids = BTreeSet::new();
        for c in &self.corpora {
            let safe = !c.id.is_empty()
                && c.id
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch))
                && !c.id.starts_with('.');
            if !safe {
                return bad(format!(
                    "corpora.id `{}` must be non-empty ASCII letters, digits, `-`, `_` or `.`",
                    c.id
                ));
            }
            if !ids.insert(&c.id) {
                return bad(format!("corpora.id `{}` appears twice", c.id));
            }
        }
        Ok(())
    }
}

impl CorpusEntry {
    fn resolve(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.main_train);
        fix(&mut self.test);
        if let Some(p) = self.aux_train.as_mut() {
            fix(p);
        }
        if let Some(p) = self.test_aux.as_mut() {
            fix(p);
        }
    }

    /// Every input path, in a fixed order.
    pub fn paths(&self) -> Vec<&Path> {
        let mut out = vec![self.main_train.as_path()];
        out.extend(self.aux_train.as_deref());
        out.push(self.test.as_path());
        out.extend(self.test_aux.as_deref());
        out
    }
}

/// Reads a corpus file; tagged TSV files are labelled for `task`.
pub fn read_corpus(path: &Path, id: &str, task: &str) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = if path.extension().is_some_and(|e| e == "conllu") {
        parse_conllu(&text, id)
    } else {
        parse_tagged_tsv(&text, id, task)
    };
    parsed.map_err(|e| match e {
        Error::Parse { line, msg } => {
            Error::Data(format!("{}: line {line}: {msg}", path.display()))
        }
        other => other,
    })
}

/// One corpus entry loaded and checked, ready for planning cells.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCorpus {
    pub entry: CorpusEntry,
    pub plan: ExperimentPlan,
    pub main_spec: TaskSpec,
    pub aux_spec: TaskSpec,
}

fn require(corpus: &Corpus, task: &str, path: &Path) -> Result<()> {
    if corpus.is_empty() || !corpus.is_labelled_for(task) {
        return Err(Error::Data(format!(
            "{} has no `{task}` labels on every sentence",
            path.display()
        )));
    }
    Ok(())
}

fn tagset(
    cfg: &ExperimentConfig,
    task: &str,
    sources: &[&Corpus],
    role: TaskRole,
) -> Result<TaskSpec> {
    let tags = match cfg.tagsets.get(task) {
        Some(t) => t.clone(),
        None => {
            let mut all = BTreeSet::new();
            for c in sources.iter().filter(|c| c.is_labelled_for(task)) {
                all.extend(c.label_set(task));
            }
            all.into_iter().collect()
        }
    };
    TaskSpec::new(task, tags, role)
}

impl ExperimentConfig {
    /// Loads every corpus entry. Tagsets come from the `tagsets` table or
    /// else from all labels in the entry's files, so they do not depend on
    /// size, seed or condition.
    pub fn load_corpora(&self) -> Result<Vec<LoadedCorpus>> {
        self.corpora.iter().map(|e| self.load_entry(e)).collect()
    }

    fn load_entry(&self, entry: &CorpusEntry) -> Result<LoadedCorpus> {
        let (main_t, aux_t) = (self.main_task.as_str(), self.aux_task.as_str());
        let main_pool = read_corpus(&entry.main_train, &entry.id, main_t)?;
        require(&main_pool, main_t, &entry.main_train)?;
        let aux_pool = match &entry.aux_train {
            Some(p) => {
                let c = read_corpus(p, &entry.id, aux_t)?;
                require(&c, aux_t, p)?;
                Some(c)
            }
            None => {
                require(&main_pool, aux_t, &entry.main_train)?;
                None
            }
        };
        let mut test = read_corpus(&entry.test, &entry.id, main_t)?;
        require(&test, main_t, &entry.test)?;
        if let Some(p) = &entry.test_aux {
            let gold = read_corpus(p, &entry.id, aux_t)?;
            require(&gold, aux_t, p)?;
            if gold.len() != test.len()
                || gold
                    .iter()
                    .zip(test.iter())
                    .any(|(g, t)| g.tokens() != t.tokens())
            {
                return Err(Error::Data(format!(
                    "{} does not match the tokens of {}",
                    p.display(),
                    entry.test.display()
                )));
            }
            for (t, g) in test.sentences.iter_mut().zip(gold.iter()) {
                t.set_labels(aux_t, g.labels(aux_t).expect("checked").to_vec())?;
            }
        }
        let aux_src: &Corpus = aux_pool.as_ref().unwrap_or(&main_pool);
        let main_spec = tagset(self, main_t, &[&main_pool, &test], TaskRole::Main)?;
        let aux_spec = tagset(self, aux_t, &[aux_src, &test], TaskRole::Auxiliary)?;
        let aux = match aux_pool {
            Some(pool) => AuxSource::Separate {
                pool,
                size: self.aux_size,
            },
            None => AuxSource::SharedWithMain,
        };
        Ok(LoadedCorpus {
            entry: entry.clone(),
            plan: ExperimentPlan {
                main_task: self.main_task.clone(),
                aux_task: self.aux_task.clone(),
                main_pool,
                aux,
                test,
                freqbin_base: self.freqbin_base,
            },
            main_spec,
            aux_spec,
        })
    }
}
