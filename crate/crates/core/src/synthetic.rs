//! A small synthetic language for end-to-end trend checks.
//!
//! Words belong to classes, and a word's class is its final character. The
//! aux label of a token is its class. The main label is a fixed random
//! function of the token's class and its left neighbour's class.
//!
//! Each class's words fall into three groups. Main-task sentences use only
//! the first few, aux sentences may add a second group, and the test domain
//! mixes the main group with words no training corpus contains, so a tagger
//! has to generalise through characters to label those.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_tagged_tsv, Corpus, Provenance, Sentence};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub const MAIN_TASK: &str = "main";
pub const AUX_TASK: &str = "class";

const SUFFIXES: &str = "abcdefghij";
const STEM_LETTERS: &[u8] = b"klmnprstvz";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub words_per_class: usize,
    /// Words per class used by main-task sentences (and by the others).
    pub main_words_per_class: usize,
    /// Words per class that only the test domain uses. Whatever remains
    /// after the main and test-only groups appears in aux sentences only.
    pub test_only_words_per_class: usize,
    /// Probability that a test-domain token is a test-only word.
    pub test_only_rate: f64,
    pub main_labels: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub main_sentences: usize,
    pub aux_sentences: usize,
    pub test_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 10,
            words_per_class: 20,
            main_words_per_class: 3,
            test_only_words_per_class: 17,
            test_only_rate: 1.0,
            main_labels: 6,
            min_len: 5,
            max_len: 15,
            main_sentences: 100,
            aux_sentences: 1000,
            test_sentences: 200,
            seed: 0,
        }
    }
}

/// The language: word forms per class and the main-label table.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLanguage {
    /// `words[class]`: main group, then aux-only, then test-only words.
    pub words: Vec<Vec<String>>,
    pub main_words: usize,
    pub test_only: usize,
    /// `table[own][left]`, with `left == classes` at sentence start.
    pub table: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub language: SyntheticLanguage,
    /// Main and class labels.
    pub main: Corpus,
    /// Class labels only.
    pub aux: Corpus,
    /// Test domain, main and class labels.
    pub test: Corpus,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.classes == 0 || self.classes > SUFFIXES.len() {
            return bad("classes must be between 1 and 10");
        }
        if self.main_words_per_class == 0
            || self.main_words_per_class + self.test_only_words_per_class > self.words_per_class
        {
            return bad(
                "need 1 <= main_words_per_class <= words_per_class - test_only_words_per_class",
            );
        }
        if !(0.0..=1.0).contains(&self.test_only_rate) {
            return bad("test_only_rate must lie in [0, 1]");
        }
        if self.main_labels == 0 {
            return bad("main_labels must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        Ok(())
    }
}

impl SyntheticLanguage {
    fn new(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut seen = BTreeSet::new();
        let suffixes: Vec<char> = SUFFIXES.chars().collect();
        let words = (0..cfg.classes)
            .map(|c| {
                let mut ws = Vec::with_capacity(cfg.words_per_class);
                while ws.len() < cfg.words_per_class {
                    let len = rng.random_range(2..=4);
                    let mut w: String = (0..len)
                        .map(|_| *STEM_LETTERS.choose(rng).unwrap() as char)
                        .collect();
                    w.push(suffixes[c]);
                    if seen.insert(w.clone()) {
                        ws.push(w);
                    }
                }
                ws
            })
            .collect();
        let table = (0..cfg.classes)
            .map(|_| {
                (0..=cfg.classes)
                    .map(|_| rng.random_range(0..cfg.main_labels))
                    .collect()
            })
            .collect();
        SyntheticLanguage {
            words,
            main_words: cfg.main_words_per_class,
            test_only: cfg.test_only_words_per_class,
            table,
        }
    }

    pub fn class_of(&self, word: &str) -> Option<usize> {
        self.words
            .iter()
            .position(|ws| ws.iter().any(|w| w == word))
    }

    fn sentence(
        &self,
        cfg: &SyntheticConfig,
        rng: &mut ChaCha8Rng,
        domain: Domain,
        provenance: Provenance,
    ) -> Result<Sentence> {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let test_start = cfg.words_per_class - self.test_only;
        let (mut tokens, mut classes, mut main) = (Vec::new(), Vec::new(), Vec::new());
        let mut left = cfg.classes;
        for _ in 0..len {
            let c = rng.random_range(0..cfg.classes);
            let w = match domain {
                Domain::Main => rng.random_range(0..self.main_words),
                Domain::Aux => rng.random_range(0..test_start),
                Domain::Test if self.test_only > 0 && rng.random_bool(cfg.test_only_rate) => {
                    rng.random_range(test_start..cfg.words_per_class)
                }
                Domain::Test => rng.random_range(0..self.main_words),
            };
            tokens.push(self.words[c][w].clone());
            classes.push(format!("C{c}"));
            main.push(format!("M{}", self.table[c][left]));
            left = c;
        }
        Sentence::new(tokens, provenance)?
            .with_labels(AUX_TASK, &classes)?
            .with_labels(MAIN_TASK, &main)
    }
}

#[derive(Clone, Copy)]
enum Domain {
    Main,
    Aux,
    Test,
}

/// Generates the three corpora; identical configs give identical data.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let language = SyntheticLanguage::new(cfg, &mut rng);
    let make = |id: &str, n: usize, domain: Domain, rng: &mut ChaCha8Rng| -> Result<Corpus> {
        let sents = (0..n)
            .map(|i| {
                let p = Provenance {
                    corpus: id.to_string(),
                    index: i,
                };
                language.sentence(cfg, rng, domain, p)
            })
            .collect::<Result<_>>()?;
        Ok(Corpus::new(id, sents))
    };
    let main = make("synthetic-main", cfg.main_sentences, Domain::Main, &mut rng)?;
    let aux = make("synthetic-aux", cfg.aux_sentences, Domain::Aux, &mut rng)?.only_task(AUX_TASK);
    let test = make("synthetic-test", cfg.test_sentences, Domain::Test, &mut rng)?;
    Ok(SyntheticData {
        language,
        main,
        aux,
        test,
    })
}

/// Tagger size used for the trend runs on the default language.
pub fn trend_model() -> ModelConfig {
    ModelConfig {
        word_dim: 16,
        char_dim: 8,
        char_hidden: 16,
        word_hidden: 24,
        ..ModelConfig::default()
    }
}

/// Training settings for the trend runs. With 100 main sentences the main
/// task sees few updates per epoch, hence the epoch and patience budget.
pub fn trend_trainer() -> TrainConfig {
    TrainConfig {
        max_epochs: 40,
        batch_size: 1,
        learning_rate: 0.003,
        patience: 4,
        ..TrainConfig::default()
    }
}

/// File names written by [`SyntheticData::write_dir`].
pub const FILES: [&str; 4] = [
    "main_train.tsv",
    "aux_train.tsv",
    "test.tsv",
    "test_aux.tsv",
];

impl SyntheticData {
    /// Writes the corpora as tagged TSV: main-task training and test files
    /// labelled for [`MAIN_TASK`], aux training and test files for
    /// [`AUX_TASK`].
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let texts = [
            write_tagged_tsv(&self.main, MAIN_TASK)?,
            write_tagged_tsv(&self.aux, AUX_TASK)?,
            write_tagged_tsv(&self.test, MAIN_TASK)?,
            write_tagged_tsv(&self.test, AUX_TASK)?,
        ];
        for (name, text) in FILES.iter().zip(texts) {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Sorted tagsets `(main, class)` of a language generated from `cfg`.
pub fn tagsets(cfg: &SyntheticConfig) -> (Vec<String>, Vec<String>) {
    let main = (0..cfg.main_labels).map(|i| format!("M{i}")).collect();
    let aux = (0..cfg.classes).map(|i| format!("C{i}")).collect();
    (main, aux)
}
