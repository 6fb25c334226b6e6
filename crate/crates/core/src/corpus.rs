//! Sentences, corpora, and the two on-disk corpus formats: CoNLL-U (read)
//! and two-column tagged TSV (read and write).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Task name under which CoNLL-U UPOS labels are stored.
pub const POS_TASK: &str = "pos";
/// Task name under which CoNLL-U DEPREL labels are stored.
pub const DEPREL_TASK: &str = "deprel";

/// Where a sentence came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Provenance {
    pub corpus: String,
    pub index: usize,
}

/// A token sequence with zero or more per-task label sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<String>,
    labels: BTreeMap<String, Vec<String>>,
    pub provenance: Provenance,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, provenance: Provenance) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("sentence has no tokens".into()));
        }
        for t in &tokens {
            if t.is_empty() {
                return Err(Error::Data("empty token".into()));
            }
            if t.contains(['\t', '\n', '\r']) {
                return Err(Error::Data(format!(
                    "token {t:?} contains a tab or line break"
                )));
            }
        }
        Ok(Sentence {
            tokens,
            labels: BTreeMap::new(),
            provenance,
        })
    }

    /// Convenience constructor from string slices, mostly for tests.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        Self::new(
            tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            Provenance::default(),
        )
    }

    pub fn with_labels<S: AsRef<str>>(mut self, task: &str, labels: &[S]) -> Result<Self> {
        self.set_labels(
            task,
            labels.iter().map(|l| l.as_ref().to_string()).collect(),
        )?;
        Ok(self)
    }

    pub fn set_labels(&mut self, task: &str, labels: Vec<String>) -> Result<()> {
        if labels.len() != self.tokens.len() {
            return Err(Error::Data(format!(
                "task `{task}`: {} labels for {} tokens",
                labels.len(),
                self.tokens.len()
            )));
        }
        self.labels.insert(task.to_string(), labels);
        Ok(())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self, task: &str) -> Option<&[String]> {
        self.labels.get(task).map(Vec::as_slice)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }

    /// Same tokens and provenance, no labels.
    pub fn unlabelled(&self) -> Sentence {
        Sentence {
            tokens: self.tokens.clone(),
            labels: BTreeMap::new(),
            provenance: self.provenance.clone(),
        }
    }

    /// Same tokens and provenance, keeping only the labels of `task`.
    pub fn only_task(&self, task: &str) -> Sentence {
        let mut s = self.unlabelled();
        if let Some(l) = self.labels.get(task) {
            s.labels.insert(task.to_string(), l.clone());
        }
        s
    }
}

/// An ordered collection of sentences.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Corpus {
    pub id: String,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(id: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Corpus {
            id: id.into(),
            sentences,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// Union of the label keys over all sentences.
    pub fn tasks_present(&self) -> BTreeSet<String> {
        self.sentences
            .iter()
            .flat_map(|s| s.tasks().map(str::to_string))
            .collect()
    }

    /// Whether every sentence carries labels for `task`.
    pub fn is_labelled_for(&self, task: &str) -> bool {
        self.sentences.iter().all(|s| s.labels(task).is_some())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sentence> {
        self.sentences.iter()
    }

    /// Token-only copy: the form in which test inputs are handed to
    /// anything that must not see gold labels.
    pub fn unlabelled(&self) -> Corpus {
        Corpus::new(
            self.id.clone(),
            self.sentences.iter().map(Sentence::unlabelled).collect(),
        )
    }

    pub fn only_task(&self, task: &str) -> Corpus {
        Corpus::new(
            self.id.clone(),
            self.sentences.iter().map(|s| s.only_task(task)).collect(),
        )
    }

    /// Sorted label inventory observed for `task`.
    pub fn label_set(&self, task: &str) -> BTreeSet<String> {
        self.sentences
            .iter()
            .filter_map(|s| s.labels(task))
            .flatten()
            .cloned()
            .collect()
    }

    pub fn concat(&self, other: &Corpus) -> Corpus {
        let mut out = self.clone();
        out.sentences.extend(other.sentences.iter().cloned());
        out
    }
}

/// Reads CoNLL-U. FORM becomes the token, UPOS the `pos` label and DEPREL
/// the `deprel` label; multiword ranges (`1-2`) and empty nodes (`1.1`) are
/// skipped.
pub fn parse_conllu(text: &str, corpus_id: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new(corpus_id, Vec::new());
    let mut forms = Vec::new();
    let mut upos = Vec::new();
    let mut deprel = Vec::new();

    let flush = |forms: &mut Vec<String>,
                 upos: &mut Vec<String>,
                 deprel: &mut Vec<String>,
                 corpus: &mut Corpus|
     -> Result<()> {
        if forms.is_empty() {
            return Ok(());
        }
        let provenance = Provenance {
            corpus: corpus_id.to_string(),
            index: corpus.len(),
        };
        let mut s = Sentence::new(std::mem::take(forms), provenance)?;
        s.set_labels(POS_TASK, std::mem::take(upos))?;
        s.set_labels(DEPREL_TASK, std::mem::take(deprel))?;
        corpus.sentences.push(s);
        Ok(())
    };

    for (n, raw) in text.split('\n').enumerate() {
        let line_no = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut forms, &mut upos, &mut deprel, &mut corpus)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        if cols[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty FORM".into(),
            });
        }
        forms.push(cols[1].to_string());
        upos.push(cols[3].to_string());
        deprel.push(cols[7].to_string());
    }
    flush(&mut forms, &mut upos, &mut deprel, &mut corpus)?;
    Ok(corpus)
}

/// Reads `token<TAB>tag` lines with blank lines between sentences.
pub fn parse_tagged_tsv(text: &str, corpus_id: &str, task: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new(corpus_id, Vec::new());
    let mut tokens = Vec::new();
    let mut tags = Vec::new();

    let flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>, corpus: &mut Corpus| {
        if tokens.is_empty() {
            return Ok(());
        }
        let provenance = Provenance {
            corpus: corpus_id.to_string(),
            index: corpus.len(),
        };
        let mut s = Sentence::new(std::mem::take(tokens), provenance)?;
        s.set_labels(task, std::mem::take(tags))?;
        corpus.sentences.push(s);
        Ok::<_, Error>(())
    };

    for (n, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            flush(&mut tokens, &mut tags, &mut corpus)?;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("expected `token<TAB>tag`, found {} fields", fields.len()),
            });
        }
        tokens.push(fields[0].to_string());
        tags.push(fields[1].to_string());
    }
    flush(&mut tokens, &mut tags, &mut corpus)?;
    Ok(corpus)
}

/// Reads untagged input: one token per line (anything after a tab is
/// ignored), blank lines between sentences.
pub fn parse_token_lines(text: &str, corpus_id: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new(corpus_id, Vec::new());
    let mut tokens: Vec<String> = Vec::new();
    for raw in text.split('\n') {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            if !tokens.is_empty() {
                let provenance = Provenance {
                    corpus: corpus_id.to_string(),
                    index: corpus.len(),
                };
                corpus
                    .sentences
                    .push(Sentence::new(std::mem::take(&mut tokens), provenance)?);
            }
            continue;
        }
        let token = line.split('\t').next().unwrap_or_default();
        if token.is_empty() {
            return Err(Error::Data("empty token in input".into()));
        }
        tokens.push(token.to_string());
    }
    if !tokens.is_empty() {
        let provenance = Provenance {
            corpus: corpus_id.to_string(),
            index: corpus.len(),
        };
        corpus.sentences.push(Sentence::new(tokens, provenance)?);
    }
    Ok(corpus)
}

/// Writes one task's labels as tagged TSV; every sentence is followed by a
/// blank line.
pub fn write_tagged_tsv(corpus: &Corpus, task: &str) -> Result<String> {
    let mut out = String::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        let labels = s.labels(task).ok_or_else(|| {
            Error::Data(format!(
                "sentence {i} of corpus `{}` has no `{task}` labels",
                corpus.id
            ))
        })?;
        for (tok, lab) in s.tokens().iter().zip(labels) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(lab);
            out.push('\n');
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_TOKENS: &str = "# text = The dog\n\
        1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n\
        2\tdog\tdog\tNOUN\tNN\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn empty_conllu_is_empty_corpus() {
        assert_eq!(parse_conllu("", "x").unwrap().len(), 0);
    }

    #[test]
    fn conllu_labels_are_upos_and_deprel() {
        let c = parse_conllu(TWO_TOKENS, "x").unwrap();
        assert_eq!(c.len(), 1);
        let s = &c.sentences[0];
        assert_eq!(s.tokens(), ["The", "dog"]);
        assert_eq!(s.labels(POS_TASK).unwrap(), ["DET", "NOUN"]);
        assert_eq!(s.labels(DEPREL_TASK).unwrap(), ["det", "root"]);
        assert_eq!(
            c.tasks_present(),
            [POS_TASK, DEPREL_TASK]
                .iter()
                .map(|s| s.to_string())
                .collect()
        );
    }

    #[test]
    fn conllu_skips_ranges_and_empty_nodes() {
        let text = "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n\
            1\tde\tde\tADP\t_\t_\t3\tcase\t_\t_\n\
            2\tel\tel\tDET\t_\t_\t3\tdet\t_\t_\n\
            2.1\tx\tx\t_\t_\t_\t_\t_\t_\t_\n\
            3\tmar\tmar\tNOUN\t_\t_\t0\troot\t_\t_\n";
        let c = parse_conllu(text, "x").unwrap();
        assert_eq!(c.sentences[0].tokens(), ["de", "el", "mar"]);
    }

    #[test]
    fn conllu_underscore_labels_are_kept() {
        let text = "1\ta\ta\t_\t_\t_\t0\t_\t_\t_\n";
        let c = parse_conllu(text, "x").unwrap();
        assert_eq!(c.sentences[0].labels(POS_TASK).unwrap(), ["_"]);
    }

    #[test]
    fn conllu_wrong_column_count_reports_line() {
        let text = "# c\n1\ta\ta\tX\n";
        match parse_conllu(text, "x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tsv_sentence_split() {
        let c = parse_tagged_tsv("a\tX\nb\tY\n\nc\tZ\n", "x", "sem").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].len(), 2);
        assert_eq!(c.sentences[1].len(), 1);
        assert_eq!(c.sentences[1].labels("sem").unwrap(), ["Z"]);
        assert_eq!(parse_tagged_tsv("", "x", "sem").unwrap().len(), 0);
    }

    #[test]
    fn tsv_rejects_bad_field_count() {
        match parse_tagged_tsv("a\tX\nb\tY\tZ\n", "x", "sem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_tagged_tsv("lonely\n", "x", "sem").is_err());
    }

    #[test]
    fn writer_requires_labels() {
        let c = Corpus::new("x", vec![Sentence::from_tokens(&["a"]).unwrap()]);
        assert!(write_tagged_tsv(&c, "pos").is_err());
    }

    #[test]
    fn sentence_rejects_bad_tokens() {
        assert!(Sentence::from_tokens::<&str>(&[]).is_err());
        assert!(Sentence::from_tokens(&["a\tb"]).is_err());
        let s = Sentence::from_tokens(&["a", "b"]).unwrap();
        assert!(s.with_labels("pos", &["X"]).is_err());
    }

    #[test]
    fn token_lines_ignore_tag_column() {
        let c = parse_token_lines("a\tX\nb\n\n\nc\n", "in").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.sentences[0].tokens(), ["a", "b"]);
        assert!(c.tasks_present().is_empty());
    }
}
