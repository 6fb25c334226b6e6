//! Training materials for each experimental condition.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Task name under which frequency-bin labels are stored.
pub const FREQBIN_TASK: &str = "freqbin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "mtl-baseline")]
    MtlBaseline,
    #[serde(rename = "aux-st-ceiling")]
    AuxStCeiling,
    #[serde(rename = "aux-st")]
    AuxSt,
    #[serde(rename = "extra-aux")]
    ExtraAux,
    #[serde(rename = "extra-main")]
    ExtraMain,
    #[serde(rename = "freqbin-baseline")]
    FreqBinBaseline,
}

impl Condition {
    /// Report column order.
    pub const ALL: [Condition; 6] = [
        Condition::MtlBaseline,
        Condition::AuxStCeiling,
        Condition::AuxSt,
        Condition::ExtraAux,
        Condition::ExtraMain,
        Condition::FreqBinBaseline,
    ];

    /// Identifier used in configs and run directories.
    pub fn key(self) -> &'static str {
        match self {
            Condition::MtlBaseline => "mtl-baseline",
            Condition::AuxStCeiling => "aux-st-ceiling",
            Condition::AuxSt => "aux-st",
            Condition::ExtraAux => "extra-aux",
            Condition::ExtraMain => "extra-main",
            Condition::FreqBinBaseline => "freqbin-baseline",
        }
    }

    /// Column heading in reports.
    pub fn label(self) -> &'static str {
        match self {
            Condition::MtlBaseline => "MTL-baseline",
            Condition::AuxStCeiling => "Aux-ST-ceiling",
            Condition::AuxSt => "Aux-ST",
            Condition::ExtraAux => "Extra-Aux",
            Condition::ExtraMain => "Extra-Main",
            Condition::FreqBinBaseline => "FreqBin-baseline",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.key() == s || c.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition `{s}`")))
    }
}

/// Ascending indices of a uniform `k`-subset of `0..n`.
fn sample_sorted(n: usize, k: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn split_by(corpus: &Corpus, picked: &[usize]) -> (Corpus, Corpus) {
    let mut keep = vec![false; corpus.len()];
    for &i in picked {
        keep[i] = true;
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (s, k) in corpus.sentences.iter().zip(keep) {
        if k {
            a.push(s.clone())
        } else {
            b.push(s.clone())
        }
    }
    (
        Corpus::new(corpus.id.clone(), a),
        Corpus::new(corpus.id.clone(), b),
    )
}

fn check_size(corpus: &Corpus, n: usize) -> Result<()> {
    if n > corpus.len() {
        return Err(Error::Data(format!(
            "cannot sample {n} sentences from corpus `{}` of {}",
            corpus.id,
            corpus.len()
        )));
    }
    Ok(())
}

/// Uniform sample without replacement, original order kept.
pub fn subsample(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    Ok(subsample_split(corpus, n, seed, 0)?.0)
}

/// A sample of `n` sentences and the held-back remainder, both in order.
pub fn subsample_split(
    corpus: &Corpus,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<(Corpus, Corpus)> {
    check_size(corpus, n)?;
    Ok(split_by(
        corpus,
        &sample_sorted(corpus.len(), n, seed, stream),
    ))
}

/// `floor(log_base(count))` for a count of at least 1, exact at powers.
pub fn freq_bin(count: usize, base: f64) -> usize {
    assert!(count >= 1 && base > 1.0);
    let c = count as f64;
    let mut bin = (c.ln() / base.ln()).floor().max(0.0) as i32;
    while base.powi(bin + 1) <= c {
        bin += 1;
    }
    while bin > 0 && base.powi(bin) > c {
        bin -= 1;
    }
    bin as usize
}

/// Copy of `corpus` carrying only frequency-bin labels, with counts taken
/// from the corpus itself.
pub fn freqbin_labels(corpus: &Corpus, base: f64) -> Result<Corpus> {
    if !(base > 1.0 && base.is_finite()) {
        return Err(Error::Config(format!(
            "freqbin_base must exceed 1, got {base}"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in corpus.iter() {
        for t in s.tokens() {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut out = corpus.unlabelled();
    for (dst, src) in out.sentences.iter_mut().zip(&corpus.sentences) {
        let labels = src
            .tokens()
            .iter()
            .map(|t| freq_bin(counts[t.as_str()], base).to_string())
            .collect();
        dst.set_labels(FREQBIN_TASK, labels)?;
    }
    Ok(out)
}

/// Where auxiliary-task training data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum AuxSource {
    /// Aux labels on the same sentences as the main subsample (e.g. UPOS and
    /// DEPREL from one treebank); extra aux data comes from the main pool's
    /// held-back part.
    SharedWithMain,
    /// A separate pool, optionally subsampled to a fixed size per seed.
    Separate { pool: Corpus, size: Option<usize> },
}

/// Everything needed to build one corpus's materials.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub main_task: String,
    pub aux_task: String,
    /// Main-task training pool; subsamples of each size are drawn from it.
    pub main_pool: Corpus,
    pub aux: AuxSource,
    /// Test sentences. Main labels are only used for scoring; aux labels,
    /// when present, only by the ceiling condition.
    pub test: Corpus,
    pub freqbin_base: f64,
}

/// Training corpora of one (condition, size, seed) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Materials {
    pub main: Corpus,
    pub aux: Corpus,
    /// Task the `aux` corpus is labelled for.
    pub aux_task: String,
    /// Trailing sentences of `aux` that are test inputs.
    pub appended_test: usize,
}

impl Materials {
    /// `aux` without the trailing test-derived sentences.
    pub fn aux_base(&self) -> Corpus {
        let n = self.aux.len() - self.appended_test;
        Corpus::new(self.aux.id.clone(), self.aux.sentences[..n].to_vec())
    }
}

const MAIN_STREAM: u64 = 10;
const AUX_STREAM: u64 = 11;
const EXTRA_STREAM: u64 = 12;

impl ExperimentPlan {
    /// Number of extra gold sentences added by the Extra-* conditions.
    pub fn n_extra(&self) -> usize {
        self.test.len()
    }

    /// Test sentences with every label removed.
    pub fn test_inputs(&self) -> Corpus {
        self.test.unlabelled()
    }

    /// (main subsample, main held-back, aux base, aux held-back).
    fn base(&self, size: usize, seed: u64) -> Result<(Corpus, Corpus, Corpus, Corpus)> {
        if size == 0 {
            return Err(Error::Config("training sizes must be positive".into()));
        }
        let (main, main_rest) = subsample_split(&self.main_pool, size, seed, MAIN_STREAM)?;
        let (aux, aux_rest) = match &self.aux {
            AuxSource::SharedWithMain => (main.clone(), main_rest.clone()),
            AuxSource::Separate { pool, size: None } => {
                (pool.clone(), Corpus::new(pool.id.clone(), vec![]))
            }
            AuxSource::Separate {
                pool,
                size: Some(n),
            } => subsample_split(pool, *n, seed, AUX_STREAM)?,
        };
        Ok((
            main.only_task(&self.main_task),
            main_rest.only_task(&self.main_task),
            aux.only_task(&self.aux_task),
            aux_rest.only_task(&self.aux_task),
        ))
    }

    fn extra(&self, condition: Condition, held_back: &Corpus, seed: u64) -> Result<Corpus> {
        let n = self.n_extra();
        if n > held_back.len() {
            return Err(Error::Unavailable(
                condition.label().into(),
                format!(
                    "needs {n} held-back sentences but only {} remain",
                    held_back.len()
                ),
            ));
        }
        Ok(subsample_split(held_back, n, seed, EXTRA_STREAM)?.0)
    }

    /// Builds the materials of one cell. `silver` must be given exactly
    /// for [`Condition::AuxSt`].
    pub fn build_condition(
        &self,
        condition: Condition,
        size: usize,
        seed: u64,
        silver: Option<&Corpus>,
    ) -> Result<Materials> {
        if silver.is_some() != (condition == Condition::AuxSt) {
            return Err(Error::InvalidArgument(
                "silver labels are given exactly for the Aux-ST condition".into(),
            ));
        }
        let (main, main_rest, aux, aux_rest) = self.base(size, seed)?;
        let plain = |main: Corpus, aux: Corpus| Materials {
            main,
            aux,
            aux_task: self.aux_task.clone(),
            appended_test: 0,
        };
        Ok(match condition {
            Condition::MtlBaseline => plain(main, aux),
            Condition::AuxSt => {
                let silver = silver.expect("checked above");
                if !silver.is_labelled_for(&self.aux_task) || silver.len() != self.test.len() {
                    return Err(Error::InvalidArgument(
                        "silver corpus must label every test sentence for the aux task".into(),
                    ));
                }
                Materials {
                    aux: aux.concat(&silver.only_task(&self.aux_task)),
                    appended_test: silver.len(),
                    ..plain(main, Corpus::default())
                }
            }
            Condition::AuxStCeiling => {
                if !self.test.is_labelled_for(&self.aux_task) {
                    return Err(Error::Unavailable(
                        condition.label().into(),
                        format!("test corpus has no gold `{}` labels", self.aux_task),
                    ));
                }
                Materials {
                    aux: aux.concat(&self.test.only_task(&self.aux_task)),
                    appended_test: self.test.len(),
                    ..plain(main, Corpus::default())
                }
            }
            Condition::ExtraAux => {
                let extra = self.extra(condition, &aux_rest, seed)?;
                plain(main, aux.concat(&extra))
            }
            Condition::ExtraMain => {
                let extra = self.extra(condition, &main_rest, seed)?;
                plain(main.concat(&extra), aux)
            }
            Condition::FreqBinBaseline => Materials {
                aux: freqbin_labels(&main, self.freqbin_base)?,
                aux_task: FREQBIN_TASK.into(),
                ..plain(main, Corpus::default())
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn numbered(n: usize, tasks: &[&str]) -> Corpus {
        prefixed("w", n, tasks)
    }

    fn prefixed(prefix: &str, n: usize, tasks: &[&str]) -> Corpus {
        let sents = (0..n)
            .map(|i| {
                let toks = [format!("{prefix}{i}"), "x".to_string()];
                let mut s = Sentence::from_tokens(&toks).unwrap();
                for t in tasks {
                    s = s
                        .with_labels(t, &[format!("{t}{i}"), format!("{t}x")])
                        .unwrap();
                }
                s
            })
            .collect();
        Corpus::new("c", sents)
    }

    fn plan(test: usize) -> ExperimentPlan {
        ExperimentPlan {
            main_task: "main".into(),
            aux_task: "aux".into(),
            main_pool: numbered(50, &["main", "aux"]),
            aux: AuxSource::Separate {
                pool: numbered(40, &["aux"]),
                size: None,
            },
            test: prefixed("t", test, &["main", "aux"]),
            freqbin_base: std::f64::consts::E,
        }
    }

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::ALL {
            assert_eq!(c.key().parse::<Condition>().unwrap(), c);
            assert_eq!(c.label().parse::<Condition>().unwrap(), c);
        }
        assert!("aux".parse::<Condition>().is_err());
    }

    #[test]
    fn subsample_contract() {
        let c = numbered(1000, &[]);
        assert_eq!(subsample(&c, 1000, 1).unwrap(), c);
        assert_eq!(
            subsample(&c, 100, 1).unwrap(),
            subsample(&c, 100, 1).unwrap()
        );
        assert!(subsample(&c, 1001, 1).is_err());
        let s = subsample(&c, 100, 1).unwrap();
        let pos: Vec<usize> = s
            .iter()
            .map(|s| s.tokens()[0][1..].parse().unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn freq_bins() {
        let e = std::f64::consts::E;
        assert_eq!(freq_bin(1, e), 0);
        assert_eq!(freq_bin(7, e), 1);
        assert_eq!(freq_bin(20, e), 2);
        assert_eq!(freq_bin(1000, 10.0), 3);
        assert_eq!(freq_bin(999, 10.0), 2);
        assert_eq!(freq_bin(8, 2.0), 3);
    }

    #[test]
    fn freqbin_corpus_counts_its_own_tokens() {
        let c = numbered(7, &["main"]);
        let f = freqbin_labels(&c, std::f64::consts::E).unwrap();
        assert_eq!(
            f.tasks_present().into_iter().collect::<Vec<_>>(),
            [FREQBIN_TASK]
        );
        // "x" occurs 7 times, each "w{i}" once.
        assert_eq!(f.sentences[3].labels(FREQBIN_TASK).unwrap(), ["0", "1"]);
    }

    #[test]
    fn appended_counts() {
        let p = plan(5);
        let base = p
            .build_condition(Condition::MtlBaseline, 10, 3, None)
            .unwrap();
        assert_eq!(base.main.len(), 10);
        assert_eq!(base.aux.len(), 40);
        let ceil = p
            .build_condition(Condition::AuxStCeiling, 10, 3, None)
            .unwrap();
        assert_eq!(ceil.aux.len(), 45);
        assert_eq!(ceil.aux_base(), base.aux);
        let xm = p
            .build_condition(Condition::ExtraMain, 10, 3, None)
            .unwrap();
        assert_eq!(xm.main.len(), 15);
        assert_eq!(xm.aux, base.aux);
        // A separate unsampled aux pool leaves nothing held back.
        assert!(matches!(
            p.build_condition(Condition::ExtraAux, 10, 3, None),
            Err(Error::Unavailable(..))
        ));
    }

    #[test]
    fn shared_aux_draws_extra_from_main_pool() {
        let p = ExperimentPlan {
            aux: AuxSource::SharedWithMain,
            ..plan(5)
        };
        let base = p
            .build_condition(Condition::MtlBaseline, 10, 3, None)
            .unwrap();
        let xa = p.build_condition(Condition::ExtraAux, 10, 3, None).unwrap();
        assert_eq!(xa.aux.len(), 15);
        assert_eq!(xa.main, base.main);
        let main_tokens: Vec<_> = base.main.iter().map(|s| s.tokens().to_vec()).collect();
        assert!(xa.aux.sentences[10..]
            .iter()
            .all(|s| !main_tokens.contains(&s.tokens().to_vec())));
    }

    #[test]
    fn aux_st_matches_ceiling_with_gold_silver_and_baseline_when_empty() {
        let p = plan(5);
        let gold = p.test.only_task("aux");
        let st = p
            .build_condition(Condition::AuxSt, 10, 3, Some(&gold))
            .unwrap();
        let ceil = p
            .build_condition(Condition::AuxStCeiling, 10, 3, None)
            .unwrap();
        assert_eq!(st, ceil);

        let p0 = plan(0);
        let st = p0
            .build_condition(Condition::AuxSt, 10, 3, Some(&Corpus::default()))
            .unwrap();
        let base = p0
            .build_condition(Condition::MtlBaseline, 10, 3, None)
            .unwrap();
        assert_eq!(st, base);
    }

    #[test]
    fn no_condition_carries_test_main_labels() {
        let p = ExperimentPlan {
            aux: AuxSource::SharedWithMain,
            ..plan(5)
        };
        for c in Condition::ALL {
            let silver = (c == Condition::AuxSt).then(|| p.test.only_task("aux"));
            let m = p.build_condition(c, 10, 3, silver.as_ref()).unwrap();
            let from_test = |s: &&Sentence| s.tokens()[0].starts_with('t');
            assert!(m.main.iter().filter(from_test).count() == 0, "{c}");
            assert!(m.aux.iter().all(|s| s.labels("main").is_none()), "{c}");
        }
    }

    #[test]
    fn ceiling_without_gold_aux_is_unavailable() {
        let mut p = plan(5);
        p.test = p.test.only_task("main");
        assert!(matches!(
            p.build_condition(Condition::AuxStCeiling, 10, 3, None),
            Err(Error::Unavailable(..))
        ));
    }
}
