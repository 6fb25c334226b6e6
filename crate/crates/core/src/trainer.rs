//! Single-task and multi-task training loops.
//!
//! Each step picks a task uniformly at random, then the next batch from that
//! task's shuffled queue, and takes one Adam step on the summed sentence
//! losses. An epoch is `sum_t ceil(|D_t| / batch_size)` steps. Early stopping
//! watches main-task accuracy on a dev split carved from the main corpus.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, TaskRole, TaskSpec};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::tensor::argmax;
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub dev_fraction: f64,
    pub seed: u64,
    /// Global L2 clipping threshold; 0 disables clipping.
    pub clip_norm: f64,
    /// Probability of replacing a word's embedding by the unknown row.
    pub word_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            max_epochs: 10,
            batch_size: 16,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            patience: 2,
            dev_fraction: 0.1,
            seed: 0,
            clip_norm: 5.0,
            word_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trainer.{m}")));
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return bad("dev_fraction must lie strictly between 0 and 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad("clip_norm must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.word_dropout) {
            return bad("word_dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// A task together with its training corpus.
#[derive(Clone, Copy, Debug)]
pub struct TaskData<'a> {
    pub task: &'a TaskSpec,
    pub corpus: &'a Corpus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean sentence loss per task over the epoch's steps; NaN when the
    /// task was never sampled.
    pub task_losses: Vec<f64>,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: ModelParams<T>,
    pub task_names: Vec<String>,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    /// Optimizer steps taken for each task, in `task_names` order.
    pub steps_per_task: Vec<usize>,
}

impl<T> TrainOutcome<T> {
    /// Tab-separated log: one header line, then one line per epoch.
    pub fn log_tsv(&self) -> String {
        let mut out = String::from("epoch");
        for t in &self.task_names {
            write!(out, "\tloss.{t}").unwrap();
        }
        out.push_str("\tdev_accuracy\n");
        for r in &self.history {
            write!(out, "{}", r.epoch).unwrap();
            for l in &r.task_losses {
                write!(out, "\t{l:.6}").unwrap();
            }
            writeln!(out, "\t{:.6}", r.dev_accuracy).unwrap();
        }
        out
    }
}

struct Prepared {
    tokens: Vec<Vec<String>>,
    gold: Vec<Vec<usize>>,
}

fn encode(corpus: &Corpus, task: &TaskSpec, pick: &[usize]) -> Result<Prepared> {
    let mut tokens = Vec::with_capacity(pick.len());
    let mut gold = Vec::with_capacity(pick.len());
    for &i in pick {
        let s = &corpus.sentences[i];
        let labels = s.labels(task.name()).ok_or_else(|| {
            Error::Data(format!(
                "sentence {} of corpus `{}` has no labels for task `{}`",
                i + 1,
                corpus.id,
                task.name()
            ))
        })?;
        gold.push(task.encode_labels(labels)?);
        tokens.push(s.tokens().to_vec());
    }
    Ok(Prepared { tokens, gold })
}

/// Token accuracy of a model's argmax predictions for one task.
pub fn dev_accuracy<T: Scalar>(
    model: &ModelParams<T>,
    task: usize,
    tokens: &[Vec<String>],
    gold: &[Vec<usize>],
) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for (toks, g) in tokens.iter().zip(gold) {
        let mut graph = model.graph();
        let logits = graph.logits(toks, task, None)?;
        for (l, &y) in logits.into_iter().zip(g) {
            correct += usize::from(argmax(graph.graph.value(l).data()) == y);
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    })
}

/// Splits `n` sentence indices into (train, dev), both in original order.
pub fn dev_split(n: usize, dev_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_dev = ((n as f64) * dev_fraction).round().max(1.0) as usize;
    if n < 2 || n_dev >= n {
        return Err(Error::Data(format!(
            "{n} sentences are too few to split off a dev set"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut dev = index::sample(&mut rng, n, n_dev).into_vec();
    dev.sort_unstable();
    let mut is_dev = vec![false; n];
    for &i in &dev {
        is_dev[i] = true;
    }
    let train = (0..n).filter(|&i| !is_dev[i]).collect();
    Ok((train, dev))
}

/// Trains one model on a single task; that task drives early stopping.
pub fn train_single_task<T: Scalar>(
    corpus: &Corpus,
    task: &TaskSpec,
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_mtl(&[TaskData { task, corpus }], vocab, model_config, config)
}

/// Hard-shared multi-task training. The main task is the one with role
/// [`TaskRole::Main`], or the only task when there is just one.
pub fn train_mtl<T: Scalar>(
    datasets: &[TaskData<'_>],
    vocab: &Vocabulary,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if datasets.is_empty() {
        return Err(Error::InvalidArgument(
            "train_mtl needs at least one task".into(),
        ));
    }
    let mains: Vec<usize> = (0..datasets.len())
        .filter(|&i| datasets[i].task.role() == TaskRole::Main)
        .collect();
    let main = match (mains.as_slice(), datasets.len()) {
        ([m], _) => *m,
        ([], 1) => 0,
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one task must have the main role".into(),
            ))
        }
    };
    for (i, d) in datasets.iter().enumerate() {
        if datasets[..i].iter().any(|o| o.task.name() == d.task.name()) {
            return Err(Error::InvalidArgument(format!(
                "task `{}` listed twice",
                d.task.name()
            )));
        }
    }

    let (main_train, main_dev) = dev_split(
        datasets[main].corpus.len(),
        config.dev_fraction,
        config.seed,
    )?;
    let mut data = Vec::with_capacity(datasets.len());
    for (i, d) in datasets.iter().enumerate() {
        let pick: Vec<usize> = if i == main {
            main_train.clone()
        } else {
            (0..d.corpus.len()).collect()
        };
        let prepared = encode(d.corpus, d.task, &pick)?;
        if prepared.tokens.is_empty() {
            return Err(Error::Data(format!(
                "no training sentences for task `{}`",
                d.task.name()
            )));
        }
        data.push(prepared);
    }
    let dev = encode(datasets[main].corpus, datasets[main].task, &main_dev)?;

    let tasks: Vec<TaskSpec> = datasets.iter().map(|d| d.task.clone()).collect();
    let mut model = ModelParams::<T>::new(model_config.clone(), vocab.clone(), tasks, config.seed)?;
    let mut adam = AdamState::new(model.params());
    let adam_config = config.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let b = config.batch_size;
    let steps_per_epoch: usize = data.iter().map(|d| d.tokens.len().div_ceil(b)).sum();
    let mut queues: Vec<Vec<usize>> = data.iter().map(|d| (0..d.tokens.len()).collect()).collect();
    let mut cursor = vec![0usize; data.len()];
    let mut steps_per_task = vec![0usize; data.len()];
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelParams<T>)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        for (q, c) in queues.iter_mut().zip(cursor.iter_mut()) {
            q.shuffle(&mut rng);
            *c = 0;
        }
        let mut loss_sum = vec![0.0; data.len()];
        let mut loss_count = vec![0usize; data.len()];
        for _ in 0..steps_per_epoch {
            let t = rng.random_range(0..data.len());
            if cursor[t] >= queues[t].len() {
                queues[t].shuffle(&mut rng);
                cursor[t] = 0;
            }
            let end = (cursor[t] + b).min(queues[t].len());
            let batch: Vec<usize> = queues[t][cursor[t]..end].to_vec();
            cursor[t] = end;

            let (loss, grads) = batch_gradients(&model, &data[t], &batch, t, config, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss for task `{}` in epoch {epoch}",
                    datasets[t].task.name()
                )));
            }
            loss_sum[t] += loss;
            loss_count[t] += batch.len();
            steps_per_task[t] += 1;
            let mut grads = grads;
            if config.clip_norm > 0.0 {
                grads.clip_global_norm(T::of(config.clip_norm));
            }
            adam_step(model.params_mut(), &grads, &mut adam, &adam_config)?;
        }

        let acc = dev_accuracy(&model, main, &dev.tokens, &dev.gold)?;
        history.push(EpochRecord {
            epoch,
            task_losses: loss_sum
                .iter()
                .zip(&loss_count)
                .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
                .collect(),
            dev_accuracy: acc,
        });
        if best.as_ref().is_none_or(|(_, a, _)| acc > *a) {
            best = Some((epoch, acc, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }

    let (best_epoch, best_dev_accuracy, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        task_names: datasets.iter().map(|d| d.task.name().to_string()).collect(),
        history,
        best_epoch,
        best_dev_accuracy,
        steps_per_task,
    })
}

fn batch_gradients<T: Scalar>(
    model: &ModelParams<T>,
    data: &Prepared,
    batch: &[usize],
    task: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Gradients<T>)> {
    let mut g = model.graph();
    let mut total = None;
    for &i in batch {
        let tokens = &data.tokens[i];
        let mask: Option<Vec<bool>> = (config.word_dropout > 0.0).then(|| {
            tokens
                .iter()
                .map(|_| rng.random::<f64>() < config.word_dropout)
                .collect()
        });
        let l = g.sentence_loss(tokens, &data.gold[i], task, mask.as_deref())?;
        total = Some(match total {
            Some(acc) => g.graph.add(acc, l)?,
            None => l,
        });
    }
    let total = total.expect("non-empty batch");
    let value = g.graph.value(total).item().as_f64();
    let grads = g.graph.backward(total)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use crate::vocab::build_vocab;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            word_dim: 8,
            char_dim: 6,
            char_hidden: 8,
            word_hidden: 10,
            ..ModelConfig::default()
        }
    }

    fn corpus(task: &str, n: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["apple", "bread", "cat", "dog", "egg", "fig", "goat", "hat"];
        let sents = (0..n)
            .map(|_| {
                let len = rng.random_range(2..6);
                let toks: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..8)]).collect();
                let labels: Vec<String> = toks.iter().map(|w| w[..1].to_uppercase()).collect();
                Sentence::from_tokens(&toks)
                    .unwrap()
                    .with_labels(task, &labels)
                    .unwrap()
            })
            .collect();
        Corpus::new(task, sents)
    }

    fn spec(name: &str, role: TaskRole) -> TaskSpec {
        let tags = "ABCDEFGH".chars().map(String::from).collect();
        TaskSpec::new(name, tags, role).unwrap()
    }

    #[test]
    fn defaults_validate_and_bad_values_are_named() {
        TrainConfig::default().validate().unwrap();
        let c = TrainConfig {
            dev_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("dev_fraction"));
    }

    #[test]
    fn dev_split_is_disjoint_and_deterministic() {
        let (tr, dev) = dev_split(50, 0.1, 3).unwrap();
        assert_eq!(dev.len(), 5);
        assert_eq!(tr.len(), 45);
        assert!(dev.iter().all(|i| !tr.contains(i)));
        assert_eq!(dev_split(50, 0.1, 3).unwrap(), (tr, dev));
        assert!(dev_split(1, 0.1, 3).is_err());
    }

    #[test]
    fn one_step_lowers_batch_loss() {
        let c = corpus("x", 4, 1);
        let task = spec("x", TaskRole::Main);
        let vocab = build_vocab(&[&c], 1).unwrap();
        for seed in 0..5 {
            let mut model =
                ModelParams::<f64>::new(tiny_model(), vocab.clone(), vec![task.clone()], seed)
                    .unwrap();
            let data = encode(&c, &task, &[0, 1, 2, 3]).unwrap();
            let cfg = TrainConfig::default();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (before, grads) =
                batch_gradients(&model, &data, &[0, 1, 2, 3], 0, &cfg, &mut rng).unwrap();
            let mut s = AdamState::new(model.params());
            adam_step(model.params_mut(), &grads, &mut s, &cfg.adam()).unwrap();
            let (after, _) =
                batch_gradients(&model, &data, &[0, 1, 2, 3], 0, &cfg, &mut rng).unwrap();
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn two_tasks_both_get_steps_and_heads_stay_separate() {
        let a = corpus("a", 40, 2);
        let b = corpus("b", 40, 3);
        let ta = spec("a", TaskRole::Main);
        let tb = spec("b", TaskRole::Auxiliary);
        let vocab = build_vocab(&[&a, &b], 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let out: TrainOutcome<f64> = train_mtl(
            &[
                TaskData {
                    task: &ta,
                    corpus: &a,
                },
                TaskData {
                    task: &tb,
                    corpus: &b,
                },
            ],
            &vocab,
            &tiny_model(),
            &cfg,
        )
        .unwrap();
        assert!(
            out.steps_per_task.iter().all(|&n| n > 0),
            "{:?}",
            out.steps_per_task
        );
        assert_eq!(out.steps_per_task.iter().sum::<usize>(), 18 + 20);
        assert!(out
            .log_tsv()
            .starts_with("epoch\tloss.a\tloss.b\tdev_accuracy\n"));
    }

    #[test]
    fn unlabelled_corpus_is_rejected() {
        let a = corpus("a", 10, 2);
        let t = spec("other", TaskRole::Main);
        let vocab = build_vocab(&[&a], 1).unwrap();
        let r = train_single_task::<f64>(&a, &t, &vocab, &tiny_model(), &TrainConfig::default());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn first_character_task_is_learned_and_reproducible() {
        let c = corpus("x", 200, 5);
        let t = spec("x", TaskRole::Main);
        let vocab = build_vocab(&[&c], 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        let run = || train_single_task::<f64>(&c, &t, &vocab, &tiny_model(), &cfg).unwrap();
        let out = run();
        assert!(out.best_dev_accuracy >= 0.95, "{}", out.log_tsv());
        assert!(out.best_dev_accuracy >= out.history[0].dev_accuracy);
        assert_eq!(run().history, out.history);
    }
}
