//! Hierarchical bi-LSTM tagger.
//!
//! Each word is represented by its embedding concatenated with the final
//! states of a forward and a backward character LSTM. A word-level
//! bi-LSTM turns those representations into context vectors, and every
//! task owns one affine classification head over them. Everything except
//! the heads is shared between tasks.

mod io;

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeRef, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{argmax, softmax, Tensor};
use crate::vocab::{Vocabulary, UNKNOWN};

pub use io::{read_model, write_model, FORMAT_VERSION};

/// Whether a task is the reported one or a helper.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskRole {
    Main,
    Auxiliary,
}

impl fmt::Display for TaskRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskRole::Main => "main",
            TaskRole::Auxiliary => "auxiliary",
        })
    }
}

/// A named task with a closed, ordered tagset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskSpec {
    name: String,
    tagset: Vec<String>,
    role: TaskRole,
    index: HashMap<String, usize>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, tagset: Vec<String>, role: TaskRole) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "task name {name:?} must be non-empty without whitespace"
            )));
        }
        if tagset.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "task `{name}` has an empty tagset"
            )));
        }
        let mut index = HashMap::with_capacity(tagset.len());
        for (i, t) in tagset.iter().enumerate() {
            if t.is_empty() || t.contains(['\t', '\n', '\r']) {
                return Err(Error::InvalidArgument(format!(
                    "task `{name}`: invalid label {t:?}"
                )));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "task `{name}`: duplicate label `{t}`"
                )));
            }
        }
        Ok(TaskSpec {
            name,
            tagset,
            role,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tagset(&self) -> &[String] {
        &self.tagset
    }

    pub fn role(&self) -> TaskRole {
        self.role
    }

    pub fn with_role(mut self, role: TaskRole) -> Self {
        self.role = role;
        self
    }

    pub fn num_labels(&self) -> usize {
        self.tagset.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.tagset[index]
    }

    /// Label indices for a gold sequence, rejecting labels outside the tagset.
    pub fn encode_labels<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.label_index(l.as_ref())
                    .ok_or_else(|| Error::UnknownLabel {
                        label: l.as_ref().to_string(),
                        task: self.name.clone(),
                    })
            })
            .collect()
    }
}

/// Layer sizes and initialisation of the tagger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    /// Per direction.
    pub char_hidden: usize,
    /// Per direction.
    pub word_hidden: usize,
    /// Weights start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub forget_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 64,
            char_dim: 32,
            char_hidden: 32,
            word_hidden: 100,
            init_scale: 0.1,
            forget_bias: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("word_hidden", self.word_hidden),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config(
                "model.init_scale must be finite and >= 0".into(),
            ));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::Config("model.forget_bias must be finite".into()));
        }
        Ok(())
    }

    /// Width of a word representation: embedding plus both char states.
    pub fn word_repr_dim(&self) -> usize {
        self.word_dim + 2 * self.char_hidden
    }

    /// Width of a context vector.
    pub fn context_dim(&self) -> usize {
        2 * self.word_hidden
    }
}

/// Gate order used for LSTM weight names and ids.
const GATES: [&str; 4] = ["input", "forget", "output", "cell"];
const FORGET: usize = 1;

#[derive(Clone, Debug, PartialEq)]
struct LstmIds {
    weights: [ParamId; 4],
    biases: [ParamId; 4],
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    word_emb: ParamId,
    char_emb: ParamId,
    char_fwd: LstmIds,
    char_bwd: LstmIds,
    word_fwd: LstmIds,
    word_bwd: LstmIds,
    heads: Vec<(ParamId, ParamId)>,
}

/// All parameters of a tagger together with the vocabulary and tagsets
/// that give them meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    vocab: Vocabulary,
    tasks: Vec<TaskSpec>,
    params: ParamSet<T>,
    layout: Layout,
}

/// Per-token prediction: argmax label and the full distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenPrediction<T> {
    pub label: String,
    pub index: usize,
    pub distribution: Vec<T>,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            T::of(if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            })
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn insert_lstm<T: Scalar>(
    params: &mut ParamSet<T>,
    prefix: &str,
    input: usize,
    hidden: usize,
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LstmIds> {
    let mut weights = Vec::with_capacity(4);
    let mut biases = Vec::with_capacity(4);
    for (k, gate) in GATES.iter().enumerate() {
        let w = uniform(rng, &[hidden, input + hidden], config.init_scale);
        weights.push(params.insert(format!("{prefix}.{gate}.weight"), w)?);
        let fill = if k == FORGET { config.forget_bias } else { 0.0 };
        let b = Tensor::filled(&[hidden], T::of(fill));
        biases.push(params.insert(format!("{prefix}.{gate}.bias"), b)?);
    }
    Ok(LstmIds {
        weights: weights.try_into().unwrap(),
        biases: biases.try_into().unwrap(),
    })
}

fn lstm_ids<T: Scalar>(params: &ParamSet<T>, prefix: &str) -> Result<LstmIds> {
    let find = |name: String| {
        params
            .id(&name)
            .ok_or_else(|| Error::Data(format!("model is missing tensor `{name}`")))
    };
    let mut weights = Vec::with_capacity(4);
    let mut biases = Vec::with_capacity(4);
    for gate in GATES {
        weights.push(find(format!("{prefix}.{gate}.weight"))?);
        biases.push(find(format!("{prefix}.{gate}.bias"))?);
    }
    Ok(LstmIds {
        weights: weights.try_into().unwrap(),
        biases: biases.try_into().unwrap(),
    })
}

fn head_names(task: &str) -> (String, String) {
    (format!("head.{task}.weight"), format!("head.{task}.bias"))
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh model with seeded uniform weights, zero biases and forget-gate
    /// bias `config.forget_bias`.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        tasks: Vec<TaskSpec>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let s = config.init_scale;
        let word_emb = params.insert(
            "word_embedding",
            uniform(&mut rng, &[vocab.num_words(), config.word_dim], s),
        )?;
        let char_emb = params.insert(
            "char_embedding",
            uniform(&mut rng, &[vocab.num_chars(), config.char_dim], s),
        )?;
        let (dc, hc, hw) = (config.char_dim, config.char_hidden, config.word_hidden);
        let char_fwd = insert_lstm(&mut params, "char_lstm.forward", dc, hc, &config, &mut rng)?;
        let char_bwd = insert_lstm(&mut params, "char_lstm.backward", dc, hc, &config, &mut rng)?;
        let wi = config.word_repr_dim();
        let word_fwd = insert_lstm(&mut params, "word_lstm.forward", wi, hw, &config, &mut rng)?;
        let word_bwd = insert_lstm(&mut params, "word_lstm.backward", wi, hw, &config, &mut rng)?;
        let mut model = ModelParams {
            config,
            vocab,
            tasks: Vec::new(),
            params,
            layout: Layout {
                word_emb,
                char_emb,
                char_fwd,
                char_bwd,
                word_fwd,
                word_bwd,
                heads: Vec::new(),
            },
        };
        for task in tasks {
            model.add_task_with(task, &mut rng)?;
        }
        Ok(model)
    }

    /// Registers a new classification head, initialised from its own seed.
    /// Shared parameters and existing heads are untouched.
    pub fn add_task(&mut self, task: TaskSpec, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.add_task_with(task, &mut rng)
    }

    fn add_task_with(&mut self, task: TaskSpec, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.task_position(task.name()).is_some() {
            return Err(Error::InvalidArgument(format!(
                "task `{}` is already registered",
                task.name()
            )));
        }
        let (wn, bn) = head_names(task.name());
        let w = uniform(
            rng,
            &[task.num_labels(), self.config.context_dim()],
            self.config.init_scale,
        );
        let w = self.params.insert(wn, w)?;
        let b = self
            .params
            .insert(bn, Tensor::zeros(&[task.num_labels()]))?;
        self.layout.heads.push((w, b));
        self.tasks.push(task);
        Ok(())
    }

    /// Reassembles a model from deserialised parts, checking every shape.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        tasks: Vec<TaskSpec>,
        params: ParamSet<T>,
    ) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| Error::Data(format!("model is missing tensor `{name}`")))
        };
        let mut heads = Vec::new();
        for t in &tasks {
            let (wn, bn) = head_names(t.name());
            heads.push((find(&wn)?, find(&bn)?));
        }
        let layout = Layout {
            word_emb: find("word_embedding")?,
            char_emb: find("char_embedding")?,
            char_fwd: lstm_ids(&params, "char_lstm.forward")?,
            char_bwd: lstm_ids(&params, "char_lstm.backward")?,
            word_fwd: lstm_ids(&params, "word_lstm.forward")?,
            word_bwd: lstm_ids(&params, "word_lstm.backward")?,
            heads,
        };
        let expected = 2 + 4 * 8 + 2 * tasks.len();
        if params.len() != expected {
            return Err(Error::Data(format!(
                "model has {} tensors, expected {expected}",
                params.len()
            )));
        }
        let model = ModelParams {
            config,
            vocab,
            tasks,
            params,
            layout,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let mut expect: Vec<(ParamId, Vec<usize>)> = vec![
            (
                self.layout.word_emb,
                vec![self.vocab.num_words(), c.word_dim],
            ),
            (
                self.layout.char_emb,
                vec![self.vocab.num_chars(), c.char_dim],
            ),
        ];
        let lstms = [
            (&self.layout.char_fwd, c.char_dim, c.char_hidden),
            (&self.layout.char_bwd, c.char_dim, c.char_hidden),
            (&self.layout.word_fwd, c.word_repr_dim(), c.word_hidden),
            (&self.layout.word_bwd, c.word_repr_dim(), c.word_hidden),
        ];
        for (ids, input, hidden) in lstms {
            for k in 0..4 {
                expect.push((ids.weights[k], vec![hidden, input + hidden]));
                expect.push((ids.biases[k], vec![hidden]));
            }
        }
        for (t, &(w, b)) in self.tasks.iter().zip(&self.layout.heads) {
            expect.push((w, vec![t.num_labels(), c.context_dim()]));
            expect.push((b, vec![t.num_labels()]));
        }
        for (id, shape) in expect {
            let got = self.params.get(id);
            if got.shape() != shape.as_slice() {
                return Err(Error::Data(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    self.params.name(id),
                    got.shape(),
                    shape
                )));
            }
            if !got.is_finite() {
                return Err(Error::Data(format!(
                    "tensor `{}` contains non-finite values",
                    self.params.name(id)
                )));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn task_position(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name() == name)
    }

    /// Index of a registered task, or an error listing the available ones.
    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.task_position(name).ok_or_else(|| Error::UnknownTask {
            task: name.to_string(),
            available: self
                .tasks
                .iter()
                .map(TaskSpec::name)
                .collect::<Vec<_>>()
                .join(", "),
        })
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        Ok(&self.tasks[self.task_index(name)?])
    }

    /// Weight and bias ids of a task's head.
    pub fn head(&self, task: usize) -> (ParamId, ParamId) {
        self.layout.heads[task]
    }

    /// Ids of every parameter not owned by a head.
    pub fn shared_params(&self) -> Vec<ParamId> {
        let heads: Vec<ParamId> = self
            .layout
            .heads
            .iter()
            .flat_map(|&(w, b)| [w, b])
            .collect();
        self.params.ids().filter(|id| !heads.contains(id)).collect()
    }

    /// Starts a computation graph over this model's parameters.
    pub fn graph(&self) -> ModelGraph<'_, T> {
        ModelGraph {
            model: self,
            graph: Graph::with_params(&self.params),
            words: HashMap::new(),
            zeros: HashMap::new(),
        }
    }

    /// Embedding plus final forward and backward character states.
    pub fn encode_word(&self, word: &str) -> Result<Vec<T>> {
        if word.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty word".into()));
        }
        let mut g = self.graph();
        let n = g.word(word, false)?;
        Ok(g.graph.value(n).data().to_vec())
    }

    /// Context vectors, one per token.
    pub fn encode_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Vec<T>>> {
        let mut g = self.graph();
        let ctx = g.context(tokens, None)?;
        Ok(ctx
            .iter()
            .map(|&n| g.graph.value(n).data().to_vec())
            .collect())
    }

    /// Per-token logits of one task.
    pub fn logits<S: AsRef<str>>(&self, tokens: &[S], task: &str) -> Result<Vec<Vec<T>>> {
        let t = self.task_index(task)?;
        let mut g = self.graph();
        let out = g.logits(tokens, t, None)?;
        Ok(out
            .iter()
            .map(|&n| g.graph.value(n).data().to_vec())
            .collect())
    }

    /// Argmax label (lowest index on ties) and softmax distribution per token.
    pub fn predict<S: AsRef<str>>(
        &self,
        tokens: &[S],
        task: &str,
    ) -> Result<Vec<TokenPrediction<T>>> {
        let t = self.task_index(task)?;
        let spec = &self.tasks[t];
        Ok(self
            .logits(tokens, task)?
            .into_iter()
            .map(|l| {
                let index = argmax(&l);
                TokenPrediction {
                    label: spec.label(index).to_string(),
                    index,
                    distribution: softmax(&l),
                }
            })
            .collect())
    }

    /// Argmax labels only.
    pub fn tag<S: AsRef<str>>(&self, tokens: &[S], task: &str) -> Result<Vec<String>> {
        Ok(self
            .predict(tokens, task)?
            .into_iter()
            .map(|p| p.label)
            .collect())
    }

    /// Sum over tokens of the softmax cross-entropy of the gold labels.
    pub fn sentence_loss<S: AsRef<str>, L: AsRef<str>>(
        &self,
        tokens: &[S],
        gold: &[L],
        task: &str,
    ) -> Result<T> {
        let t = self.task_index(task)?;
        let gold = self.tasks[t].encode_labels(gold)?;
        let mut g = self.graph();
        let loss = g.sentence_loss(tokens, &gold, t, None)?;
        Ok(g.graph.value(loss).item())
    }
}

/// A [`Graph`] bound to a model, caching word representations so that a
/// word type is encoded once per graph.
pub struct ModelGraph<'m, T> {
    model: &'m ModelParams<T>,
    pub graph: Graph<'m, T>,
    words: HashMap<(String, bool), NodeRef>,
    zeros: HashMap<usize, NodeRef>,
}

impl<'m, T: Scalar> ModelGraph<'m, T> {
    fn zeros(&mut self, n: usize) -> NodeRef {
        if let Some(&z) = self.zeros.get(&n) {
            return z;
        }
        let z = self.graph.input(Tensor::zeros(&[n]));
        self.zeros.insert(n, z);
        z
    }

    fn lstm_step(
        &mut self,
        ids: &LstmIds,
        x: NodeRef,
        h: NodeRef,
        c: NodeRef,
    ) -> Result<(NodeRef, NodeRef)> {
        let g = &mut self.graph;
        let xh = g.concat(&[x, h])?;
        let mut pre = [xh; 4];
        for (k, p) in pre.iter_mut().enumerate() {
            let w = g.param(ids.weights[k]);
            let b = g.param(ids.biases[k]);
            let z = g.matmul(w, xh)?;
            *p = g.add(z, b)?;
        }
        let i = g.sigmoid(pre[0])?;
        let f = g.sigmoid(pre[1])?;
        let o = g.sigmoid(pre[2])?;
        let cand = g.tanh(pre[3])?;
        let kept = g.hadamard(f, c)?;
        let written = g.hadamard(i, cand)?;
        let c_new = g.add(kept, written)?;
        let squashed = g.tanh(c_new)?;
        let h_new = g.hadamard(o, squashed)?;
        Ok((h_new, c_new))
    }

    /// Final hidden state after running `ids` over `xs` in order.
    fn run_final(
        &mut self,
        ids: &LstmIds,
        xs: impl Iterator<Item = NodeRef>,
        hidden: usize,
    ) -> Result<NodeRef> {
        let z = self.zeros(hidden);
        let (mut h, mut c) = (z, z);
        for x in xs {
            (h, c) = self.lstm_step(ids, x, h, c)?;
        }
        Ok(h)
    }

    /// Word representation. `dropped` substitutes the unknown embedding row.
    pub fn word(&mut self, word: &str, dropped: bool) -> Result<NodeRef> {
        if let Some(&n) = self.words.get(&(word.to_string(), dropped)) {
            return Ok(n);
        }
        let model = self.model;
        let cfg = &model.config;
        let table = self.graph.param(model.layout.word_emb);
        let wid = if dropped {
            UNKNOWN
        } else {
            model.vocab.word_id(word)
        };
        let emb = self.graph.lookup(table, wid)?;

        let ctable = self.graph.param(model.layout.char_emb);
        let chars: Vec<NodeRef> = word
            .chars()
            .map(|c| self.graph.lookup(ctable, model.vocab.char_id(c)))
            .collect::<Result<_>>()?;
        let fwd = self.run_final(
            &model.layout.char_fwd,
            chars.iter().copied(),
            cfg.char_hidden,
        )?;
        let bwd = self.run_final(
            &model.layout.char_bwd,
            chars.iter().rev().copied(),
            cfg.char_hidden,
        )?;
        let repr = self.graph.concat(&[emb, fwd, bwd])?;
        self.words.insert((word.to_string(), dropped), repr);
        Ok(repr)
    }

    /// Context vectors: forward state after tokens `1..=i` joined with the
    /// backward state after tokens `n..=i`.
    pub fn context<S: AsRef<str>>(
        &mut self,
        tokens: &[S],
        dropped: Option<&[bool]>,
    ) -> Result<Vec<NodeRef>> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot encode an empty sentence".into(),
            ));
        }
        let model = self.model;
        let hw = model.config.word_hidden;
        let reprs: Vec<NodeRef> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let word = t.as_ref();
                if word.is_empty() {
                    return Err(Error::InvalidArgument("cannot encode an empty word".into()));
                }
                self.word(word, dropped.is_some_and(|d| d[i]))
            })
            .collect::<Result<_>>()?;

        let z = self.zeros(hw);
        let n = reprs.len();
        let mut fwd = Vec::with_capacity(n);
        let (mut h, mut c) = (z, z);
        for &x in &reprs {
            (h, c) = self.lstm_step(&model.layout.word_fwd, x, h, c)?;
            fwd.push(h);
        }
        let mut bwd = vec![z; n];
        let (mut h, mut c) = (z, z);
        for i in (0..n).rev() {
            (h, c) = self.lstm_step(&model.layout.word_bwd, reprs[i], h, c)?;
            bwd[i] = h;
        }
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| self.graph.concat(&[f, b]))
            .collect()
    }

    pub fn logits<S: AsRef<str>>(
        &mut self,
        tokens: &[S],
        task: usize,
        dropped: Option<&[bool]>,
    ) -> Result<Vec<NodeRef>> {
        let ctx = self.context(tokens, dropped)?;
        let (w, b) = self.model.layout.heads[task];
        let w = self.graph.param(w);
        let b = self.graph.param(b);
        ctx.into_iter()
            .map(|v| {
                let z = self.graph.matmul(w, v)?;
                self.graph.add(z, b)
            })
            .collect()
    }

    /// Summed token cross-entropy for gold label indices of `task`.
    pub fn sentence_loss<S: AsRef<str>>(
        &mut self,
        tokens: &[S],
        gold: &[usize],
        task: usize,
        dropped: Option<&[bool]>,
    ) -> Result<NodeRef> {
        if gold.len() != tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gold labels for {} tokens",
                gold.len(),
                tokens.len()
            )));
        }
        let logits = self.logits(tokens, task, dropped)?;
        let mut total: Option<NodeRef> = None;
        for (l, &y) in logits.into_iter().zip(gold) {
            let ce = self.graph.softmax_cross_entropy(l, y)?;
            total = Some(match total {
                Some(t) => self.graph.add(t, ce)?,
                None => ce,
            });
        }
        Ok(total.expect("non-empty sentence"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Sentence};
    use crate::vocab::build_vocab;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            word_dim: 4,
            char_dim: 3,
            char_hidden: 3,
            word_hidden: 4,
            ..ModelConfig::default()
        }
    }

    fn task(name: &str, labels: &[&str]) -> TaskSpec {
        TaskSpec::new(
            name,
            labels.iter().map(|s| s.to_string()).collect(),
            TaskRole::Main,
        )
        .unwrap()
    }

    fn vocab() -> Vocabulary {
        let c = Corpus::new(
            "v",
            vec![Sentence::from_tokens(&["ab", "ba", "cab", "a"]).unwrap()],
        );
        build_vocab(&[&c], 1).unwrap()
    }

    fn model(seed: u64) -> ModelParams<f64> {
        ModelParams::new(
            tiny_config(),
            vocab(),
            vec![task("pos", &["A", "B", "C"]), task("rel", &["x", "y"])],
            seed,
        )
        .unwrap()
    }

    fn zeroed(mut m: ModelParams<f64>) -> ModelParams<f64> {
        let ids: Vec<_> = m.params().ids().collect();
        for id in ids {
            m.params_mut().get_mut(id).fill(0.0);
        }
        m
    }

    #[test]
    fn tagset_rejects_duplicates_and_empty() {
        assert!(TaskSpec::new("t", vec![], TaskRole::Main).is_err());
        assert!(TaskSpec::new("t", vec!["a".into(), "a".into()], TaskRole::Main).is_err());
        let t = task("t", &["a", "b"]);
        assert_eq!(t.label_index("b"), Some(1));
        assert_eq!(t.label(0), "a");
    }

    #[test]
    fn zero_parameters_give_zero_word_vector() {
        let m = zeroed(model(1));
        let v = m.encode_word("cab").unwrap();
        assert_eq!(v.len(), 4 + 2 * 3);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn character_order_matters() {
        let m = model(7);
        assert_ne!(m.encode_word("ab").unwrap(), m.encode_word("ba").unwrap());
    }

    #[test]
    fn unknown_word_keeps_character_component() {
        let m = model(3);
        let unk_row = m.params().get(m.layout.word_emb).row(UNKNOWN).to_vec();
        let v = m.encode_word("zzz-unseen").unwrap();
        assert_eq!(&v[..4], unk_row.as_slice());
        assert!(v[4..].iter().any(|&x| x != 0.0));
        let known = m.encode_word("ab").unwrap();
        assert_ne!(&known[..4], unk_row.as_slice());
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let m = model(3);
        assert!(m.encode_word("").is_err());
        assert!(m.encode_sentence::<&str>(&[]).is_err());
    }

    #[test]
    fn single_token_context_is_one_step_each_way() {
        let m = model(11);
        let ctx = m.encode_sentence(&["cab"]).unwrap();
        assert_eq!(ctx.len(), 1);
        // Recompute the two single steps by hand on a fresh graph.
        let mut g = m.graph();
        let x = g.word("cab", false).unwrap();
        let z = g.zeros(4);
        let (hf, _) = g.lstm_step(&m.layout.word_fwd, x, z, z).unwrap();
        let (hb, _) = g.lstm_step(&m.layout.word_bwd, x, z, z).unwrap();
        let mut expected = g.graph.value(hf).data().to_vec();
        expected.extend_from_slice(g.graph.value(hb).data());
        assert_eq!(ctx[0], expected);
    }

    #[test]
    fn zero_parameters_give_zero_context() {
        let m = zeroed(model(5));
        for v in m.encode_sentence(&["ab", "a", "x"]).unwrap() {
            assert_eq!(v.len(), 8);
            assert!(v.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn last_token_reaches_first_position() {
        let m = model(13);
        let a = m.encode_sentence(&["ab", "ba", "cab"]).unwrap();
        let b = m.encode_sentence(&["ab", "ba", "a"]).unwrap();
        assert_ne!(a[0], b[0]);
        // The forward half of position 1 only sees token 1.
        assert_eq!(a[0][..4], b[0][..4]);
    }

    #[test]
    fn zero_head_gives_uniform_distribution() {
        let mut m = model(2);
        let (w, b) = m.head(0);
        m.params_mut().get_mut(w).fill(0.0);
        m.params_mut().get_mut(b).fill(0.0);
        for p in m.predict(&["ab", "q"], "pos").unwrap() {
            for &x in &p.distribution {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
            assert_eq!(p.index, 0);
            assert_eq!(p.label, "A");
        }
    }

    #[test]
    fn distributions_are_normalised() {
        let m = model(17);
        for p in m.predict(&["ab", "ba", "zz"], "rel").unwrap() {
            let s: f64 = p.distribution.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(p.distribution.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn shifting_all_logits_keeps_argmax() {
        let mut m = model(19);
        let before = m.tag(&["ab", "ba", "a"], "pos").unwrap();
        let (_, b) = m.head(0);
        m.params_mut()
            .get_mut(b)
            .data_mut()
            .iter_mut()
            .for_each(|x| *x += 2.5);
        assert_eq!(m.tag(&["ab", "ba", "a"], "pos").unwrap(), before);
    }

    #[test]
    fn unregistered_task_is_rejected() {
        let m = model(1);
        let err = m.predict(&["ab"], "ner").unwrap_err().to_string();
        assert!(err.contains("pos") && err.contains("rel"), "{err}");
    }

    #[test]
    fn uniform_single_token_loss_is_ln2() {
        let mut m = model(4);
        let (w, b) = m.head(1);
        m.params_mut().get_mut(w).fill(0.0);
        m.params_mut().get_mut(b).fill(0.0);
        let l = m.sentence_loss(&["ab"], &["x"], "rel").unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn loss_rejects_unknown_label_and_length_mismatch() {
        let m = model(4);
        match m.sentence_loss(&["ab"], &["nope"], "rel") {
            Err(Error::UnknownLabel { label, task }) => {
                assert_eq!(label, "nope");
                assert_eq!(task, "rel");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.sentence_loss(&["ab", "a"], &["x"], "rel").is_err());
    }

    #[test]
    fn adding_a_head_keeps_existing_predictions() {
        let m = model(23);
        let before = m.predict(&["ab", "cab"], "pos").unwrap();
        let mut m2 = m.clone();
        m2.add_task(task("new", &["p", "q"]), 99).unwrap();
        assert_eq!(m2.predict(&["ab", "cab"], "pos").unwrap(), before);
        assert!(m2.add_task(task("new", &["p"]), 1).is_err());
    }

    #[test]
    fn heads_are_not_shared() {
        let m = model(1);
        let shared = m.shared_params();
        assert_eq!(shared.len(), m.params().len() - 4);
        let (w, b) = m.head(1);
        assert!(!shared.contains(&w) && !shared.contains(&b));
    }

    #[test]
    fn single_precision_model_runs() {
        let m = ModelParams::<f32>::new(tiny_config(), vocab(), vec![task("pos", &["A", "B"])], 1)
            .unwrap();
        let p = m.predict(&["ab", "zz"], "pos").unwrap();
        let s: f32 = p[0].distribution.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}
