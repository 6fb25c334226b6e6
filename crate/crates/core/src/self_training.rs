//! Transductive auxiliary-task self-training: train an aux tagger, label the
//! main task's test inputs with it, append those silver sentences to the
//! aux training data and train the multi-task model.

use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{write_model, ModelConfig, ModelParams, TaskRole, TaskSpec};
use crate::scalar::Scalar;
use crate::trainer::{train_mtl, train_single_task, TaskData, TrainConfig, TrainOutcome};
use crate::vocab::Vocabulary;

/// Anything that can assign aux labels to a token sequence.
pub trait AuxLabeler {
    fn label(&self, tokens: &[String], task: &str) -> Result<Vec<String>>;

    /// Stable identity recorded with the silver data it produces.
    fn identity(&self) -> String;
}

/// Hex SHA-256 of a model's serialized form.
pub fn model_hash<T: Scalar>(model: &ModelParams<T>) -> String {
    hex::encode(Sha256::digest(write_model(model).as_bytes()))
}

impl<T: Scalar> AuxLabeler for ModelParams<T> {
    fn label(&self, tokens: &[String], task: &str) -> Result<Vec<String>> {
        self.tag(tokens, task)
    }

    fn identity(&self) -> String {
        model_hash(self)
    }
}

/// Test inputs labelled for the aux task by a model.
#[derive(Clone, Debug, PartialEq)]
pub struct SilverCorpus {
    pub corpus: Corpus,
    pub task: String,
    /// Identity of the labeller, a model hash for real models.
    pub source: String,
}

/// Labels every sentence of `test_inputs` with the labeller's predictions.
/// Nothing is filtered, and any labels already on the inputs are dropped.
pub fn self_label(
    labeler: &dyn AuxLabeler,
    test_inputs: &Corpus,
    task: &TaskSpec,
) -> Result<SilverCorpus> {
    let mut corpus = test_inputs.unlabelled();
    for s in corpus.sentences.iter_mut() {
        let labels = labeler.label(s.tokens(), task.name())?;
        s.set_labels(task.name(), labels)?;
    }
    Ok(SilverCorpus {
        corpus,
        task: task.name().to_string(),
        source: labeler.identity(),
    })
}

/// Shared settings of the two training runs.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSettings<'a> {
    pub main_task: &'a TaskSpec,
    pub aux_task: &'a TaskSpec,
    pub vocab: &'a Vocabulary,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    /// Aux model trains with this seed, the MTL model with `run_seed + 1`.
    pub run_seed: u64,
}

impl PipelineSettings<'_> {
    pub fn aux_seed(&self) -> u64 {
        self.run_seed
    }

    pub fn mtl_seed(&self) -> u64 {
        self.run_seed.wrapping_add(1)
    }
}

/// Multi-task training on (aux, main) with the pipeline's MTL seed. Every
/// condition's final model goes through here.
pub fn train_condition_model<T: Scalar>(
    train_aux: &Corpus,
    train_main: &Corpus,
    settings: &PipelineSettings<'_>,
) -> Result<TrainOutcome<T>> {
    let main = settings.main_task.clone().with_role(TaskRole::Main);
    let aux = settings.aux_task.clone().with_role(TaskRole::Auxiliary);
    if main.name() == aux.name() {
        return Err(Error::Config("main and aux task must differ".into()));
    }
    train_mtl(
        &[
            TaskData {
                task: &main,
                corpus: train_main,
            },
            TaskData {
                task: &aux,
                corpus: train_aux,
            },
        ],
        settings.vocab,
        settings.model,
        &settings.train.with_seed(settings.mtl_seed()),
    )
}

pub struct SelfTrainOutcome<T> {
    pub aux_model: Option<TrainOutcome<T>>,
    pub silver: SilverCorpus,
    pub augmented_aux: Corpus,
    pub mtl: TrainOutcome<T>,
}

/// Self-training with a given labeller in place of a trained aux model.
pub fn self_train_with_labeler<T: Scalar>(
    labeler: &dyn AuxLabeler,
    train_aux: &Corpus,
    train_main: &Corpus,
    testinp_main: &Corpus,
    settings: &PipelineSettings<'_>,
) -> Result<SelfTrainOutcome<T>> {
    let silver = self_label(labeler, testinp_main, settings.aux_task)?;
    let augmented_aux = train_aux.concat(&silver.corpus);
    let mtl = train_condition_model(&augmented_aux, train_main, settings)?;
    Ok(SelfTrainOutcome {
        aux_model: None,
        silver,
        augmented_aux,
        mtl,
    })
}

/// The full pipeline: the aux model is trained on `train_aux` alone.
pub fn transductive_aux_self_train<T: Scalar>(
    train_aux: &Corpus,
    train_main: &Corpus,
    testinp_main: &Corpus,
    settings: &PipelineSettings<'_>,
) -> Result<SelfTrainOutcome<T>> {
    let aux_task = settings.aux_task.clone().with_role(TaskRole::Auxiliary);
    let aux_model = train_single_task::<T>(
        train_aux,
        &aux_task,
        settings.vocab,
        settings.model,
        &settings.train.with_seed(settings.aux_seed()),
    )?;
    let mut out = self_train_with_labeler(
        &aux_model.model,
        train_aux,
        train_main,
        testinp_main,
        settings,
    )?;
    out.aux_model = Some(aux_model);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;
    use crate::model::{write_model, ModelConfig};
    use crate::vocab::build_vocab;

    struct Constant(&'static str);

    impl AuxLabeler for Constant {
        fn label(&self, tokens: &[String], _: &str) -> Result<Vec<String>> {
            Ok(vec![self.0.to_string(); tokens.len()])
        }

        fn identity(&self) -> String {
            format!("constant {}", self.0)
        }
    }

    fn spec(name: &str, tags: &[&str], role: TaskRole) -> TaskSpec {
        TaskSpec::new(name, tags.iter().map(|t| t.to_string()).collect(), role).unwrap()
    }

    fn tagged(task: &str, rows: &[(&[&str], &[&str])]) -> Corpus {
        let sents = rows
            .iter()
            .map(|(t, l)| {
                Sentence::from_tokens(t)
                    .unwrap()
                    .with_labels(task, l)
                    .unwrap()
            })
            .collect();
        Corpus::new(task, sents)
    }

    #[test]
    fn silver_keeps_every_sentence_and_only_aux_labels() {
        let test = tagged("main", &[(&["a", "b"], &["X", "Y"]), (&["c"], &["X"])]);
        let aux = spec("aux", &["N", "V"], TaskRole::Auxiliary);
        let s = self_label(&Constant("V"), &test, &aux).unwrap();
        assert_eq!(s.corpus.len(), 2);
        assert_eq!(
            s.corpus.tasks_present().into_iter().collect::<Vec<_>>(),
            ["aux"]
        );
        assert_eq!(s.corpus.sentences[0].labels("aux").unwrap(), ["V", "V"]);
        assert_eq!(s.source, "constant V");
    }

    #[test]
    fn zero_model_labels_everything_with_first_tag() {
        let c = tagged("aux", &[(&["a", "b"], &["V", "N"])]);
        let aux = spec("aux", &["N", "V"], TaskRole::Auxiliary);
        let cfg = ModelConfig {
            init_scale: 0.0,
            forget_bias: 0.0,
            word_dim: 2,
            char_dim: 2,
            char_hidden: 2,
            word_hidden: 2,
        };
        let m = ModelParams::<f64>::new(cfg, build_vocab(&[&c], 1).unwrap(), vec![aux.clone()], 0)
            .unwrap();
        let s = self_label(&m, &c, &aux).unwrap();
        assert_eq!(s.corpus.sentences[0].labels("aux").unwrap(), ["N", "N"]);
        assert_eq!(s.source, model_hash(&m));
        assert_eq!(s.source.len(), 64);
    }

    #[test]
    fn unknown_task_is_rejected() {
        let c = tagged("aux", &[(&["a"], &["V"])]);
        let aux = spec("aux", &["N", "V"], TaskRole::Auxiliary);
        let other = spec("other", &["N"], TaskRole::Auxiliary);
        let m = ModelParams::<f64>::new(
            ModelConfig::default(),
            build_vocab(&[&c], 1).unwrap(),
            vec![aux],
            0,
        )
        .unwrap();
        assert!(matches!(
            self_label(&m, &c, &other),
            Err(Error::UnknownTask { .. })
        ));
    }

    #[test]
    fn main_data_is_untouched_and_silver_lands_in_aux() {
        let main_rows: Vec<(&[&str], &[&str])> = vec![
            (&["a", "b"], &["X", "Y"]),
            (&["b", "a"], &["Y", "X"]),
            (&["a"], &["X"]),
        ];
        let main_c = tagged("main", &main_rows);
        let aux_c = tagged("aux", &[(&["a", "b"], &["N", "V"]), (&["b"], &["V"])]);
        let test = tagged("main", &[(&["b", "c"], &["Y", "X"])]).unlabelled();
        let main = spec("main", &["X", "Y"], TaskRole::Main);
        let aux = spec("aux", &["N", "V"], TaskRole::Auxiliary);
        let vocab = build_vocab(&[&main_c, &aux_c, &test], 1).unwrap();
        let model = ModelConfig {
            word_dim: 3,
            char_dim: 2,
            char_hidden: 2,
            word_hidden: 3,
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            max_epochs: 2,
            batch_size: 1,
            dev_fraction: 0.34,
            ..TrainConfig::default()
        };
        let settings = PipelineSettings {
            main_task: &main,
            aux_task: &aux,
            vocab: &vocab,
            model: &model,
            train: &train,
            run_seed: 4,
        };
        let before = main_c.clone();
        let out = transductive_aux_self_train::<f64>(&aux_c, &main_c, &test, &settings).unwrap();
        assert_eq!(main_c, before);
        assert_eq!(out.augmented_aux.len(), 3);
        assert_eq!(out.augmented_aux.sentences[2].tokens(), ["b", "c"]);
        assert_eq!(
            out.silver.source,
            model_hash(&out.aux_model.as_ref().unwrap().model)
        );
        let direct = train_condition_model::<f64>(&out.augmented_aux, &main_c, &settings).unwrap();
        assert_eq!(write_model(&direct.model), write_model(&out.mtl.model));
    }
}
