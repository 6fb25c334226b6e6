//! Central finite differences as an oracle for the backward pass.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Graph, NodeRef, OpKind, ParamId, ParamSet};
use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, TaskRole, TaskSpec};
use crate::tensor::Tensor;
use crate::vocab::build_vocab;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// `(f(p+ε) − f(p−ε)) / 2ε` for every coordinate of every tensor.
pub fn finite_difference_gradient<F>(
    mut f: F,
    params: &ParamSet<f64>,
    epsilon: f64,
) -> Result<Gradients<f64>>
where
    F: FnMut(&ParamSet<f64>) -> Result<f64>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let mut work = params.clone();
    let mut eval = |p: &ParamSet<f64>, id: ParamId, k: usize| -> Result<f64> {
        let y = f(p)?;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Numerical(format!(
                "function is not finite at {}[{k}] perturbed",
                p.name(id)
            )))
        }
    };
    let mut out = Gradients::new();
    for id in params.ids() {
        let n = params.get(id).len();
        let mut g = vec![0.0; n];
        for (k, gk) in g.iter_mut().enumerate() {
            let x = params.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = x + epsilon;
            let plus = eval(&work, id, k)?;
            work.get_mut(id).data_mut()[k] = x - epsilon;
            let minus = eval(&work, id, k)?;
            work.get_mut(id).data_mut()[k] = x;
            *gk = (plus - minus) / (2.0 * epsilon);
        }
        out.insert(id, Tensor::new(params.get(id).shape().to_vec(), g)?);
    }
    Ok(out)
}

/// Relative tolerance, with an absolute one for coordinates whose
/// magnitude is below `small`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub relative: f64,
    pub absolute: f64,
    pub small: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            relative: 1e-4,
            absolute: 1e-7,
            small: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub max_absolute_error_small: f64,
    pub failures: usize,
    /// Tensor name and coordinate of the first failing entry.
    pub first_failure: Option<(String, usize)>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares two gradient maps over every coordinate of `params`; missing
/// entries count as zero.
pub fn compare_gradients(
    params: &ParamSet<f64>,
    analytic: &Gradients<f64>,
    numeric: &Gradients<f64>,
    tol: Tolerance,
) -> Comparison {
    let mut c = Comparison {
        coordinates: 0,
        max_relative_error: 0.0,
        max_absolute_error_small: 0.0,
        failures: 0,
        first_failure: None,
    };
    for (id, name, _) in params.iter() {
        let a = analytic.get_or_zero(id, params);
        let n = numeric.get_or_zero(id, params);
        for (k, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            c.coordinates += 1;
            let diff = (x - y).abs();
            let scale = x.abs().max(y.abs());
            let ok = if scale < tol.small {
                c.max_absolute_error_small = c.max_absolute_error_small.max(diff);
                diff < tol.absolute
            } else {
                let rel = diff / scale;
                c.max_relative_error = c.max_relative_error.max(rel);
                rel < tol.relative
            };
            if !ok {
                c.failures += 1;
                c.first_failure.get_or_insert_with(|| (name.to_string(), k));
            }
        }
    }
    c
}

/// One case of the suite: a named loss over a parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub parameters: usize,
    pub comparison: Comparison,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.comparison.passed())
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            let cmp = &c.comparison;
            writeln!(
                f,
                "{}\tparams={}\tmax_rel_err={:.3e}\tmax_abs_err_small={:.3e}\t{}",
                c.name,
                c.parameters,
                cmp.max_relative_error,
                cmp.max_absolute_error_small,
                if cmp.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

type Builder = fn(&mut Graph<'_, f64>, &[ParamId]) -> Result<NodeRef>;

struct Case {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    build: Builder,
}

fn operator_cases() -> Vec<Case> {
    vec![
        Case {
            name: "lookup",
            shapes: &[&[5, 3], &[3]],
            build: |g, p| {
                let (t, w) = (g.param(p[0]), g.param(p[1]));
                let a = g.lookup(t, 3)?;
                let b = g.lookup(t, 1)?;
                let bw = g.add(b, w)?;
                let h = g.hadamard(a, bw)?;
                g.mean(h)
            },
        },
        Case {
            name: "matmul",
            shapes: &[&[3, 4], &[4], &[4, 2]],
            build: |g, p| {
                let (w, x, m) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
                let v = g.matmul(w, x)?;
                let ce = g.softmax_cross_entropy(v, 1)?;
                let wm = g.matmul(w, m)?;
                let t = g.tanh(wm)?;
                let mm = g.mean(t)?;
                g.add(ce, mm)
            },
        },
        Case {
            name: "add",
            shapes: &[&[4], &[4]],
            build: |g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                let s = g.add(a, b)?;
                let h = g.hadamard(s, b)?;
                g.mean(h)
            },
        },
        Case {
            name: "tanh",
            shapes: &[&[4], &[4]],
            build: |g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                let t = g.tanh(a)?;
                let h = g.hadamard(t, b)?;
                g.mean(h)
            },
        },
        Case {
            name: "sigmoid",
            shapes: &[&[4], &[4]],
            build: |g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                let s = g.sigmoid(a)?;
                let h = g.hadamard(s, b)?;
                g.mean(h)
            },
        },
        Case {
            name: "hadamard",
            shapes: &[&[2, 3], &[2, 3]],
            build: |g, p| {
                let (a, b) = (g.param(p[0]), g.param(p[1]));
                let ab = g.hadamard(a, b)?;
                let aba = g.hadamard(ab, a)?;
                g.mean(aba)
            },
        },
        Case {
            name: "concat",
            shapes: &[&[2, 7], &[3], &[4]],
            build: |g, p| {
                let (w, a, b) = (g.param(p[0]), g.param(p[1]), g.param(p[2]));
                let ta = g.tanh(a)?;
                let c = g.concat(&[ta, b])?;
                let z = g.matmul(w, c)?;
                g.softmax_cross_entropy(z, 0)
            },
        },
        Case {
            name: "softmax_cross_entropy",
            shapes: &[&[5]],
            build: |g, p| {
                let a = g.param(p[0]);
                g.softmax_cross_entropy(a, 2)
            },
        },
        Case {
            name: "mean",
            shapes: &[&[2, 3]],
            build: |g, p| {
                let a = g.param(p[0]);
                let t = g.tanh(a)?;
                g.mean(t)
            },
        },
        Case {
            name: "two_layer_tanh",
            shapes: &[&[6, 4], &[6], &[3, 6], &[3], &[4]],
            build: |g, p| {
                let ps: Vec<NodeRef> = p.iter().map(|&id| g.param(id)).collect();
                let h = g.matmul(ps[0], ps[4])?;
                let h = g.add(h, ps[1])?;
                let h = g.tanh(h)?;
                let o = g.matmul(ps[2], h)?;
                let o = g.add(o, ps[3])?;
                g.softmax_cross_entropy(o, 2)
            },
        },
    ]
}

fn check_params(
    name: &str,
    params: &ParamSet<f64>,
    loss: impl Fn(&ParamSet<f64>, Option<OpKind>) -> Result<(f64, Gradients<f64>)>,
    fault: Option<OpKind>,
) -> Result<CaseResult> {
    let (_, analytic) = loss(params, fault)?;
    let numeric = finite_difference_gradient(|p| Ok(loss(p, None)?.0), params, DEFAULT_EPSILON)?;
    Ok(CaseResult {
        name: name.to_string(),
        parameters: params.num_values(),
        comparison: compare_gradients(params, &analytic, &numeric, Tolerance::default()),
    })
}

/// Tiny two-task tagger with every parameter drawn from `[-0.5, 0.5]`.
pub fn random_model(seed: u64) -> Result<ModelParams<f64>> {
    let sents = [
        Sentence::from_tokens(&["ab", "cab", "x?"])?,
        Sentence::from_tokens(&["b", "ab"])?,
    ];
    let corpus = Corpus::new("gradcheck", sents.to_vec());
    let config = ModelConfig {
        word_dim: 4,
        char_dim: 3,
        char_hidden: 3,
        word_hidden: 4,
        ..ModelConfig::default()
    };
    let labels = |n: usize| (0..n).map(|i| format!("L{i}")).collect();
    let tasks = vec![
        TaskSpec::new("main", labels(3), TaskRole::Main)?,
        TaskSpec::new("aux", labels(2), TaskRole::Auxiliary)?,
    ];
    let mut model = ModelParams::new(config, build_vocab(&[&corpus], 1)?, tasks, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<ParamId> = model.params().ids().collect();
    for id in ids {
        let t = model.params_mut().get_mut(id);
        let fresh = random_tensor(&mut rng, t.shape(), 0.5);
        *t = fresh;
    }
    Ok(model)
}

fn model_loss(
    base: &ModelParams<f64>,
    params: &ParamSet<f64>,
    fault: Option<OpKind>,
) -> Result<(f64, Gradients<f64>)> {
    let mut model = base.clone();
    *model.params_mut() = params.clone();
    let mut g = model.graph();
    if let Some(kind) = fault {
        g.graph.inject_backward_fault(kind);
    }
    // Includes an out-of-vocabulary word and a repeated one.
    let a = g.sentence_loss(&["ab", "zzq", "ab"], &[2, 0, 1], 0, None)?;
    let b = g.sentence_loss(&["x?", "cab"], &[1, 0], 1, None)?;
    let loss = g.graph.add(a, b)?;
    let value = g.graph.value(loss).item();
    let grads = g.graph.backward(loss)?;
    Ok((value, grads))
}

/// Every operator case plus a full random model. `fault` corrupts one
/// operator's backward rule in the analytic pass only.
pub fn run_gradcheck(seed: u64, fault: Option<OpKind>) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for case in operator_cases() {
        let mut params = ParamSet::new();
        let ids: Vec<ParamId> = case
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| params.insert(format!("p{i}"), random_tensor(&mut rng, s, 1.0)))
            .collect::<Result<_>>()?;
        let build = case.build;
        let loss = |p: &ParamSet<f64>, fault: Option<OpKind>| {
            let mut g = Graph::with_params(p);
            if let Some(kind) = fault {
                g.inject_backward_fault(kind);
            }
            let l = build(&mut g, &ids)?;
            let v = g.value(l).item();
            Ok((v, g.backward(l)?))
        };
        cases.push(check_params(case.name, &params, loss, fault)?);
    }
    let model = random_model(seed)?;
    let params = model.params().clone();
    cases.push(check_params(
        "model",
        &params,
        |p, fault| model_loss(&model, p, fault),
        fault,
    )?);
    Ok(GradcheckReport { cases })
}
