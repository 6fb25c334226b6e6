use auxst::corpus::{parse_tagged_tsv, write_tagged_tsv};
use auxst::evaluation::{accuracy, bootstrap_p, delta_points, macro_average};
use auxst::gradcheck::{compare_gradients, finite_difference_gradient, Tolerance, DEFAULT_EPSILON};
use auxst::tensor::softmax;
use auxst::{build_vocab, Corpus, Graph, NodeRef, ParamSet, Result, Sentence, Tensor};
use proptest::prelude::*;

const DIM: usize = 3;

#[derive(Clone, Copy, Debug)]
enum Step {
    Affine,
    Tanh,
    Sigmoid,
    Gate(usize),
    Mix(usize),
}

fn step() -> impl Strategy<Value = Step> {
    prop_oneof![
        Just(Step::Affine),
        Just(Step::Tanh),
        Just(Step::Sigmoid),
        (0..4usize).prop_map(Step::Gate),
        (0..4usize).prop_map(Step::Mix),
    ]
}

fn params(values: &[f64]) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    let (e, rest) = values.split_at(4 * DIM);
    let (w, rest) = rest.split_at(DIM * DIM);
    let (b, m) = rest.split_at(DIM);
    p.insert("E", Tensor::matrix(4, DIM, e.to_vec()).unwrap())
        .unwrap();
    p.insert("W", Tensor::matrix(DIM, DIM, w.to_vec()).unwrap())
        .unwrap();
    p.insert("b", Tensor::vector(b.to_vec())).unwrap();
    p.insert("M", Tensor::matrix(DIM, 2 * DIM, m.to_vec()).unwrap())
        .unwrap();
    p
}

const NUM_VALUES: usize = 4 * DIM + DIM * DIM + DIM + 2 * DIM * DIM;

fn forward(
    g: &mut Graph<f64>,
    p: &ParamSet<f64>,
    start: usize,
    steps: &[Step],
    gold: Option<usize>,
) -> Result<NodeRef> {
    let id = |n: &str| p.id(n).unwrap();
    let e = g.param(id("E"));
    let mut h = g.lookup(e, start)?;
    for s in steps {
        h = match *s {
            Step::Affine => {
                let w = g.param(id("W"));
                let b = g.param(id("b"));
                let wh = g.matmul(w, h)?;
                g.add(wh, b)?
            }
            Step::Tanh => g.tanh(h)?,
            Step::Sigmoid => g.sigmoid(h)?,
            Step::Gate(j) => {
                let x = g.lookup(e, j)?;
                let s = g.sigmoid(x)?;
                g.hadamard(h, s)?
            }
            Step::Mix(j) => {
                let x = g.lookup(e, j)?;
                let c = g.concat(&[h, x])?;
                let m = g.param(id("M"));
                g.matmul(m, c)?
            }
        };
    }
    match gold {
        Some(k) => g.softmax_cross_entropy(h, k),
        None => g.mean(h),
    }
}

fn corpus_of(sents: &[Vec<(String, String)>]) -> Corpus {
    Corpus::new(
        "c",
        sents
            .iter()
            .map(|s| {
                let toks: Vec<&str> = s.iter().map(|(t, _)| t.as_str()).collect();
                let labs: Vec<&str> = s.iter().map(|(_, l)| l.as_str()).collect();
                Sentence::from_tokens(&toks)
                    .unwrap()
                    .with_labels("pos", &labs)
                    .unwrap()
            })
            .collect(),
    )
}

fn tagged_sentences() -> impl Strategy<Value = Vec<Vec<(String, String)>>> {
    prop::collection::vec(
        prop::collection::vec(("[a-zé]{1,5}", "[A-Z]{1,3}"), 1..6),
        1..6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_compositions_match_finite_differences(
        values in prop::collection::vec(-1.0f64..1.0, NUM_VALUES),
        start in 0..4usize,
        steps in prop::collection::vec(step(), 1..6),
        gold in prop::option::of(0..DIM),
    ) {
        let p = params(&values);
        let mut g = Graph::with_params(&p);
        let loss = forward(&mut g, &p, start, &steps, gold).unwrap();
        let analytic = g.backward(loss).unwrap();
        let numeric = finite_difference_gradient(
            |q| {
                let mut g = Graph::with_params(q);
                let l = forward(&mut g, q, start, &steps, gold)?;
                Ok(g.value(l).item())
            },
            &p,
            DEFAULT_EPSILON,
        )
        .unwrap();
        let cmp = compare_gradients(&p, &analytic, &numeric, Tolerance::default());
        prop_assert!(cmp.passed(), "{cmp:?}");
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert_eq!(p.len(), logits.len());
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_is_antisymmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assert_eq!(delta_points(a, b), -delta_points(b, a));
        prop_assert_eq!(delta_points(a, a), 0.0);
    }

    #[test]
    fn macro_average_ignores_order_and_stays_in_range(
        mut v in prop::collection::vec(0.0f64..1.0, 1..8),
        seed in any::<u64>(),
    ) {
        let m = macro_average(&v).unwrap();
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        let k = (seed as usize) % v.len();
        v.rotate_left(k);
        v.reverse();
        prop_assert!((macro_average(&v).unwrap() - m).abs() < 1e-12);
    }

    #[test]
    fn accuracy_ignores_sentence_order(
        gold in tagged_sentences(),
        flips in prop::collection::vec(any::<bool>(), 30),
        shift in 0..6usize,
    ) {
        let mut k = 0;
        let pred: Vec<Vec<(String, String)>> = gold
            .iter()
            .map(|s| {
                s.iter()
                    .map(|(t, l)| {
                        k += 1;
                        let l = if flips[k % flips.len()] { format!("{l}x") } else { l.clone() };
                        (t.clone(), l)
                    })
                    .collect()
            })
            .collect();
        let a = accuracy(&corpus_of(&pred), &corpus_of(&gold), "pos").unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        let r = shift % g2.len();
        g2.rotate_left(r);
        p2.rotate_left(r);
        g2.reverse();
        p2.reverse();
        let b = accuracy(&corpus_of(&p2), &corpus_of(&g2), "pos").unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert_eq!(accuracy(&corpus_of(&gold), &corpus_of(&gold), "pos").unwrap(), 1.0);
    }

    #[test]
    fn bootstrap_is_symmetric_under_swap(
        diffs in prop::collection::vec(-3i64..4, 1..25),
        seed in 0..1000u64,
    ) {
        let p = bootstrap_p(&diffs, 200, seed).unwrap();
        let neg: Vec<i64> = diffs.iter().map(|d| -d).collect();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, bootstrap_p(&neg, 200, seed).unwrap());
        prop_assert_eq!(p, bootstrap_p(&diffs, 200, seed).unwrap());
    }

    #[test]
    fn vocabulary_ignores_corpus_order(a in tagged_sentences(), b in tagged_sentences(), min in 1..3usize) {
        let (ca, cb) = (corpus_of(&a), corpus_of(&b));
        let v1 = build_vocab(&[&ca, &cb], min).unwrap();
        let v2 = build_vocab(&[&cb, &ca], min).unwrap();
        prop_assert_eq!(v1.words(), v2.words());
        prop_assert_eq!(v1.chars(), v2.chars());
        let ids: Vec<usize> = v1.words().iter().map(|w| v1.word_id(w)).collect();
        prop_assert_eq!(ids, (1..v1.num_words()).collect::<Vec<_>>());
    }

    #[test]
    fn tagged_tsv_round_trips(sents in tagged_sentences()) {
        let c = corpus_of(&sents);
        let text = write_tagged_tsv(&c, "pos").unwrap();
        let back = parse_tagged_tsv(&text, "c", "pos").unwrap();
        prop_assert_eq!(back.len(), c.len());
        for (x, y) in back.iter().zip(c.iter()) {
            prop_assert_eq!(x.tokens(), y.tokens());
            prop_assert_eq!(x.labels("pos"), y.labels("pos"));
        }
    }
}
