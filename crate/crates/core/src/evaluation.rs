//! Accuracy, deltas, significance and report formatting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;

fn check_aligned(a: &Corpus, b: &Corpus) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "{} predicted sentences for {} gold sentences",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
        if x.tokens() != y.tokens() {
            return Err(Error::Data(format!(
                "sentence {} differs between prediction and gold",
                i + 1
            )));
        }
    }
    Ok(())
}

fn labels<'c>(c: &'c Corpus, i: usize, task: &str) -> Result<&'c [String]> {
    c.sentences[i].labels(task).ok_or_else(|| {
        Error::Data(format!(
            "sentence {} of `{}` has no `{task}` labels",
            i + 1,
            c.id
        ))
    })
}

/// Per-sentence (correct, total) token counts.
pub fn sentence_scores(pred: &Corpus, gold: &Corpus, task: &str) -> Result<Vec<(usize, usize)>> {
    check_aligned(pred, gold)?;
    (0..gold.len())
        .map(|i| {
            let p = labels(pred, i, task)?;
            let g = labels(gold, i, task)?;
            Ok((p.iter().zip(g).filter(|(a, b)| a == b).count(), g.len()))
        })
        .collect()
}

/// Fraction of tokens whose predicted label equals the gold one.
pub fn accuracy(pred: &Corpus, gold: &Corpus, task: &str) -> Result<f64> {
    let s = sentence_scores(pred, gold, task)?;
    let (c, n) = s.iter().fold((0, 0), |(c, n), &(a, b)| (c + a, n + b));
    if n == 0 {
        return Err(Error::Data("accuracy over zero tokens".into()));
    }
    Ok(c as f64 / n as f64)
}

pub fn macro_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("macro average of nothing".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Absolute percentage points from `baseline` to `condition` (both in [0, 1]).
pub fn delta_points(baseline: f64, condition: f64) -> f64 {
    100.0 * (condition - baseline)
}

/// Two-sided paired bootstrap over sentences. Returns 1 when the observed
/// difference is zero.
pub fn paired_bootstrap(
    pred_a: &Corpus,
    pred_b: &Corpus,
    gold: &Corpus,
    task: &str,
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    let a = sentence_scores(pred_a, gold, task)?;
    let b = sentence_scores(pred_b, gold, task)?;
    let diffs: Vec<i64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| x.0 as i64 - y.0 as i64)
        .collect();
    bootstrap_p(&diffs, resamples, seed)
}

/// Core of [`paired_bootstrap`] over per-sentence differences in correct
/// token counts.
pub fn bootstrap_p(diffs: &[i64], resamples: usize, seed: u64) -> Result<f64> {
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be positive".into()));
    }
    let observed: i64 = diffs.iter().sum();
    if observed == 0 || diffs.is_empty() {
        return Ok(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = diffs.len();
    let mut against = 0usize;
    for _ in 0..resamples {
        let d: i64 = (0..n).map(|_| diffs[rng.random_range(0..n)]).sum();
        if d == 0 || d.signum() != observed.signum() {
            against += 1;
        }
    }
    Ok((2.0 * against as f64 / resamples as f64).min(1.0))
}

/// One-sided paired t-test that `b` exceeds `a` on average. Returns 1 when
/// there are fewer than two pairs, and 0 or 1 when all differences are equal.
pub fn paired_t_test_greater(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(
            "paired samples differ in length".into(),
        ));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean > 0.0 { 0.0 } else { 1.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist =
        StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(1.0 - dist.cdf(t))
}

/// Half-up rounding to two decimals, tolerant of binary representation
/// error (e.g. 9.560000000000002 or 1.7449999999).
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let nudged = scaled + scaled.signum() * 1e-6;
    let r = nudged.round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Accuracy in percent with two decimals.
pub fn format_percent(accuracy: f64) -> String {
    format!("{:.2}", round2(100.0 * accuracy))
}

/// Signed delta cell, e.g. `+9.56*`, `-0.30`, `0.00`. A zero delta never
/// carries a star.
pub fn format_delta(points: f64, significant: bool) -> String {
    let r = round2(points);
    let body = if r > 0.0 {
        format!("+{r:.2}")
    } else {
        format!("{r:.2}")
    };
    if significant && r != 0.0 {
        format!("{body}*")
    } else {
        body
    }
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Label used for a training size in reports: `10k`, `0.5k`, `0.1k`, `37`.
pub fn size_label(n: usize) -> String {
    if n >= 100 && n.is_multiple_of(100) {
        let k = n as f64 / 1000.0;
        let s = format!("{k}");
        format!("{s}k")
    } else {
        n.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn corpus(labels: &[&[&str]]) -> Corpus {
        let sents = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let toks: Vec<String> = (0..l.len()).map(|k| format!("t{i}_{k}")).collect();
                Sentence::from_tokens(&toks)
                    .unwrap()
                    .with_labels("t", l)
                    .unwrap()
            })
            .collect();
        Corpus::new("c", sents)
    }

    #[test]
    fn accuracy_cases() {
        let gold = corpus(&[&["A", "B"], &["C", "D"]]);
        assert_eq!(accuracy(&gold, &gold, "t").unwrap(), 1.0);
        let wrong = corpus(&[&["X", "X"], &["X", "X"]]);
        assert_eq!(accuracy(&wrong, &gold, "t").unwrap(), 0.0);
        let three = corpus(&[&["A", "B"], &["C", "X"]]);
        assert_eq!(accuracy(&three, &gold, "t").unwrap(), 0.75);
        let short = corpus(&[&["A", "B"]]);
        assert!(accuracy(&short, &gold, "t").is_err());
    }

    #[test]
    fn macro_average_cases() {
        assert_eq!(macro_average(&[0.5]).unwrap(), 0.5);
        assert_eq!(macro_average(&[0.0, 1.0]).unwrap(), 0.5);
        assert!(macro_average(&[]).is_err());
    }

    #[test]
    fn deltas_and_formatting() {
        assert_eq!(format_delta(delta_points(0.6631, 0.7587), true), "+9.56*");
        assert_eq!(format_delta(delta_points(0.5044, 0.6347), true), "+13.03*");
        assert_eq!(format_delta(0.0, true), "0.00");
        assert_eq!(format_delta(-0.3, false), "-0.30");
        assert_eq!(format_delta(1e-9, true), "0.00");
        assert_eq!(format_percent(0.6631), "66.31");
        assert_eq!(round2(0.125), 0.13);
    }

    #[test]
    fn bootstrap_cases() {
        let gold = corpus(&vec![&["A", "B"][..]; 100]);
        let bad = corpus(&vec![&["X", "X"][..]; 100]);
        assert_eq!(
            paired_bootstrap(&gold, &gold, &gold, "t", 1000, 1).unwrap(),
            1.0
        );
        assert!(paired_bootstrap(&gold, &bad, &gold, "t", 10_000, 1).unwrap() < 0.001);
        let diffs = [1, -1, 2, 0, 1, -1, 1];
        let p = bootstrap_p(&diffs, 2000, 9).unwrap();
        assert_eq!(p, bootstrap_p(&diffs, 2000, 9).unwrap());
        let neg: Vec<i64> = diffs.iter().map(|d| -d).collect();
        assert_eq!(p, bootstrap_p(&neg, 2000, 9).unwrap());
    }

    #[test]
    fn t_test() {
        let a = [0.5, 0.6, 0.55, 0.52, 0.58];
        let b = [0.6, 0.7, 0.62, 0.6, 0.7];
        let p = paired_t_test_greater(&a, &b).unwrap();
        assert!(p < 0.01, "{p}");
        assert!(paired_t_test_greater(&b, &a).unwrap() > 0.99);
        // Differences 1, 2, 3: t = 2 sqrt 3, df 2, where the upper tail
        // has the closed form (1 - t / sqrt(t^2 + 2)) / 2.
        let t: f64 = 2.0 * 3f64.sqrt();
        let expected = (1.0 - t / (t * t + 2.0).sqrt()) / 2.0;
        let p = paired_t_test_greater(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((p - expected).abs() < 1e-9, "{p} vs {expected}");
    }

    #[test]
    fn sizes_and_median() {
        assert_eq!(size_label(10_000), "10k");
        assert_eq!(size_label(1000), "1k");
        assert_eq!(size_label(500), "0.5k");
        assert_eq!(size_label(100), "0.1k");
        assert_eq!(size_label(37), "37");
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
