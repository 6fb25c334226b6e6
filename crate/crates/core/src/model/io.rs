//! Versioned plain-text model files.
//!
//! ```text
//! auxst-model 1
//! config <word_dim> <char_dim> <char_hidden> <word_hidden> <init_scale> <forget_bias>
//! words <n>          followed by n lines, one word each (index 1..=n)
//! chars <n>          followed by n lines, one character each
//! tasks <n>
//! task <name> <main|auxiliary> <k>   followed by k label lines
//! tensors <n>
//! tensor <name> <d1>x<d2>...         followed by one line of values
//! end
//! ```
//!
//! Values are written with 17 significant digits, so reading a file back
//! reproduces every parameter exactly.

use std::fmt::Write as _;

use super::{ModelConfig, ModelParams, TaskRole, TaskSpec};
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "auxst-model";

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_model<T: Scalar>(model: &ModelParams<T>) -> String {
    let mut out = String::new();
    let c = model.config();
    writeln!(out, "{MAGIC} {FORMAT_VERSION}").unwrap();
    writeln!(
        out,
        "config {} {} {} {} {} {}",
        c.word_dim,
        c.char_dim,
        c.char_hidden,
        c.word_hidden,
        fmt_real(c.init_scale),
        fmt_real(c.forget_bias)
    )
    .unwrap();
    let v = model.vocab();
    writeln!(out, "words {}", v.words().len()).unwrap();
    for w in v.words() {
        writeln!(out, "{w}").unwrap();
    }
    writeln!(out, "chars {}", v.chars().len()).unwrap();
    for ch in v.chars() {
        writeln!(out, "{ch}").unwrap();
    }
    writeln!(out, "tasks {}", model.tasks().len()).unwrap();
    for t in model.tasks() {
        writeln!(out, "task {} {} {}", t.name(), t.role(), t.num_labels()).unwrap();
        for l in t.tagset() {
            writeln!(out, "{l}").unwrap();
        }
    }
    let params = model.params();
    writeln!(out, "tensors {}", params.len()).unwrap();
    for (_, name, tensor) in params.iter() {
        let dims: Vec<String> = tensor.shape().iter().map(usize::to_string).collect();
        writeln!(out, "tensor {name} {}", dims.join("x")).unwrap();
        let values: Vec<String> = tensor.data().iter().map(|x| fmt_real(x.as_f64())).collect();
        writeln!(out, "{}", values.join(" ")).unwrap();
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    lines: std::iter::Enumerate<std::str::Split<'a, char>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of model file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.last,
            msg: msg.into(),
        }
    }

    /// A `<keyword> <fields...>` line.
    fn keyed(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(keyword) {
            return Err(self.err(format!("expected `{keyword}` line, found {line:?}")));
        }
        Ok(parts.collect())
    }

    fn count(&mut self, keyword: &str) -> Result<usize> {
        let f = self.keyed(keyword)?;
        match f.as_slice() {
            [n] => n
                .parse()
                .map_err(|_| self.err(format!("bad `{keyword}` count"))),
            _ => Err(self.err(format!("malformed `{keyword}` line"))),
        }
    }

    fn parse<F: std::str::FromStr>(&self, s: &str, what: &str) -> Result<F> {
        s.parse()
            .map_err(|_| self.err(format!("bad {what}: {s:?}")))
    }
}

pub fn read_model<T: Scalar>(text: &str) -> Result<ModelParams<T>> {
    let mut lines = Lines {
        lines: text.split('\n').enumerate(),
        last: 0,
    };
    let header = lines.next()?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| lines.err("not a model file"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(lines.err(format!("unsupported model format version {version}")));
    }

    let f = lines.keyed("config")?;
    if f.len() != 6 {
        return Err(lines.err("config line needs 6 fields"));
    }
    let config = ModelConfig {
        word_dim: lines.parse(f[0], "word_dim")?,
        char_dim: lines.parse(f[1], "char_dim")?,
        char_hidden: lines.parse(f[2], "char_hidden")?,
        word_hidden: lines.parse(f[3], "word_hidden")?,
        init_scale: lines.parse(f[4], "init_scale")?,
        forget_bias: lines.parse(f[5], "forget_bias")?,
    };

    let n = lines.count("words")?;
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        words.push(lines.next()?.to_string());
    }
    let n = lines.count("chars")?;
    let mut chars = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next()?;
        let mut it = l.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => chars.push(c),
            _ => return Err(lines.err(format!("expected one character, found {l:?}"))),
        }
    }
    let vocab = Vocabulary::from_lists(words, chars)?;

    let n = lines.count("tasks")?;
    let mut tasks = Vec::with_capacity(n);
    for _ in 0..n {
        let f = lines.keyed("task")?;
        let [name, role, k] = f[..] else {
            return Err(lines.err("task line needs name, role and label count"));
        };
        let role = match role {
            "main" => TaskRole::Main,
            "auxiliary" => TaskRole::Auxiliary,
            other => return Err(lines.err(format!("unknown task role {other:?}"))),
        };
        let k: usize = lines.parse(k, "label count")?;
        let mut labels = Vec::with_capacity(k);
        for _ in 0..k {
            labels.push(lines.next()?.to_string());
        }
        tasks.push(TaskSpec::new(name, labels, role)?);
    }

    let n = lines.count("tensors")?;
    let mut params = ParamSet::new();
    for _ in 0..n {
        let f = lines.keyed("tensor")?;
        let [name, dims] = f[..] else {
            return Err(lines.err("tensor line needs name and shape"));
        };
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| lines.parse(d, "dimension"))
            .collect::<Result<_>>()?;
        let values: Vec<T> = lines
            .next()?
            .split(' ')
            .map(|v| lines.parse::<f64>(v, "value").map(T::of))
            .collect::<Result<_>>()?;
        let tensor = Tensor::new(shape, values).map_err(|e| lines.err(e.to_string()))?;
        params.insert(name, tensor)?;
    }
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    ModelParams::from_parts(config, vocab, tasks, params)
}
