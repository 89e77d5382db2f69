//! Versioned flat-text checkpoints.
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{AnalyzerConfig, Featurizer, NumericAnalyzerConfig, TagAggregation, TagVocab, TextAnalyzerConfig};
use crate::error::{CwhError, Result};
use crate::network::{Model, ModelDims, ModelKind, ModelParams};
use crate::scalar::Scalar;

const MAGIC: &str = "cwh-checkpoint";
const VERSION: u32 = 1;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn write_model<T: Scalar, W: Write>(model: &Model<T>, mut w: W) -> Result<()> {
    let io = |e| CwhError::io("checkpoint", e);
    let a = &model.featurizer.config;
    let dims = model.params.dims();
    writeln!(w, "{MAGIC} {VERSION}").map_err(io)?;
    writeln!(w, "scalar {}", T::NAME).map_err(io)?;
    writeln!(w, "kind {}", model.kind.name()).map_err(io)?;
    writeln!(w, "dims {} {} {} {}", dims.users, dims.items, dims.dim, dims.hidden).map_err(io)?;
    match a.tags {
        Some(d) => writeln!(w, "tags {d}"),
        None => writeln!(w, "tags none"),
    }
    .map_err(io)?;
    match &a.text {
        Some(t) => writeln!(w, "text {} {} {}", t.dim, t.hash_dim, t.max_tokens),
        None => writeln!(w, "text none"),
    }
    .map_err(io)?;
    match &a.numeric {
        Some(n) => writeln!(w, "numeric {} {}", n.dim, n.inputs),
        None => writeln!(w, "numeric none"),
    }
    .map_err(io)?;
    let agg = match a.tag_aggregation {
        TagAggregation::Mean => "mean",
        TagAggregation::Sum => "sum",
    };
    writeln!(w, "tag_aggregation {agg}").map_err(io)?;
    let tags = model.featurizer.vocab.tags();
    writeln!(w, "vocab {}", tags.len()).map_err(io)?;
    for t in tags {
        writeln!(w, "{}", escape(t)).map_err(io)?;
    }
    for g in model.params.groups() {
        writeln!(w, "group {} {} {}", g.name, g.shape.0, g.shape.1).map_err(io)?;
        for row in g.data.chunks(g.shape.1.max(1)) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(" ")).map_err(io)?;
        }
    }
    writeln!(w, "end").map_err(io)?;
    Ok(())
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CwhError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w)?;
    w.flush().map_err(|e| CwhError::io(path, e))
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: u64,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(CwhError::io("checkpoint", e)),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, message: impl Into<String>) -> CwhError {
        CwhError::Parse {
            file: "checkpoint".into(),
            line: self.line,
            message: message.into(),
        }
    }

    /// Next line, which must start with `key`; returns the remaining fields.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next()?;
        let mut fields = l.split_whitespace();
        if fields.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(fields.map(str::to_string).collect())
    }

    fn num<N: std::str::FromStr>(&self, s: &str) -> Result<N> {
        s.parse().map_err(|_| self.err(format!("bad number {s:?}")))
    }
}

pub fn read_model<T: Scalar, R: BufRead>(reader: R) -> Result<Model<T>> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
    };
    let header = lines.keyed(MAGIC)?;
    if header != [VERSION.to_string()] {
        return Err(lines.err(format!("unsupported checkpoint version {header:?}")));
    }
    let scalar = lines.keyed("scalar")?;
    if scalar != [T::NAME] {
        return Err(CwhError::Data(format!(
            "checkpoint stores {scalar:?} parameters, loading as {}",
            T::NAME
        )));
    }
    let kind_field = lines.keyed("kind")?;
    let kind: ModelKind = kind_field
        .first()
        .ok_or_else(|| lines.err("missing model kind"))?
        .parse()
        .map_err(|_| lines.err("unknown model kind"))?;
    let d = lines.keyed("dims")?;
    if d.len() != 4 {
        return Err(lines.err("dims needs 4 fields"));
    }
    let dims = ModelDims {
        users: lines.num(&d[0])?,
        items: lines.num(&d[1])?,
        dim: lines.num(&d[2])?,
        hidden: lines.num(&d[3])?,
    };
    let t = lines.keyed("tags")?;
    let tags = match t.as_slice() {
        [x] if x == "none" => None,
        [x] => Some(lines.num(x)?),
        _ => return Err(lines.err("tags needs 1 field")),
    };
    let t = lines.keyed("text")?;
    let text = match t.as_slice() {
        [x] if x == "none" => None,
        [a, b, c] => Some(TextAnalyzerConfig {
            dim: lines.num(a)?,
            hash_dim: lines.num(b)?,
            max_tokens: lines.num(c)?,
        }),
        _ => return Err(lines.err("text needs 1 or 3 fields")),
    };
    let t = lines.keyed("numeric")?;
    let numeric = match t.as_slice() {
        [x] if x == "none" => None,
        [a, b] => Some(NumericAnalyzerConfig {
            dim: lines.num(a)?,
            inputs: lines.num(b)?,
        }),
        _ => return Err(lines.err("numeric needs 1 or 2 fields")),
    };
    let t = lines.keyed("tag_aggregation")?;
    let tag_aggregation = match t.first().map(String::as_str) {
        Some("mean") => TagAggregation::Mean,
        Some("sum") => TagAggregation::Sum,
        _ => return Err(lines.err("unknown tag aggregation")),
    };
    let analyzers = AnalyzerConfig {
        tags,
        text,
        numeric,
        tag_aggregation,
    };
    let n = lines.keyed("vocab")?;
    let n: usize = lines.num(n.first().ok_or_else(|| lines.err("missing vocab size"))?)?;
    let mut vocab = Vec::with_capacity(n);
    for _ in 0..n {
        vocab.push(unescape(&lines.next()?));
    }
    let vocab = TagVocab::new(vocab);
    if vocab.len() != n {
        return Err(lines.err("vocab has duplicate tags"));
    }

    // Shapes come from the header; values overwrite every group below.
    let mut params = ModelParams::<T>::init(&dims, &analyzers, n, &mut ChaCha8Rng::seed_from_u64(0));
    let expected: Vec<(&'static str, (usize, usize))> = params.groups().iter().map(|g| (g.name, g.shape)).collect();
    for (group, (name, (rows, cols))) in params.groups_mut().into_iter().zip(expected) {
        let h = lines.keyed("group")?;
        if h.len() != 3 || h[0] != name {
            return Err(lines.err(format!("expected group {name}")));
        }
        let shape: (usize, usize) = (lines.num(&h[1])?, lines.num(&h[2])?);
        if shape != (rows, cols) {
            return Err(lines.err(format!("group {name} has shape {shape:?}, expected {:?}", (rows, cols))));
        }
        let mut at = 0;
        for _ in 0..rows {
            let l = lines.next()?;
            let cells: Vec<&str> = l.split_whitespace().collect();
            if cells.len() != cols {
                return Err(lines.err(format!("group {name}: expected {cols} values")));
            }
            for c in cells {
                group.data[at] = lines.num(c)?;
                at += 1;
            }
        }
    }
    lines.keyed("end")?;
    Ok(Model {
        kind,
        featurizer: Featurizer::new(analyzers, vocab),
        params,
    })
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CwhError::io(path, e))?;
    read_model(BufReader::new(file))
}
