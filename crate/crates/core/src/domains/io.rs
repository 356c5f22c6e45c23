//! Text dataset files.
//!
//! ```text
//! UDIMDS v1 <domain_id> <n> <d> <C>
//! key=value
//! ...
//!
//! <d floats> <label>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a save/load cycle is
//! bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{DomainDataset, Error, Result, Tensor};

pub const MAGIC: &str = "UDIMDS";
pub const VERSION: &str = "v1";

pub fn encode_dataset(d: &DomainDataset) -> Result<String> {
    if d.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "refusing to save empty dataset {}",
            d.domain_id()
        )));
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} {VERSION} {} {} {} {}",
        d.domain_id(),
        d.len(),
        d.input_dim(),
        d.num_classes()
    );
    for (k, v) in d.metadata() {
        let _ = writeln!(out, "{k}={v}");
    }
    out.push('\n');
    for i in 0..d.len() {
        for v in d.input(i) {
            let _ = write!(out, "{v:?} ");
        }
        let _ = writeln!(out, "{}", d.labels()[i]);
    }
    Ok(out)
}

pub fn save_dataset(d: &DomainDataset, path: impl AsRef<Path>) -> Result<()> {
    let text = encode_dataset(d)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let text = std::fs::read_to_string(path)?;
    decode_dataset(&text)
}

/// Lines with the byte offset of their first character.
struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Iterator for Lines<'a> {
    type Item = (usize, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.text.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let (line, advance) = match rest.find('\n') {
            Some(i) => (&rest[..i], i + 1),
            None => (rest, rest.len()),
        };
        self.pos += advance;
        Some((start, line))
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(tok: Option<(usize, &str)>, what: &str, eof: usize) -> Result<T> {
    let (off, s) = tok.ok_or_else(|| parse_err(eof, format!("header is missing {what}")))?;
    s.parse()
        .map_err(|_| parse_err(off, format!("bad {what} {s:?}")))
}

/// Whitespace-separated tokens with absolute byte offsets.
fn tokens(line: &str, base: usize) -> impl Iterator<Item = (usize, &str)> {
    line.split(' ')
        .scan(0usize, move |pos, tok| {
            let off = base + *pos;
            *pos += tok.len() + 1;
            Some((off, tok))
        })
        .filter(|(_, t)| !t.is_empty())
}

pub fn decode_dataset(text: &str) -> Result<DomainDataset> {
    let mut lines = Lines { text, pos: 0 };
    let eof = text.len();
    let (hoff, header) = lines.next().ok_or_else(|| parse_err(0, "empty file"))?;
    let mut toks = tokens(header, hoff);
    match toks.next() {
        Some((_, MAGIC)) => {}
        _ => return Err(parse_err(hoff, format!("expected {MAGIC} header"))),
    }
    match toks.next() {
        Some((_, VERSION)) => {}
        Some((off, v)) => return Err(parse_err(off, format!("unsupported version {v:?}"))),
        None => return Err(parse_err(hoff + header.len(), "missing version")),
    }
    let end_of_header = hoff + header.len();
    let (_, domain_id) = toks
        .next()
        .ok_or_else(|| parse_err(end_of_header, "header is missing domain id"))?;
    let n: usize = field(toks.next(), "n", end_of_header)?;
    let d: usize = field(toks.next(), "d", end_of_header)?;
    let c: usize = field(toks.next(), "C", end_of_header)?;
    if let Some((off, extra)) = toks.next() {
        return Err(parse_err(off, format!("unexpected header token {extra:?}")));
    }

    let mut meta = BTreeMap::new();
    loop {
        let (off, line) = lines
            .next()
            .ok_or_else(|| parse_err(eof, "truncated before data section"))?;
        if line.is_empty() {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(off, format!("metadata line {line:?} lacks '='")))?;
        meta.insert(k.to_string(), v.to_string());
    }

    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let (off, line) = lines
            .next()
            .ok_or_else(|| parse_err(eof, format!("truncated: expected {n} rows, found {row}")))?;
        let mut toks = tokens(line, off);
        for j in 0..d {
            let (toff, tok) = toks
                .next()
                .ok_or_else(|| parse_err(off + line.len(), format!("row {row} has {j} of {d} values")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(toff, format!("bad float {tok:?}")))?;
            data.push(v);
        }
        let label: usize = field(toks.next(), "label", off + line.len())?;
        if let Some((toff, extra)) = toks.next() {
            return Err(parse_err(toff, format!("unexpected token {extra:?} in row {row}")));
        }
        labels.push(label);
    }
    if let Some((off, line)) = lines.next() {
        if !line.is_empty() || lines.next().is_some() {
            return Err(parse_err(off, "trailing content after last row"));
        }
    }

    let inputs = Tensor::matrix(n, d, data).map_err(|e| parse_err(eof, e.to_string()))?;
    let mut ds = DomainDataset::new(domain_id, inputs, labels, c).map_err(|e| parse_err(hoff, e.to_string()))?;
    for (k, v) in meta {
        ds = ds.with_meta(k, v).map_err(|e| parse_err(hoff, e.to_string()))?;
    }
    Ok(ds)
}
