//! Line-oriented input formats: N-Triples, SNAP edge lists and pre-encoded
//! id triples. Terms are kept as their exact source text, so `<a>`, `_:b`
//! and `"c"@en` are three different labels.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{GatedReader, IoGate};
use crate::model::TermId;

/// Relation label given to every SNAP edge.
pub const SNAP_RELATION: &str = "<urn:kgstore:edge>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    NTriples,
    Snap,
    /// Three decimal term ids per line; no dictionary is built.
    Encoded,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ntriples" | "nt" => Ok(InputFormat::NTriples),
            "snap" => Ok(InputFormat::Snap),
            "encoded" => Ok(InputFormat::Encoded),
            _ => Err(Error::Config(format!("unknown input format {s:?}"))),
        }
    }
}

/// Opens `path`, transparently decompressing gzip input.
pub fn open_input(path: &Path) -> Result<Box<dyn BufRead + Send>> {
    open_input_gated(path, IoGate::unbounded())
}

/// Like [`open_input`], with file reads passing through `gate`.
pub fn open_input_gated(path: &Path, gate: Arc<IoGate>) -> Result<Box<dyn BufRead + Send>> {
    let mut f = File::open(path).map_err(Error::io_at(path))?;
    let mut magic = [0u8; 2];
    let n = f.read(&mut magic).map_err(Error::io_at(path))?;
    let f = GatedReader::new(File::open(path).map_err(Error::io_at(path))?, gate);
    if n == 2 && magic == [0x1f, 0x8b] {
        let inner = BufReader::with_capacity(1 << 20, f);
        Ok(Box::new(BufReader::with_capacity(1 << 20, MultiGzDecoder::new(inner))))
    } else {
        Ok(Box::new(BufReader::with_capacity(1 << 20, f)))
    }
}

/// Parses one line. Returns `None` for blank and comment lines.
pub fn parse_line(format: InputFormat, line: &str, lineno: u64) -> Result<Option<[&str; 3]>> {
    let t = line.trim();
    if t.is_empty() || t.starts_with('#') || (format == InputFormat::Snap && t.starts_with('%')) {
        return Ok(None);
    }
    let err = |msg: &str| Error::Parse { line: lineno, msg: msg.to_string() };
    match format {
        InputFormat::NTriples => {
            let mut rest = t;
            let mut terms = [""; 3];
            for (i, slot) in terms.iter_mut().enumerate() {
                let (term, r) = next_term(rest).map_err(|m| err(&format!("term {}: {m}", i + 1)))?;
                if i == 1 && !term.starts_with('<') {
                    return Err(err("predicate must be an IRI"));
                }
                if i == 0 && term.starts_with('"') {
                    return Err(err("subject cannot be a literal"));
                }
                *slot = term;
                rest = r.trim_start();
            }
            if rest != "." && !rest.starts_with(". #") && !rest.starts_with(".#") {
                return Err(err("expected '.' after the object"));
            }
            Ok(Some(terms))
        }
        InputFormat::Snap => {
            let mut it = t.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(s), Some(d), None) => Ok(Some([s, SNAP_RELATION, d])),
                _ => Err(err("expected two node ids")),
            }
        }
        InputFormat::Encoded => {
            let mut it = t.split_whitespace();
            match (it.next(), it.next(), it.next(), it.next()) {
                (Some(s), Some(r), Some(d), None) => {
                    for x in [s, r, d] {
                        if x.parse::<u64>().ok().filter(|&v| v <= TermId::MAX.get()).is_none() {
                            return Err(err(&format!("{x:?} is not a 40-bit term id")));
                        }
                    }
                    Ok(Some([s, r, d]))
                }
                _ => Err(err("expected three term ids")),
            }
        }
    }
}

/// Splits the next N-Triples term off `s`.
fn next_term(s: &str) -> std::result::Result<(&str, &str), &'static str> {
    let b = s.as_bytes();
    match b.first() {
        None => Err("missing"),
        Some(b'<') => match s.find('>') {
            Some(end) if !s[1..end].contains(char::is_whitespace) => Ok((&s[..=end], &s[end + 1..])),
            _ => Err("unterminated IRI"),
        },
        Some(b'_') => {
            if !s.starts_with("_:") {
                return Err("bad blank node");
            }
            let end = s.find(|c: char| c.is_whitespace()).unwrap_or(s.len());
            let end = if s[..end].ends_with('.') && end == s.len() { end - 1 } else { end };
            if end <= 2 {
                return Err("empty blank node label");
            }
            Ok((&s[..end], &s[end..]))
        }
        Some(b'"') => {
            let mut i = 1;
            loop {
                match b.get(i) {
                    None => return Err("unterminated literal"),
                    Some(b'\\') => i += 2,
                    Some(b'"') => break,
                    Some(_) => i += 1,
                }
            }
            i += 1;
            if s[i..].starts_with("^^<") {
                match s[i..].find('>') {
                    Some(end) => i += end + 1,
                    None => return Err("unterminated datatype IRI"),
                }
            } else if s[i..].starts_with('@') {
                i += 1;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'-') {
                    i += 1;
                }
            }
            Ok((&s[..i], &s[i..]))
        }
        Some(_) => Err("expected '<', '_:' or '\"'"),
    }
}

/// Reads and parses every line of `input` into owned label triples.
pub fn read_triples(format: InputFormat, input: impl BufRead) -> Result<Vec<[String; 3]>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if let Some(t) = parse_line(format, &line, i as u64 + 1)? {
            out.push(t.map(str::to_owned));
        }
    }
    Ok(out)
}
