//! Parser for the SELECT-WHERE subset of SPARQL the engine answers:
//! `PREFIX` declarations, `SELECT` with variables or `*`, an optional
//! `WHERE` and one brace block of dot-separated triple patterns.
//!
//! Terms are kept as label text in N-Triples form: `<iri>`, `_:b`,
//! `"lit"@en`. Prefixed names are expanded to `<iri>` and `a` stands for
//! `rdf:type`. A bare word such as `Rome` is resolved later, first as the
//! exact label and then as `<Rome>`.

use crate::error::{Error, Result};

pub const RDF_TYPE: &str = "<http://www.w3.org/1999/02/22-rdf-syntax-ns#type>";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum QueryTerm {
    Var(String),
    Label(String),
    /// An unqualified word.
    Bare(String),
}

impl QueryTerm {
    pub fn as_var(&self) -> Option<&str> {
        match self {
            QueryTerm::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl std::fmt::Display for QueryTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QueryTerm::Var(v) => write!(f, "?{v}"),
            QueryTerm::Label(l) | QueryTerm::Bare(l) => f.write_str(l),
        }
    }
}

/// A conjunction of triple patterns with a projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicGraphPattern {
    pub patterns: Vec<[QueryTerm; 3]>,
    pub projection: Vec<String>,
}

impl BasicGraphPattern {
    /// Checks the invariants: at least one pattern and every projected
    /// variable used by some pattern. An empty projection selects all
    /// variables in order of appearance.
    pub fn new(patterns: Vec<[QueryTerm; 3]>, projection: Vec<String>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::InvalidRequest("empty graph pattern".into()));
        }
        let mut bgp = BasicGraphPattern { patterns, projection };
        let vars = bgp.variables();
        if bgp.projection.is_empty() {
            bgp.projection = vars;
        } else if let Some(v) = bgp.projection.iter().find(|v| !vars.contains(v)) {
            return Err(Error::InvalidRequest(format!("?{v} is projected but unused")));
        }
        Ok(bgp)
    }

    /// Variables in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in self.patterns.iter().flatten() {
            if let QueryTerm::Var(v) = t {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Var(String),
    Iri(String),
    Literal(String),
    Blank(String),
    LBrace,
    RBrace,
    Dot,
}

struct Lexer<'a> {
    s: &'a str,
    i: usize,
    line: u64,
}

impl<'a> Lexer<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, msg: msg.into() }
    }

    fn peek(&self) -> Option<char> {
        self.s[self.i..].chars().next()
    }

    fn skip_space(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                self.line += 1;
            }
            if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.i += 1;
                }
            } else if c.is_whitespace() {
                self.i += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let start = self.i;
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            self.i += c.len_utf8();
        }
        &self.s[start..self.i]
    }

    fn next(&mut self) -> Result<Option<(Token, u64)>> {
        self.skip_space();
        let line = self.line;
        let Some(c) = self.peek() else { return Ok(None) };
        let tok = match c {
            '{' => {
                self.i += 1;
                Token::LBrace
            }
            '}' => {
                self.i += 1;
                Token::RBrace
            }
            '.' => {
                self.i += 1;
                Token::Dot
            }
            '?' | '$' => {
                self.i += 1;
                let name = self.take_while(|c| c.is_alphanumeric() || c == '_');
                if name.is_empty() {
                    return Err(self.err("empty variable name"));
                }
                Token::Var(name.to_string())
            }
            '<' => {
                let end = self.s[self.i..].find('>').ok_or_else(|| self.err("unterminated IRI"))?;
                let iri = &self.s[self.i..=self.i + end];
                if iri.contains(char::is_whitespace) {
                    return Err(self.err("whitespace inside IRI"));
                }
                self.i += end + 1;
                Token::Iri(iri.to_string())
            }
            '"' => {
                let b = self.s.as_bytes();
                let start = self.i;
                let mut j = self.i + 1;
                loop {
                    match b.get(j) {
                        None => return Err(self.err("unterminated literal")),
                        Some(b'\\') => j += 2,
                        Some(b'"') => break,
                        Some(_) => j += 1,
                    }
                }
                self.i = j + 1;
                if self.s[self.i..].starts_with("^^<") {
                    let end = self.s[self.i..].find('>').ok_or_else(|| self.err("unterminated datatype"))?;
                    self.i += end + 1;
                } else if self.s[self.i..].starts_with('@') {
                    self.i += 1;
                    self.take_while(|c| c.is_ascii_alphanumeric() || c == '-');
                }
                Token::Literal(self.s[start..self.i].to_string())
            }
            '_' if self.s[self.i..].starts_with("_:") => {
                let w = self.word();
                Token::Blank(w)
            }
            _ => Token::Word(self.word()),
        };
        Ok(Some((tok, line)))
    }

    /// A word or prefixed name. A trailing dot ends the pattern rather than
    /// belonging to the name.
    fn word(&mut self) -> String {
        let w = self.take_while(|c| !c.is_whitespace() && !matches!(c, '{' | '}' | '<' | '"' | '?'));
        let trimmed = w.trim_end_matches('.');
        self.i -= w.len() - trimmed.len();
        trimmed.to_string()
    }
}

/// Parses a query into a graph pattern with label terms.
pub fn parse_query(text: &str) -> Result<BasicGraphPattern> {
    let mut lx = Lexer { s: text, i: 0, line: 1 };
    let mut toks = Vec::new();
    while let Some(t) = lx.next()? {
        toks.push(t);
    }
    let mut it = toks.into_iter().peekable();
    let mut prefixes: Vec<(String, String)> = Vec::new();
    let err = |line: u64, msg: &str| Error::Parse { line, msg: msg.to_string() };
    let mut line = 1;
    // Prologue.
    loop {
        match it.next() {
            Some((Token::Word(w), l)) if w.eq_ignore_ascii_case("PREFIX") => {
                let name = match it.next() {
                    Some((Token::Word(n), _)) if n.ends_with(':') => n[..n.len() - 1].to_string(),
                    _ => return Err(err(l, "expected a prefix name ending in ':'")),
                };
                let iri = match it.next() {
                    Some((Token::Iri(i), _)) => i[1..i.len() - 1].to_string(),
                    _ => return Err(err(l, "expected the prefix IRI")),
                };
                prefixes.retain(|(n, _)| *n != name);
                prefixes.push((name, iri));
            }
            Some((Token::Word(w), l)) if w.eq_ignore_ascii_case("SELECT") => {
                line = l;
                break;
            }
            Some((_, l)) => return Err(err(l, "expected PREFIX or SELECT")),
            None => return Err(err(line, "expected SELECT")),
        }
    }
    let mut projection = Vec::new();
    let mut star = false;
    loop {
        match it.next() {
            Some((Token::Var(v), _)) => projection.push(v),
            Some((Token::Word(w), _)) if w == "*" => star = true,
            Some((Token::Word(w), _)) if w.eq_ignore_ascii_case("DISTINCT") || w.eq_ignore_ascii_case("REDUCED") => {}
            Some((Token::Word(w), _)) if w.eq_ignore_ascii_case("WHERE") => match it.next() {
                Some((Token::LBrace, _)) => break,
                Some((_, l)) => return Err(err(l, "expected '{' after WHERE")),
                None => return Err(err(line, "expected '{'")),
            },
            Some((Token::LBrace, _)) => break,
            Some((_, l)) => return Err(err(l, "unexpected token in SELECT clause")),
            None => return Err(err(line, "expected '{'")),
        }
    }
    if star == !projection.is_empty() {
        return Err(err(line, "SELECT needs variables or '*'"));
    }
    let expand = |tok: Token, l: u64, pos: usize| -> Result<QueryTerm> {
        Ok(match tok {
            Token::Var(v) => QueryTerm::Var(v),
            Token::Iri(i) => QueryTerm::Label(i),
            Token::Literal(s) => {
                if pos != 2 {
                    return Err(err(l, "literals may only appear as objects"));
                }
                QueryTerm::Label(s)
            }
            Token::Blank(b) => QueryTerm::Label(b),
            Token::Word(w) if w == "a" && pos == 1 => QueryTerm::Label(RDF_TYPE.to_string()),
            Token::Word(w) => match w.split_once(':') {
                Some((p, local)) => match prefixes.iter().find(|(n, _)| n == p) {
                    Some((_, iri)) => QueryTerm::Label(format!("<{iri}{local}>")),
                    None => return Err(err(l, &format!("unknown prefix {p:?}"))),
                },
                None => QueryTerm::Bare(w),
            },
            _ => return Err(err(l, "expected a term")),
        })
    };
    let mut patterns = Vec::new();
    let mut closed = false;
    while let Some((tok, l)) = it.next() {
        match tok {
            Token::RBrace => {
                closed = true;
                break;
            }
            Token::Dot => continue,
            first => {
                let s = expand(first, l, 0)?;
                let (t, l2) = it.next().ok_or_else(|| err(l, "incomplete triple pattern"))?;
                let r = expand(t, l2, 1)?;
                let (t, l3) = it.next().ok_or_else(|| err(l, "incomplete triple pattern"))?;
                let d = expand(t, l3, 2)?;
                patterns.push([s, r, d]);
                match it.peek() {
                    Some((Token::Dot, _)) | Some((Token::RBrace, _)) => {}
                    Some((_, l)) => return Err(err(*l, "expected '.' between triple patterns")),
                    None => {}
                }
            }
        }
    }
    if !closed {
        return Err(err(line, "missing '}'"));
    }
    if let Some((_, l)) = it.next() {
        return Err(err(l, "unexpected input after '}'"));
    }
    BasicGraphPattern::new(patterns, projection)
}

/// Parses a single triple pattern of three terms, such as `?x a <C>`.
pub fn parse_pattern(text: &str) -> Result<[QueryTerm; 3]> {
    let q = parse_query(&format!("SELECT * {{ {text} }}"))?;
    match &q.patterns[..] {
        [p] => Ok(p.clone()),
        _ => Err(Error::Parse { line: 1, msg: "expected exactly one triple pattern".into() }),
    }
}
