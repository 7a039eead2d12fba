//! Identifiers, edges, orderings and triple patterns.
//!
//! Everything the storage layer does is keyed by one of six permutations of
//! the edge fields (source, relation, destination). A [`TriplePattern`] is
//! served by picking the permutation whose leading fields are exactly the
//! pattern's constants; the helpers here implement that choice.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest representable identifier plus one. Identifiers are stored in at most five bytes.
pub const TERM_ID_LIMIT: u64 = 1 << 40;

/// Numeric identifier of a label (entity or relation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TermId(u64);

impl TermId {
    pub const MAX: TermId = TermId(TERM_ID_LIMIT - 1);

    pub fn new(value: u64) -> Result<Self> {
        if value >= TERM_ID_LIMIT {
            return Err(Error::ValueTooLarge(value));
        }
        Ok(TermId(value))
    }

    /// Caller guarantees `value < 2^40`; checked in debug builds only.
    #[inline]
    pub(crate) const fn from_raw(value: u64) -> Self {
        debug_assert!(value < TERM_ID_LIMIT);
        TermId(value)
    }

    #[inline]
    pub const fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl TryFrom<u64> for TermId {
    type Error = Error;
    fn try_from(value: u64) -> Result<Self> {
        TermId::new(value)
    }
}

/// A labeled edge `r(s, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub s: TermId,
    pub r: TermId,
    pub d: TermId,
}

impl Edge {
    pub fn new(s: TermId, r: TermId, d: TermId) -> Self {
        Edge { s, r, d }
    }

    #[inline]
    pub fn get(&self, pos: Pos) -> TermId {
        match pos {
            Pos::S => self.s,
            Pos::R => self.r,
            Pos::D => self.d,
        }
    }
}

/// One of the three edge fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Pos {
    #[default]
    S,
    R,
    D,
}

impl Pos {
    pub const ALL: [Pos; 3] = [Pos::S, Pos::R, Pos::D];

    pub fn as_char(self) -> char {
        match self {
            Pos::S => 's',
            Pos::R => 'r',
            Pos::D => 'd',
        }
    }

    pub fn from_char(c: char) -> Option<Pos> {
        match c {
            's' => Some(Pos::S),
            'r' => Some(Pos::R),
            'd' => Some(Pos::D),
            _ => None,
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

/// A full sort order over edges: a permutation of `s`, `r`, `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ordering {
    Srd,
    Sdr,
    Rsd,
    Rds,
    Drs,
    Dsr,
}

impl Ordering {
    pub const ALL: [Ordering; 6] =
        [Ordering::Srd, Ordering::Sdr, Ordering::Rsd, Ordering::Rds, Ordering::Drs, Ordering::Dsr];

    pub fn positions(self) -> [Pos; 3] {
        use Pos::*;
        match self {
            Ordering::Srd => [S, R, D],
            Ordering::Sdr => [S, D, R],
            Ordering::Rsd => [R, S, D],
            Ordering::Rds => [R, D, S],
            Ordering::Drs => [D, R, S],
            Ordering::Dsr => [D, S, R],
        }
    }

    pub fn from_positions(p: [Pos; 3]) -> Option<Ordering> {
        Ordering::ALL.into_iter().find(|o| o.positions() == p)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ordering::Srd => "srd",
            Ordering::Sdr => "sdr",
            Ordering::Rsd => "rsd",
            Ordering::Rds => "rds",
            Ordering::Drs => "drs",
            Ordering::Dsr => "dsr",
        }
    }

    /// Edge fields rearranged into this ordering's sort key.
    #[inline]
    pub fn key(self, e: &Edge) -> [TermId; 3] {
        let [a, b, c] = self.positions();
        [e.get(a), e.get(b), e.get(c)]
    }

    /// Inverse of [`Ordering::key`].
    #[inline]
    pub fn edge(self, key: [TermId; 3]) -> Edge {
        let mut f = [TermId::default(); 3];
        for (pos, v) in self.positions().into_iter().zip(key) {
            f[pos.index()] = v;
        }
        Edge::new(f[0], f[1], f[2])
    }

    pub fn as_partial(self) -> PartialOrdering {
        PartialOrdering::from_slice(&self.positions()).expect("orderings are repetition-free")
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ordering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ordering::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::InvalidRequest(format!("unknown ordering '{s}'")))
    }
}

/// A string of distinct positions, e.g. `""`, `"d"` or `"rd"`.
///
/// Used for partial orderings of grouping requests and for `bound`. The result
/// of [`ordering_minus`] with an empty subtrahend has length three, so the
/// type admits full-length values too.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PartialOrdering {
    len: u8,
    pos: [Pos; 3],
}

impl PartialOrdering {
    pub const EMPTY: PartialOrdering = PartialOrdering { len: 0, pos: [Pos::S; 3] };

    pub fn from_slice(p: &[Pos]) -> Result<Self> {
        if p.len() > 3 {
            return Err(Error::InvalidRequest("partial ordering longer than three".into()));
        }
        let mut out = PartialOrdering::EMPTY;
        for &x in p {
            if out.contains(x) {
                return Err(Error::InvalidRequest(format!("repeated position '{}' in ordering", x.as_char())));
            }
            out.pos[out.len as usize] = x;
            out.len += 1;
        }
        Ok(out)
    }

    pub fn as_slice(&self) -> &[Pos] {
        &self.pos[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, p: Pos) -> bool {
        self.as_slice().contains(&p)
    }

    pub(crate) fn push(&mut self, p: Pos) {
        self.pos[self.len as usize] = p;
        self.len += 1;
    }

    /// The full ordering this string spells, when it has length three.
    pub fn to_ordering(self) -> Option<Ordering> {
        match self.as_slice() {
            [a, b, c] => Ordering::from_positions([*a, *b, *c]),
            _ => None,
        }
    }

    /// Extends this string to a full ordering by appending the missing positions in `s, r, d` order.
    pub fn complete(self) -> Ordering {
        let mut out = self;
        for p in Pos::ALL {
            if !out.contains(p) {
                out.push(p);
            }
        }
        out.to_ordering().expect("completed ordering has three positions")
    }
}

impl fmt::Debug for PartialOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "\"{self}\"")
    }
}

impl fmt::Display for PartialOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.as_slice() {
            write!(f, "{}", p.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PartialOrdering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut v = Vec::with_capacity(3);
        for c in s.chars() {
            v.push(
                Pos::from_char(c)
                    .ok_or_else(|| Error::InvalidRequest(format!("invalid position '{c}' in ordering '{s}'")))?,
            );
        }
        PartialOrdering::from_slice(&v)
    }
}

impl From<Ordering> for PartialOrdering {
    fn from(o: Ordering) -> Self {
        o.as_partial()
    }
}

/// True iff `a` is a prefix of `b`.
pub fn isprefix(a: PartialOrdering, b: Ordering) -> bool {
    let full = b.positions();
    a.as_slice().iter().zip(full.iter()).all(|(x, y)| x == y)
}

/// `a` with every position occurring in `b` removed, keeping `a`'s order.
pub fn ordering_minus(a: impl Into<PartialOrdering>, b: PartialOrdering) -> PartialOrdering {
    let a = a.into();
    let mut out = PartialOrdering::EMPTY;
    for &p in a.as_slice() {
        if !b.contains(p) {
            out.push(p);
        }
    }
    out
}

/// One slot of a triple pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Const(TermId),
    Var(String),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Term {
        Term::Var(name.into())
    }

    pub fn as_const(&self) -> Option<TermId> {
        match self {
            Term::Const(c) => Some(*c),
            Term::Var(_) => None,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

impl From<TermId> for Term {
    fn from(id: TermId) -> Self {
        Term::Const(id)
    }
}

/// A simple graph pattern `(s, r, d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TriplePattern {
    pub s: Term,
    pub r: Term,
    pub d: Term,
}

impl TriplePattern {
    pub fn new(s: impl Into<Term>, r: impl Into<Term>, d: impl Into<Term>) -> Self {
        TriplePattern { s: s.into(), r: r.into(), d: d.into() }
    }

    /// The pattern with three distinct variables.
    pub fn all_vars() -> Self {
        TriplePattern::new(Term::var("s"), Term::var("r"), Term::var("d"))
    }

    pub fn get(&self, pos: Pos) -> &Term {
        match pos {
            Pos::S => &self.s,
            Pos::R => &self.r,
            Pos::D => &self.d,
        }
    }

    pub fn constant(&self, pos: Pos) -> Option<TermId> {
        self.get(pos).as_const()
    }

    pub fn constants(&self) -> impl Iterator<Item = (Pos, TermId)> + '_ {
        Pos::ALL.into_iter().filter_map(|p| self.constant(p).map(|c| (p, c)))
    }

    pub fn num_constants(&self) -> usize {
        self.constants().count()
    }

    /// Pairs of positions that must hold equal values because they share a variable.
    pub fn repeated_vars(&self) -> Vec<(Pos, Pos)> {
        let mut out = Vec::new();
        for (i, a) in Pos::ALL.into_iter().enumerate() {
            for b in Pos::ALL.into_iter().skip(i + 1) {
                if let (Term::Var(x), Term::Var(y)) = (self.get(a), self.get(b)) {
                    if x == y {
                        out.push((a, b));
                    }
                }
            }
        }
        out
    }

    pub fn has_repeated_vars(&self) -> bool {
        !self.repeated_vars().is_empty()
    }

    /// Whether `e` is an answer of this pattern.
    pub fn matches(&self, e: &Edge) -> bool {
        self.constants().all(|(p, c)| e.get(p) == c)
            && self.repeated_vars().into_iter().all(|(a, b)| e.get(a) == e.get(b))
    }
}

/// Positions of the constants of `p`, in `s, r, d` order.
pub fn bound(p: &TriplePattern) -> PartialOrdering {
    let mut out = PartialOrdering::EMPTY;
    for (pos, _) in p.constants() {
        out.push(pos);
    }
    out
}

/// Picks the ordering whose stream answers `p` with a range scan and yields
/// the answers sorted by `omega`.
pub fn select_ordering(p: &TriplePattern, omega: Ordering) -> Result<Ordering> {
    let b = bound(p);
    if isprefix(b, omega) {
        return Ok(omega);
    }
    let wanted = ordering_minus(omega, b);
    Ordering::ALL
        .into_iter()
        .find(|&cand| isprefix(b, cand) && ordering_minus(cand, b) == wanted)
        .ok_or_else(|| Error::InvalidRequest(format!("no stream serves bound '{b}' sorted by {omega}")))
}
