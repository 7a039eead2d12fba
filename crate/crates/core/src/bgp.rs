//! Basic graph pattern evaluation with greedy join ordering.
//!
//! The planner orders patterns by their exact answer counts: the cheapest
//! pattern first, then repeatedly the pattern sharing the most variables
//! with those already bound, ties broken by count and then by input order.
//! Execution is left-deep. A join is a MERGE when the intermediate result is
//! sorted on the join variable and the pattern can be scanned sorted on it;
//! otherwise it is an INDEX_LOOP that probes the pattern once per row with
//! the row's bindings substituted. Results have set semantics.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{select_ordering, Edge, Ordering, PartialOrdering, Pos, Term, TermId, TriplePattern};
use crate::primitives::{Request, Snapshot};
use crate::sparql::{parse_query, BasicGraphPattern, QueryTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinOp {
    /// First pattern of the plan.
    Scan,
    Merge,
    IndexLoop,
}

impl fmt::Display for JoinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JoinOp::Scan => "SCAN",
            JoinOp::Merge => "MERGE",
            JoinOp::IndexLoop => "INDEX_LOOP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanStep {
    /// Position of the pattern in the query.
    pub input_index: usize,
    pub pattern: TriplePattern,
    /// Exact number of answers of the pattern alone.
    pub estimate: u64,
    pub op: JoinOp,
    /// Variable the join is driven by, if the step shares one.
    pub join_var: Option<String>,
    /// No variable in common with the earlier steps.
    pub cartesian: bool,
    /// Ordering the pattern is scanned in (for SCAN and MERGE steps).
    pub scan: Ordering,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    /// Set when a constant is not in the dictionary; the answer is empty.
    pub unsatisfiable: bool,
    pub steps: Vec<PlanStep>,
    /// All variables, in order of first appearance in the query.
    pub variables: Vec<String>,
    pub projection: Vec<String>,
    /// Position the first occurrence of each variable takes, for labels.
    var_pos: Vec<Pos>,
}

impl Plan {
    pub fn has_cartesian(&self) -> bool {
        self.steps.iter().any(|s| s.cartesian)
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.unsatisfiable {
            return writeln!(f, "EMPTY (unknown constant)");
        }
        for (i, s) in self.steps.iter().enumerate() {
            write!(f, "{i}: {} #{} est={} scan={}", s.op, s.input_index, s.estimate, s.scan)?;
            if let Some(v) = &s.join_var {
                write!(f, " on ?{v}")?;
            }
            if s.cartesian {
                write!(f, " cartesian")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Overrides for planning, used to compare plans against each other.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanOptions {
    /// Fixed join order as input pattern indices.
    pub order: Option<Vec<usize>>,
    /// Operator for every join.
    pub force: Option<JoinOp>,
}

/// Variable assignments, one row per answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BindingSet {
    pub variables: Vec<String>,
    /// Distinct rows sorted by term ids.
    pub rows: Vec<Vec<TermId>>,
    var_pos: Vec<Pos>,
}

impl BindingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as labels, sorted by label tuple.
    pub fn labels(&self, snap: &Snapshot) -> Result<Vec<Vec<String>>> {
        let mut out = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let mut r = Vec::with_capacity(row.len());
            for (i, id) in row.iter().enumerate() {
                r.push(String::from_utf8_lossy(&snap.label_at(*id, self.var_pos[i])?).into_owned());
            }
            out.push(r);
        }
        out.sort();
        Ok(out)
    }
}

fn resolve(snap: &Snapshot, t: &QueryTerm, pos: Pos) -> Result<Option<TermId>> {
    let lookup = |label: &str| -> Result<Option<TermId>> {
        let r = match pos {
            Pos::R => snap.edgid(label.as_bytes()),
            _ => snap.nodid(label.as_bytes()),
        };
        match r {
            Ok(id) => Ok(Some(id)),
            Err(Error::AbsentTerm(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    match t {
        QueryTerm::Var(_) => unreachable!("constants only"),
        QueryTerm::Label(l) => lookup(l),
        QueryTerm::Bare(w) => match lookup(w)? {
            Some(id) => Ok(Some(id)),
            None => lookup(&format!("<{w}>")),
        },
    }
}

/// Maps the label terms of a query pattern to ids. `None` when a constant
/// is not in the dictionary, so the pattern has no answers.
pub fn resolve_pattern(snap: &Snapshot, t: &[QueryTerm; 3]) -> Result<Option<TriplePattern>> {
    let mut terms: Vec<Term> = Vec::with_capacity(3);
    for pos in Pos::ALL {
        match &t[pos.index()] {
            QueryTerm::Var(v) => terms.push(Term::var(v.clone())),
            q => match resolve(snap, q, pos)? {
                Some(id) => terms.push(Term::Const(id)),
                None => return Ok(None),
            },
        }
    }
    let [s, r, d]: [Term; 3] = terms.try_into().expect("three terms");
    Ok(Some(TriplePattern::new(s, r, d)))
}

fn vars_of(p: &TriplePattern) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for pos in Pos::ALL {
        if let Some(v) = p.get(pos).as_var() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out
}

fn var_position(p: &TriplePattern, var: &str) -> Option<Pos> {
    Pos::ALL.into_iter().find(|&pos| p.get(pos).as_var() == Some(var))
}

/// Ordering that scans `p` sorted on `var` right after its constants.
fn ordering_for(p: &TriplePattern, var: Option<&str>) -> Ordering {
    let mut po = PartialOrdering::EMPTY;
    for (pos, _) in p.constants() {
        po.push(pos);
    }
    if let Some(pos) = var.and_then(|v| var_position(p, v)) {
        po.push(pos);
    }
    let omega = po.complete();
    select_ordering(p, omega).unwrap_or(omega)
}

/// Plans `bgp` with the greedy rule.
pub fn plan(snap: &Snapshot, bgp: &BasicGraphPattern) -> Result<Plan> {
    plan_with(snap, bgp, &PlanOptions::default())
}

pub fn plan_with(snap: &Snapshot, bgp: &BasicGraphPattern, opts: &PlanOptions) -> Result<Plan> {
    let variables = bgp.variables();
    let mut var_pos = vec![Pos::S; variables.len()];
    for (i, v) in variables.iter().enumerate() {
        'find: for t in &bgp.patterns {
            for pos in Pos::ALL {
                if t[pos.index()].as_var() == Some(v) {
                    var_pos[i] = pos;
                    break 'find;
                }
            }
        }
    }
    let mut plan =
        Plan { unsatisfiable: false, steps: Vec::new(), variables, projection: bgp.projection.clone(), var_pos };
    let mut patterns = Vec::with_capacity(bgp.patterns.len());
    for t in &bgp.patterns {
        match resolve_pattern(snap, t)? {
            Some(p) => patterns.push(p),
            None => {
                plan.unsatisfiable = true;
                return Ok(plan);
            }
        }
    }
    let mut estimates = Vec::with_capacity(patterns.len());
    for p in &patterns {
        estimates.push(snap.cnt(&Request::Edg { omega: Ordering::Srd, pattern: p.clone() })?);
    }
    let order: Vec<usize> = match &opts.order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..patterns.len()).collect::<Vec<_>>() {
                return Err(Error::InvalidRequest("join order must be a permutation of the patterns".into()));
            }
            o.clone()
        }
        None => greedy_order(&patterns, &estimates),
    };
    let mut bound: BTreeSet<String> = BTreeSet::new();
    // Variable the intermediate result is sorted on.
    let mut sorted_on: Option<String> = None;
    for (k, &i) in order.iter().enumerate() {
        let p = &patterns[i];
        let vars = vars_of(p);
        let shared: Vec<&str> = vars.iter().copied().filter(|v| bound.contains(*v)).collect();
        let step = if k == 0 {
            // Scan sorted on the variable the next step joins on.
            let next_join = order.get(1).and_then(|&j| {
                let nv = vars_of(&patterns[j]);
                vars.iter().copied().find(|v| nv.contains(v))
            });
            sorted_on = next_join.or(vars.first().copied()).map(str::to_string);
            PlanStep {
                input_index: i,
                pattern: p.clone(),
                estimate: estimates[i],
                op: JoinOp::Scan,
                join_var: None,
                cartesian: false,
                scan: ordering_for(p, sorted_on.as_deref()),
            }
        } else {
            let primary = shared
                .iter()
                .copied()
                .find(|v| sorted_on.as_deref() == Some(*v))
                .or(shared.first().copied())
                .map(str::to_string);
            let natural = match (&primary, &sorted_on) {
                (Some(p), Some(s)) if p == s => JoinOp::Merge,
                _ => JoinOp::IndexLoop,
            };
            let op = match (opts.force, &primary) {
                (Some(JoinOp::Scan), _) => {
                    return Err(Error::InvalidRequest("SCAN is not a join operator".into()));
                }
                (Some(f), Some(_)) => f,
                _ => natural,
            };
            if op == JoinOp::Merge {
                sorted_on = primary.clone();
            }
            PlanStep {
                input_index: i,
                pattern: p.clone(),
                estimate: estimates[i],
                op,
                cartesian: primary.is_none(),
                scan: ordering_for(p, primary.as_deref()),
                join_var: primary,
            }
        };
        plan.steps.push(step);
        bound.extend(vars.iter().map(|v| v.to_string()));
    }
    Ok(plan)
}

fn greedy_order(patterns: &[TriplePattern], estimates: &[u64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..patterns.len()).collect();
    let mut order = Vec::with_capacity(left.len());
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    while !left.is_empty() {
        let best = *left
            .iter()
            .min_by_key(|&&i| {
                let shared = vars_of(&patterns[i]).iter().filter(|v| bound.contains(*v)).count();
                let shared = if order.is_empty() { 0 } else { shared };
                (std::cmp::Reverse(shared), estimates[i], i)
            })
            .expect("nonempty");
        left.retain(|&i| i != best);
        order.push(best);
        bound.extend(vars_of(&patterns[best]));
    }
    order
}

/// Intermediate rows with one slot per query variable.
struct Rows {
    width: usize,
    data: Vec<TermId>,
}

impl Rows {
    fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    fn row(&self, i: usize) -> &[TermId] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

const UNBOUND: TermId = TermId::MAX;

/// Extends `row` with the bindings of `e` for `p`; false on a conflict.
fn bind(p: &TriplePattern, slots: &[Option<usize>; 3], bound: &[bool], row: &mut [TermId], e: &Edge) -> bool {
    let mut set = [None::<usize>; 3];
    for (k, pos) in Pos::ALL.into_iter().enumerate() {
        let v = e.get(pos);
        match slots[k] {
            None => {
                if p.constant(pos).is_some_and(|c| c != v) {
                    return false;
                }
            }
            Some(s) => {
                if bound[s] || set.contains(&Some(s)) {
                    if row[s] != v {
                        return false;
                    }
                } else {
                    row[s] = v;
                    set[k] = Some(s);
                }
            }
        }
    }
    true
}

/// Evaluates the plan.
pub fn execute(snap: &Snapshot, plan: &Plan) -> Result<BindingSet> {
    let width = plan.variables.len();
    let proj: Vec<usize> = plan
        .projection
        .iter()
        .map(|v| plan.variables.iter().position(|x| x == v).expect("projected variable exists"))
        .collect();
    let mut out = BindingSet {
        variables: plan.projection.clone(),
        rows: Vec::new(),
        var_pos: proj.iter().map(|&i| plan.var_pos[i]).collect(),
    };
    if plan.unsatisfiable || plan.steps.is_empty() {
        return Ok(out);
    }
    let slot = |v: &str| plan.variables.iter().position(|x| x == v);
    let mut bound = vec![false; width];
    let mut rows = Rows { width, data: Vec::new() };
    for step in &plan.steps {
        let p = &step.pattern;
        let slots: [Option<usize>; 3] = Pos::ALL.map(|pos| p.get(pos).as_var().and_then(slot));
        let mut next = Rows { width, data: Vec::new() };
        match step.op {
            JoinOp::Scan => {
                let mut row = vec![UNBOUND; width];
                for e in snap.edg(step.scan, p)? {
                    let e = e?;
                    row.fill(UNBOUND);
                    if bind(p, &slots, &bound, &mut row, &e) {
                        next.data.extend_from_slice(&row);
                    }
                }
            }
            JoinOp::IndexLoop if step.cartesian => {
                let right: Vec<Edge> = snap.edg(step.scan, p)?.collect::<Result<_>>()?;
                let mut row = vec![UNBOUND; width];
                for i in 0..rows.len() {
                    for e in &right {
                        row.copy_from_slice(rows.row(i));
                        if bind(p, &slots, &bound, &mut row, e) {
                            next.data.extend_from_slice(&row);
                        }
                    }
                }
            }
            JoinOp::IndexLoop => {
                let mut row = vec![UNBOUND; width];
                for i in 0..rows.len() {
                    let left = rows.row(i);
                    let sub = substitute(p, &slots, &bound, left);
                    for e in snap.edg(Ordering::Srd, &sub)? {
                        let e = e?;
                        row.copy_from_slice(left);
                        if bind(p, &slots, &bound, &mut row, &e) {
                            next.data.extend_from_slice(&row);
                        }
                    }
                }
            }
            JoinOp::Merge => {
                let var = step.join_var.as_deref().expect("merge has a join variable");
                let s = slot(var).expect("join variable exists");
                let pos = var_position(p, var).expect("join variable in pattern");
                sort_rows(&mut rows, s);
                merge_join(snap, step, &rows, s, pos, &slots, &bound, &mut next)?;
            }
        }
        for v in vars_of(p) {
            bound[slot(v).expect("variable exists")] = true;
        }
        rows = next;
        if rows.len() == 0 {
            break;
        }
    }
    let mut result: Vec<Vec<TermId>> =
        (0..rows.len()).map(|i| proj.iter().map(|&c| rows.row(i)[c]).collect()).collect();
    result.sort_unstable();
    result.dedup();
    out.rows = result;
    Ok(out)
}

/// Sorts rows on slot `s` unless they already are.
fn sort_rows(rows: &mut Rows, s: usize) {
    let n = rows.len();
    if (1..n).all(|i| rows.row(i - 1)[s] <= rows.row(i)[s]) {
        return;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_key(|&i| rows.row(i)[s]);
    let mut data = Vec::with_capacity(rows.data.len());
    for i in idx {
        data.extend_from_slice(rows.row(i));
    }
    rows.data = data;
}

fn substitute(p: &TriplePattern, slots: &[Option<usize>; 3], bound: &[bool], row: &[TermId]) -> TriplePattern {
    let t = |k: usize, pos: Pos| match slots[k] {
        Some(s) if bound[s] => Term::Const(row[s]),
        _ => p.get(pos).clone(),
    };
    TriplePattern::new(t(0, Pos::S), t(1, Pos::R), t(2, Pos::D))
}

#[allow(clippy::too_many_arguments)]
fn merge_join(
    snap: &Snapshot,
    step: &PlanStep,
    left: &Rows,
    s: usize,
    pos: Pos,
    slots: &[Option<usize>; 3],
    bound: &[bool],
    out: &mut Rows,
) -> Result<()> {
    let p = &step.pattern;
    let mut right = snap.edg(step.scan, p)?.peekable();
    let mut li = 0;
    let mut group: Vec<Edge> = Vec::new();
    let mut prev_key: Option<TermId> = None;
    let mut row = vec![UNBOUND; left.width];
    while li < left.len() {
        let key = left.row(li)[s];
        // Collect the right group with this key.
        group.clear();
        loop {
            let Some(next) = right.peek() else { break };
            let e = match next {
                Ok(e) => *e,
                Err(_) => return Err(right.next().expect("peeked").unwrap_err()),
            };
            let k = e.get(pos);
            if prev_key.is_some_and(|pk| k < pk) {
                return Err(Error::corrupt("merge join input is not sorted on the join variable"));
            }
            prev_key = Some(k);
            if k < key {
                right.next();
            } else if k == key {
                group.push(e);
                right.next();
            } else {
                break;
            }
        }
        while li < left.len() && left.row(li)[s] == key {
            for e in &group {
                row.copy_from_slice(left.row(li));
                if bind(p, slots, bound, &mut row, e) {
                    out.data.extend_from_slice(&row);
                }
            }
            li += 1;
        }
        if right.peek().is_none() && group.is_empty() {
            break;
        }
    }
    Ok(())
}

/// Parses, plans and runs a query.
pub fn query(snap: &Snapshot, text: &str) -> Result<BindingSet> {
    let bgp = parse_query(text)?;
    execute(snap, &plan(snap, &bgp)?)
}
