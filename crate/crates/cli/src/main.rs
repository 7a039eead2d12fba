use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use kgstore::bgp;
use kgstore::db::Database;
use kgstore::dictionary::IdMode;
use kgstore::input::{open_input, InputFormat};
use kgstore::loader::{self, LoadConfig};
use kgstore::nm::NmBackend;
use kgstore::primitives::{DeltaKind, GroupKey, Request, Snapshot};
use kgstore::sparql::{self, QueryTerm};
use kgstore::{Edge, Error, Ordering, PartialOrdering, Pos, Result, TermId};

#[derive(Parser)]
#[command(name = "kgstore", version, about = "Disk-based knowledge graph store")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a new database from a triple file.
    Load(LoadArgs),
    /// Answer a SELECT query.
    Query(QueryArgs),
    /// Call one primitive directly.
    Probe(ProbeArgs),
    /// Add or remove triples.
    Update(UpdateArgs),
    /// Fold all deltas into one addition and one removal delta.
    Merge(ReportArgs),
    /// Print database statistics.
    Stats(ReportArgs),
}

#[derive(Args)]
struct LoadArgs {
    db: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "ntriples")]
    format: InputFormat,
    #[arg(long, default_value = "global")]
    id_mode: IdMode,
    #[arg(long, default_value = "btree")]
    nm: NmBackend,
    #[arg(long, default_value = "on")]
    ofr: Switch,
    #[arg(long)]
    eta: Option<u64>,
    #[arg(long, default_value = "on")]
    aggr: Switch,
    #[arg(long)]
    tau: Option<u64>,
    #[arg(long)]
    upsilon: Option<u64>,
    #[arg(long)]
    proc_workers: Option<usize>,
    #[arg(long)]
    io_workers: Option<usize>,
    /// Sort buffer in bytes; accepts K, M and G suffixes.
    #[arg(long, value_parser = parse_size)]
    sort_mem: Option<usize>,
    #[arg(long)]
    tmp_dir: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        matches!(self, Switch::On)
    }
}

#[derive(Args)]
struct QueryArgs {
    db: PathBuf,
    /// Query text; read from --query when omitted.
    text: Option<String>,
    #[arg(long, conflicts_with = "text")]
    query: Option<PathBuf>,
    #[arg(long)]
    json: bool,
    /// Print the plan to stderr.
    #[arg(long)]
    explain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
#[allow(non_camel_case_types)]
enum Primitive {
    #[value(name = "lbl_n")]
    lbl_n,
    #[value(name = "lbl_e")]
    lbl_e,
    nodid,
    edgid,
    edg,
    grp,
    cnt,
    pos,
}

#[derive(Args)]
struct ProbeArgs {
    db: PathBuf,
    #[arg(long)]
    primitive: Primitive,
    /// Three terms, each a label or ?var, e.g. "?x <isA> ?y" or "?x|<isA>|?y".
    #[arg(long)]
    pattern: Option<String>,
    /// Full ordering for edg, cnt and pos; one or two positions for grp.
    #[arg(long)]
    ordering: Option<String>,
    #[arg(long)]
    index: Option<u64>,
    /// Term id for lbl_n and lbl_e.
    #[arg(long)]
    id: Option<u64>,
    /// Label for nodid and edgid.
    #[arg(long)]
    label: Option<String>,
    /// Print term ids instead of labels.
    #[arg(long)]
    ids: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateKind {
    Add,
    Remove,
}

#[derive(Args)]
struct UpdateArgs {
    db: PathBuf,
    kind: UpdateKind,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: Option<InputFormat>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    db: PathBuf,
    #[arg(long)]
    json: bool,
}

fn parse_size(s: &str) -> std::result::Result<usize, String> {
    let (num, shift) = match s.as_bytes().last() {
        Some(b'k' | b'K') => (&s[..s.len() - 1], 10),
        Some(b'm' | b'M') => (&s[..s.len() - 1], 20),
        Some(b'g' | b'G') => (&s[..s.len() - 1], 30),
        _ => (s, 0),
    };
    let n: usize = num.parse().map_err(|e| format!("{s:?}: {e}"))?;
    n.checked_mul(1 << shift).ok_or_else(|| format!("{s:?} is too large"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = io::stdout().lock();
    let mut out = BufWriter::new(out);
    let r = match cli.command {
        Command::Load(a) => cmd_load(a, &mut out),
        Command::Query(a) => cmd_query(a, &mut out),
        Command::Probe(a) => cmd_probe(a, &mut out),
        Command::Update(a) => cmd_update(a, &mut out),
        Command::Merge(a) => cmd_merge(a, &mut out),
        Command::Stats(a) => cmd_stats(a, &mut out),
    };
    let r = r.and_then(|()| out.flush().map_err(Error::from));
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

fn print_json(out: &mut impl Write, v: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(|e| Error::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

fn cmd_load(a: LoadArgs, out: &mut impl Write) -> Result<()> {
    let mut config = LoadConfig {
        format: a.format,
        id_mode: a.id_mode,
        nm_backend: a.nm,
        ofr: a.ofr.on(),
        aggr: a.aggr.on(),
        tmp_dir: a.tmp_dir,
        ..LoadConfig::default()
    };
    if let Some(v) = a.eta {
        config.eta = v;
    }
    if let Some(v) = a.tau {
        config.tau = v;
    }
    if let Some(v) = a.upsilon {
        config.upsilon = v;
    }
    if let Some(v) = a.proc_workers {
        config.processing_workers = v;
    }
    if let Some(v) = a.io_workers {
        config.io_workers = v;
    }
    if let Some(v) = a.sort_mem {
        config.sort_memory = v;
    }
    let r = loader::load(&config, &a.input, &a.db)?;
    if a.json {
        return print_json(out, &r);
    }
    writeln!(out, "edges\t{}", r.edges)?;
    writeln!(out, "input_triples\t{}", r.input_triples)?;
    writeln!(out, "labels\t{}", r.labels)?;
    writeln!(out, "relation_labels\t{}", r.relation_labels)?;
    writeln!(out, "relations\t{}", r.relations)?;
    writeln!(out, "nodes\t{}", r.nodes)?;
    writeln!(out, "tables_row\t{}", r.layouts.row)?;
    writeln!(out, "tables_column\t{}", r.layouts.column)?;
    writeln!(out, "tables_cluster\t{}", r.layouts.cluster)?;
    writeln!(out, "tables_pruned\t{}", r.layouts.pruned)?;
    writeln!(out, "tables_aggregated\t{}", r.layouts.aggregated)?;
    writeln!(out, "stream_bytes\t{}", r.stream_bytes)?;
    writeln!(out, "total_bytes\t{}", r.total_bytes)?;
    writeln!(out, "sort_runs\t{}", r.sort_runs)?;
    writeln!(out, "seconds\t{:.3}", r.seconds)?;
    Ok(())
}

fn cmd_query(a: QueryArgs, out: &mut impl Write) -> Result<()> {
    let text = match (a.text, a.query) {
        (Some(t), None) => t,
        (None, Some(p)) => std::fs::read_to_string(&p).map_err(Error::io_at(&p))?,
        _ => return Err(Error::InvalidRequest("give the query inline or with --query".into())),
    };
    let pattern = sparql::parse_query(&text)?;
    let db = Database::open(&a.db)?;
    let snap = db.snapshot();
    let plan = bgp::plan(&snap, &pattern)?;
    if a.explain {
        eprint!("{plan}");
    }
    let rows = bgp::execute(&snap, &plan)?.labels(&snap)?;
    if a.json {
        print_json(out, &json!({ "variables": pattern.projection, "rows": rows }))?;
    } else {
        let header: Vec<String> = pattern.projection.iter().map(|v| format!("?{v}")).collect();
        writeln!(out, "{}", header.join("\t"))?;
        for row in &rows {
            writeln!(out, "{}", row.join("\t"))?;
        }
    }
    eprintln!("{} rows", rows.len());
    Ok(())
}

struct Labeler<'a> {
    snap: &'a Snapshot,
    ids: bool,
}

impl Labeler<'_> {
    fn term(&self, id: TermId, pos: Pos) -> Result<String> {
        if self.ids {
            return Ok(id.to_string());
        }
        Ok(String::from_utf8_lossy(&self.snap.label_at(id, pos)?).into_owned())
    }

    fn edge(&self, e: &Edge) -> Result<[String; 3]> {
        Ok([self.term(e.s, Pos::S)?, self.term(e.r, Pos::R)?, self.term(e.d, Pos::D)?])
    }
}

fn cmd_probe(a: ProbeArgs, out: &mut impl Write) -> Result<()> {
    let db = Database::open(&a.db)?;
    let snap = db.snapshot();
    let lab = Labeler { snap: &snap, ids: a.ids };
    let need = |what: &str| Error::InvalidRequest(format!("--{what} is required for this primitive"));
    match a.primitive {
        Primitive::lbl_n | Primitive::lbl_e => {
            let id = TermId::new(a.id.ok_or_else(|| need("id"))?)?;
            let label = match a.primitive {
                Primitive::lbl_n => snap.lbl_n(id)?,
                _ => snap.lbl_e(id)?,
            };
            let label = String::from_utf8_lossy(&label).into_owned();
            if a.json {
                return print_json(out, &json!({ "label": label }));
            }
            writeln!(out, "{label}")?;
            return Ok(());
        }
        Primitive::nodid | Primitive::edgid => {
            let label = a.label.ok_or_else(|| need("label"))?;
            let id = match a.primitive {
                Primitive::nodid => snap.nodid(label.as_bytes())?,
                _ => snap.edgid(label.as_bytes())?,
            };
            if a.json {
                return print_json(out, &json!({ "id": id.get() }));
            }
            writeln!(out, "{id}")?;
            return Ok(());
        }
        _ => {}
    }
    let text = a.pattern.as_deref().ok_or_else(|| need("pattern"))?;
    // Also accept `s|r|d`.
    let parts: Vec<&str> = text.split('|').collect();
    let text = if parts.len() == 3 { parts.join(" ") } else { text.to_string() };
    let terms = sparql::parse_pattern(&text)?;
    let pattern = bgp::resolve_pattern(&snap, &terms)?;
    let group = matches!(a.primitive, Primitive::grp);
    // A grp ordering defaults to the first variable position; the others to srd.
    let default_order = || -> String {
        if group {
            Pos::ALL
                .into_iter()
                .find(|&p| matches!(terms[p.index()], QueryTerm::Var(_)))
                .unwrap_or(Pos::S)
                .as_char()
                .to_string()
        } else {
            "srd".to_string()
        }
    };
    let order_text = a.ordering.clone().unwrap_or_else(default_order);
    match a.primitive {
        Primitive::edg => {
            let omega: Ordering = order_text.parse()?;
            let mut rows = Vec::new();
            if let Some(p) = &pattern {
                for e in snap.edg(omega, p)? {
                    rows.push(lab.edge(&e?)?);
                }
            }
            if a.json {
                print_json(out, &rows)?;
            } else {
                for r in &rows {
                    writeln!(out, "{}", r.join("\t"))?;
                }
            }
            eprintln!("{} edges", rows.len());
        }
        Primitive::grp => {
            let omega: PartialOrdering = order_text.parse()?;
            let positions = omega.as_slice().to_vec();
            let mut rows: Vec<(Vec<String>, u64)> = Vec::new();
            if let Some(p) = &pattern {
                for g in snap.grp(omega, p)? {
                    let g = g?;
                    let key = match g.key {
                        GroupKey::One(a) => vec![lab.term(a, positions[0])?],
                        GroupKey::Two(a, b) => vec![lab.term(a, positions[0])?, lab.term(b, positions[1])?],
                    };
                    rows.push((key, g.count));
                }
            }
            if a.json {
                let v: Vec<_> = rows.iter().map(|(k, c)| json!({ "key": k, "count": c })).collect();
                print_json(out, &v)?;
            } else {
                for (k, c) in &rows {
                    writeln!(out, "{}\t{c}", k.join("\t"))?;
                }
            }
            eprintln!("{} groups", rows.len());
        }
        Primitive::cnt => {
            let n = match &pattern {
                None => 0,
                Some(p) => {
                    let req = match order_text.len() {
                        3 => Request::Edg { omega: order_text.parse()?, pattern: p.clone() },
                        _ => Request::Grp { omega: order_text.parse()?, pattern: p.clone() },
                    };
                    snap.cnt(&req)?
                }
            };
            if a.json {
                print_json(out, &json!({ "count": n }))?;
            } else {
                writeln!(out, "{n}")?;
            }
        }
        Primitive::pos => {
            let omega: Ordering = order_text.parse()?;
            let i = a.index.ok_or_else(|| need("index"))?;
            let p = pattern.ok_or_else(|| Error::IndexOutOfRange { index: i, count: 0 })?;
            let e = lab.edge(&snap.pos(omega, &p, i)?)?;
            if a.json {
                print_json(out, &e)?;
            } else {
                writeln!(out, "{}", e.join("\t"))?;
            }
        }
        _ => unreachable!("label primitives handled above"),
    }
    Ok(())
}

fn cmd_update(a: UpdateArgs, out: &mut impl Write) -> Result<()> {
    let db = Database::open_writable(&a.db)?;
    let format = a.format.unwrap_or(db.manifest().input_format);
    let kind = match a.kind {
        UpdateKind::Add => DeltaKind::Addition,
        UpdateKind::Remove => DeltaKind::Removal,
    };
    let r = db.apply_update_reader(format, open_input(&a.input)?, kind)?;
    if r.skipped > 0 {
        let why = match kind {
            DeltaKind::Addition => "already present",
            DeltaKind::Removal => "not present",
        };
        eprintln!("warning: {} triples skipped as {why}", r.skipped);
    }
    if r.reload_recommended {
        eprintln!("warning: deltas exceed the reload threshold; consider a fresh load");
    }
    if a.json {
        return print_json(out, &r);
    }
    writeln!(out, "requested\t{}", r.requested)?;
    writeln!(out, "applied\t{}", r.applied)?;
    writeln!(out, "skipped\t{}", r.skipped)?;
    writeln!(out, "new_terms\t{}", r.new_terms)?;
    writeln!(out, "deltas\t{}", r.deltas)?;
    if let Some(d) = &r.delta {
        writeln!(out, "delta\t{}\t{}\t{}", d.dir, d.kind.suffix(), d.edges)?;
    }
    Ok(())
}

fn cmd_merge(a: ReportArgs, out: &mut impl Write) -> Result<()> {
    let db = Database::open_writable(&a.db)?;
    let r = db.merge_deltas()?;
    if a.json {
        return print_json(out, &r);
    }
    writeln!(out, "deltas_before\t{}", r.before)?;
    writeln!(out, "deltas_after\t{}", r.after)?;
    writeln!(out, "additions\t{}", r.additions)?;
    writeln!(out, "removals\t{}", r.removals)?;
    writeln!(out, "cancelled\t{}", r.cancelled)?;
    Ok(())
}

fn cmd_stats(a: ReportArgs, out: &mut impl Write) -> Result<()> {
    let db = Database::open(&a.db)?;
    let s = db.stats()?;
    if a.json {
        return print_json(out, &s);
    }
    writeln!(out, "edges\t{}", s.edges)?;
    writeln!(out, "base_edges\t{}", s.base_edges)?;
    writeln!(out, "labels\t{}", s.labels)?;
    writeln!(out, "relation_labels\t{}", s.relation_labels)?;
    writeln!(out, "relations\t{}", s.relations)?;
    writeln!(out, "nodes\t{}", s.nodes)?;
    writeln!(out, "nm_backend\t{}", json!(s.nm_backend).as_str().unwrap_or_default())?;
    writeln!(out, "id_mode\t{}", json!(s.id_mode).as_str().unwrap_or_default())?;
    writeln!(out, "tables\t{}", s.layouts.tables())?;
    writeln!(out, "stream\tbytes\trow\tcolumn\tcluster\tpruned\taggregated")?;
    for st in &s.streams {
        let l = &st.layouts;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            st.stream, st.bytes, l.row, l.column, l.cluster, l.pruned, l.aggregated
        )?;
    }
    writeln!(out, "file\tbytes")?;
    for (name, bytes) in &s.files {
        writeln!(out, "{name}\t{bytes}")?;
    }
    writeln!(out, "total_bytes\t{}", s.total_bytes)?;
    writeln!(out, "deltas\t{}", s.deltas.len())?;
    for d in &s.deltas {
        writeln!(out, "delta\t{}\t{}\t{}", d.dir, d.kind.suffix(), d.edges)?;
    }
    if s.reload_recommended {
        writeln!(out, "reload_recommended\ttrue")?;
    }
    Ok(())
}
