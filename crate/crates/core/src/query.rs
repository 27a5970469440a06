//! Pivoted queries: log records become a table whose rows are loop contexts
//! across all versions and whose columns are the requested value names.
//!
//! Join semantics:
//! - names logged by the same file join on (projid, tstamp, filename, shared
//!   loop dims); coarser-grain values broadcast to finer rows;
//! - names from different files first reduce to their latest row per
//!   (projid, loop dims) and then join on (projid, shared loop dims), so
//!   records of one pipeline invocation align and later invocations shadow
//!   earlier ones; the row tstamp is the max of the contributing tstamps and
//!   the filename column is dropped;
//! - every join is a full outer join: missing metadata surfaces as nulls so
//!   hindsight replay can backfill it.

use std::collections::{BTreeSet, HashMap};

use crate::clock::Timestamp;
use crate::error::{FlorError, Result};
use crate::store::{ScanFilter, Store};

/// Checkpoint column consulted by [`best_checkpoint`].
pub const CHECKPOINT_NAME: &str = "model";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PivotTable {
    /// projid, tstamp, optional filename, then loop names outer-to-inner.
    pub dim_columns: Vec<String>,
    /// Requested names, in argument order.
    pub value_columns: Vec<String>,
    /// Text cells; `None` renders as an empty (null) field.
    pub rows: Vec<Vec<Option<String>>>,
}

// --- internal frame ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Dim {
    value: String,
    ord: u64,
}

#[derive(Debug, Clone)]
struct Cell {
    value: String,
    seq: u64,
}

#[derive(Debug, Clone)]
struct FRow {
    projid: String,
    tstamp: Timestamp,
    filename: String,
    dims: Vec<Option<Dim>>,
    vals: Vec<Option<Cell>>,
    last_seq: u64,
}

#[derive(Debug, Clone)]
struct Frame {
    loop_cols: Vec<String>,
    rows: Vec<FRow>,
}

/// (projid, tstamp, filename, dims, cell)
type RelRow = (String, Timestamp, String, Vec<Option<Dim>>, Cell);
/// (projid, tstamp, filename, dim values)
type RelKey = (String, Timestamp, String, Vec<Option<String>>);

#[derive(Debug, Clone)]
struct NameRel {
    files: BTreeSet<String>,
    loop_cols: Vec<String>,
    rows: Vec<RelRow>,
}

fn dim_eq(a: &Option<Dim>, b: &Option<Dim>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x.value == y.value,
        _ => false,
    }
}

fn known_names(store: &Store) -> Vec<String> {
    let mut names: Vec<String> = store
        .logs()
        .iter()
        .map(|r| r.value_name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    names.sort();
    names
}

/// Loop-name chain of one record, outer to inner: (loop_name, value, ordinal).
fn ctx_chain(store: &Store, rec: &crate::store::LogRecord) -> Result<Vec<(String, String, u64)>> {
    let mut chain = Vec::new();
    let mut ctx = rec.ctx_id;
    while ctx != 0 {
        let it = store
            .lookup_loop(rec.tstamp, &rec.filename, ctx)
            .ok_or_else(|| {
                FlorError::Integrity(format!(
                    "record '{}' references missing ctx {}",
                    rec.value_name, ctx
                ))
            })?;
        chain.push((it.loop_name.clone(), it.iteration_value.clone(), it.loop_iteration));
        ctx = it.parent_ctx_id;
    }
    chain.reverse();
    Ok(chain)
}

/// Ordered loop-dimension list of `name`, per source filename. Mixed depths
/// within one file resolve to the deepest observed path (latest record wins
/// ties).
pub fn dims_of(store: &Store, name: &str) -> Result<Vec<(String, Vec<String>)>> {
    let recs = store.scan(&ScanFilter::by_name(name));
    if recs.is_empty() {
        return Err(FlorError::UnknownName {
            name: name.to_string(),
            known: known_names(store),
        });
    }
    // depth, (tstamp, seq) of the winning record, and its path
    type Deepest = (usize, (Timestamp, u64), Vec<String>);
    let mut best: HashMap<String, Deepest> = HashMap::new();
    for rec in &recs {
        let chain = ctx_chain(store, rec)?;
        let path: Vec<String> = chain.iter().map(|(n, _, _)| n.clone()).collect();
        let rank = (rec.tstamp, rec.seq);
        match best.get(&rec.filename) {
            Some((len, r, _)) if path.len() < *len || (path.len() == *len && rank <= *r) => {}
            _ => {
                best.insert(rec.filename.clone(), (path.len(), rank, path));
            }
        }
    }
    let mut out: Vec<(String, Vec<String>)> = best
        .into_iter()
        .map(|(f, (_, _, path))| (f, path))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Merge `extra` into `cols` preserving relative order, first appearance wins.
fn merge_cols(cols: &mut Vec<String>, extra: &[String]) {
    for c in extra {
        if !cols.iter().any(|x| x == c) {
            cols.push(c.clone());
        }
    }
}

fn name_relation(store: &Store, name: &str) -> Result<NameRel> {
    let paths = dims_of(store, name)?;
    let mut loop_cols: Vec<String> = Vec::new();
    for (_, path) in &paths {
        merge_cols(&mut loop_cols, path);
    }
    let files: BTreeSet<String> = paths.iter().map(|(f, _)| f.clone()).collect();

    // expand each record, align its chain to the column list by loop name
    let mut dedup: HashMap<RelKey, (Vec<Option<Dim>>, Cell)> = HashMap::new();
    for rec in store.scan(&ScanFilter::by_name(name)) {
        let chain = ctx_chain(store, &rec)?;
        let mut dims: Vec<Option<Dim>> = Vec::with_capacity(loop_cols.len());
        let mut cursor = 0;
        for col in &loop_cols {
            let found = chain[cursor.min(chain.len())..]
                .iter()
                .position(|(n, _, _)| n == col)
                .map(|off| cursor + off);
            match found {
                Some(pos) => {
                    let (_, value, ord) = &chain[pos];
                    dims.push(Some(Dim {
                        value: value.clone(),
                        ord: *ord,
                    }));
                    cursor = pos + 1;
                }
                None => dims.push(None),
            }
        }
        let key = (
            rec.projid.clone(),
            rec.tstamp,
            rec.filename.clone(),
            dims.iter()
                .map(|d| d.as_ref().map(|d| d.value.clone()))
                .collect(),
        );
        let cell = Cell {
            value: rec.value.clone(),
            seq: rec.seq,
        };
        match dedup.get(&key) {
            Some((_, existing)) if existing.seq >= cell.seq => {}
            _ => {
                dedup.insert(key, (dims, cell));
            }
        }
    }
    let mut rows: Vec<RelRow> = dedup
        .into_iter()
        .map(|((projid, tstamp, filename, _), (dims, cell))| (projid, tstamp, filename, dims, cell))
        .collect();
    rows.sort_by(|a, b| {
        (&a.0, a.1, &a.2, a.4.seq)
            .cmp(&(&b.0, b.1, &b.2, b.4.seq))
            .then_with(|| dim_values(&a.3).cmp(&dim_values(&b.3)))
    });
    Ok(NameRel {
        files,
        loop_cols,
        rows,
    })
}

fn frame_from_rel(rel: &NameRel, n_vals: usize, val_idx: usize) -> Frame {
    let rows = rel
        .rows
        .iter()
        .map(|(projid, tstamp, filename, dims, cell)| {
            let mut vals = vec![None; n_vals];
            vals[val_idx] = Some(cell.clone());
            FRow {
                projid: projid.clone(),
                tstamp: *tstamp,
                filename: filename.clone(),
                dims: dims.clone(),
                vals,
                last_seq: cell.seq,
            }
        })
        .collect();
    Frame {
        loop_cols: rel.loop_cols.clone(),
        rows,
    }
}

fn align_dims(row_cols: &[String], dims: &[Option<Dim>], out_cols: &[String]) -> Vec<Option<Dim>> {
    out_cols
        .iter()
        .map(|c| {
            row_cols
                .iter()
                .position(|x| x == c)
                .and_then(|i| dims[i].clone())
        })
        .collect()
}

/// Full outer join of two frames on `projid` (+ tstamp/filename when
/// `same_file`) and the loop columns shared by both sides.
fn join_frames(a: &Frame, b: &Frame, same_file: bool) -> Frame {
    let shared: Vec<String> = a
        .loop_cols
        .iter()
        .filter(|c| b.loop_cols.contains(c))
        .cloned()
        .collect();
    let mut out_cols = a.loop_cols.clone();
    merge_cols(&mut out_cols, &b.loop_cols);

    let a_shared_idx: Vec<usize> = shared
        .iter()
        .map(|c| a.loop_cols.iter().position(|x| x == c).expect("shared col"))
        .collect();
    let b_shared_idx: Vec<usize> = shared
        .iter()
        .map(|c| b.loop_cols.iter().position(|x| x == c).expect("shared col"))
        .collect();

    let mut rows = Vec::new();
    let mut b_matched = vec![false; b.rows.len()];
    for ar in &a.rows {
        let mut matched = false;
        for (bi, br) in b.rows.iter().enumerate() {
            if ar.projid != br.projid {
                continue;
            }
            if same_file && (ar.tstamp != br.tstamp || ar.filename != br.filename) {
                continue;
            }
            let dims_match = a_shared_idx
                .iter()
                .zip(&b_shared_idx)
                .all(|(&ai, &bi2)| dim_eq(&ar.dims[ai], &br.dims[bi2]));
            if !dims_match {
                continue;
            }
            matched = true;
            b_matched[bi] = true;
            let a_dims = align_dims(&a.loop_cols, &ar.dims, &out_cols);
            let b_dims = align_dims(&b.loop_cols, &br.dims, &out_cols);
            let dims = a_dims
                .into_iter()
                .zip(b_dims)
                .map(|(x, y)| x.or(y))
                .collect();
            let vals = ar
                .vals
                .iter()
                .zip(&br.vals)
                .map(|(x, y)| x.clone().or_else(|| y.clone()))
                .collect();
            rows.push(FRow {
                projid: ar.projid.clone(),
                tstamp: ar.tstamp.max(br.tstamp),
                filename: if ar.filename == br.filename {
                    ar.filename.clone()
                } else {
                    String::new()
                },
                dims,
                vals,
                last_seq: ar.last_seq.max(br.last_seq),
            });
        }
        if !matched {
            rows.push(FRow {
                dims: align_dims(&a.loop_cols, &ar.dims, &out_cols),
                ..ar.clone()
            });
        }
    }
    for (bi, br) in b.rows.iter().enumerate() {
        if !b_matched[bi] {
            rows.push(FRow {
                dims: align_dims(&b.loop_cols, &br.dims, &out_cols),
                ..br.clone()
            });
        }
    }
    Frame {
        loop_cols: out_cols,
        rows,
    }
}

/// Keep only the latest row per (projid, loop-dim values): cross-file joins
/// align on the most recent emission of each context.
fn reduce_latest(frame: &Frame) -> Frame {
    let mut best: HashMap<(String, Vec<Option<String>>), FRow> = HashMap::new();
    for row in &frame.rows {
        let key = (
            row.projid.clone(),
            row.dims
                .iter()
                .map(|d| d.as_ref().map(|d| d.value.clone()))
                .collect(),
        );
        match best.get(&key) {
            Some(cur)
                if (cur.tstamp, &cur.filename, cur.last_seq)
                    >= (row.tstamp, &row.filename, row.last_seq) => {}
            _ => {
                best.insert(key, row.clone());
            }
        }
    }
    let mut rows: Vec<FRow> = best.into_values().collect();
    rows.sort_by(|a, b| {
        (&a.projid, a.tstamp, &a.filename, a.last_seq)
            .cmp(&(&b.projid, b.tstamp, &b.filename, b.last_seq))
            .then_with(|| dim_values(&a.dims).cmp(&dim_values(&b.dims)))
    });
    Frame {
        loop_cols: frame.loop_cols.clone(),
        rows,
    }
}

fn dim_values(dims: &[Option<Dim>]) -> Vec<Option<&str>> {
    dims.iter()
        .map(|d| d.as_ref().map(|d| d.value.as_str()))
        .collect()
}

fn build_frame(store: &Store, names: &[String]) -> Result<(Frame, bool)> {
    // group names by source file set, preserving argument order
    let mut rels: Vec<NameRel> = Vec::new();
    for name in names {
        rels.push(name_relation(store, name)?);
    }
    let mut group_keys: Vec<BTreeSet<String>> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, rel) in rels.iter().enumerate() {
        match group_keys.iter().position(|k| *k == rel.files) {
            Some(g) => groups[g].push(i),
            None => {
                group_keys.push(rel.files.clone());
                groups.push(vec![i]);
            }
        }
    }

    let n_vals = names.len();
    let mut frames: Vec<Frame> = Vec::new();
    for members in &groups {
        let mut frame = frame_from_rel(&rels[members[0]], n_vals, members[0]);
        for &idx in &members[1..] {
            let next = frame_from_rel(&rels[idx], n_vals, idx);
            frame = join_frames(&frame, &next, true);
        }
        frames.push(frame);
    }

    let cross_file = frames.len() > 1;
    let mut acc = if cross_file {
        reduce_latest(&frames[0])
    } else {
        frames[0].clone()
    };
    for f in &frames[1..] {
        acc = join_frames(&acc, &reduce_latest(f), false);
    }

    let single_source = group_keys.len() == 1 && group_keys[0].len() == 1;
    Ok((acc, single_source))
}

fn sort_rows(frame: &mut Frame, with_filename: bool) {
    frame.rows.sort_by(|a, b| {
        let ka = (&a.projid, a.tstamp, with_filename.then_some(&a.filename));
        let kb = (&b.projid, b.tstamp, with_filename.then_some(&b.filename));
        ka.cmp(&kb).then_with(|| {
            for (x, y) in a.dims.iter().zip(&b.dims) {
                let ord = match (x, y) {
                    (None, None) => std::cmp::Ordering::Equal,
                    (None, Some(_)) => std::cmp::Ordering::Less,
                    (Some(_), None) => std::cmp::Ordering::Greater,
                    (Some(dx), Some(dy)) => dx.value.cmp(&dy.value),
                };
                if ord != std::cmp::Ordering::Equal {
                    return ord;
                }
            }
            std::cmp::Ordering::Equal
        })
    });
}

/// Pivot `names` into a table across all committed history.
pub fn dataframe(store: &Store, names: &[String]) -> Result<PivotTable> {
    if names.is_empty() {
        return Err(FlorError::Invalid("dataframe needs at least one name".into()));
    }
    if store.logs().is_empty() {
        return Ok(PivotTable {
            dim_columns: vec!["projid".into(), "tstamp".into()],
            value_columns: names.to_vec(),
            rows: Vec::new(),
        });
    }
    let (mut frame, single_source) = build_frame(store, names)?;
    sort_rows(&mut frame, single_source);

    let mut dim_columns = vec!["projid".to_string(), "tstamp".to_string()];
    if single_source {
        dim_columns.push("filename".to_string());
    }
    dim_columns.extend(frame.loop_cols.iter().cloned());

    let rows = frame
        .rows
        .iter()
        .map(|r| {
            let mut out: Vec<Option<String>> = Vec::with_capacity(dim_columns.len() + names.len());
            out.push(Some(r.projid.clone()));
            out.push(Some(r.tstamp.to_string()));
            if single_source {
                out.push(Some(r.filename.clone()));
            }
            for d in &r.dims {
                out.push(d.as_ref().map(|d| d.value.clone()));
            }
            for v in &r.vals {
                out.push(v.as_ref().map(|c| c.value.clone()));
            }
            out
        })
        .collect();

    Ok(PivotTable {
        dim_columns,
        value_columns: names.to_vec(),
        rows,
    })
}

/// Blob hash of the stored checkpoint whose `metric` is best. Ties break to
/// the latest tstamp, then the deepest iteration. `None` when no row has
/// both a metric and a checkpoint; the caller supplies the fallback.
pub fn best_checkpoint(store: &Store, metric: &str, maximize: bool) -> Result<Option<String>> {
    if store.logs().is_empty() {
        return Ok(None);
    }
    let names = vec![metric.to_string(), CHECKPOINT_NAME.to_string()];
    let (frame, _) = match build_frame(store, &names) {
        Ok(f) => f,
        Err(FlorError::UnknownName { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut best: Option<(f64, Timestamp, Vec<u64>, String)> = None;
    for row in &frame.rows {
        let (Some(m), Some(ck)) = (&row.vals[0], &row.vals[1]) else {
            continue;
        };
        let value: f64 = m.value.parse().map_err(|_| {
            FlorError::Data(format!(
                "metric '{metric}' cell {:?} at tstamp {} is not a float",
                m.value, row.tstamp
            ))
        })?;
        let ords: Vec<u64> = row
            .dims
            .iter()
            .map(|d| d.as_ref().map(|d| d.ord).unwrap_or(0))
            .collect();
        let better = match &best {
            None => true,
            Some((bv, bt, bo, _)) => {
                if value != *bv {
                    if maximize {
                        value > *bv
                    } else {
                        value < *bv
                    }
                } else {
                    (row.tstamp, &ords) > (*bt, bo)
                }
            }
        };
        if better {
            best = Some((value, row.tstamp, ords, ck.value.clone()));
        }
    }
    Ok(best.map(|(_, _, _, hash)| hash))
}

// --- rendering ----------------------------------------------------------------

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// RFC 4180 CSV: header then rows, CRLF line endings, nulls as empty fields.
pub fn render_csv(table: &PivotTable) -> String {
    let mut out = String::new();
    let header: Vec<String> = table
        .dim_columns
        .iter()
        .chain(table.value_columns.iter())
        .map(|c| csv_field(c))
        .collect();
    out.push_str(&header.join(","));
    out.push_str("\r\n");
    for row in &table.rows {
        let fields: Vec<String> = row
            .iter()
            .map(|c| csv_field(c.as_deref().unwrap_or("")))
            .collect();
        out.push_str(&fields.join(","));
        out.push_str("\r\n");
    }
    out
}

/// Human-readable aligned table.
pub fn render_aligned(table: &PivotTable) -> String {
    let headers: Vec<&str> = table
        .dim_columns
        .iter()
        .chain(table.value_columns.iter())
        .map(|s| s.as_str())
        .collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &table.rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.as_deref().unwrap_or("").len());
        }
    }
    let mut out = String::new();
    let fmt_row = |cells: Vec<&str>, widths: &[usize]| -> String {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&fmt_row(headers.clone(), &widths));
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  "),
    );
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<&str> = row.iter().map(|c| c.as_deref().unwrap_or("")).collect();
        out.push_str(&fmt_row(cells, &widths));
        out.push('\n');
    }
    out
}
