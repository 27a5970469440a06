//! Restricted Makefile dialect: `target: deps` rules, tab-indented recipes,
//! `VAR = value` assignments with `$(VAR)` expansion, `@` echo suppression,
//! and `#` comments. Pattern rules, `include`, and function calls are
//! rejected rather than mis-parsed.
//!
//! Staleness follows Make: a target is stale when its marker file (the file
//! named `target`) is missing or any dependency is newer, and staleness
//! propagates to dependents.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::FLOR_DIR;
use crate::error::{FlorError, Result};

pub const BUILD_DEPS_FILE: &str = "build_deps.jsonl";
/// Trailing comment on a rule line marking the target for checkpoint
/// memoization during replay.
pub const CACHED_DIRECTIVE: &str = "flor:cached";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeLine {
    pub cmd: String,
    /// `@` prefix: suppress echoing the command.
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildTarget {
    pub target: String,
    pub deps: Vec<String>,
    pub cmds: Vec<RecipeLine>,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BuildGraph {
    /// Version the graph was parsed at; empty until persisted.
    pub vid: String,
    pub targets: Vec<BuildTarget>,
    pub default_target: Option<String>,
}

impl BuildGraph {
    pub fn target(&self, name: &str) -> Option<&BuildTarget> {
        self.targets.iter().find(|t| t.target == name)
    }

    pub fn has_target(&self, name: &str) -> bool {
        self.target(name).is_some()
    }
}

// --- parsing -----------------------------------------------------------------

pub fn parse_makefile(text: &str) -> Result<BuildGraph> {
    let mut vars: HashMap<String, String> = HashMap::new();
    let mut graph = BuildGraph::default();
    let mut current: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;

        if let Some(body) = raw.strip_prefix('\t') {
            if body.trim().is_empty() {
                continue;
            }
            let Some(cur) = current else {
                return Err(FlorError::Parse {
                    line: line_no,
                    msg: "recipe line without preceding rule".into(),
                });
            };
            let (quiet, cmd) = match body.strip_prefix('@') {
                Some(rest) => (true, rest),
                None => (false, body),
            };
            graph.targets[cur].cmds.push(RecipeLine {
                cmd: cmd.to_string(),
                quiet,
            });
            continue;
        }

        // outside recipes, comments end the line; `# flor:cached` on a rule
        // line is a directive, not a comment
        let (code, comment) = match raw.find('#') {
            Some(pos) => (&raw[..pos], raw[pos + 1..].trim()),
            None => (raw, ""),
        };
        let line = code.trim();
        if line.is_empty() {
            continue;
        }

        if line.starts_with("include ") || line == "include" {
            return Err(FlorError::Unsupported {
                line: line_no,
                construct: "include directive".into(),
            });
        }

        if let Some((name, value)) = split_assignment(line) {
            vars.insert(name.to_string(), value.to_string());
            current = None;
            continue;
        }

        let Some(colon) = line.find(':') else {
            return Err(FlorError::Parse {
                line: line_no,
                msg: format!("expected rule or assignment, got {line:?}"),
            });
        };
        let target_part = expand(line[..colon].trim(), &vars, line_no)?;
        let deps_part = expand(line[colon + 1..].trim(), &vars, line_no)?;
        let target_words: Vec<&str> = target_part.split_whitespace().collect();
        if target_words.len() != 1 {
            return Err(FlorError::Unsupported {
                line: line_no,
                construct: format!("rule with {} targets", target_words.len()),
            });
        }
        let target = target_words[0].to_string();
        if target.contains('%') || deps_part.contains('%') {
            return Err(FlorError::Unsupported {
                line: line_no,
                construct: "pattern rule".into(),
            });
        }
        if graph.has_target(&target) {
            return Err(FlorError::Parse {
                line: line_no,
                msg: format!("target '{target}' declared twice"),
            });
        }
        let deps: Vec<String> = deps_part
            .split_whitespace()
            .map(|d| d.to_string())
            .collect();
        if graph.default_target.is_none() {
            graph.default_target = Some(target.clone());
        }
        graph.targets.push(BuildTarget {
            target,
            deps,
            cmds: Vec::new(),
            cached: comment == CACHED_DIRECTIVE,
        });
        current = Some(graph.targets.len() - 1);
    }

    check_acyclic(&graph)?;
    Ok(graph)
}

fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let eq = line.find('=')?;
    if let Some(colon) = line.find(':') {
        // `a: b = c` is a rule; `A := c` is an assignment
        if colon < eq && colon + 1 != eq {
            return None;
        }
    }
    let name_end = if eq > 0 && line.as_bytes()[eq - 1] == b':' {
        eq - 1
    } else {
        eq
    };
    let name = line[..name_end].trim();
    if name.is_empty() || name.contains(char::is_whitespace) {
        return None;
    }
    Some((name, line[eq + 1..].trim()))
}

/// Expand `$(VAR)` / `${VAR}` references; undefined variables expand empty,
/// function calls (whitespace inside the parens) are unsupported.
fn expand(text: &str, vars: &HashMap<String, String>, line_no: usize) -> Result<String> {
    let mut out = text.to_string();
    for _ in 0..10 {
        let Some(start) = out.find("$(").or_else(|| out.find("${")) else {
            return Ok(out);
        };
        let close = if out.as_bytes()[start + 1] == b'(' { ')' } else { '}' };
        let Some(len) = out[start + 2..].find(close) else {
            return Err(FlorError::Parse {
                line: line_no,
                msg: "unterminated variable reference".into(),
            });
        };
        let name = &out[start + 2..start + 2 + len];
        if name.contains(char::is_whitespace) {
            return Err(FlorError::Unsupported {
                line: line_no,
                construct: format!("function call $({name})"),
            });
        }
        let value = vars.get(name).cloned().unwrap_or_default();
        out.replace_range(start..start + 2 + len + 1, &value);
    }
    Err(FlorError::Parse {
        line: line_no,
        msg: "variable expansion too deep".into(),
    })
}

fn check_acyclic(graph: &BuildGraph) -> Result<()> {
    fn visit(
        graph: &BuildGraph,
        name: &str,
        path: &mut Vec<String>,
        done: &mut HashSet<String>,
    ) -> Result<()> {
        if done.contains(name) {
            return Ok(());
        }
        if let Some(pos) = path.iter().position(|p| p == name) {
            let mut cycle: Vec<String> = path[pos..].to_vec();
            cycle.push(name.to_string());
            return Err(FlorError::Cycle { cycle });
        }
        path.push(name.to_string());
        if let Some(t) = graph.target(name) {
            for dep in &t.deps {
                if graph.has_target(dep) {
                    visit(graph, dep, path, done)?;
                }
            }
        }
        path.pop();
        done.insert(name.to_string());
        Ok(())
    }
    let mut done = HashSet::new();
    for t in &graph.targets {
        visit(graph, &t.target, &mut Vec::new(), &mut done)?;
    }
    Ok(())
}

/// Render a graph back to the dialect; `parse(print(parse(x)))` is a fixpoint.
pub fn print_makefile(graph: &BuildGraph) -> String {
    let mut out = String::new();
    for t in &graph.targets {
        out.push_str(&t.target);
        out.push(':');
        for dep in &t.deps {
            out.push(' ');
            out.push_str(dep);
        }
        if t.cached {
            out.push_str(" # ");
            out.push_str(CACHED_DIRECTIVE);
        }
        out.push('\n');
        for line in &t.cmds {
            out.push('\t');
            if line.quiet {
                out.push('@');
            }
            out.push_str(&line.cmd);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

// --- ordering and staleness ----------------------------------------------------

/// Depth-first postorder from `goal`, dependencies before dependents,
/// deps visited in declaration order.
pub fn topo_order(graph: &BuildGraph, goal: &str) -> Result<Vec<String>> {
    if !graph.has_target(goal) {
        return Err(FlorError::UnknownTarget(goal.to_string()));
    }
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    fn visit(graph: &BuildGraph, name: &str, seen: &mut HashSet<String>, order: &mut Vec<String>) {
        if !seen.insert(name.to_string()) {
            return;
        }
        if let Some(t) = graph.target(name) {
            for dep in &t.deps {
                if graph.has_target(dep) {
                    visit(graph, dep, seen, order);
                }
            }
        }
        order.push(name.to_string());
    }
    visit(graph, goal, &mut seen, &mut order);
    Ok(order)
}

/// File modification times as seen by staleness computation.
pub trait FileMtimes {
    /// Nanoseconds since epoch for an existing path, `None` when absent.
    fn mtime(&self, path: &str) -> Option<u128>;
}

/// Real-filesystem mtimes relative to a project root.
pub struct FsMtimes {
    root: PathBuf,
}

impl FsMtimes {
    pub fn new(root: &Path) -> Self {
        FsMtimes {
            root: root.to_path_buf(),
        }
    }
}

impl FileMtimes for FsMtimes {
    fn mtime(&self, path: &str) -> Option<u128> {
        std::fs::metadata(self.root.join(path))
            .and_then(|m| m.modified())
            .ok()
            .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
            .map(|d| d.as_nanos())
    }
}

/// Map-backed mtimes for tests.
#[derive(Debug, Default, Clone)]
pub struct MapMtimes(pub HashMap<String, u128>);

impl FileMtimes for MapMtimes {
    fn mtime(&self, path: &str) -> Option<u128> {
        self.0.get(path).copied()
    }
}

/// Targets on `goal`'s closure that must re-run.
pub fn stale_targets(
    graph: &BuildGraph,
    fs: &dyn FileMtimes,
    goal: &str,
) -> Result<BTreeSet<String>> {
    let order = topo_order(graph, goal)?;
    let mut stale: BTreeSet<String> = BTreeSet::new();
    for name in &order {
        let t = graph.target(name).expect("topo yields known targets");
        let marker = fs.mtime(name);
        let mut is_stale = marker.is_none();
        for dep in &t.deps {
            if graph.has_target(dep) {
                if stale.contains(dep) {
                    is_stale = true;
                } else if let (Some(m), Some(d)) = (marker, fs.mtime(dep)) {
                    if d > m {
                        is_stale = true;
                    }
                }
            } else {
                match fs.mtime(dep) {
                    None => return Err(FlorError::MissingSource(dep.clone())),
                    Some(d) => {
                        if marker.is_none() || d > marker.expect("checked") {
                            is_stale = true;
                        }
                    }
                }
            }
        }
        if is_stale {
            stale.insert(name.clone());
        }
    }
    Ok(stale)
}

/// Recipe lines the runner would execute for `goal`, in execution order.
pub fn would_run(graph: &BuildGraph, fs: &dyn FileMtimes, goal: &str) -> Result<Vec<String>> {
    let stale = stale_targets(graph, fs, goal)?;
    let mut out = Vec::new();
    for name in topo_order(graph, goal)? {
        if stale.contains(&name) {
            let t = graph.target(&name).expect("known target");
            out.extend(t.cmds.iter().map(|c| c.cmd.clone()));
        }
    }
    Ok(out)
}

// --- build_deps persistence ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildDepsRow {
    pub vid: String,
    pub target: String,
    pub deps: Vec<String>,
    pub cmds: Vec<RecipeLine>,
    pub cached: bool,
}

/// Append-only `build_deps` rows, one batch per committed version.
#[derive(Debug)]
pub struct BuildDepsStore {
    path: PathBuf,
    rows: Vec<BuildDepsRow>,
}

impl BuildDepsStore {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(FLOR_DIR).join(BUILD_DEPS_FILE);
        let mut rows = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| FlorError::io(&path, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                rows.push(serde_json::from_str(line)?);
            }
        }
        Ok(BuildDepsStore { path, rows })
    }

    pub fn append_graph(&mut self, vid: &str, graph: &BuildGraph) -> Result<()> {
        if self.rows.iter().any(|r| r.vid == vid) {
            return Ok(());
        }
        use std::io::Write;
        let dir = self.path.parent().expect("build_deps path has parent");
        std::fs::create_dir_all(dir).map_err(|e| FlorError::io(dir, e))?;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| FlorError::io(&self.path, e))?;
        for t in &graph.targets {
            let row = BuildDepsRow {
                vid: vid.to_string(),
                target: t.target.clone(),
                deps: t.deps.clone(),
                cmds: t.cmds.clone(),
                cached: t.cached,
            };
            let mut line = serde_json::to_string(&row)?;
            line.push('\n');
            f.write_all(line.as_bytes())
                .map_err(|e| FlorError::io(&self.path, e))?;
            self.rows.push(row);
        }
        Ok(())
    }

    pub fn for_vid(&self, vid: &str) -> Vec<&BuildDepsRow> {
        self.rows.iter().filter(|r| r.vid == vid).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG4: &str = "# Makefile\n\nprep:\n\tpython prep.py\n\ninfer: prep\n\tpython infer.py\n\nrun: infer\n\tflask run\n\ntrain: prep\n\tpython train.py\n";

    #[test]
    fn parses_simple_rule() {
        let g = parse_makefile("infer: prep\n\tpython infer.py\n").unwrap();
        assert_eq!(g.targets.len(), 1);
        assert_eq!(g.targets[0].target, "infer");
        assert_eq!(g.targets[0].deps, vec!["prep"]);
        assert_eq!(g.targets[0].cmds.len(), 1);
        assert_eq!(g.targets[0].cmds[0].cmd, "python infer.py");
        assert!(!g.targets[0].cmds[0].quiet);
    }

    #[test]
    fn empty_input_gives_empty_graph() {
        let g = parse_makefile("").unwrap();
        assert!(g.targets.is_empty());
        assert_eq!(g.default_target, None);
    }

    #[test]
    fn variable_expansion_in_deps() {
        let text = "PDFS = a.pdf b.pdf\n\nprocess_pdfs: $(PDFS) pdf_demux.py\n\t@python pdf_demux.py\n";
        let g = parse_makefile(text).unwrap();
        assert_eq!(g.targets[0].deps, vec!["a.pdf", "b.pdf", "pdf_demux.py"]);
        assert!(g.targets[0].cmds[0].quiet);
        assert_eq!(g.targets[0].cmds[0].cmd, "python pdf_demux.py");
    }

    #[test]
    fn fig4_shape() {
        let g = parse_makefile(FIG4).unwrap();
        assert_eq!(g.default_target.as_deref(), Some("prep"));
        assert_eq!(
            g.targets.iter().map(|t| t.target.as_str()).collect::<Vec<_>>(),
            vec!["prep", "infer", "run", "train"]
        );
        assert_eq!(topo_order(&g, "run").unwrap(), vec!["prep", "infer", "run"]);
    }

    #[test]
    fn recipe_without_rule_is_an_error_with_line_number() {
        match parse_makefile("\techo hi\n") {
            Err(FlorError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn cycles_are_named() {
        let text = "a: b\n\techo a\nb: a\n\techo b\n";
        match parse_makefile(text) {
            Err(FlorError::Cycle { cycle }) => {
                assert!(cycle.len() >= 3);
                assert_eq!(cycle.first(), cycle.last());
            }
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_constructs_fail_loudly() {
        assert!(matches!(
            parse_makefile("include other.mk\n"),
            Err(FlorError::Unsupported { .. })
        ));
        assert!(matches!(
            parse_makefile("%.o: %.c\n\tcc $<\n"),
            Err(FlorError::Unsupported { .. })
        ));
        assert!(matches!(
            parse_makefile("x: $(shell ls)\n"),
            Err(FlorError::Unsupported { .. })
        ));
    }

    #[test]
    fn cached_directive_sets_flag() {
        let g = parse_makefile("train: prep # flor:cached\n\tpython train.py\n").unwrap();
        assert!(g.targets[0].cached);
        let g = parse_makefile("train: prep # a comment\n\tpython train.py\n").unwrap();
        assert!(!g.targets[0].cached);
    }

    #[test]
    fn topo_unknown_goal() {
        let g = parse_makefile(FIG4).unwrap();
        assert!(matches!(
            topo_order(&g, "nope"),
            Err(FlorError::UnknownTarget(_))
        ));
    }

    #[test]
    fn topo_leaf_and_diamond() {
        let g = parse_makefile("leaf:\n\techo leaf\n").unwrap();
        assert_eq!(topo_order(&g, "leaf").unwrap(), vec!["leaf"]);

        // a depends on b and c, both depend on d
        let g = parse_makefile("a: b c\nb: d\nc: d\nd:\n").unwrap();
        assert_eq!(topo_order(&g, "a").unwrap(), vec!["d", "b", "c", "a"]);
    }

    #[test]
    fn print_parse_fixpoint() {
        let text = "PDFS = a.pdf b.pdf\nprocess_pdfs: $(PDFS) x.py # flor:cached\n\t@echo hi\n\ttouch process_pdfs\n\nrun: process_pdfs\n\t@flask run\n";
        let g1 = parse_makefile(text).unwrap();
        let g2 = parse_makefile(&print_makefile(&g1)).unwrap();
        assert_eq!(g1, g2);
    }

    fn mt(pairs: &[(&str, u128)]) -> MapMtimes {
        MapMtimes(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    const FIG6_EDGES: &str = "process_pdfs: a.pdf b.pdf pdf_demux.py\n\t@python pdf_demux.py\n\t@touch process_pdfs\nfeaturize: process_pdfs featurize.py\n\t@python featurize.py\n\t@touch featurize\ntrain: featurize hand_label train.py\n\t@python train.py\n\t@touch train\nmodel.pth: train export_ckpt.py\n\t@python export_ckpt.py\ninfer: model.pth infer.py\n\t@python infer.py\n\t@touch infer\nhand_label: label_by_hand.py\n\t@python label_by_hand.py\n\t@touch hand_label\nrun: featurize infer\n\t@python review.py\n\t@touch run\n";

    fn fresh_state() -> MapMtimes {
        // sources at t=1, everything built in dependency order afterwards
        mt(&[
            ("a.pdf", 1),
            ("b.pdf", 1),
            ("pdf_demux.py", 1),
            ("featurize.py", 1),
            ("train.py", 1),
            ("export_ckpt.py", 1),
            ("infer.py", 1),
            ("label_by_hand.py", 1),
            ("process_pdfs", 10),
            ("featurize", 11),
            ("hand_label", 12),
            ("train", 13),
            ("model.pth", 14),
            ("infer", 15),
            ("run", 16),
        ])
    }

    #[test]
    fn stale_fixpoint_after_full_run() {
        let g = parse_makefile(FIG6_EDGES).unwrap();
        assert!(stale_targets(&g, &fresh_state(), "run").unwrap().is_empty());
    }

    #[test]
    fn touching_featurize_py_invalidates_its_closure() {
        let g = parse_makefile(FIG6_EDGES).unwrap();
        let mut fs = fresh_state();
        fs.0.insert("featurize.py".into(), 100);
        let stale = stale_targets(&g, &fs, "run").unwrap();
        let expect: BTreeSet<String> = ["featurize", "train", "model.pth", "infer", "run"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(stale, expect);
    }

    #[test]
    fn cold_start_is_the_full_closure() {
        let g = parse_makefile(FIG6_EDGES).unwrap();
        let fs = mt(&[
            ("a.pdf", 1),
            ("b.pdf", 1),
            ("pdf_demux.py", 1),
            ("featurize.py", 1),
            ("train.py", 1),
            ("export_ckpt.py", 1),
            ("infer.py", 1),
            ("label_by_hand.py", 1),
        ]);
        let stale = stale_targets(&g, &fs, "run").unwrap();
        assert_eq!(stale.len(), 7);
    }

    #[test]
    fn missing_source_is_an_error() {
        let g = parse_makefile("x: missing.txt\n\techo x\n").unwrap();
        assert!(matches!(
            stale_targets(&g, &mt(&[]), "x"),
            Err(FlorError::MissingSource(_))
        ));
    }

    #[test]
    fn staleness_is_monotone_in_changed_files() {
        let g = parse_makefile(FIG6_EDGES).unwrap();
        let base = fresh_state();
        let files: Vec<&str> = vec!["featurize.py", "train.py", "a.pdf", "label_by_hand.py"];
        let mut prev = stale_targets(&g, &base, "run").unwrap();
        let mut fs = base;
        for (i, f) in files.iter().enumerate() {
            fs.0.insert(f.to_string(), 100 + i as u128);
            let next = stale_targets(&g, &fs, "run").unwrap();
            assert!(next.is_superset(&prev), "stale set shrank after touching {f}");
            prev = next;
        }
    }
}
