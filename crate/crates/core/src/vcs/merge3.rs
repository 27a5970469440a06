//! Line-oriented three-way merge.
//!
//! Sync regions are found by diffing base against each side and intersecting
//! the matching blocks; regions between sync points resolve to one side when
//! only that side changed, and to a conflict when both changed differently.

use std::ops::Range;

/// Line ranges of one conflicting region in all three inputs (0-based,
/// half-open).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictHunk {
    pub base: Range<usize>,
    pub ours: Range<usize>,
    pub theirs: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Merge3Result {
    Merged(String),
    Conflict(Vec<ConflictHunk>),
}

/// Deterministic three-way line merge of text files.
pub fn merge3(base: &str, ours: &str, theirs: &str) -> Merge3Result {
    let b: Vec<&str> = split_lines(base);
    let a: Vec<&str> = split_lines(ours);
    let c: Vec<&str> = split_lines(theirs);

    let mut merged = String::new();
    let mut conflicts = Vec::new();

    let mut iz = 0; // cursor into base
    let mut ia = 0; // cursor into ours
    let mut ic = 0; // cursor into theirs
    for (zmatch, zend, amatch, aend, cmatch, cend) in sync_regions(&b, &a, &c) {
        if ia < amatch || ic < cmatch {
            let ours_changed = b[iz..zmatch] != a[ia..amatch];
            let theirs_changed = b[iz..zmatch] != c[ic..cmatch];
            let sides_equal = a[ia..amatch] == c[ic..cmatch];
            if sides_equal || (ours_changed && !theirs_changed) {
                extend(&mut merged, &a[ia..amatch]);
            } else if theirs_changed && !ours_changed {
                extend(&mut merged, &c[ic..cmatch]);
            } else {
                conflicts.push(ConflictHunk {
                    base: iz..zmatch,
                    ours: ia..amatch,
                    theirs: ic..cmatch,
                });
            }
        }
        extend(&mut merged, &b[zmatch..zend]);
        iz = zend;
        ia = aend;
        ic = cend;
    }

    if conflicts.is_empty() {
        Merge3Result::Merged(merged)
    } else {
        Merge3Result::Conflict(conflicts)
    }
}

pub(crate) fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

fn extend(out: &mut String, lines: &[&str]) {
    for line in lines {
        out.push_str(line);
    }
}

/// Regions where both sides match the base:
/// (base_start, base_end, ours_start, ours_end, theirs_start, theirs_end),
/// terminated by a zero-length sentinel at the ends of all three inputs.
fn sync_regions(
    base: &[&str],
    ours: &[&str],
    theirs: &[&str],
) -> Vec<(usize, usize, usize, usize, usize, usize)> {
    let amatches = matching_blocks(base, ours);
    let bmatches = matching_blocks(base, theirs);
    let mut out = Vec::new();
    let (mut ia, mut ib) = (0, 0);
    while ia < amatches.len() && ib < bmatches.len() {
        let (abase, amatch, alen) = amatches[ia];
        let (bbase, bmatch, blen) = bmatches[ib];
        let start = abase.max(bbase);
        let end = (abase + alen).min(bbase + blen);
        if start < end {
            let asub = amatch + (start - abase);
            let bsub = bmatch + (start - bbase);
            let len = end - start;
            out.push((start, end, asub, asub + len, bsub, bsub + len));
        }
        if abase + alen < bbase + blen {
            ia += 1;
        } else {
            ib += 1;
        }
    }
    out.push((
        base.len(),
        base.len(),
        ours.len(),
        ours.len(),
        theirs.len(),
        theirs.len(),
    ));
    out
}

/// Runs of equal elements in LCS order: (a_start, b_start, len), plus a
/// zero-length sentinel at the end. Common prefix and suffix are matched
/// outright so the quadratic LCS only sees the differing middle.
pub(crate) fn matching_blocks<T: PartialEq>(a: &[T], b: &[T]) -> Vec<(usize, usize, usize)> {
    let pre = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
    let max_suf = (a.len() - pre).min(b.len() - pre);
    let suf = (1..=max_suf)
        .take_while(|i| a[a.len() - i] == b[b.len() - i])
        .count();

    let mut blocks = Vec::new();
    if pre > 0 {
        blocks.push((0, 0, pre));
    }
    for (i, j, len) in lcs_blocks(&a[pre..a.len() - suf], &b[pre..b.len() - suf]) {
        blocks.push((i + pre, j + pre, len));
    }
    if suf > 0 {
        blocks.push((a.len() - suf, b.len() - suf, suf));
    }
    blocks.push((a.len(), b.len(), 0));
    blocks
}

fn lcs_blocks<T: PartialEq>(a: &[T], b: &[T]) -> Vec<(usize, usize, usize)> {
    let n = a.len();
    let m = b.len();
    // dp[i][j] = LCS length of a[i..] and b[j..]
    let width = m + 1;
    let mut dp = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i * width + j] = if a[i] == b[j] {
                dp[(i + 1) * width + j + 1] + 1
            } else {
                dp[(i + 1) * width + j].max(dp[i * width + j + 1])
            };
        }
    }
    let mut blocks = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut bi, mut bj, mut len) = (0, 0, 0usize);
    while i < n && j < m {
        if a[i] == b[j] && dp[i * width + j] == dp[(i + 1) * width + j + 1] + 1 {
            if len == 0 {
                bi = i;
                bj = j;
            }
            len += 1;
            i += 1;
            j += 1;
        } else {
            if len > 0 {
                blocks.push((bi, bj, len));
                len = 0;
            }
            if dp[(i + 1) * width + j] >= dp[i * width + j + 1] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }
    if len > 0 {
        blocks.push((bi, bj, len));
    }
    blocks
}
