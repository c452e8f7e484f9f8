//! Loader for sparse multi-user datasets.
//!
//! One example per line: `<user_id> <label> <idx>:<val> ...`, whitespace
//! separated, 0-based feature indices. Blank lines are skipped. Examples are
//! densified; the dimension is one past the largest index unless declared.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use flde_core::{Example, TaskKind, UserShard};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparseOptions {
    pub num_users: usize,
    pub dim: Option<usize>,
    pub task: TaskKind,
    pub train_per_user: usize,
    pub validation_per_user: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    pub shards: Vec<UserShard>,
    pub dim: usize,
    pub warnings: Vec<String>,
}

struct Row {
    user: usize,
    label: f64,
    entries: Vec<(usize, f64)>,
}

pub fn load_sparse_dataset(path: &Path, opts: &SparseOptions) -> Result<SparseDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sparse(&text, path, opts)
}

/// Parses file contents; `path` only labels diagnostics. Each user's examples
/// are split in file order: the first `train_per_user` go to train, the next
/// `validation_per_user` to validation, the rest to test.
pub fn parse_sparse(text: &str, path: &Path, opts: &SparseOptions) -> Result<SparseDataset> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut rows = Vec::new();
    let mut max_index = None::<usize>;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(user) = fields.next() else { continue };
        let user: usize = user
            .parse()
            .map_err(|_| parse_err(line_no, format!("user id `{user}` is not a non-negative integer")))?;
        if user >= opts.num_users {
            return Err(parse_err(
                line_no,
                format!("user id {user} is out of range for {} users", opts.num_users),
            ));
        }
        let label = fields.next().ok_or_else(|| parse_err(line_no, "missing label".into()))?;
        let label: f64 = label
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line_no, format!("label `{label}` is not a finite number")))?;
        if opts.task == TaskKind::BinaryClassification && label != 0.0 && label != 1.0 {
            return Err(parse_err(line_no, format!("classification label {label} is not 0 or 1")));
        }
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for field in fields {
            let (idx, val) = field
                .split_once(':')
                .ok_or_else(|| parse_err(line_no, format!("`{field}` is not idx:val")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(line_no, format!("feature index `{idx}` is not a non-negative integer")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("feature value `{val}` is not a finite number")))?;
            if !seen.insert(idx) {
                return Err(parse_err(line_no, format!("feature index {idx} appears twice")));
            }
            if let Some(dim) = opts.dim {
                if idx >= dim {
                    return Err(Error::Dimension {
                        path: path.to_path_buf(),
                        line: line_no,
                        index: idx,
                        dim,
                    });
                }
            }
            max_index = max_index.max(Some(idx));
            entries.push((idx, val));
        }
        rows.push(Row { user, label, entries });
    }
    if rows.is_empty() {
        return Err(parse_err(0, "file contains no examples".into()));
    }
    let dim = match (opts.dim, max_index) {
        (Some(d), _) => d,
        (None, Some(m)) => m + 1,
        (None, None) => return Err(parse_err(0, "no feature appears in any example".into())),
    };

    let mut shards: Vec<UserShard> = (0..opts.num_users).map(UserShard::empty).collect();
    for row in rows {
        let mut features = vec![0.0; dim];
        for (idx, val) in row.entries {
            features[idx] = val;
        }
        let ex = Example {
            features,
            target: row.label,
        };
        let shard = &mut shards[row.user];
        if shard.train.len() < opts.train_per_user {
            shard.train.push(ex);
        } else if shard.validation.len() < opts.validation_per_user {
            shard.validation.push(ex);
        } else {
            shard.test.push(ex);
        }
    }
    let warnings = shards
        .iter()
        .filter(|s| s.is_empty())
        .map(|s| format!("{}: user {} has no examples", path.display(), s.user_id))
        .collect();
    Ok(SparseDataset { shards, dim, warnings })
}
