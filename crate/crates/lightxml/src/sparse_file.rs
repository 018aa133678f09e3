//! Sparse XMC files: a header line `N D L`, then one row per document,
//! `l1,l2,... i:v i:v ...` with 0-based ids.

use std::fmt::Write as _;
use std::path::Path;

use lightxml_core::data::Split;
use lightxml_core::sparse::SparseVec;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    /// Sorted, distinct.
    pub labels: Vec<u32>,
    pub features: SparseVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseFile {
    pub feature_dim: usize,
    pub num_labels: usize,
    pub rows: Vec<SparseRow>,
}

pub fn read_sparse(path: &Path, split: Split) -> Result<SparseFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_sparse(&text, path, split)
}

/// `path` only labels error messages. Training rows must carry a label.
pub fn parse_sparse(text: &str, path: &Path, split: Split) -> Result<SparseFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| CliError::parse(path, 1, "empty file, expected header \"N D L\""))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let header_err = || CliError::parse(path, 1, format!("bad header {header:?}, expected \"N D L\""));
    if fields.len() != 3 {
        return Err(header_err());
    }
    let nums: Vec<usize> = fields
        .iter()
        .map(|f| f.parse().map_err(|_| header_err()))
        .collect::<Result<_>>()?;
    let (n, feature_dim, num_labels) = (nums[0], nums[1], nums[2]);

    let mut rows = Vec::with_capacity(n);
    let mut last_line = 1;
    // Every line after the header is a row, so a blank line is a test
    // instance with neither labels nor features; blank lines past the
    // declared count are ignored.
    for (line_no, line) in lines {
        last_line = line_no;
        if rows.len() == n && line.trim().is_empty() {
            continue;
        }
        if rows.len() == n {
            return Err(CliError::parse(
                path,
                line_no,
                format!("header declares {n} rows but more follow"),
            ));
        }
        rows.push(parse_row(line, line_no, path, feature_dim, num_labels, split)?);
    }
    if rows.len() != n {
        return Err(CliError::parse(
            path,
            last_line,
            format!("header declares {n} rows but {} were found", rows.len()),
        ));
    }
    Ok(SparseFile {
        feature_dim,
        num_labels,
        rows,
    })
}

fn parse_row(
    line: &str,
    line_no: usize,
    path: &Path,
    dim: usize,
    num_labels: usize,
    split: Split,
) -> Result<SparseRow> {
    let err = |msg: String| CliError::parse(path, line_no, msg);
    // A row without labels starts with whitespace or a feature pair.
    let (label_field, rest) = match line.find(char::is_whitespace) {
        Some(i) => (&line[..i], &line[i..]),
        None => (line, ""),
    };
    let (label_field, rest) = if label_field.contains(':') {
        ("", line)
    } else {
        (label_field, rest)
    };
    let mut labels = Vec::new();
    for tok in label_field.split(',').filter(|t| !t.is_empty()) {
        let l: u32 = tok.parse().map_err(|_| err(format!("bad label {tok:?}")))?;
        if l as usize >= num_labels {
            return Err(err(format!("label {l} outside the declared {num_labels} labels")));
        }
        labels.push(l);
    }
    if labels.is_empty() && split == Split::Train {
        return Err(err(format!("training row {} has no labels", line_no - 1)));
    }
    labels.sort_unstable();
    labels.dedup();

    let mut indices = Vec::new();
    let mut values = Vec::new();
    for pair in rest.split_whitespace() {
        let (i, v) = pair
            .split_once(':')
            .ok_or_else(|| err(format!("bad feature {pair:?}, expected i:v")))?;
        let i: u32 = i.parse().map_err(|_| err(format!("bad feature index in {pair:?}")))?;
        let v: f32 = v.parse().map_err(|_| err(format!("bad feature value in {pair:?}")))?;
        if let Some(&prev) = indices.last() {
            if i <= prev {
                return Err(err(format!("feature indices not increasing ({prev} then {i})")));
            }
        }
        indices.push(i);
        values.push(v);
    }
    let features = SparseVec::new(dim, indices, values).map_err(|e| err(e.to_string()))?;
    Ok(SparseRow { labels, features })
}

/// Values are written in shortest round-trip form, so reading back gives
/// the same bits.
pub fn format_sparse(file: &SparseFile) -> String {
    let mut out = format!("{} {} {}\n", file.rows.len(), file.feature_dim, file.num_labels);
    for row in &file.rows {
        let labels: Vec<String> = row.labels.iter().map(u32::to_string).collect();
        out.push_str(&labels.join(","));
        for (i, v) in row.features.iter() {
            let _ = write!(out, " {i}:{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_sparse(path: &Path, file: &SparseFile) -> Result<()> {
    std::fs::write(path, format_sparse(file)).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, split: Split) -> Result<SparseFile> {
        parse_sparse(text, Path::new("t.txt"), split)
    }

    #[test]
    fn header_and_row() {
        let f = parse("2 5 3\n0,2 1:0.5 4:1.0\n1 0:2\n", Split::Train).unwrap();
        assert_eq!((f.rows.len(), f.feature_dim, f.num_labels), (2, 5, 3));
        assert_eq!(f.rows[0].labels, vec![0, 2]);
        assert_eq!(f.rows[0].features.indices(), &[1, 4]);
        assert_eq!(f.rows[0].features.values(), &[0.5, 1.0]);
    }

    #[test]
    fn row_count_mismatch_names_a_line() {
        let e = parse("3 5 3\n0 1:1\n1 2:1\n", Split::Train).unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 3, .. }), "{e}");
        let e = parse("1 5 3\n0 1:1\n1 2:1\n", Split::Train).unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn non_monotone_indices_rejected() {
        let e = parse("1 5 3\n0 3:1 1:1\n", Split::Train).unwrap_err();
        assert!(matches!(e, CliError::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn empty_labels_only_at_test_time() {
        let text = "2 5 3\n0 1:1\n 2:1\n";
        let e = parse(text, Split::Train).unwrap_err();
        assert!(e.to_string().contains("training row 2"), "{e}");
        let f = parse(text, Split::Test).unwrap();
        assert!(f.rows[1].labels.is_empty());
        assert_eq!(f.rows[1].features.indices(), &[2]);
        // A bare feature list with no leading space also reads as unlabeled.
        let f = parse("1 5 3\n2:1 3:1\n", Split::Test).unwrap();
        assert_eq!(f.rows[0].features.nnz(), 2);
    }

    #[test]
    fn out_of_range_ids_rejected() {
        assert!(parse("1 5 3\n3 1:1\n", Split::Train).is_err());
        assert!(parse("1 5 3\n0 5:1\n", Split::Train).is_err());
        assert!(parse("", Split::Train).is_err());
        assert!(parse("1 5\n0 1:1\n", Split::Train).is_err());
    }

    #[test]
    fn write_then_read() {
        let f = parse("2 5 3\n0,2 1:0.1 4:1e-7\n1\n", Split::Train).unwrap();
        assert_eq!(parse(&format_sparse(&f), Split::Train).unwrap(), f);
    }
}
