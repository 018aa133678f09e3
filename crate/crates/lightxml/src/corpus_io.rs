//! Raw text files and datasets assembled from text plus sparse files.

use std::path::Path;

use lightxml_core::data::{Document, Split, XmcDataset};
use lightxml_core::text::{Vocab, CLS};

use crate::error::{CliError, Result};
use crate::sparse_file::{read_sparse, SparseFile};

/// One document per line.
pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn build_vocab(raw_text_path: &Path, min_freq: usize) -> Result<Vocab> {
    let texts = read_texts(raw_text_path)?;
    Ok(Vocab::build(texts.iter().map(String::as_str), min_freq)?)
}

/// Pairs line `i` of the text file with row `i` of the sparse file.
pub fn assemble(
    texts: &[String],
    sparse: SparseFile,
    vocab: &Vocab,
    max_len: usize,
    split: Split,
    text_path: &Path,
) -> Result<XmcDataset> {
    if max_len < 2 {
        return Err(CliError::Usage("max_len must be at least 2".into()));
    }
    if texts.len() != sparse.rows.len() {
        return Err(CliError::parse(
            text_path,
            texts.len().min(sparse.rows.len()) + 1,
            format!(
                "{} text lines but {} sparse rows",
                texts.len(),
                sparse.rows.len()
            ),
        ));
    }
    let documents = texts
        .iter()
        .zip(sparse.rows)
        .enumerate()
        .map(|(id, (t, row))| Document {
            id,
            tokens: vocab.tokenize(t, max_len),
            labels: row.labels,
            sparse: row.features,
        })
        .collect();
    Ok(XmcDataset::new(
        documents,
        sparse.num_labels,
        vocab.len(),
        sparse.feature_dim,
        split,
    )?)
}

pub fn load_dataset(
    text_path: &Path,
    sparse_path: &Path,
    vocab: &Vocab,
    max_len: usize,
    split: Split,
) -> Result<XmcDataset> {
    let texts = read_texts(text_path)?;
    let sparse = read_sparse(sparse_path, split)?;
    assemble(&texts, sparse, vocab, max_len, split, text_path)
}

/// Labels and features only; every document's token list is just `[CLS]`.
/// Enough for clustering, which never looks at text.
pub fn sparse_only(sparse: SparseFile, split: Split) -> Result<XmcDataset> {
    let documents = sparse
        .rows
        .into_iter()
        .enumerate()
        .map(|(id, row)| Document {
            id,
            tokens: vec![CLS],
            labels: row.labels,
            sparse: row.features,
        })
        .collect();
    Ok(XmcDataset::new(
        documents,
        sparse.num_labels,
        CLS as usize + 1,
        sparse.feature_dim,
        split,
    )?)
}

/// Writes a corpus as a text file and a sparse file, line-aligned.
pub fn write_corpus(text_path: &Path, sparse_path: &Path, texts: &[&str], sparse: &SparseFile) -> Result<()> {
    let mut body = texts.join("\n");
    body.push('\n');
    std::fs::write(text_path, body).map_err(|e| CliError::io(text_path, e))?;
    crate::sparse_file::write_sparse(sparse_path, sparse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_file::parse_sparse;

    #[test]
    fn texts_align_with_rows() {
        let sparse = parse_sparse("2 4 3\n0 1:1\n1,2 3:1\n", Path::new("s"), Split::Train).unwrap();
        let texts = vec!["alpha beta".to_string(), "beta".to_string()];
        let vocab = Vocab::build(texts.iter().map(String::as_str), 1).unwrap();
        let d = assemble(&texts, sparse.clone(), &vocab, 8, Split::Train, Path::new("t")).unwrap();
        assert_eq!(d.documents[1].labels, vec![1, 2]);
        assert_eq!(d.documents[0].tokens.len(), 3);
        assert!(assemble(&texts[..1], sparse, &vocab, 8, Split::Train, Path::new("t")).is_err());
    }

    #[test]
    fn vocab_min_freq() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.txt");
        std::fs::write(&p, "a b\na c\n").unwrap();
        let v = build_vocab(&p, 1).unwrap();
        assert_eq!(v.id("a"), 3);
        let v2 = build_vocab(&p, 2).unwrap();
        assert_eq!(v2.id("b"), lightxml_core::text::UNK);
        assert_eq!(build_vocab(&p, 1).unwrap(), v);
    }
}
