//! Line-oriented numeric text files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub(super) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Appends the numbers on every non-blank line to `out`, checking that each
/// line has `expected` fields. Returns the number of lines read.
pub(super) fn parse_table(path: &Path, sep: Option<char>, expected: usize, out: &mut Vec<f32>) -> Result<usize> {
    let text = read_to_string(path)?;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = out.len();
        let fields: Box<dyn Iterator<Item = &str>> = match sep {
            Some(c) => Box::new(line.split(c).map(str::trim)),
            None => Box::new(line.split_whitespace()),
        };
        for f in fields {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("not a number: {f:?}")))?;
            out.push(v);
        }
        let found = out.len() - before;
        if found != expected {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {expected} values, found {found}"),
            ));
        }
        rows += 1;
    }
    Ok(rows)
}

/// Integer per line (label and subject files).
pub(super) fn parse_ints(path: &Path) -> Result<Vec<usize>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("not an integer: {:?}", l.trim())))
        })
        .collect()
}

/// `root/wrapper` when the archive's top-level folder was kept and `marker`
/// is only found inside it.
pub(super) fn unwrap_dir(root: &Path, wrapper: &str, marker: &str) -> PathBuf {
    let inner = root.join(wrapper);
    if !root.join(marker).exists() && inner.join(marker).exists() {
        inner
    } else {
        root.to_path_buf()
    }
}

/// Names of the entries in `dir`.
pub(super) fn list_names(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if let Some(n) = e.file_name().to_str() {
            names.push(n.to_string());
        }
    }
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_row_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        fs::write(&p, "1,2\n\n3,x\n").unwrap();
        let err = parse_table(&p, Some(','), 2, &mut Vec::new()).unwrap_err();
        match err {
            Error::Parse { file, line, .. } => assert_eq!((file, line), (p.clone(), 3)),
            other => panic!("{other}"),
        }
        fs::write(&p, "1 2\n3  4   5\n").unwrap();
        let err = parse_table(&p, None, 2, &mut Vec::new()).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("found 3"), "{err}");
    }

    #[test]
    fn whitespace_rows_and_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dat");
        fs::write(&p, "  1.5  NaN\n2e1 -3\n").unwrap();
        let mut out = Vec::new();
        assert_eq!(parse_table(&p, None, 2, &mut out).unwrap(), 2);
        assert!(out[1].is_nan());
        assert_eq!(out[2], 20.0);
    }
}
