//! alist text format (MacKay): `N M`, max degrees, column degrees, row
//! degrees, then 1-based column lists and row lists padded with zeros.

use std::fmt::Write as _;
use std::path::Path;

use super::{CodeError, ParityCheckMatrix};

#[derive(Debug, thiserror::Error)]
pub enum AlistError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: malformed header: {msg}")]
    Header { line: usize, msg: String },
    #[error("line {line}: expected {expected} integers, found {found}")]
    Count { line: usize, expected: usize, found: usize },
    #[error("line {line}: index out of bounds: {index} (valid 1..={max})")]
    OutOfBounds { line: usize, index: usize, max: usize },
    #[error("line {line}: degree mismatch: header says {expected}, list has {found}")]
    DegreeMismatch { line: usize, expected: usize, found: usize },
    #[error("column lists and row lists disagree at (row {row}, col {col})")]
    Inconsistent { row: usize, col: usize },
    #[error(transparent)]
    Code(#[from] CodeError),
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-blank line as integers, with its 1-based line number.
    fn next_ints(&mut self, what: &str) -> Result<(usize, Vec<usize>), AlistError> {
        for (idx, raw) in self.inner.by_ref() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let ints = raw
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| AlistError::Header {
                        line,
                        msg: format!("`{t}` is not a non-negative integer ({what})"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            return Ok((line, ints));
        }
        Err(AlistError::Header { line: 0, msg: format!("unexpected end of file while reading {what}") })
    }

    fn exact(&mut self, n: usize, what: &str) -> Result<(usize, Vec<usize>), AlistError> {
        let (line, v) = self.next_ints(what)?;
        if v.len() != n {
            return Err(AlistError::Count { line, expected: n, found: v.len() });
        }
        Ok((line, v))
    }
}

pub fn parse_alist(text: &str) -> Result<ParityCheckMatrix, AlistError> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (_, nm) = lines.exact(2, "N M")?;
    let (n, m) = (nm[0], nm[1]);
    if n == 0 || m == 0 {
        return Err(AlistError::Header { line: 1, msg: "N and M must be positive".into() });
    }
    let (_, maxd) = lines.exact(2, "max degrees")?;
    let (line_cd, col_deg) = lines.exact(n, "column degrees")?;
    let (line_rd, row_deg) = lines.exact(m, "row degrees")?;
    for (degs, line, cap) in [(&col_deg, line_cd, maxd[0]), (&row_deg, line_rd, maxd[1])] {
        if let Some(&d) = degs.iter().find(|&&d| d > cap) {
            return Err(AlistError::DegreeMismatch { line, expected: cap, found: d });
        }
    }

    let mut read_lists = |count: usize, degs: &[usize], bound: usize, what: &str| {
        let mut out = Vec::with_capacity(count);
        for &deg in degs.iter().take(count) {
            let (line, v) = lines.next_ints(what)?;
            let entries: Vec<usize> = v.iter().copied().filter(|&x| x != 0).collect();
            if entries.len() != deg {
                return Err(AlistError::DegreeMismatch { line, expected: deg, found: entries.len() });
            }
            if let Some(&bad) = entries.iter().find(|&&x| x > bound) {
                return Err(AlistError::OutOfBounds { line, index: bad, max: bound });
            }
            out.push(entries.into_iter().map(|x| x - 1).collect::<Vec<_>>());
        }
        Ok(out)
    };
    let col_lists = read_lists(n, &col_deg, m, "column list")?;
    let row_lists = read_lists(m, &row_deg, n, "row list")?;

    let h = ParityCheckMatrix::from_rows(n, row_lists)?;
    for (i, rows) in col_lists.iter().enumerate() {
        let mut sorted = rows.clone();
        sorted.sort_unstable();
        if sorted != h.col(i) {
            let row = sorted
                .iter()
                .chain(h.col(i))
                .copied()
                .find(|r| !(sorted.contains(r) && h.col(i).contains(r)))
                .unwrap_or(0);
            return Err(AlistError::Inconsistent { row: row + 1, col: i + 1 });
        }
    }
    Ok(h)
}

pub fn read_alist(path: impl AsRef<Path>) -> Result<ParityCheckMatrix, AlistError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| AlistError::Io { path: path.display().to_string(), source })?;
    parse_alist(&text)
}

pub fn to_alist(h: &ParityCheckMatrix) -> String {
    let max_col = (0..h.n()).map(|i| h.col_degree(i)).max().unwrap_or(0);
    let max_row = (0..h.m()).map(|j| h.row_degree(j)).max().unwrap_or(0);
    let mut s = String::new();
    let join = |v: &mut dyn Iterator<Item = usize>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "{} {}", h.n(), h.m());
    let _ = writeln!(s, "{max_col} {max_row}");
    let _ = writeln!(s, "{}", join(&mut (0..h.n()).map(|i| h.col_degree(i))));
    let _ = writeln!(s, "{}", join(&mut (0..h.m()).map(|j| h.row_degree(j))));
    for i in 0..h.n() {
        let padded = h.col(i).iter().map(|&j| j + 1).chain(std::iter::repeat(0)).take(max_col);
        let _ = writeln!(s, "{}", join(&mut padded.into_iter()));
    }
    for j in 0..h.m() {
        let padded = h.row(j).iter().map(|&i| i + 1).chain(std::iter::repeat(0)).take(max_row);
        let _ = writeln!(s, "{}", join(&mut padded.into_iter()));
    }
    s
}

pub fn write_alist(h: &ParityCheckMatrix, path: impl AsRef<Path>) -> Result<(), AlistError> {
    let path = path.as_ref();
    std::fs::write(path, to_alist(h))
        .map_err(|source| AlistError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf2code::testing::hamming7;

    const HAMMING: &str = "7 3\n3 4\n1 1 2 1 2 2 3\n4 4 4\n1 0 0\n2 0 0\n1 2 0\n3 0 0\n1 3 0\n2 3 0\n1 2 3\n1 3 5 7\n2 3 6 7\n4 5 6 7\n";

    #[test]
    fn loads_hamming() {
        let h = parse_alist(HAMMING).unwrap();
        assert_eq!((h.m(), h.n()), (3, 7));
        assert_eq!(h, hamming7());
    }

    #[test]
    fn writes_what_it_reads() {
        assert_eq!(to_alist(&hamming7()), HAMMING);
    }

    #[test]
    fn out_of_bounds_index_is_reported() {
        let bad = HAMMING.replace("4 5 6 7", "4 5 6 8");
        let err = parse_alist(&bad).unwrap_err();
        assert!(matches!(err, AlistError::OutOfBounds { line: 14, index: 8, max: 7 }), "{err}");
        assert!(err.to_string().contains("index out of bounds"));
    }

    #[test]
    fn degree_mismatch_is_reported() {
        let bad = HAMMING.replace("1 2 3\n1 3 5 7", "1 2 0\n1 3 5 7");
        assert!(matches!(parse_alist(&bad), Err(AlistError::DegreeMismatch { line: 11, .. })));
    }

    #[test]
    fn malformed_header_is_reported() {
        assert!(matches!(parse_alist("7\n"), Err(AlistError::Count { line: 1, .. })));
        assert!(matches!(parse_alist("7 x\n"), Err(AlistError::Header { line: 1, .. })));
    }

    #[test]
    fn inconsistent_lists_are_reported() {
        let bad = HAMMING.replace("1 2 3\n1 3 5 7", "1 2 3\n1 3 5 6");
        assert!(parse_alist(&bad).is_err());
    }
}
