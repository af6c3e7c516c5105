//! Text embedding files: a `dtn-embed v1 dim=<D>` header, then one
//! `<label>,<v1>,...,<vD>` row per item.

use std::path::Path;

use crate::episodes::Dataset;
use crate::error::{Error, Result};

const HEADER_PREFIX: &str = "dtn-embed v1 dim=";

pub fn load_embeddings(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_embeddings(&text, path)
}

/// Parses file contents; `path` only labels errors.
pub fn parse_embeddings(text: &str, path: &Path) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let dim: usize = header
        .strip_prefix(HEADER_PREFIX)
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| err(1, format!("expected header \"{HEADER_PREFIX}<D>\", got {header:?}")))?;

    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().trim();
        if label.is_empty() {
            return Err(err(n, "empty class label".into()));
        }
        let values = fields
            .map(|f| {
                let v: f64 = f.trim().parse().map_err(|_| err(n, format!("invalid number {f:?}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(n, format!("non-finite value {f:?}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(err(n, format!("expected {dim} values, found {}", values.len())));
        }
        rows.push((label.to_string(), values));
    }
    Dataset::from_labeled(dim, rows)
}

/// Serializes every item of `ds`; values print at full round-trip precision.
pub fn render_embeddings(ds: &Dataset) -> String {
    let mut out = format!("{HEADER_PREFIX}{}\n", ds.dim());
    for item in ds.items() {
        out.push_str(ds.label(item.class));
        for v in &item.input {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, render_embeddings(ds))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_embeddings(text, Path::new("mem.txt"))
    }

    #[test]
    fn three_rows() {
        let ds = parse("dtn-embed v1 dim=4\na,1,2,3,4\nb,0,0,0,0\na,1,2,3,4\n").unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.class_count()), (3, 4, 2));
        // Duplicate content stays two distinct items.
        assert_eq!(ds.item(0).input, ds.item(2).input);
        assert_eq!(ds.class_items(0), &[0, 2]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let line = |r: Result<Dataset>| match r {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        };
        assert_eq!(line(parse("dtn-embed v1 dim=2\na,1,2\nb,1\n")), 3);
        assert_eq!(line(parse("dtn-embed v2 dim=2\n")), 1);
        assert_eq!(line(parse("")), 1);
        assert_eq!(line(parse("dtn-embed v1 dim=2\na,1,NaN\n")), 2);
        assert_eq!(line(parse("dtn-embed v1 dim=2\na,1,inf\n")), 2);
        assert_eq!(line(parse("dtn-embed v1 dim=2\n,1,2\n")), 2);
        assert_eq!(line(parse("dtn-embed v1 dim=2\na,1,x\n")), 2);
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![
            ("x".to_string(), vec![0.1 + 0.2, -1e-300, 123456.789]),
            ("y".to_string(), vec![std::f64::consts::PI, 5e-324, -0.0]),
        ];
        let ds = Dataset::from_labeled(3, rows).unwrap();
        let back = parse(&render_embeddings(&ds)).unwrap();
        for (a, b) in ds.items().iter().zip(back.items()) {
            assert!(a.input.iter().zip(&b.input).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.labels(), ds.labels());
    }
}
