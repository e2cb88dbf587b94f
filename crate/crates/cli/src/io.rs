//! Delimited response files.
//!
//! The delimiter is taken from the first non-blank line (comma, tab or
//! semicolon in that order of preference, whitespace otherwise). The first
//! row is a header when any of its response columns is not a number. A
//! leading identifier column is recognised when some data row starts with a
//! non-numeric token, or when the header names it (`id`, `person`, …).
//! Rows and columns in error messages are 1-based file coordinates.

use std::fs;
use std::io::Write;
use std::path::Path;

use robust_irt::{ResponseMatrix, ResponsePattern};

use crate::error::{CliError, CliResult};

const ID_HEADERS: &[&str] = &[
    "",
    "id",
    "ids",
    "person",
    "respondent",
    "subject",
    "examinee",
];
const MISSING: &[&str] = &["", "na", "nan", ".", "null", "?"];

pub fn load_responses(path: impl AsRef<Path>) -> CliResult<ResponseMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_responses(&text)
}

/// One logical row: file line number and trimmed cells.
type Row = (usize, Vec<String>);

fn detect_delimiter(text: &str) -> Option<u8> {
    let first = text.lines().find(|l| !l.trim().is_empty())?;
    b",\t;"
        .iter()
        .copied()
        .find(|&d| first.as_bytes().contains(&d))
}

fn tokenize(text: &str) -> CliResult<Vec<Row>> {
    match detect_delimiter(text) {
        None => Ok(text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_string).collect()))
            .collect()),
        Some(d) => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .delimiter(d)
                .from_reader(text.as_bytes());
            let mut rows = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(|e| CliError::Input(e.to_string()))?;
                let line = rec.position().map_or(0, |p| p.line() as usize);
                if rec.iter().all(|c| c.trim().is_empty()) {
                    continue;
                }
                rows.push((line, rec.iter().map(|c| c.trim().to_string()).collect()));
            }
            Ok(rows)
        }
    }
}

fn is_number(s: &str) -> bool {
    s.parse::<f64>().is_ok()
}

fn is_missing(s: &str) -> bool {
    MISSING.contains(&s.to_ascii_lowercase().as_str())
}

/// A token that can only be a label or identifier.
fn is_text(s: &str) -> bool {
    !is_number(s) && !is_missing(s)
}

/// Parses file contents; see the module documentation for the layout rules.
pub fn parse_responses(text: &str) -> CliResult<ResponseMatrix> {
    let rows = tokenize(text)?;
    let Some(((_, first), _)) = rows.split_first() else {
        return Err(CliError::Input("response file is empty".into()));
    };
    let header = if first.len() == 1 {
        is_text(&first[0])
    } else {
        first[1..].iter().any(|c| is_text(c))
    };
    let data = if header { &rows[1..] } else { &rows[..] };
    if data.is_empty() {
        return Err(CliError::Input(
            "response file has a header but no data rows".into(),
        ));
    }
    let has_ids = data
        .iter()
        .any(|(_, r)| r.first().is_some_and(|c| is_text(c)))
        || (header
            && first.len() > 1
            && ID_HEADERS.contains(&first[0].to_ascii_lowercase().as_str()));
    let skip = usize::from(has_ids);
    let width = if header { first.len() } else { data[0].1.len() };
    if width <= skip {
        return Err(CliError::Input("response file has no item columns".into()));
    }

    let mut patterns = Vec::with_capacity(data.len());
    let mut ids = Vec::with_capacity(data.len());
    for (line, cells) in data {
        if cells.len() != width {
            return Err(CliError::Parse {
                row: *line,
                col: cells.len().min(width) + 1,
                message: format!("expected {width} columns, found {}", cells.len()),
            });
        }
        let mut bits = Vec::with_capacity(width - skip);
        for (c, cell) in cells.iter().enumerate().skip(skip) {
            let bit = match cell.as_str() {
                "0" => 0,
                "1" => 1,
                other => {
                    let message = if is_missing(other) {
                        "missing value".to_string()
                    } else {
                        format!("`{other}` is not a 0/1 response")
                    };
                    return Err(CliError::Parse {
                        row: *line,
                        col: c + 1,
                        message,
                    });
                }
            };
            bits.push(bit);
        }
        patterns.push(ResponsePattern::new(bits)?);
        ids.push(if has_ids {
            cells[0].clone()
        } else {
            format!("r{}", ids.len() + 1)
        });
    }
    let matrix = ResponseMatrix::with_ids(patterns, ids)?;
    if header {
        Ok(matrix.with_item_labels(first[skip..].to_vec())?)
    } else {
        Ok(matrix)
    }
}

/// Writes a header (`id` then item labels) and one row per respondent.
pub fn write_responses(data: &ResponseMatrix, out: impl Write, delimiter: u8) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_writer(out);
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(std::iter::once("id").chain(data.item_labels().iter().map(String::as_str)))
        .map_err(csv_err)?;
    for (id, row) in data.row_ids().iter().zip(data.rows()) {
        let bits = row.bits().iter().map(|b| if *b == 1 { "1" } else { "0" });
        w.write_record(std::iter::once(id.as_str()).chain(bits))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Input(e.to_string()))
}

pub fn save_responses(data: &ResponseMatrix, path: impl AsRef<Path>) -> CliResult<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_responses(data, std::io::BufWriter::new(file), b',')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_ids() {
        let m = parse_responses("id,i1,i2\nA,1,0\nB,0,0\nC,1,1").unwrap();
        assert_eq!((m.n_respondents(), m.n_items()), (3, 2));
        assert_eq!(m.row_ids(), &["A", "B", "C"]);
        assert_eq!(m.item_labels(), &["i1", "i2"]);
        assert_eq!(m.rows()[2].bits(), &[1, 1]);
    }

    #[test]
    fn non_binary_cell_reports_file_coordinates() {
        let e = parse_responses("id,i1,i2\nA,1,2\nB,0,0").unwrap_err();
        match e {
            CliError::Parse { row, col, .. } => assert_eq!((row, col), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_responses("1 0\n0 7\n").unwrap_err();
        assert!(e.to_string().starts_with("row 2, column 2"), "{e}");
    }

    #[test]
    fn headerless_numeric_file_gets_synthetic_labels() {
        let m = parse_responses("1 0 1\n0 0 1\n\n1 1 1\n").unwrap();
        assert_eq!((m.n_respondents(), m.n_items()), (3, 3));
        assert_eq!(m.item_labels()[0], "item1");
        assert_eq!(m.row_ids()[2], "r3");
        let tabs = parse_responses("1\t0\n0\t1").unwrap();
        assert_eq!(tabs.n_items(), 2);
        let semi = parse_responses("a;b\n1;0").unwrap();
        assert_eq!(semi.item_labels(), &["a", "b"]);
    }

    #[test]
    fn numeric_ids_need_a_named_column() {
        let m = parse_responses("person,q1,q2\n101,1,0\n102,0,1").unwrap();
        assert_eq!(m.row_ids(), &["101", "102"]);
        assert_eq!(m.n_items(), 2);
    }

    #[test]
    fn rejects_missing_ragged_and_empty() {
        let e = parse_responses("i1,i2\n1,\n").unwrap_err();
        assert!(e.to_string().contains("missing value"), "{e}");
        let e = parse_responses("i1,i2\n1,NA\n").unwrap_err();
        assert!(e.to_string().contains("row 2, column 2"), "{e}");
        let e = parse_responses("1,0\n1,0,1\n").unwrap_err();
        assert!(e.to_string().contains("expected 2 columns"), "{e}");
        assert!(parse_responses("").is_err());
        assert!(parse_responses("\n  \n").is_err());
        assert!(parse_responses("i1,i2\n").is_err());
    }

    #[test]
    fn round_trip() {
        let m = parse_responses("id,x,y,z\nu1,1,0,1\nu2,0,0,0").unwrap();
        let mut buf = Vec::new();
        write_responses(&m, &mut buf, b',').unwrap();
        let back = parse_responses(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, m);

        let synthetic = ResponseMatrix::from_bits(vec![vec![1, 0], vec![0, 1]]).unwrap();
        let mut buf = Vec::new();
        write_responses(&synthetic, &mut buf, b'\t').unwrap();
        assert_eq!(
            parse_responses(std::str::from_utf8(&buf).unwrap()).unwrap(),
            synthetic
        );
    }
}
