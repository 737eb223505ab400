use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SeriesSource, TimeSeries};
use crate::error::{Error, Result};

/// Column selector for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl std::fmt::Display for Column {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Column::Index(i) => write!(f, "{i}"),
            Column::Name(n) => f.write_str(n),
        }
    }
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        }
    }
}

/// Read one column of a comma-separated file as a series.
///
/// Selecting by name requires a header row. Selecting by index treats the
/// first row as a header only when the selected cell does not parse as a
/// number. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>, column: &Column) -> Result<TimeSeries> {
    let path = path.as_ref();
    let ingest_err = |row: u64, message: String| Error::Ingestion {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => ingest_err(0, format!("{other:?}")),
        })?;

    let records = reader.records();
    let mut col_index = match column {
        Column::Index(i) => Some(*i),
        Column::Name(_) => None,
    };
    let mut values = Vec::new();
    let mut first = true;
    for record in records {
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line()).unwrap_or(0);
            ingest_err(row, e.to_string())
        })?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        if first {
            first = false;
            match column {
                Column::Name(name) => {
                    let idx = record.iter().position(|h| h == name).ok_or_else(|| {
                        ingest_err(row, format!("no column named `{name}` in header"))
                    })?;
                    col_index = Some(idx);
                    continue;
                }
                Column::Index(i) => {
                    if let Some(cell) = record.get(*i) {
                        if cell.parse::<f64>().is_err() {
                            // header row
                            continue;
                        }
                    }
                }
            }
        }
        let idx = col_index.expect("column resolved on first row");
        let cell = record
            .get(idx)
            .ok_or_else(|| ingest_err(row, format!("row has no column {idx}")))?;
        let value: f64 = cell
            .parse()
            .map_err(|_| ingest_err(row, format!("`{cell}` is not a number")))?;
        if !value.is_finite() {
            return Err(ingest_err(row, format!("`{cell}` is not finite")));
        }
        values.push(value);
    }
    if values.is_empty() {
        return Err(ingest_err(0, "no values".into()));
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    TimeSeries::new(format!("{stem}:{column}"), values, SeriesSource::Csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn headerless_single_column() {
        let f = write("1\n2\n3\n");
        let ts = load_csv(f.path(), &Column::Index(0)).unwrap();
        assert_eq!(ts.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(ts.source(), SeriesSource::Csv);
        assert!(ts.name().ends_with(":0"));
    }

    #[test]
    fn named_column_with_header() {
        let f = write("date,HUFL,OT\n2016-07-01,5.8,30.5\n2016-07-02,5.6,27.8\n");
        let ts = load_csv(f.path(), &Column::from("OT")).unwrap();
        assert_eq!(ts.values(), &[30.5, 27.8]);
        let stem = f.path().file_stem().unwrap().to_string_lossy();
        assert_eq!(ts.name(), format!("{stem}:OT"));
    }

    #[test]
    fn long_column_keeps_every_row() {
        let mut content = String::from("OT\n");
        for i in 0..17_420 {
            content.push_str(&format!("{}\n", i as f64 * 0.5));
        }
        let f = write(&content);
        assert_eq!(load_csv(f.path(), &Column::from("OT")).unwrap().len(), 17_420);
    }

    #[test]
    fn bad_cell_names_its_row() {
        let f = write("1\n2\n3\n4\n5\n6\nabc\n8\n");
        let err = load_csv(f.path(), &Column::Index(0)).unwrap_err();
        match &err {
            Error::Ingestion { row, .. } => assert_eq!(*row, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn missing_file_and_column() {
        assert!(matches!(
            load_csv("/definitely/not/here.csv", &Column::Index(0)),
            Err(Error::Io { .. })
        ));
        let f = write("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), &Column::from("zzz")),
            Err(Error::Ingestion { .. })
        ));
        let f = write("1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), &Column::Index(1)),
            Err(Error::Ingestion { row: 2, .. })
        ));
    }
}
