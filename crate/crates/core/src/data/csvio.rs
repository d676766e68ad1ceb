//! CSV ingestion and forecast export.
//!
//! Input format: UTF-8, comma-delimited by default, optional header row and
//! optional leading timestamp column, both auto-detected (a non-numeric
//! first data cell marks a timestamp column) and overridable.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::TimeSeriesDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NanPolicy {
    /// Skip rows containing unusable values, reporting their line numbers.
    #[default]
    DropRow,
    /// Abort on the first unusable value.
    Fail,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// `None` auto-detects: the first row is a header when any non-timestamp
    /// cell fails to parse as a number.
    pub has_header: Option<bool>,
    /// `None` auto-detects from the first data cell.
    pub timestamp_column: Option<bool>,
    pub nan_policy: NanPolicy,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            has_header: None,
            timestamp_column: None,
            nan_policy: NanPolicy::DropRow,
        }
    }
}

/// What ingestion skipped or noticed.
#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    /// 1-based line numbers of rows dropped for unusable values.
    pub dropped_rows: Vec<usize>,
}

fn parses_as_number(cell: &str) -> bool {
    let t = cell.trim();
    !t.is_empty() && t.parse::<f64>().is_ok()
}

pub fn load_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<(TimeSeriesDataset, IngestReport)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(options.delimiter)
        .flexible(false)
        .from_reader(raw.as_bytes());

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            msg: e.to_string(),
        })?;
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{display}: no rows")));
    }

    // A non-numeric first cell in the first non-header row marks a timestamp
    // column; probe the second row so a header row cannot confuse detection.
    let probe = if rows.len() > 1 { &rows[1].1 } else { &rows[0].1 };
    let has_timestamp = options
        .timestamp_column
        .unwrap_or_else(|| !parses_as_number(&probe[0]));
    let first_data_col = usize::from(has_timestamp);
    if rows[0].1.len() <= first_data_col {
        return Err(Error::Data(format!("{display}: no numeric columns")));
    }

    let has_header = options.has_header.unwrap_or_else(|| {
        rows[0].1[first_data_col..]
            .iter()
            .any(|cell| !parses_as_number(cell))
    });

    let variate_names: Vec<String> = if has_header {
        rows[0].1[first_data_col..]
            .iter()
            .map(|s| s.trim().to_string())
            .collect()
    } else {
        (0..rows[0].1.len() - first_data_col)
            .map(|i| format!("v{i}"))
            .collect()
    };
    let n = variate_names.len();

    let data_rows = if has_header { &rows[1..] } else { &rows[..] };
    let mut values: Vec<f64> = Vec::with_capacity(data_rows.len() * n);
    let mut timestamps: Vec<String> = Vec::new();
    let mut report = IngestReport::default();
    let mut kept = 0usize;

    'rows: for (line, cells) in data_rows {
        let mut parsed = Vec::with_capacity(n);
        for (col, cell) in cells[first_data_col..].iter().enumerate() {
            let t = cell.trim();
            let value = if t.is_empty() {
                f64::NAN
            } else {
                match t.parse::<f64>() {
                    Ok(v) => v,
                    Err(_) => {
                        return Err(Error::Parse {
                            path: display.clone(),
                            line: *line,
                            msg: format!(
                                "non-numeric cell {t:?} in column {}",
                                variate_names
                                    .get(col)
                                    .map(String::as_str)
                                    .unwrap_or("?")
                            ),
                        })
                    }
                }
            };
            parsed.push(value);
        }
        if parsed.iter().any(|v| !v.is_finite()) {
            match options.nan_policy {
                NanPolicy::DropRow => {
                    report.dropped_rows.push(*line);
                    continue 'rows;
                }
                NanPolicy::Fail => {
                    return Err(Error::Data(format!(
                        "{display}:{line}: unusable value with nan_policy=fail"
                    )))
                }
            }
        }
        if has_timestamp {
            timestamps.push(cells[0].trim().to_string());
        }
        values.extend(parsed);
        kept += 1;
    }

    if kept == 0 {
        return Err(Error::Data(format!("{display}: no usable rows after ingestion")));
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| display.clone());
    Ok((
        TimeSeriesDataset {
            name,
            timestamps: has_timestamp.then_some(timestamps),
            values: Tensor::matrix(kept, n, values)?,
            variate_names,
        },
        report,
    ))
}

/// One exported forecast point.
#[derive(Debug, Clone)]
pub struct ForecastRecord {
    pub window_id: usize,
    pub variate: String,
    /// 1-based step within the horizon.
    pub step: usize,
    pub prediction: f64,
    pub truth: Option<f64>,
}

/// Writes forecast records as CSV. The `truth` column appears only when
/// `include_truth` is set (evaluation exports carry it; plain forecasts do not).
pub fn write_forecast_csv(
    path: impl AsRef<Path>,
    records: &[ForecastRecord],
    include_truth: bool,
) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: display.clone(),
        source,
    })?;
    let mut write = |s: String| -> Result<()> {
        file.write_all(s.as_bytes()).map_err(|source| Error::Io {
            path: display.clone(),
            source,
        })
    };
    if include_truth {
        write("window_id,variate,step,prediction,truth\n".to_string())?;
    } else {
        write("window_id,variate,step,prediction\n".to_string())?;
    }
    for r in records {
        let line = if include_truth {
            format!(
                "{},{},{},{},{}\n",
                r.window_id,
                r.variate,
                r.step,
                r.prediction,
                r.truth.map(|t| t.to_string()).unwrap_or_default()
            )
        } else {
            format!("{},{},{},{}\n", r.window_id, r.variate, r.step, r.prediction)
        };
        write(line)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_numeric_file() {
        let f = write_tmp("1.0,2.0\n3.0,4.0\n5.0,6.0\n");
        let (ds, report) = load_csv(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.variates(), 2);
        assert!(ds.timestamps.is_none());
        assert!(report.dropped_rows.is_empty());
        assert_eq!(ds.variate_names, vec!["v0", "v1"]);
    }

    #[test]
    fn ecl_format_with_timestamp_and_header() {
        let f = write_tmp("date,MT_001,MT_002\n2016-07-01 00:00,14.0,69.0\n2016-07-01 01:00,18.0,92.0\n");
        let (ds, _) = load_csv(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.variates(), 2); // column count minus the timestamp
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.variate_names, vec!["MT_001", "MT_002"]);
        assert_eq!(ds.timestamps.as_ref().unwrap()[0], "2016-07-01 00:00");
        assert_eq!(ds.values.get2(1, 1), 92.0);
    }

    #[test]
    fn nan_row_dropped_with_report() {
        let f = write_tmp("1.0,2.0\nNaN,4.0\n5.0,6.0\n");
        let (ds, report) = load_csv(f.path(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(report.dropped_rows, vec![2]);

        let err = load_csv(
            f.path(),
            &LoadOptions {
                nan_policy: NanPolicy::Fail,
                ..LoadOptions::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn non_numeric_cell_names_line() {
        let f = write_tmp("1.0,2.0\n3.0,oops\n");
        let err = load_csv(f.path(), &LoadOptions::default()).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("oops"), "{err}");
    }

    #[test]
    fn ragged_rows_are_parse_errors() {
        let f = write_tmp("1.0,2.0\n3.0\n");
        let err = load_csv(f.path(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
    }

    #[test]
    fn missing_file_is_io_error_with_path() {
        let err = load_csv("/nonexistent/definitely_missing.csv", &LoadOptions::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("definitely_missing.csv"));
    }

    #[test]
    fn forecast_csv_round_trip_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forecast.csv");
        let records = vec![
            ForecastRecord {
                window_id: 0,
                variate: "v0".into(),
                step: 1,
                prediction: 1.5,
                truth: Some(1.4),
            },
            ForecastRecord {
                window_id: 0,
                variate: "v0".into(),
                step: 2,
                prediction: -0.5,
                truth: Some(-0.6),
            },
        ];
        write_forecast_csv(&path, &records, true).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.starts_with("window_id,variate,step,prediction,truth\n"));
        assert_eq!(content.lines().count(), 3);

        write_forecast_csv(&path, &records, false).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert!(content.starts_with("window_id,variate,step,prediction\n"));
    }
}
