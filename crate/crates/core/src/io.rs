//! CSV datasets: a header row, then one sample per line with the inputs
//! first and the output last (`x1,...,xd,y`).

use std::io::{Read, Write};
use std::path::Path;

use crate::domain::SampleSet;
use crate::error::{Error, Result};

fn reader<R: Read>(src: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(src)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Csv {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Parses rows of numbers; `width` fixes the column count when given.
fn read_table<R: Read>(src: R, width: Option<usize>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = reader(src);
    let header: Vec<String> = rdr
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    let ncol = width.unwrap_or(header.len());
    if header.len() != ncol || ncol == 0 {
        return Err(Error::Csv {
            line: 1,
            message: format!("header has {} columns, expected {ncol}", header.len()),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Csv {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if rec.len() != ncol {
            return Err(Error::Csv {
                line,
                message: format!("found {} fields, expected {ncol}", rec.len()),
            });
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Csv {
                        line,
                        message: format!("column {:?} holds {s:?}, not a finite number", header[c]),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads a dataset; the last column is the output.
pub fn read_samples_from<R: Read>(src: R) -> Result<SampleSet> {
    let (header, rows) = read_table(src, None)?;
    if header.len() < 2 {
        return Err(Error::Csv {
            line: 1,
            message: "a dataset needs at least one input and one output column".into(),
        });
    }
    let d = header.len() - 1;
    let mut inputs = Vec::with_capacity(rows.len() * d);
    let mut outputs = Vec::with_capacity(rows.len());
    for r in rows {
        inputs.extend_from_slice(&r[..d]);
        outputs.push(r[d]);
    }
    SampleSet::new(d, inputs, outputs)
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    read_samples_from(std::fs::File::open(path)?)
}

/// Reads input points only; every row must have `dim` columns.
pub fn read_inputs_from<R: Read>(src: R, dim: usize) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_table(src, None)?;
    if header.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: header.len(),
        });
    }
    Ok(rows)
}

pub fn read_inputs(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    read_inputs_from(std::fs::File::open(path)?, dim)
}

fn header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

pub fn write_samples_to<W: Write>(dst: W, data: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(dst);
    let mut h = header(data.dim());
    h.push("y".into());
    w.write_record(&h).map_err(csv_error)?;
    for (k, row) in data.rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(data.output(k).to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, data: &SampleSet) -> Result<()> {
    write_samples_to(std::fs::File::create(path)?, data)
}

/// Inputs followed by a `prediction` column, rows in input order.
pub fn write_predictions_to<W: Write>(
    dst: W,
    inputs: &[Vec<f64>],
    predictions: &[f64],
) -> Result<()> {
    let d = inputs.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(dst);
    let mut h = header(d);
    h.push("prediction".into());
    w.write_record(&h).map_err(csv_error)?;
    for (x, p) in inputs.iter().zip(predictions) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(p.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, inputs: &[Vec<f64>], predictions: &[f64]) -> Result<()> {
    write_predictions_to(std::fs::File::create(path)?, inputs, predictions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let data = SampleSet::new(2, vec![0.1, 1.0 / 3.0, 0.7, 2e-17], vec![1.5, -0.25]).unwrap();
        let mut buf = Vec::new();
        write_samples_to(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        assert_eq!(read_samples_from(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn bad_field_reports_line() {
        let text = "x1,y\n0.1,1\n0.2,oops\n";
        match read_samples_from(text.as_bytes()) {
            Err(Error::Csv { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
        let ragged = "x1,x2,y\n0.1,0.2,1\n0.3,1\n";
        assert!(matches!(
            read_samples_from(ragged.as_bytes()),
            Err(Error::Csv { line: 3, .. })
        ));
        assert!(matches!(
            read_samples_from("x1,y\n0.1,nan\n".as_bytes()),
            Err(Error::Csv { line: 2, .. })
        ));
    }

    #[test]
    fn inputs_check_width() {
        let text = "x1,x2\n0.1,0.2\n";
        assert_eq!(
            read_inputs_from(text.as_bytes(), 2).unwrap(),
            vec![vec![0.1, 0.2]]
        );
        assert!(matches!(
            read_inputs_from(text.as_bytes(), 3),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn predictions_layout() {
        let mut buf = Vec::new();
        write_predictions_to(&mut buf, &[vec![0.5], vec![0.25]], &[1.0, 2.0]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "x1,prediction\n0.5,1\n0.25,2\n"
        );
    }
}
