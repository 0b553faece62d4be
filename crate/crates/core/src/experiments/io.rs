//! Matrix and observation files.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::ObservationSet;
use crate::error::{Error, Result};
use crate::market::Market;
use crate::matrix::Matrix;

/// Preprocessing applied while reading a valuation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Added to every entry first.
    pub shift: f64,
    /// Entries equal to zero after the shift take this value.
    pub zero_replacement: Option<f64>,
    /// Keep only these buyer rows, in this order.
    pub rows: Option<Vec<usize>>,
    /// Budget of every buyer; defaults to 1.
    pub budget: Option<f64>,
    /// Supply of every item; defaults to `n / m`, one unit per buyer overall.
    pub supply: Option<f64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { shift: 0.0, zero_replacement: None, rows: None, budget: None, supply: None }
    }
}

/// Reads a rectangular numeric CSV, buyers by items. A first row that does
/// not parse as numbers is taken as a header.
pub fn load_matrix_csv(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Market> {
    let file = std::fs::File::open(path)?;
    read_matrix_csv(file, options)
}

pub fn read_matrix_csv(reader: impl Read, options: &LoadOptions) -> Result<Market> {
    let raw = parse_numeric(reader)?;
    let mut v = raw;
    if let Some(rows) = &options.rows {
        for &r in rows {
            if r >= v.rows() {
                return Err(Error::IndexOutOfRange { context: "row subset", index: r, len: v.rows() });
            }
        }
        v = v.submatrix(rows, &(0..v.cols()).collect::<Vec<_>>());
    }
    for i in 0..v.rows() {
        for j in 0..v.cols() {
            let mut x = v[(i, j)] + options.shift;
            if x < 0.0 {
                return Err(Error::NegativeValueAfterShift { row: i, column: j, value: x });
            }
            if x == 0.0 {
                if let Some(z) = options.zero_replacement {
                    x = z;
                }
            }
            v[(i, j)] = x;
        }
    }
    let (n, m) = v.shape();
    let budget = options.budget.unwrap_or(1.0);
    let supply = options.supply.unwrap_or(n as f64 / m as f64);
    Market::new(v, vec![budget; n], vec![supply; m])
}

/// Parses numeric records; line and column numbers in errors are 1-based.
fn parse_numeric(reader: impl Read) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, usize> =
            record.iter().enumerate().map(|(c, f)| f.parse::<f64>().map_err(|_| c)).collect();
        match parsed {
            Ok(row) => {
                if let Some(width) = rows.first().map(Vec::len) {
                    if row.len() != width {
                        return Err(Error::Parse {
                            line,
                            column: row.len().min(width) + 1,
                            message: format!("row has {} fields, expected {width}", row.len()),
                        });
                    }
                }
                rows.push(row);
            }
            Err(_) if first => {} // header
            Err(c) => {
                return Err(Error::Parse { line, column: c + 1, message: format!("not a number: {:?}", &record[c]) })
            }
        }
        first = false;
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 1, column: 1, message: "no numeric rows".into() });
    }
    Ok(Matrix::from_rows(&rows).expect("widths checked"))
}

pub fn write_matrix_csv(v: &Matrix, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in v.row_iter() {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `i,j,value` records with zero-based indices. The shape is taken
/// from the arguments when given, else from the largest indices seen.
pub fn load_observations_csv(path: impl AsRef<Path>, n: Option<usize>, m: Option<usize>) -> Result<ObservationSet> {
    read_observations_csv(std::fs::File::open(path)?, n, m)
}

pub fn read_observations_csv(reader: impl Read, n: Option<usize>, m: Option<usize>) -> Result<ObservationSet> {
    #[derive(Deserialize)]
    struct Record {
        i: usize,
        j: usize,
        value: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut entries = Vec::new();
    for (k, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { line: k + 2, column: 1, message: e.to_string() })?;
        entries.push((rec.i, rec.j, rec.value));
    }
    let n = n.unwrap_or_else(|| entries.iter().map(|e| e.0 + 1).max().unwrap_or(0));
    let m = m.unwrap_or_else(|| entries.iter().map(|e| e.1 + 1).max().unwrap_or(0));
    ObservationSet::new(n, m, entries)
}

/// The `rows` most-observed rows, then the `cols` columns most observed
/// within them. Ties go to the lower index. Both lists come back sorted.
pub fn densest_submatrix(obs: &ObservationSet, rows: usize, cols: usize) -> (Vec<usize>, Vec<usize>) {
    let (n, m) = obs.shape();
    let mut row_count = vec![0usize; n];
    for &(i, _, _) in obs.entries() {
        row_count[i] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(row_count[i]), i));
    let mut keep_rows: Vec<usize> = order.into_iter().take(rows.min(n)).collect();
    keep_rows.sort_unstable();
    let mut in_rows = vec![false; n];
    keep_rows.iter().for_each(|&i| in_rows[i] = true);
    let mut col_count = vec![0usize; m];
    for &(i, j, _) in obs.entries() {
        if in_rows[i] {
            col_count[j] += 1;
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(col_count[j]), j));
    let mut keep_cols: Vec<usize> = order.into_iter().take(cols.min(m)).collect();
    keep_cols.sort_unstable();
    (keep_rows, keep_cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, options: &LoadOptions) -> Result<Market> {
        read_matrix_csv(text.as_bytes(), options)
    }

    #[test]
    fn identity_file_with_defaults() {
        let m = load("1,0\n0,1\n", &LoadOptions::default()).unwrap();
        assert_eq!(m, crate::instances::disjoint());
    }

    #[test]
    fn header_is_skipped() {
        let m = load("a,b,c\n1,2,3\n4,5,6\n", &LoadOptions::default()).unwrap();
        assert_eq!(m.valuations().shape(), (2, 3));
        assert!((m.supplies()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shift_then_zero_replacement() {
        let opts = LoadOptions { shift: 10.0, zero_replacement: Some(1.0), ..LoadOptions::default() };
        let m = load("-10,5\n0,-2.5\n", &opts).unwrap();
        assert_eq!(m.valuations().to_rows(), vec![vec![1.0, 15.0], vec![10.0, 7.5]]);
    }

    #[test]
    fn negative_after_shift() {
        let opts = LoadOptions { shift: 1.0, ..LoadOptions::default() };
        assert!(matches!(load("1,-3\n", &opts), Err(Error::NegativeValueAfterShift { row: 0, column: 1, .. })));
    }

    #[test]
    fn ragged_row_names_its_line() {
        match load("1,2,3\n4,5\n", &LoadOptions::default()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("2 fields"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_has_coordinates() {
        assert!(matches!(load("1,2\n3,x\n", &LoadOptions::default()), Err(Error::Parse { line: 2, column: 2, .. })));
    }

    #[test]
    fn row_subset_and_overrides() {
        let opts = LoadOptions { rows: Some(vec![1]), budget: Some(2.0), supply: Some(3.0), ..LoadOptions::default() };
        let m = load("1,2\n3,4\n", &opts).unwrap();
        assert_eq!(m.valuations().to_rows(), vec![vec![3.0, 4.0]]);
        assert_eq!((m.budgets(), m.supplies()), (&[2.0][..], &[3.0, 3.0][..]));
    }

    #[test]
    fn matrix_round_trip() {
        let v = Matrix::from_rows(&[[0.1, 2.5], [1e-7, 3.0]]).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&v, &mut buf).unwrap();
        let m = load(std::str::from_utf8(&buf).unwrap(), &LoadOptions::default()).unwrap();
        assert_eq!(*m.valuations(), v);
    }

    #[test]
    fn observations_and_density() {
        let obs =
            read_observations_csv("i,j,value\n0,0,1\n0,1,2\n2,1,3\n2,2,4\n2,0,5\n".as_bytes(), None, None).unwrap();
        assert_eq!(obs.shape(), (3, 3));
        assert_eq!(densest_submatrix(&obs, 2, 2), (vec![0, 2], vec![0, 1]));
        assert!(read_observations_csv("i,j,value\n0,x,1\n".as_bytes(), None, None).is_err());
    }
}
