use crate::error::{GamError, Result};

/// Rectangular numeric table with named columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    /// Rows removed during loading because of missing values.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a column. Panics if the length disagrees with the
    /// existing columns.
    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.insert(name, values);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) {
        if let Some(first) = self.columns.first() {
            assert_eq!(first.len(), values.len(), "column length mismatch");
        }
        let name = name.into();
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name);
                self.columns.push(values);
            }
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// Reads the named columns of a headered CSV.
///
/// Rows with an empty or `NA` cell in any requested column are dropped and
/// counted in [`Dataset::dropped_rows`]. The second return value maps each
/// kept row to its 1-based data-row number in the file, for error messages.
pub fn read_csv<R: std::io::Read>(reader: R, columns: &[String]) -> Result<(Dataset, Vec<usize>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(columns.len());
    for name in columns {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| GamError::UnknownColumn(name.clone()))?;
        positions.push(pos);
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    let mut source_rows = Vec::new();
    let mut dropped = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cells: Vec<&str> = positions.iter().map(|&p| record.get(p).unwrap_or("")).collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| GamError::NonNumeric {
                row,
                column: columns[j].clone(),
                value: cell.to_string(),
            })?;
            values[j].push(v);
        }
        source_rows.push(row);
    }
    let mut data = Dataset::new();
    for (name, col) in columns.iter().zip(values) {
        data.insert(name.clone(), col);
    }
    data.dropped_rows = dropped;
    Ok((data, source_rows))
}

/// Writes all columns as CSV with a header row.
pub fn write_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.names())?;
    for i in 0..data.nrows() {
        w.write_record(data.columns.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}
