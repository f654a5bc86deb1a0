use std::io::{Read, Write};

use super::{DataError, Result};
use crate::gaussian::IncompleteObservation;

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOptions {
    pub delimiter: u8,
    /// Inclusive bounds every observed value must fall in.
    pub scale: Option<(f64, f64)>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            scale: None,
        }
    }
}

impl ParseOptions {
    pub fn hedonic() -> Self {
        Self {
            scale: Some((1.0, 9.0)),
            ..Self::default()
        }
    }
}

/// Consumers by products; blank cells are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    pub product_names: Vec<String>,
    pub consumer_ids: Vec<String>,
    pub rows: Vec<IncompleteObservation>,
}

impl RatingTable {
    pub fn n_products(&self) -> usize {
        self.product_names.len()
    }

    pub fn n_consumers(&self) -> usize {
        self.rows.len()
    }

    pub fn observations(&self) -> &[IncompleteObservation] {
        &self.rows
    }
}

/// First column holds the consumer id, the header row the product names.
pub fn parse_table<R: Read>(source: R, options: &ParseOptions) -> Result<RatingTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(DataError::MissingHeader);
    }
    let product_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let p = product_names.len();

    let mut consumer_ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|pos| pos.line()).unwrap_or(0);
        if record.len() != p + 1 {
            return Err(DataError::Ragged {
                line,
                expected: p + 1,
                found: record.len(),
            });
        }
        let id = record[0].to_string();
        let mut cells = Vec::with_capacity(p);
        for (j, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                cells.push(None);
                continue;
            }
            let value: f64 = match cell.parse() {
                Ok(v) if f64::is_finite(v) => v,
                _ => {
                    return Err(DataError::NonNumeric {
                        line,
                        column: product_names[j].clone(),
                        value: cell.to_string(),
                    })
                }
            };
            if let Some((lo, hi)) = options.scale {
                if value < lo || value > hi {
                    return Err(DataError::OutOfScale {
                        line,
                        column: product_names[j].clone(),
                        value,
                        lo,
                        hi,
                    });
                }
            }
            cells.push(Some(value));
        }
        if cells.iter().all(Option::is_none) {
            return Err(DataError::EmptyRow { line, id });
        }
        rows.push(IncompleteObservation::from_options(&cells)?);
        consumer_ids.push(id);
    }
    if rows.is_empty() {
        return Err(DataError::NoRows);
    }
    Ok(RatingTable {
        product_names,
        consumer_ids,
        rows,
    })
}

pub fn write_table<W: Write>(table: &RatingTable, sink: W, delimiter: u8) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().delimiter(delimiter).from_writer(sink);
    let mut header = vec!["consumer".to_string()];
    header.extend(table.product_names.iter().cloned());
    writer.write_record(&header)?;
    for (id, obs) in table.consumer_ids.iter().zip(&table.rows) {
        let mut rec = vec![id.clone()];
        rec.extend((0..obs.dim()).map(|j| obs.value(j).map(|v| v.to_string()).unwrap_or_default()));
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}
