//! CSV ingestion: column mapping, validation and the split into the four
//! group-time cells.

use std::path::Path;

use ordcic::bounds::CellSample;
use ordcic::ordered_model::ObservationSet;

use crate::CliError;

/// Column roles of an input file.
#[derive(Debug, Clone, Default)]
pub struct ColumnMap {
    pub outcome: String,
    pub group: String,
    pub time: String,
    pub xcols: Vec<String>,
    pub zcols: Vec<String>,
    pub instrument: Option<String>,
}

/// Rows of one group-time cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellRows {
    pub outcomes: Vec<u8>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub instrument: Vec<i64>,
    /// One-based data row numbers (header excluded).
    pub rows: Vec<usize>,
}

/// Data partitioned by `(g, t)` in the order `00, 01, 10, 11`.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub cells: [CellRows; 4],
    pub kx: usize,
    pub kz: usize,
}

pub const CELL_TAGS: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

impl Ingested {
    pub fn counts(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|c| self.cells[c].outcomes.len())
    }

    /// Errors unless every cell has at least one row.
    pub fn require_nonempty(&self) -> Result<(), CliError> {
        let empty: Vec<String> = CELL_TAGS
            .iter()
            .zip(self.counts())
            .filter(|(_, n)| *n == 0)
            .map(|((g, t), _)| format!("(g={g}, t={t})"))
            .collect();
        if empty.is_empty() {
            Ok(())
        } else {
            Err(CliError::Input(format!("empty cells: {}", empty.join(", "))))
        }
    }

    pub fn observation_sets(&self) -> Result<[ObservationSet; 4], CliError> {
        let mut out = Vec::with_capacity(4);
        for (c, cell) in self.cells.iter().enumerate() {
            let (g, t) = CELL_TAGS[c];
            let set = ObservationSet::from_flat(cell.outcomes.clone(), self.kx, cell.x.clone(), self.kz, cell.z.clone())
                .map_err(CliError::Core)?
                .with_cell(g, t);
            out.push(set);
        }
        Ok(out.try_into().expect("four cells"))
    }

    pub fn cell_samples(&self) -> Result<[CellSample; 4], CliError> {
        let mut out = Vec::with_capacity(4);
        for (c, cell) in self.cells.iter().enumerate() {
            let (g, t) = CELL_TAGS[c];
            let s = CellSample::new(cell.outcomes.clone(), cell.instrument.clone())
                .map_err(CliError::Core)?
                .with_cell(g, t);
            out.push(s);
        }
        Ok(out.try_into().expect("four cells"))
    }
}

const MAX_LISTED: usize = 10;

/// Reads a comma-delimited file with a header row and splits it into cells.
/// Every offending row is collected and the first ones are listed in the error.
pub fn ingest(path: &Path, map: &ColumnMap) -> Result<Ingested, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read header of {}: {e}", path.display())))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut missing = Vec::new();
    let mut col = |name: &str| {
        let i = find(name);
        if i.is_none() {
            missing.push(name.to_string());
        }
        i.unwrap_or(0)
    };
    let i_out = col(&map.outcome);
    let i_g = col(&map.group);
    let i_t = col(&map.time);
    let i_x: Vec<usize> = map.xcols.iter().map(|c| col(c)).collect();
    let i_z: Vec<usize> = map.zcols.iter().map(|c| col(c)).collect();
    let i_inst = map.instrument.as_deref().map(&mut col);
    if !missing.is_empty() {
        return Err(CliError::Input(format!("missing columns: {}", missing.join(", "))));
    }
    let mut cells: [CellRows; 4] = Default::default();
    let mut problems: Vec<String> = Vec::new();
    let mut n_problems = 0usize;
    let mut note = |msg: String, problems: &mut Vec<String>| {
        n_problems += 1;
        if problems.len() < MAX_LISTED {
            problems.push(msg);
        }
    };
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                note(format!("row {row}: {e}"), &mut problems);
                continue;
            }
        };
        let field = |i: usize| record.get(i).unwrap_or("");
        let level = |i: usize, max: u8, name: &str| -> Result<u8, String> {
            match field(i).parse::<u8>() {
                Ok(v) if v <= max => Ok(v),
                _ => Err(format!("row {row}: {name} value '{}' is not in 0..={max}", field(i))),
            }
        };
        let real = |i: usize, name: &str| -> Result<f64, String> {
            match field(i).parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("row {row}: {name} value '{}' is not a finite number", field(i))),
            }
        };
        let parsed = || -> Result<(usize, u8, Vec<f64>, Vec<f64>, i64), String> {
            let c = level(i_out, 2, &map.outcome)?;
            let g = level(i_g, 1, &map.group)?;
            let t = level(i_t, 1, &map.time)?;
            let x = i_x.iter().zip(&map.xcols).map(|(&i, n)| real(i, n)).collect::<Result<Vec<_>, _>>()?;
            let z = i_z.iter().zip(&map.zcols).map(|(&i, n)| real(i, n)).collect::<Result<Vec<_>, _>>()?;
            let inst = match (i_inst, &map.instrument) {
                (Some(i), Some(name)) => field(i)
                    .parse::<i64>()
                    .map_err(|_| format!("row {row}: {name} value '{}' is not an integer code", field(i)))?,
                _ => 0,
            };
            Ok((2 * g as usize + t as usize, c, x, z, inst))
        };
        match parsed() {
            Ok((cell, c, x, z, inst)) => {
                let target = &mut cells[cell];
                target.outcomes.push(c);
                target.x.extend(x);
                target.z.extend(z);
                target.instrument.push(inst);
                target.rows.push(row);
            }
            Err(msg) => note(msg, &mut problems),
        }
    }
    if n_problems > 0 {
        let more = if n_problems > problems.len() {
            format!(" (and {} more)", n_problems - problems.len())
        } else {
            String::new()
        };
        return Err(CliError::Input(format!("{}{more}", problems.join("; "))));
    }
    Ok(Ingested {
        cells,
        kx: map.xcols.len(),
        kz: map.zcols.len(),
    })
}
