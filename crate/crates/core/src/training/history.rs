use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossReport;

/// Column order of the history CSV. The first ten columns are the headline
/// terms; `adv`, `reg` and `cls` come from the discriminator step and their
/// generator-side counterparts are appended so both totals can be recomputed
/// from the file alone.
pub const COLUMNS: [&str; 13] =
    ["step", "adv", "reg", "cls", "age", "id", "recon", "cycle", "total_d", "total_g", "adv_g", "reg_g", "cls_g"];

/// One training iteration: the last discriminator report and the generator
/// report. `step` counts from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub discriminator: LossReport,
    pub generator: LossReport,
}

impl HistoryRow {
    pub fn values(&self) -> [f64; 12] {
        let (d, g) = (&self.discriminator, &self.generator);
        [d.adv, d.reg, d.cls, g.age, g.id, g.recon, g.cycle, d.total_d, g.total_g, g.adv, g.reg, g.cls]
    }

    pub fn from_values(step: u64, v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::ShapeMismatch(format!("history row needs 12 values, got {}", v.len())));
        }
        let discriminator = LossReport { adv: v[0], reg: v[1], cls: v[2], total_d: v[7], ..Default::default() };
        let generator = LossReport {
            adv: v[9],
            reg: v[10],
            cls: v[11],
            age: v[3],
            id: v[4],
            recon: v[5],
            cycle: v[6],
            total_g: v[8],
            ..Default::default()
        };
        Ok(Self { step, discriminator, generator })
    }
}

/// Writes the whole history. Floats use the shortest representation that
/// parses back to the same bits.
pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(COLUMNS).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.values().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let bad = |line: usize, message: String| Error::ManifestParse { path: path.to_path_buf(), line, message };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(0, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(i + 2, e.to_string()))?;
        let step = rec[0].parse().map_err(|_| bad(i + 2, format!("bad step `{}`", &rec[0])))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| bad(i + 2, format!("bad value `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(HistoryRow::from_values(step, &vals)?);
    }
    Ok(rows)
}
