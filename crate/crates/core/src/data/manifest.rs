use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{DatasetStats, LabeledSample};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

const HEADER: [&str; 3] = ["path", "identity", "age"];

/// A manifest row; the image itself is read on [`SampleDescriptor::load`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDescriptor {
    pub path: PathBuf,
    pub identity: usize,
    pub identity_key: String,
    pub age: f64,
}

impl SampleDescriptor {
    pub fn load(&self, resolution: usize) -> Result<LabeledSample> {
        Ok(LabeledSample { image: ImageTensor::load(&self.path, resolution)?, identity: self.identity, age: self.age })
    }
}

/// Reads a `path,identity,age` CSV. Relative image paths resolve against the
/// manifest's directory; identity keys become dense indices in first-seen
/// order. Every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<(Vec<SampleDescriptor>, DatasetStats)> {
    let parse_err = |line: usize, message: String| Error::ManifestParse { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(parse_err(
            1,
            format!("expected header `path,identity,age`, got `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let (file, key, age) = (&record[0], &record[1], &record[2]);
        if file.is_empty() || key.is_empty() {
            return Err(parse_err(line, "empty path or identity".into()));
        }
        let age: f64 = age.parse().map_err(|_| parse_err(line, format!("age `{age}` is not a number")))?;
        if !age.is_finite() {
            return Err(parse_err(line, format!("age `{age}` is not finite")));
        }
        let image_path = base.join(file);
        if !image_path.is_file() {
            return Err(Error::MissingImage(image_path));
        }
        let next = ids.len();
        let identity = *ids.entry(key.to_string()).or_insert(next);
        rows.push(SampleDescriptor { path: image_path, identity, identity_key: key.to_string(), age });
    }
    if rows.is_empty() {
        return Err(parse_err(1, "manifest has no rows".into()));
    }
    let stats = DatasetStats::from_labels(rows.iter().map(|r| (r.identity, r.age)))?;
    Ok((rows, stats))
}

/// Writes rows with paths relative to `path`'s directory when possible.
pub fn write_manifest(path: &Path, rows: &[SampleDescriptor]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(format!("writing {}", path.display()), e.into()))?;
    let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
        w.write_record([rel.to_string_lossy().as_ref(), r.identity_key.as_str(), &r.age.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn write_png(dir: &Path, name: &str) {
        RgbImage::new(4, 4).save(dir.join(name)).unwrap();
    }

    #[test]
    fn reads_rows_and_stats() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.png", "b.png", "c.png"] {
            write_png(dir.path(), n);
        }
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "path,identity,age\na.png,p7,20\nb.png,p9,61.5\nc.png,p7,33\n").unwrap();
        let (rows, stats) = load_manifest(&m).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.identity).collect::<Vec<_>>(), vec![0, 1, 0]);
        assert_eq!((stats.age_min, stats.age_max), (20.0, 61.5));
        assert_eq!(stats.identity_count, 2);
        let s = rows[1].load(4).unwrap();
        assert_eq!(s.image.resolution(), 4);
    }

    #[test]
    fn bad_age_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png");
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "path,identity,age\na.png,p,20\na.png,p,abc\n").unwrap();
        match load_manifest(&m).unwrap_err() {
            Error::ManifestParse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("abc"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        std::fs::write(&m, "path,identity,age\ngone.png,p,20\n").unwrap();
        match load_manifest(&m).unwrap_err() {
            Error::MissingImage(p) => assert!(p.ends_with("gone.png")),
            e => panic!("unexpected {e}"),
        }
    }
}
