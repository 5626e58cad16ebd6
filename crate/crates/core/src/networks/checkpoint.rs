//! Versioned binary container for parameters, configuration and metadata.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   b"FAGECKPT"
//! version u32
//! config  u64 length + UTF-8 key=value text
//! meta    u64 length + UTF-8 key=value text
//! count   u32
//! count x { name: u64 length + UTF-8, ndim: u32, dims: ndim x u64, data: prod(dims) x f64 }
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a load reproduces them exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use autodiff::Array;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::IxDyn;

use super::{NetworkBundle, SET_NAMES};
use crate::config::TrainingConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FAGECKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub meta: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, Array>,
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    if len > 1 << 30 {
        return Err(Error::CheckpointFormat(format!("string length {len} is implausible")));
    }
    let mut buf = vec![0; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|e| Error::CheckpointFormat(e.to_string()))
}

fn truncated(e: std::io::Error) -> Error {
    Error::CheckpointFormat(format!("truncated or unreadable: {e}"))
}

fn meta_text(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

impl Checkpoint {
    pub fn new(config: TrainingConfig) -> Self {
        Self { config, meta: BTreeMap::new(), arrays: BTreeMap::new() }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_str(w, &self.config.to_text())?;
        write_str(w, &meta_text(&self.meta))?;
        w.write_u32::<LittleEndian>(self.arrays.len() as u32)?;
        for (name, a) in &self.arrays {
            write_str(w, name)?;
            w.write_u32::<LittleEndian>(a.ndim() as u32)?;
            for d in a.shape() {
                w.write_u64::<LittleEndian>(*d as u64)?;
            }
            for v in a.iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::CheckpointFormat("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::CheckpointFormat(format!("unsupported version {version}")));
        }
        let config = TrainingConfig::from_text(&read_str(r)?)?;
        let mut meta = BTreeMap::new();
        for line in read_str(r)?.lines() {
            if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let count = r.read_u32::<LittleEndian>().map_err(truncated)?;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            if ndim > 8 {
                return Err(Error::CheckpointFormat(format!("{name}: rank {ndim} too large")));
            }
            let dims = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(truncated)?;
            let len: usize = dims.iter().product();
            let mut data = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
            let a = Array::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
            arrays.insert(name, a);
        }
        Ok(Self { config, meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let wrap = |source| Error::CheckpointWrite { path: path.to_path_buf(), source };
        let tmp = path.with_extension("partial");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(wrap)?);
            self.write_to(&mut w).map_err(wrap)?;
            w.flush().map_err(wrap)?;
        }
        std::fs::rename(&tmp, path).map_err(wrap)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(format!("opening checkpoint {}", path.display()), e))?;
        Self::read_from(&mut BufReader::new(f))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta
            .get(key)
            .ok_or_else(|| Error::CheckpointFormat(format!("missing metadata `{key}`")))?
            .parse()
            .map_err(|_| Error::CheckpointFormat(format!("bad metadata `{key}`")))
    }

    /// Stores all eight parameter sets under `<set>/<param>` names.
    pub fn put_networks(&mut self, nets: &NetworkBundle) {
        for (set_name, set) in SET_NAMES.iter().zip(nets.sets()) {
            for (k, v) in set.iter() {
                self.arrays.insert(format!("{set_name}/{k}"), v.clone());
            }
        }
        let classes = nets.generator_id_head.classes();
        self.meta.insert("identity_count".into(), classes.to_string());
    }

    /// Rebuilds the networks described by the stored configuration and fills
    /// them with the stored values. Every parameter must be present with the
    /// expected shape.
    pub fn networks(&self) -> Result<NetworkBundle> {
        let classes: usize = self.meta_parse("identity_count")?;
        let mut nets = NetworkBundle::new(&self.config, classes);
        for (set_name, set) in SET_NAMES.iter().zip(nets.sets_mut()) {
            for (k, v) in set.iter_mut() {
                let key = format!("{set_name}/{k}");
                let stored =
                    self.arrays.get(&key).ok_or_else(|| Error::CheckpointFormat(format!("missing parameter {key}")))?;
                if stored.shape() != v.shape() {
                    return Err(Error::CheckpointFormat(format!(
                        "{key}: stored shape {:?}, architecture expects {:?}",
                        stored.shape(),
                        v.shape()
                    )));
                }
                v.assign(stored);
            }
        }
        Ok(nets)
    }
}
