use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// An external age estimator and face verifier.
///
/// Implementations must be pure queries: the same image always yields the
/// same answer and nothing on the training side is touched.
pub trait VerifierClient {
    /// Stable identifier, used to separate cache directories.
    fn name(&self) -> &str;

    /// Estimated age in years.
    fn estimate_age(&self, image: &ImageTensor) -> Result<f64>;

    /// Same-person confidence in percent, within `[0, 100]`.
    fn verify(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64>;
}

pub type ClientFactory = Box<dyn Fn() -> Result<Box<dyn VerifierClient>>>;

/// Verifier clients selectable by name.
pub struct ClientRegistry {
    factories: BTreeMap<String, ClientFactory>,
}

impl Default for ClientRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("toy-oracle", Box::new(|| Ok(Box::new(super::ToyOracle::default()))));
        r
    }
}

impl ClientRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// Adds or replaces a client.
    pub fn register(&mut self, name: &str, factory: ClientFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn VerifierClient>> {
        match self.factories.get(name) {
            Some(f) => f(),
            None => Err(Error::UnknownClient { name: name.to_string(), known: self.names() }),
        }
    }
}

/// Wraps a client with an on-disk answer cache, one small file per
/// `(query, image hash)` pair under `<dir>/<client name>/`.
pub struct CachedClient {
    inner: Box<dyn VerifierClient>,
    dir: PathBuf,
}

impl CachedClient {
    pub fn new(inner: Box<dyn VerifierClient>, root: &Path) -> Result<Self> {
        let dir = root.join(inner.name());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(Self { inner, dir })
    }

    fn cached(&self, key: &str, query: impl FnOnce() -> Result<f64>) -> Result<f64> {
        let path = self.dir.join(format!("{key}.txt"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(v) = text.trim().parse::<f64>() {
                return Ok(v);
            }
        }
        let v = query()?;
        std::fs::write(&path, format!("{v}\n")).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(v)
    }
}

impl VerifierClient for CachedClient {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn estimate_age(&self, image: &ImageTensor) -> Result<f64> {
        self.cached(&format!("age_{}", image.content_hash()), || self.inner.estimate_age(image))
    }

    fn verify(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        let key = format!("verify_{}_{}", a.content_hash(), b.content_hash());
        self.cached(&key, || self.inner.verify(a, b))
    }
}

/// Runs `query`, retrying transient [`Error::ClientFailure`]s up to
/// `attempts` times in total. Exhausted retries and images the client
/// rejects as invalid become `None`; other errors propagate.
pub fn ask(attempts: usize, mut query: impl FnMut() -> Result<f64>) -> Result<Option<f64>> {
    for _ in 0..attempts.max(1) {
        match query() {
            Ok(v) => return Ok(Some(v)),
            Err(Error::ClientFailure(msg)) => log::warn!("client failure, retrying: {msg}"),
            Err(Error::NotToyImage(msg)) => {
                log::warn!("client rejected image: {msg}");
                return Ok(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}
