//! Versioned JSON container for named parameter tensors plus optimizer state.
//!
//! Layout (version 1):
//!
//! ```text
//! {
//!   "format": "tearnet-checkpoint",
//!   "version": 1,
//!   "scalar": "f32" | "f64",
//!   "header": { ... caller-defined, e.g. model config and variant ... },
//!   "params": { "names": [..], "tensors": [{"shape": [..], "data": [..]}, ..] },
//!   "adam": null | { "step", "lr", "beta1", "beta2", "eps", "first": [..], "second": [..] }
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ParamStore, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "tearnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar, H: Serialize + serde::de::DeserializeOwned")]
pub struct Checkpoint<T, H> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub header: H,
    pub params: ParamStore<T>,
    pub adam: Option<AdamState<T>>,
}

impl<T, H> Checkpoint<T, H>
where
    T: Scalar,
    H: Serialize + serde::de::DeserializeOwned,
{
    pub fn new(header: H, params: ParamStore<T>, adam: Option<AdamState<T>>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            scalar: T::NAME.to_string(),
            header,
            params,
            adam,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let text = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Mismatch(format!(
                "{} is not a checkpoint (format `{}`)",
                path.display(),
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Mismatch(format!(
                "{}: unsupported checkpoint version {}",
                path.display(),
                ck.version
            )));
        }
        if ck.scalar != T::NAME {
            return Err(Error::Mismatch(format!(
                "{}: checkpoint holds {} values, loader expects {}",
                path.display(),
                ck.scalar,
                T::NAME
            )));
        }
        if let Some(adam) = &ck.adam {
            adam.check_matches(&ck.params)?;
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    #[test]
    fn save_load_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut p = ParamStore::<f32>::new();
        p.add("a", Tensor::matrix(1, 3, vec![0.1, -1.0e-7, 3.4028235e38]).unwrap());
        let mut adam = AdamState::new(&p, 1e-3);
        adam.step(&mut p, &[Tensor::matrix(1, 3, vec![0.3, 0.2, 0.1]).unwrap()])
            .unwrap();
        let ck = Checkpoint::new("hdr".to_string(), p, Some(adam));
        ck.save(&path).unwrap();
        let back = Checkpoint::<f32, String>::load(&path).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn wrong_scalar_width_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = Checkpoint::new((), ParamStore::<f32>::new(), None);
        ck.save(&path).unwrap();
        let err = Checkpoint::<f64, ()>::load(&path).unwrap_err();
        assert!(matches!(err, Error::Mismatch(_)));
    }
}
