//! Single-file checkpoints: named f32 tensors plus the network config in the header metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use crate::error::{NetError, Result};
use crate::model::{FusionNet, NetConfig};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "trifusion";

fn ck(e: impl std::fmt::Display) -> NetError {
    NetError::Checkpoint(e.to_string())
}

/// Serializes every tensor (including running statistics) with extra metadata entries.
pub fn to_bytes<T: Scalar>(net: &mut FusionNet<T>, extra: &[(&str, String)]) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    net.visit(&mut |name, p| {
        let bytes = p.value.iter().flat_map(|v| (v.f64() as f32).to_le_bytes()).collect();
        tensors.push((name.to_string(), p.shape.clone(), bytes));
    });
    let views = tensors
        .iter()
        .map(|(n, s, b)| TensorView::new(Dtype::F32, s.clone(), b).map(|v| (n.clone(), v)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(ck)?;
    // One header key holding an ordered map keeps the file bytes reproducible.
    let mut entries = BTreeMap::new();
    entries.insert("format_version".to_string(), CHECKPOINT_VERSION.to_string());
    entries.insert("config".to_string(), serde_json::to_string(&net.config).map_err(ck)?);
    for (k, v) in extra {
        entries.insert(k.to_string(), v.clone());
    }
    let meta = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&entries).map_err(ck)?)]);
    safetensors::serialize(views, Some(meta)).map_err(ck)
}

pub fn save<T: Scalar>(net: &mut FusionNet<T>, path: &Path, extra: &[(&str, String)]) -> Result<()> {
    let bytes = to_bytes(net, extra)?;
    std::fs::write(path, bytes).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Header metadata of a checkpoint.
pub fn metadata(bytes: &[u8]) -> Result<BTreeMap<String, String>> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(ck)?;
    let raw = meta.metadata().as_ref().and_then(|m| m.get(META_KEY)).ok_or_else(|| ck("missing metadata"))?;
    serde_json::from_str(raw).map_err(ck)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<FusionNet<T>> {
    let meta = metadata(bytes)?;
    let version = meta.get("format_version").ok_or_else(|| ck("missing format version"))?;
    if version != &CHECKPOINT_VERSION.to_string() {
        return Err(ck(format!("unsupported format version {version}")));
    }
    let cfg: NetConfig = serde_json::from_str(meta.get("config").ok_or_else(|| ck("missing config"))?).map_err(ck)?;
    let mut net = FusionNet::new(cfg, 0)?;
    load_into(&mut net, bytes)?;
    Ok(net)
}

/// Copies tensors into an existing network; names and shapes must match exactly.
pub fn load_into<T: Scalar>(net: &mut FusionNet<T>, bytes: &[u8]) -> Result<()> {
    let st = SafeTensors::deserialize(bytes).map_err(ck)?;
    let mut stored: std::collections::BTreeSet<String> = st.names().into_iter().map(str::to_string).collect();
    let mut err = None;
    net.visit(&mut |name, p| {
        if err.is_some() {
            return;
        }
        let t = match st.tensor(name) {
            Ok(t) => t,
            Err(_) => {
                err = Some(ck(format!("tensor {name} missing")));
                return;
            }
        };
        if t.dtype() != Dtype::F32 || t.shape() != p.shape.as_slice() {
            err = Some(ck(format!("tensor {name}: stored {:?} {:?}, model {:?}", t.dtype(), t.shape(), p.shape)));
            return;
        }
        for (v, b) in p.value.iter_mut().zip(t.data().chunks_exact(4)) {
            *v = T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
        stored.remove(name);
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = stored.into_iter().next() {
        return Err(ck(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<FusionNet<T>> {
    let bytes = std::fs::read(path).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
