//! Checkpoint container.
//!
//! ```text
//! FDN-CHECKPOINT 1
//! config<TAB>key<TAB>value            (one line per ModelConfig field)
//! tensor<TAB>name<TAB>kind<TAB>d0xd1..<TAB>byte_offset<TAB>byte_len
//! end
//! <little-endian f64 buffers, concatenated in manifest order>
//! ```
//!
//! Offsets are relative to the first byte after the `end` line.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::network::FdnModel;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamKind;

const MAGIC: &str = "FDN-CHECKPOINT";
const VERSION: u32 = 1;

pub fn to_bytes(model: &FdnModel) -> Vec<u8> {
    let mut header = format!("{MAGIC} {VERSION}\n");
    for (k, v) in model.config.to_pairs() {
        header.push_str(&format!("config\t{k}\t{v}\n"));
    }
    let mut offset = 0usize;
    for entry in model.store.entries() {
        let kind = match entry.kind {
            ParamKind::Trainable => "param",
            ParamKind::Buffer => "buffer",
        };
        let shape: Vec<String> = entry.value.shape().iter().map(usize::to_string).collect();
        let len = entry.value.numel() * 8;
        header.push_str(&format!(
            "tensor\t{}\t{kind}\t{}\t{offset}\t{len}\n",
            entry.name,
            shape.join("x")
        ));
        offset += len;
    }
    header.push_str("end\n");
    let mut bytes = header.into_bytes();
    bytes.reserve(offset);
    for entry in model.store.entries() {
        for v in entry.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn from_bytes(bytes: &[u8]) -> Result<FdnModel> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| bad("missing 'end' header terminator".into()))?;
    let header =
        std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let data = &bytes[end + 5..];
    let mut lines = header.lines();

    let first = lines.next().unwrap_or_default();
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| bad(format!("bad magic line '{first}'")))?;
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }

    let mut config = ModelConfig::default();
    let mut tensors = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["config", key, value] => {
                if !config.set(key, value)? {
                    return Err(bad(format!("unknown config key '{key}'")));
                }
            }
            ["tensor", name, kind, shape, offset, len] => {
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| {
                        d.parse()
                            .map_err(|_| bad(format!("bad shape for '{name}'")))
                    })
                    .collect::<Result<_>>()?;
                let offset: usize = offset
                    .parse()
                    .map_err(|_| bad(format!("bad offset for '{name}'")))?;
                let len: usize = len
                    .parse()
                    .map_err(|_| bad(format!("bad length for '{name}'")))?;
                tensors.push((name.to_string(), kind.to_string(), shape, offset, len));
            }
            _ => return Err(bad(format!("unrecognized header line '{line}'"))),
        }
    }

    let mut model = FdnModel::new(config, 0)?;
    if tensors.len() != model.store.len() {
        return Err(bad(format!(
            "manifest lists {} tensors, architecture has {}",
            tensors.len(),
            model.store.len()
        )));
    }
    for (name, kind, shape, offset, len) in tensors {
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| bad(format!("unexpected tensor '{name}'")))?;
        let entry = model.store.entry(id);
        let expected_kind = match entry.kind {
            ParamKind::Trainable => "param",
            ParamKind::Buffer => "buffer",
        };
        if kind != expected_kind || entry.value.shape() != shape.as_slice() {
            return Err(bad(format!(
                "tensor '{name}' does not match the architecture"
            )));
        }
        let raw = data
            .get(offset..offset + len)
            .filter(|_| len == entry.value.numel() * 8)
            .ok_or_else(|| bad(format!("tensor '{name}' lies outside the data section")))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        model.store.set(id, Tensor::new(shape, values)?)?;
    }
    Ok(model)
}

pub fn save(model: &FdnModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<FdnModel> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn round_trip_is_exact() {
        let model = FdnModel::new(ModelConfig::tiny(Variant::Heavy), 11).unwrap();
        let bytes = to_bytes(&model);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.store, model.store);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let model = FdnModel::new(ModelConfig::tiny(Variant::Light), 1).unwrap();
        let bytes = to_bytes(&model);
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(from_bytes(b"garbage").is_err());
        let text =
            String::from_utf8_lossy(&bytes[..200]).replace("FDN-CHECKPOINT 1", "FDN-CHECKPOINT 9");
        let mut patched = text.into_bytes();
        patched.extend_from_slice(&bytes[200..]);
        assert!(from_bytes(&patched).is_err());
    }
}
