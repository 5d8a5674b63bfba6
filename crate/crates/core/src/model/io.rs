//! Binary model file.
//!
//! Layout: the magic `RCCN`, a little-endian `u16` format version, a `u32`
//! byte length followed by a JSON header (network spec, discretization,
//! completed stages and the blob table), then every parameter as
//! little-endian `f32` in declaration order, then every momentum buffer in
//! the same order, and finally the 64-bit FNV-1a hash of all preceding bytes.

use super::ModelState;
use crate::discretize::DiscretizationScheme;
use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"RCCN";
pub const FORMAT_VERSION: u16 = 1;
const KIND: &str = "model";

#[derive(Serialize, Deserialize)]
struct Blob {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    scheme: DiscretizationScheme,
    stages_completed: u32,
    blobs: Vec<Blob>,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn to_bytes(model: &ModelState) -> Result<Vec<u8>> {
    let header = Header {
        spec: model.spec.clone(),
        scheme: model.scheme,
        stages_completed: model.stages_completed,
        blobs: model
            .params
            .iter()
            .map(|p| Blob {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 18 + 8 * model.num_parameters());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params.iter().map(|p| &p.value).chain(model.params.iter().map(|p| &p.momentum)) {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn format(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        kind: KIND,
        offset: offset as u64,
        reason: reason.into(),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format(0, "bad magic (expected \"RCCN\")"));
    }
    if bytes.len() < 6 {
        return Err(format(bytes.len(), "file ends inside the version tag"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 18 {
        return Err(format(bytes.len(), "file too short for header length and checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("eight bytes"));
    let computed = fnv1a(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let header_len = u32::from_le_bytes(body[6..10].try_into().expect("four bytes")) as usize;
    let header_end = 10usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| format(6, format!("header length {header_len} exceeds file")))?;
    let header: Header = serde_json::from_slice(&body[10..header_end]).map_err(|e| format(10, format!("header: {e}")))?;

    let mut model = ModelState::zeroed(&header.spec, &header.scheme)?;
    model.stages_completed = header.stages_completed;
    if header.blobs.len() != model.params.len() {
        return Err(format(
            10,
            format!("blob table lists {} tensors, layout has {}", header.blobs.len(), model.params.len()),
        ));
    }
    for (blob, p) in header.blobs.iter().zip(&model.params) {
        if blob.name != p.name || blob.shape != p.value.shape() {
            return Err(format(
                10,
                format!("blob {} {:?} does not match layout entry {} {:?}", blob.name, blob.shape, p.name, p.value.shape()),
            ));
        }
    }
    let expected = header_end + 8 * model.num_parameters();
    if body.len() != expected {
        return Err(format(
            body.len(),
            format!("payload is {} bytes, layout needs {}", body.len() - header_end, expected - header_end),
        ));
    }

    let mut offset = header_end;
    let mut read = |t: &mut Tensor| {
        for v in t.data_mut() {
            let raw: [u8; 4] = body[offset..offset + 4].try_into().expect("four bytes");
            *v = f64::from(f32::from_le_bytes(raw));
            offset += 4;
        }
    };
    for p in &mut model.params {
        read(&mut p.value);
    }
    for p in &mut model.params {
        read(&mut p.momentum);
    }
    Ok(model)
}

pub fn save(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Mode;
    use crate::model::Variant;

    fn tiny() -> ModelState {
        let spec = NetworkSpec::scaled(32, 32, 4, 64, Variant::Rccn);
        let scheme = DiscretizationScheme::new(Mode::SpacingIncreasing, 1.0, 20.0, 4).unwrap();
        ModelState::build(&spec, &scheme, 3).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let m = tiny();
        let a = to_bytes(&m).unwrap();
        let back = from_bytes(&a).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), a);
    }

    #[test]
    fn truncation_fails_checksum() {
        let a = to_bytes(&tiny()).unwrap();
        let err = from_bytes(&a[..a.len() - 5]).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }), "{err}");
    }

    #[test]
    fn wrong_version_and_magic_rejected() {
        let mut a = to_bytes(&tiny()).unwrap();
        a[4] = 9;
        assert!(matches!(from_bytes(&a).unwrap_err(), Error::Version { found: 9, .. }));
        a[0] = b'X';
        assert!(matches!(from_bytes(&a).unwrap_err(), Error::Format { offset: 0, .. }));
    }

    #[test]
    fn flipped_payload_byte_detected() {
        let mut a = to_bytes(&tiny()).unwrap();
        let i = a.len() - 20;
        a[i] ^= 0x40;
        assert!(matches!(from_bytes(&a).unwrap_err(), Error::Checksum { .. }));
    }
}
