//! Binary sparse model file.
//!
//! Little-endian layout:
//!
//! ```text
//! "ALCS" | version u32 = 1 | layer_count u32
//! per layer:
//!   kind u8 (0 = conv, 1 = fc) | o_c u32 | i_c u32 | k_h u32 | k_w u32
//!   stride u32 | pad u32 | group_size u32 | group_count u32
//!   per group: nnz_cols u32 | offsets nnz_cols × u32 | values nnz_cols × size × f32
//!   bias_flag u8 | bias o_c × f32 (if flag)
//! crc32 u32 over every preceding byte
//! ```

use super::dense::KernelShape;
use super::grouped::{group_partition, GroupBlock, GroupedCsrKernel};
use crate::error::{DecodeError, Error, Result};

pub const MAGIC: [u8; 4] = *b"ALCS";
pub const VERSION: u32 = 1;
/// Magic, version and layer count.
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    FullyConnected,
}

impl LayerKind {
    fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::FullyConnected => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LayerKind::Conv),
            1 => Some(LayerKind::FullyConnected),
            _ => None,
        }
    }
}

/// One prunable layer of a stored model.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayer {
    pub kind: LayerKind,
    pub stride: usize,
    pub pad: usize,
    pub kernel: GroupedCsrKernel<f32>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseModel {
    pub layers: Vec<SparseLayer>,
}

impl SparseModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        serialize_model(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        deserialize_model(bytes)
    }

    pub fn write_to(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn serialize_model(model: &SparseModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, model.layers.len());
    for layer in &model.layers {
        let kernel = &layer.kernel;
        let shape = kernel.shape();
        out.push(layer.kind.tag());
        for dim in shape.dims() {
            put_u32(&mut out, dim);
        }
        put_u32(&mut out, layer.stride);
        put_u32(&mut out, layer.pad);
        put_u32(&mut out, kernel.group_size());
        put_u32(&mut out, kernel.groups().len());
        for block in kernel.groups() {
            put_u32(&mut out, block.nnz_cols());
            for &offset in block.offsets() {
                out.extend_from_slice(&offset.to_le_bytes());
            }
            for v in block.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &layer.bias {
            Some(bias) => {
                out.push(1);
                for v in bias {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(DecodeError::Truncated { offset: self.pos, needed: n - available });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, DecodeError> {
        self.u32().map(|v| v as usize)
    }

    /// Reads `count` elements of `width` bytes, refusing counts the remaining input
    /// cannot hold before allocating.
    fn array<T>(&mut self, count: usize, width: usize, f: impl Fn(&[u8]) -> T) -> Result<Vec<T>, DecodeError> {
        let needed = count.checked_mul(width).ok_or_else(|| DecodeError::Invalid("array size overflows".into()))?;
        Ok(self.take(needed)?.chunks_exact(width).map(f).collect())
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, DecodeError> {
        self.array(count, 4, |b| f32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn deserialize_model(bytes: &[u8]) -> Result<SparseModel> {
    let mut magic = [0u8; 4];
    let head = bytes.len().min(4);
    magic[..head].copy_from_slice(&bytes[..head]);
    if head < 4 || magic != MAGIC {
        return Err(DecodeError::BadMagic { expected: MAGIC, found: magic }.into());
    }
    // Everything except the trailing checksum is payload.
    let Some(payload_len) = bytes.len().checked_sub(4).filter(|&n| n >= HEADER_LEN) else {
        return Err(DecodeError::Truncated { offset: bytes.len(), needed: HEADER_LEN + 4 - bytes.len() }.into());
    };
    let mut reader = Reader { bytes: &bytes[..payload_len], pos: 4 };
    let version = reader.u32()?;
    if version != VERSION {
        return Err(DecodeError::Version(version).into());
    }
    let layer_count = reader.usize()?;
    let mut layers = Vec::new();
    for index in 0..layer_count {
        layers.push(read_layer(&mut reader).map_err(|e| match e {
            Error::Structural(msg) | Error::Dimension(msg) => {
                DecodeError::Invalid(format!("layer {index}: {msg}")).into()
            }
            other => other,
        })?);
    }
    if reader.pos != payload_len {
        return Err(DecodeError::Trailing(payload_len - reader.pos).into());
    }
    let stored = u32::from_le_bytes(bytes[payload_len..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..payload_len]);
    if stored != computed {
        return Err(DecodeError::Checksum { stored, computed }.into());
    }
    Ok(SparseModel { layers })
}

fn read_layer(reader: &mut Reader<'_>) -> Result<SparseLayer> {
    let tag = reader.u8()?;
    let kind = LayerKind::from_tag(tag).ok_or_else(|| DecodeError::Invalid(format!("unknown layer kind {tag}")))?;
    let shape = KernelShape::new(reader.usize()?, reader.usize()?, reader.usize()?, reader.usize()?)?;
    let stride = reader.usize()?;
    let pad = reader.usize()?;
    if stride == 0 {
        return Err(DecodeError::Invalid("stride 0".into()).into());
    }
    if kind == LayerKind::FullyConnected && (shape.kernel_h, shape.kernel_w, stride, pad) != (1, 1, 1, 0) {
        return Err(DecodeError::Invalid("fully-connected layer must be 1x1, stride 1, pad 0".into()).into());
    }
    let group_size = reader.usize()?;
    let group_count = reader.usize()?;
    if group_size == 0 {
        return Err(DecodeError::Invalid("group size 0".into()).into());
    }
    if group_count != shape.out_channels.div_ceil(group_size) {
        return Err(DecodeError::Invalid(format!(
            "group count {group_count} inconsistent with o_c={} g={group_size}",
            shape.out_channels
        ))
        .into());
    }
    let mut groups = Vec::with_capacity(group_count);
    for range in group_partition(shape.out_channels, group_size) {
        let nnz = reader.usize()?;
        if nnz > shape.columns() {
            return Err(DecodeError::Invalid(format!("nnz_cols {nnz} exceeds column count")).into());
        }
        let offsets = reader.array(nnz, 4, |b| u32::from_le_bytes(b.try_into().unwrap()))?;
        let values = reader.f32s(nnz * range.len())?;
        groups.push(GroupBlock::new(range.len(), offsets, values));
    }
    let kernel = GroupedCsrKernel::from_parts(shape, group_size, groups)?;
    let bias = match reader.u8()? {
        0 => None,
        1 => Some(reader.f32s(shape.out_channels)?),
        flag => return Err(DecodeError::Invalid(format!("bias flag {flag}")).into()),
    };
    Ok(SparseLayer { kind, stride, pad, kernel, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_format::{compress, DenseKernel};

    fn one_layer_model() -> SparseModel {
        let shape = KernelShape::new(3, 2, 3, 3).unwrap();
        let dense = DenseKernel::from_fn(shape, |n, c, r, s| {
            if (c + r + s) % 2 == 0 {
                (n * 7 + c * 3 + r + s) as f32 * 0.25 - 1.0
            } else {
                0.0
            }
        });
        SparseModel {
            layers: vec![SparseLayer {
                kind: LayerKind::Conv,
                stride: 1,
                pad: 1,
                kernel: compress(&dense, 2),
                bias: Some(vec![0.5, -0.5, 1.5]),
            }],
        }
    }

    #[test]
    fn empty_model_is_header_plus_checksum() {
        let bytes = serialize_model(&SparseModel::default());
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(&bytes[..4], b"ALCS");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0u32.to_le_bytes());
        assert_eq!(deserialize_model(&bytes).unwrap(), SparseModel::default());
    }

    #[test]
    fn single_layer_roundtrip_is_bit_exact() {
        let model = one_layer_model();
        let bytes = serialize_model(&model);
        let back = deserialize_model(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(serialize_model(&back), bytes);
    }

    #[test]
    fn distinct_decode_errors() {
        let bytes = serialize_model(&one_layer_model());

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(deserialize_model(&bad_magic), Err(Error::Decode(DecodeError::BadMagic { .. }))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(matches!(deserialize_model(&bad_version), Err(Error::Decode(DecodeError::Version(2)))));

        let truncated = &bytes[..bytes.len() - 9];
        assert!(matches!(deserialize_model(truncated), Err(Error::Decode(DecodeError::Truncated { .. }))));

        let mut flipped = bytes.clone();
        let last_value = bytes.len() - 4 - 1 - 12 - 1;
        flipped[last_value] ^= 0x10;
        assert!(matches!(deserialize_model(&flipped), Err(Error::Decode(DecodeError::Checksum { .. }))));
    }

    #[test]
    fn every_single_byte_flip_is_detected() {
        let model = one_layer_model();
        let bytes = serialize_model(&model);
        for i in 0..bytes.len() {
            for bit in [0x01u8, 0x80] {
                let mut corrupt = bytes.clone();
                corrupt[i] ^= bit;
                match deserialize_model(&corrupt) {
                    Err(_) => {}
                    Ok(decoded) => panic!("flip at byte {i} decoded silently: equal={}", decoded == model),
                }
            }
        }
    }
}
