//! `AMVM` checkpoints: a flat list of dense layers.
//!
//! ```text
//! "AMVM" | version u16 | layer count u32 |
//!   per layer: outputs u32 | inputs u32 | outputs·inputs f64 weights | outputs f64 bias
//! ```
//! Little-endian throughout.

use byteorder::{ByteOrder, LittleEndian};

use super::dense::DenseLayer;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AMVM";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn write_checkpoint(layers: &[DenseLayer]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    let mut buf = [0u8; 8];
    for layer in layers {
        out.extend_from_slice(&(layer.outputs as u32).to_le_bytes());
        out.extend_from_slice(&(layer.inputs as u32).to_le_bytes());
        for &v in layer.weights.iter().chain(&layer.bias) {
            LittleEndian::write_f64(&mut buf, v);
            out.extend_from_slice(&buf);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::PayloadLength { expected: end, found: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(LittleEndian::read_u32(self.take(4)?) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::invalid("layer too large"))?)?;
        Ok(raw.chunks_exact(8).map(LittleEndian::read_f64).collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<DenseLayer>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: "AMVM" });
    }
    let version = LittleEndian::read_u16(r.take(2)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let outputs = r.u32()?;
        let inputs = r.u32()?;
        let weights = r.f64s(outputs * inputs)?;
        let bias = r.f64s(outputs)?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: layers.len() });
        }
        layers.push(DenseLayer::from_parts(inputs, outputs, weights, bias)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::PayloadLength { expected: r.pos, found: bytes.len() });
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_byte_exact(
            shapes in prop::collection::vec((1usize..6, 1usize..6), 0..4),
            seed in any::<u64>(),
        ) {
            let mut v = seed;
            let mut next = || { v = v.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (v >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
            let layers: Vec<DenseLayer> = shapes.iter().map(|&(i, o)| {
                DenseLayer::from_parts(i, o, (0..i * o).map(|_| next()).collect(), (0..o).map(|_| next()).collect()).unwrap()
            }).collect();
            let bytes = write_checkpoint(&layers);
            let back = read_checkpoint(&bytes).unwrap();
            prop_assert_eq!(&back, &layers);
            prop_assert_eq!(write_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = write_checkpoint(&[DenseLayer::zeros(2, 3)]);
        assert!(matches!(read_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::PayloadLength { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(read_checkpoint(&bad), Err(Error::BadMagic { .. })));
        let mut v9 = bytes.clone();
        v9[4] = 9;
        assert!(matches!(read_checkpoint(&v9), Err(Error::UnsupportedVersion(9))));
        let mut extra = bytes;
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
    }
}
