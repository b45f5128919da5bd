use std::collections::BTreeMap;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};

/// Per-point class ids. The IGNORE sentinel is stored as `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    pub labels: Vec<u32>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        let ignore = num_classes as u32;
        if let Some(&label) = labels.iter().find(|&&l| l > ignore) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self { labels, num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ignore(&self) -> u32 {
        self.num_classes as u32
    }

    pub fn is_ignore(&self, i: usize) -> bool {
        self.labels[i] == self.ignore()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Maps raw 16-bit semantic ids onto training classes or IGNORE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapTable {
    mapping: BTreeMap<u16, Option<u32>>,
    num_classes: usize,
}

impl RemapTable {
    pub fn new(num_classes: usize) -> Self {
        Self { mapping: BTreeMap::new(), num_classes }
    }

    /// Identity mapping `i -> i` for every class id.
    pub fn identity(num_classes: usize) -> Self {
        let mut table = Self::new(num_classes);
        for c in 0..num_classes {
            table.mapping.insert(c as u16, Some(c as u32));
        }
        table
    }

    pub fn insert(&mut self, raw: u16, class: Option<u32>) -> Result<()> {
        if let Some(c) = class {
            if c as usize >= self.num_classes {
                return Err(Error::LabelOutOfRange { label: c, num_classes: self.num_classes });
            }
        }
        self.mapping.insert(raw, class);
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, raw: u16) -> Result<u32> {
        match self.mapping.get(&raw) {
            Some(Some(c)) => Ok(*c),
            Some(None) => Ok(self.num_classes as u32),
            None => Err(Error::UnmappedLabel(raw)),
        }
    }

    /// Parses `raw_id class_id` lines; `-` maps to IGNORE. Ids may be decimal or `0x` hex.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, num_classes: usize) -> Result<Self> {
        let mut table = Self::new(num_classes);
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse { line: n + 1, msg: msg.to_string() };
            let mut fields = line.split_whitespace();
            let (Some(raw), Some(class), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(parse_err("expected `raw_id class_id`"));
            };
            let raw = parse_int(raw)
                .and_then(|v| u16::try_from(v).ok())
                .ok_or_else(|| parse_err("raw id is not a 16-bit integer"))?;
            let class = if class == "-" {
                None
            } else {
                Some(
                    parse_int(class)
                        .and_then(|v| u32::try_from(v).ok())
                        .ok_or_else(|| parse_err("class id is not an integer"))?,
                )
            };
            table.insert(raw, class)?;
        }
        Ok(table)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (raw, class) in &self.mapping {
            match class {
                Some(c) => out.push_str(&format!("{raw} {c}\n")),
                None => out.push_str(&format!("{raw} -\n")),
            }
        }
        out
    }
}

fn parse_int(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Decodes 32-bit label words; the low 16 bits are the semantic id, the
/// high 16 bits (instance id) are discarded.
pub fn read_labels(bytes: &[u8], remap: &RemapTable) -> Result<LabelVector> {
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedLength { len: bytes.len(), record: 4 });
    }
    let labels = bytes
        .chunks_exact(4)
        .map(|w| remap.get((LittleEndian::read_u32(w) & 0xFFFF) as u16))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelVector { labels, num_classes: remap.num_classes })
}

/// Writes class ids as raw label words (no instance bits). IGNORE is not representable.
pub fn write_labels(labels: &LabelVector) -> Result<Vec<u8>> {
    write_predictions(labels)
}

/// One little-endian u32 per point, in point order.
pub fn write_predictions(labels: &LabelVector) -> Result<Vec<u8>> {
    let mut out = vec![0u8; labels.len() * 4];
    for (i, (&l, w)) in labels.labels.iter().zip(out.chunks_exact_mut(4)).enumerate() {
        if l == labels.ignore() {
            return Err(Error::IgnoreLabel(i));
        }
        LittleEndian::write_u32(w, l);
    }
    Ok(out)
}

pub fn read_predictions(bytes: &[u8], num_classes: usize) -> Result<LabelVector> {
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedLength { len: bytes.len(), record: 4 });
    }
    let labels = bytes
        .chunks_exact(4)
        .map(|w| {
            let label = LittleEndian::read_u32(w);
            if label as usize >= num_classes {
                Err(Error::LabelOutOfRange { label, num_classes })
            } else {
                Ok(label)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelVector { labels, num_classes })
}
