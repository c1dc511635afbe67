//! The TQT1 tensor file format and its multi-tensor container.
//!
//! A record is laid out as follows, all little-endian:
//!
//! ```text
//! magic      4 bytes  "TQT1"
//! version    u8       1
//! dtype      u8       0 = f32, 1 = u8, 2 = u16, 3 = u32
//! scheme     u8       0 = raw, 1 = uniform, 2 = truncquant
//! bits       u8       0 for f32 payloads
//! ndim       u32
//! dims       ndim x u64
//! norm mode  u8       0 = none, 1 = dorefa-tanh, 2 = minmax
//! delta'     f32
//! aux        2 x f32
//! payload    product(dims) elements of dtype
//! ```
//!
//! A float record with a non-raw scheme holds the master weights of a
//! fake-quantized layer. Integer records always carry a scheme, a bit width
//! and normalization parameters so they can be dequantized on their own.
//!
//! The container is a `u16` record count followed by, per record, a `u16`
//! name length, the UTF-8 name, a `u64` record length and the record bytes.

use std::fmt;

use truncquant_core::{NormMode, NormalizationParams, QuantizedTensor, Scheme, Tensor};

pub const MAGIC: [u8; 4] = *b"TQT1";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub offset: u64,
    pub reason: String,
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "format error at byte {}: {}", self.offset, self.reason)
    }
}

impl std::error::Error for FormatError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U8 = 1,
    U16 = 2,
    U32 = 3,
}

impl DType {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            2 => Some(DType::U16),
            3 => Some(DType::U32),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::U16 => 2,
            DType::F32 | DType::U32 => 4,
        }
    }

    fn max_bits(self) -> u32 {
        match self {
            DType::U8 => 8,
            DType::U16 | DType::U32 | DType::F32 => 16,
        }
    }
}

/// Float tensor plus optional quantization metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRecord {
    pub tensor: Tensor,
    /// Set for master weights of a fake-quantized layer.
    pub scheme: Option<Scheme>,
    pub norm: Option<NormalizationParams>,
}

impl FloatRecord {
    pub fn raw(tensor: Tensor) -> Self {
        Self {
            tensor,
            scheme: None,
            norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorRecord {
    Float(FloatRecord),
    Quantized(QuantizedTensor),
}

impl TensorRecord {
    pub fn dims(&self) -> &[usize] {
        match self {
            TensorRecord::Float(f) => f.tensor.dims(),
            TensorRecord::Quantized(q) => q.dims(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedRecord {
    pub name: String,
    pub record: TensorRecord,
}

/// Either a bare record or a container of named records.
#[derive(Debug, Clone, PartialEq)]
pub enum TqtFile {
    Single(TensorRecord),
    Container(Vec<NamedRecord>),
}

fn scheme_code(s: Option<Scheme>) -> u8 {
    match s {
        None => 0,
        Some(Scheme::Uniform) => 1,
        Some(Scheme::TruncQuant) => 2,
    }
}

fn norm_code(n: Option<&NormalizationParams>) -> u8 {
    match n.map(|p| p.mode) {
        None => 0,
        Some(NormMode::DorefaTanh) => 1,
        Some(NormMode::MinMax) => 2,
    }
}

/// Smallest dtype able to hold `bits`-bit bins.
fn bin_dtype(bits: u32) -> DType {
    if bits <= 8 {
        DType::U8
    } else {
        DType::U16
    }
}

pub fn encode(record: &TensorRecord) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    let (dtype, scheme, bits, norm) = match record {
        TensorRecord::Float(f) => (DType::F32, f.scheme, 0u8, f.norm.as_ref()),
        TensorRecord::Quantized(q) => (
            bin_dtype(q.bits()),
            Some(q.scheme()),
            q.bits() as u8,
            Some(q.norm()),
        ),
    };
    out.push(dtype as u8);
    out.push(scheme_code(scheme));
    out.push(bits);
    let dims = record.dims();
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(norm_code(norm));
    let (dp, aux) = norm.map_or((0.0, [0.0; 2]), |p| (p.delta_prime, p.aux));
    out.extend_from_slice(&dp.to_le_bytes());
    out.extend_from_slice(&aux[0].to_le_bytes());
    out.extend_from_slice(&aux[1].to_le_bytes());
    match record {
        TensorRecord::Float(f) => {
            for v in f.tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorRecord::Quantized(q) => match dtype {
            DType::U8 => out.extend(q.bins().iter().map(|&b| b as u8)),
            _ => {
                for b in q.bins() {
                    out.extend_from_slice(&b.to_le_bytes());
                }
            }
        },
    }
    out
}

/// Byte cursor that reports absolute offsets in errors.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], base: u64) -> Self {
        Self {
            bytes,
            pos: 0,
            base,
        }
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn err<T>(&self, at: usize, reason: impl Into<String>) -> Result<T, FormatError> {
        Err(FormatError {
            offset: self.base + at as u64,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return self.err(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            );
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn decode_record(r: &mut Reader<'_>) -> Result<TensorRecord, FormatError> {
    let start = r.pos;
    if r.take(4, "magic")? != MAGIC {
        return r.err(start, "bad magic, expected \"TQT1\"");
    }
    let at = r.pos;
    let version = r.u8("version")?;
    if version != VERSION {
        return r.err(at, format!("unsupported version {version}"));
    }
    let at = r.pos;
    let dtype = DType::from_u8(r.u8("dtype")?).map_or_else(|| r.err(at, "unknown dtype"), Ok)?;
    let at = r.pos;
    let scheme = match r.u8("scheme")? {
        0 => None,
        1 => Some(Scheme::Uniform),
        2 => Some(Scheme::TruncQuant),
        s => return r.err(at, format!("unknown scheme {s}")),
    };
    let bits_at = r.pos;
    let bits = u32::from(r.u8("bits")?);
    match dtype {
        DType::F32 if bits != 0 => return r.err(bits_at, "float payload must have bits = 0"),
        DType::F32 => {}
        _ if !(1..=dtype.max_bits()).contains(&bits) => {
            return r.err(
                bits_at,
                format!("bit width {bits} invalid for {dtype:?} bins"),
            );
        }
        _ if scheme.is_none() => return r.err(bits_at - 1, "integer bins need a scheme"),
        _ => {}
    }

    let at = r.pos;
    let ndim = r.u32("ndim")? as usize;
    if ndim == 0 {
        return r.err(at, "tensor has no dimensions");
    }
    let mut dims = Vec::with_capacity(ndim.min(64));
    let mut count: u64 = 1;
    for _ in 0..ndim {
        let at = r.pos;
        let d = r.u64("dims")?;
        count = match count.checked_mul(d) {
            Some(c) if d > 0 => c,
            _ => return r.err(at, format!("invalid extent {d}")),
        };
        dims.push(usize::try_from(d).map_or_else(|_| r.err(at, "extent too large"), Ok)?);
    }

    let at = r.pos;
    let mode = match r.u8("norm mode")? {
        0 => None,
        1 => Some(NormMode::DorefaTanh),
        2 => Some(NormMode::MinMax),
        m => return r.err(at, format!("unknown norm mode {m}")),
    };
    let delta_prime = r.f32("delta_prime")?;
    let aux = [r.f32("aux")?, r.f32("aux")?];
    let norm = mode.map(|mode| NormalizationParams {
        mode,
        delta_prime,
        aux,
    });

    let payload_at = r.pos;
    let len = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(dtype.width()).map(|_| c));
    let Some(len) = len else {
        return r.err(payload_at, "payload size overflows");
    };
    let payload = r.take(len * dtype.width(), "payload")?;

    if dtype == DType::F32 {
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor =
            Tensor::new(dims, values).map_or_else(|e| r.err(payload_at, e.to_string()), Ok)?;
        return Ok(TensorRecord::Float(FloatRecord {
            tensor,
            scheme,
            norm,
        }));
    }

    let Some(norm) = norm else {
        return r.err(
            payload_at - 13,
            "integer bins need normalization parameters",
        );
    };
    let max_bin = (1u32 << bits) - 1;
    let mut bins = Vec::with_capacity(len);
    for (i, chunk) in payload.chunks_exact(dtype.width()).enumerate() {
        let v = match dtype {
            DType::U8 => u32::from(chunk[0]),
            DType::U16 => u32::from(u16::from_le_bytes(chunk.try_into().unwrap())),
            _ => u32::from_le_bytes(chunk.try_into().unwrap()),
        };
        if v > max_bin {
            return r.err(
                payload_at + i * dtype.width(),
                format!("bin {v} exceeds {bits}-bit range"),
            );
        }
        bins.push(v as u16);
    }
    let q = QuantizedTensor::new(dims, bins, scheme.unwrap(), bits, norm)
        .map_or_else(|e| r.err(payload_at, e.to_string()), Ok)?;
    Ok(TensorRecord::Quantized(q))
}

/// Decodes a single record that must span all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<TensorRecord, FormatError> {
    decode_at(bytes, 0)
}

fn decode_at(bytes: &[u8], base: u64) -> Result<TensorRecord, FormatError> {
    let mut r = Reader::new(bytes, base);
    let rec = decode_record(&mut r)?;
    if r.pos != bytes.len() {
        return r.err(
            r.pos,
            format!("{} trailing bytes after payload", bytes.len() - r.pos),
        );
    }
    Ok(rec)
}

pub fn encode_container(records: &[NamedRecord]) -> Vec<u8> {
    assert!(
        records.len() <= usize::from(u16::MAX),
        "too many records for a container"
    );
    let mut out = Vec::new();
    out.extend_from_slice(&(records.len() as u16).to_le_bytes());
    for rec in records {
        let name = rec.name.as_bytes();
        assert!(name.len() <= usize::from(u16::MAX), "record name too long");
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        let body = encode(&rec.record);
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&body);
    }
    out
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<NamedRecord>, FormatError> {
    let mut r = Reader::new(bytes, 0);
    let count = r.u16("record count")?;
    let mut out = Vec::with_capacity(usize::from(count));
    for _ in 0..count {
        let name_len = usize::from(r.u16("name length")?);
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_or_else(|_| r.err(at, "record name is not UTF-8"), Ok)?
            .to_owned();
        let at = r.pos;
        let len = r.u64("record length")?;
        let len = usize::try_from(len).map_or_else(|_| r.err(at, "record length too large"), Ok)?;
        let body_at = r.offset();
        let body = r.take(len, "record")?;
        let record = decode_at(body, body_at)?;
        out.push(NamedRecord { name, record });
    }
    if r.pos != bytes.len() {
        return r.err(
            r.pos,
            format!("{} trailing bytes after last record", bytes.len() - r.pos),
        );
    }
    Ok(out)
}

/// Whether `bytes` opens like a container: a record count followed, if
/// non-zero, by a named record whose body starts with the magic.
fn looks_like_container(bytes: &[u8]) -> bool {
    let u16_at = |at: usize| {
        bytes
            .get(at..at + 2)
            .map(|b| usize::from(u16::from_le_bytes([b[0], b[1]])))
    };
    match u16_at(0) {
        Some(0) => bytes.len() == 2,
        Some(_) => u16_at(2).is_some_and(|name_len| {
            let body = 4 + name_len + 8;
            bytes.get(body..body + MAGIC.len()) == Some(&MAGIC[..])
        }),
        None => false,
    }
}

/// Bare records start with the magic; containers are recognized by the
/// magic of their first record.
pub fn decode_file(bytes: &[u8]) -> Result<TqtFile, FormatError> {
    if bytes.starts_with(&MAGIC) {
        decode(bytes).map(TqtFile::Single)
    } else if looks_like_container(bytes) {
        decode_container(bytes).map(TqtFile::Container)
    } else {
        Err(FormatError {
            offset: 0,
            reason: "bad magic: neither a TQT1 record nor a TQT1 container".into(),
        })
    }
}

pub fn encode_file(file: &TqtFile) -> Vec<u8> {
    match file {
        TqtFile::Single(r) => encode(r),
        TqtFile::Container(rs) => encode_container(rs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> NormalizationParams {
        NormalizationParams::unit()
    }

    #[test]
    fn float_round_trip_is_byte_exact() {
        let t = Tensor::new(vec![3, 4], (0..12).map(|i| i as f32 * 0.37 - 2.0).collect()).unwrap();
        let rec = TensorRecord::Float(FloatRecord::raw(t));
        let bytes = encode(&rec);
        assert_eq!(&bytes[..4], b"TQT1");
        assert_eq!(decode(&bytes).unwrap(), rec);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }

    #[test]
    fn two_bit_round_trip_keeps_delta_prime() {
        let norm = NormalizationParams {
            mode: NormMode::DorefaTanh,
            delta_prime: 0.123_456_79,
            aux: [0.462_117_16, 0.0],
        };
        let q = QuantizedTensor::new(vec![2, 2], vec![0, 1, 2, 3], Scheme::TruncQuant, 2, norm)
            .unwrap();
        let back = decode(&encode(&TensorRecord::Quantized(q.clone()))).unwrap();
        match back {
            TensorRecord::Quantized(b) => {
                assert_eq!(b.bins(), q.bins());
                assert_eq!(b.norm().delta_prime.to_bits(), norm.delta_prime.to_bits());
                assert_eq!(b, q);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_layout() {
        let q = QuantizedTensor::new(vec![1], vec![200], Scheme::Uniform, 8, unit()).unwrap();
        let bytes = encode(&TensorRecord::Quantized(q));
        assert_eq!(&bytes[4..8], &[1, 1, 1, 8]);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(bytes[20], 2);
        assert_eq!(&bytes[21..25], &1.0f32.to_le_bytes());
        assert_eq!(bytes[33..], [200]);
    }

    #[test]
    fn bad_magic_at_offset_zero() {
        let mut bytes = encode(&TensorRecord::Float(FloatRecord::raw(Tensor::from_vec(
            vec![1.0],
        ))));
        bytes[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode(&bytes).unwrap_err().offset, 0);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode(&TensorRecord::Float(FloatRecord::raw(Tensor::from_vec(
            vec![1.0, 2.0],
        ))));
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err.offset, 33);
        assert!(err.reason.contains("payload"));
    }

    #[test]
    fn out_of_range_bin() {
        let q = QuantizedTensor::new(vec![2], vec![1, 3], Scheme::Uniform, 2, unit()).unwrap();
        let mut bytes = encode(&TensorRecord::Quantized(q));
        let last = bytes.len() - 1;
        bytes[last] = 4;
        assert_eq!(decode(&bytes).unwrap_err().offset, last as u64);
    }

    #[test]
    fn u32_bins_are_accepted() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"TQT1");
        bytes.extend_from_slice(&[1, 3, 2, 12]);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.push(2);
        for v in [1.0f32, 0.0, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&4095u32.to_le_bytes());
        bytes.extend_from_slice(&7u32.to_le_bytes());
        match decode(&bytes).unwrap() {
            TensorRecord::Quantized(q) => {
                assert_eq!(q.bins(), &[4095, 7]);
                assert_eq!(q.bits(), 12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&TensorRecord::Float(FloatRecord::raw(Tensor::from_vec(
            vec![1.0],
        ))));
        bytes.push(0);
        let err = decode(&bytes).unwrap_err();
        assert_eq!(err.offset, bytes.len() as u64 - 1);
    }

    #[test]
    fn container_round_trip_and_offsets() {
        let recs = vec![
            NamedRecord {
                name: "a".into(),
                record: TensorRecord::Float(FloatRecord::raw(Tensor::from_vec(vec![1.0]))),
            },
            NamedRecord {
                name: "b".into(),
                record: TensorRecord::Float(FloatRecord::raw(Tensor::from_vec(vec![2.0]))),
            },
        ];
        let bytes = encode_container(&recs);
        assert_eq!(
            decode_file(&bytes).unwrap(),
            TqtFile::Container(recs.clone())
        );
        // Corrupt the second record's magic.
        let first_len = 2 + 2 + 1 + 8 + encode(&recs[0].record).len();
        let second_magic = first_len + 2 + 1 + 8;
        let mut bad = bytes.clone();
        bad[second_magic] = b'X';
        assert_eq!(
            decode_container(&bad).unwrap_err().offset,
            second_magic as u64
        );
    }
}
