//! HSD: a single-file hidden-state dataset.
//!
//! Layout: one UTF-8 header line of space-separated `key=value` pairs ending
//! in `\n`, followed by the payload. Keys appear in a fixed order:
//!
//! ```text
//! format=hsd version=1 n_agents=2 agent_ids=a0,a1 n_samples=3 dims=2,2 sample_kind=episode provenance=demo
//! ```
//!
//! The payload holds, for each agent in header order, its `n_samples x d_i`
//! matrix as little-endian `f32` in row-major order. Its length must be
//! exactly `4 * n_samples * sum(dims)` bytes.
//!
//! Values are percent-escaped (`%25`, `%20`, `%2C`, `%3D`, control bytes) so
//! ids and the provenance note may contain any text. The reader only accepts
//! the canonical spelling it would itself write, which makes re-serializing an
//! unmodified file byte-identical.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use coalition_core::{HiddenStateDataset, SampleKind};

pub const FORMAT_NAME: &str = "hsd";
pub const FORMAT_VERSION: u32 = 1;
/// Longest header line the reader will scan for.
pub const MAX_HEADER_BYTES: usize = 1 << 20;

const KEYS: [&str; 8] = ["format", "version", "n_agents", "agent_ids", "n_samples", "dims", "sample_kind", "provenance"];

#[derive(Debug, Error)]
pub enum HsdError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unsupported version {found} (this reader handles version {supported})")]
    Version { found: String, supported: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("payload size disagrees with header: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("invalid dataset: {0}")]
    Dataset(#[from] coalition_core::Error),
}

impl HsdError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            HsdError::Io(_) => "hsd-io",
            HsdError::Header(_) => "hsd-header",
            HsdError::Version { .. } => "hsd-version",
            HsdError::Truncated { .. } => "hsd-truncated",
            HsdError::SizeMismatch { .. } => "hsd-size-mismatch",
            HsdError::Dataset(_) => "hsd-dataset",
        }
    }
}

pub type Result<T> = std::result::Result<T, HsdError>;

/// A dataset plus the free-text provenance note carried in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct HsdFile {
    pub dataset: HiddenStateDataset,
    pub provenance: String,
}

impl HsdFile {
    pub fn new(dataset: HiddenStateDataset, provenance: impl Into<String>) -> Self {
        Self { dataset, provenance: provenance.into() }
    }
}

fn needs_escape(c: char) -> bool {
    matches!(c, '%' | ' ' | ',' | '=') || c.is_control()
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if needs_escape(c) {
            let mut buf = [0u8; 4];
            for b in c.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = bytes
                .get(i + 1..i + 3)
                .and_then(|h| std::str::from_utf8(h).ok())
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| HsdError::Header(format!("bad escape in {s:?}")))?;
            out.push(hex);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| HsdError::Header(format!("escape in {s:?} is not UTF-8")))
}

fn join_escaped<T: AsRef<str>>(items: &[T]) -> String {
    items.iter().map(|s| escape(s.as_ref())).collect::<Vec<_>>().join(",")
}

fn header_line(
    ids: &[String],
    n_samples: usize,
    dims: &[usize],
    kind: SampleKind,
    provenance: &str,
) -> String {
    let dims = dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    format!(
        "format={FORMAT_NAME} version={FORMAT_VERSION} n_agents={} agent_ids={} n_samples={n_samples} dims={dims} sample_kind={} provenance={}\n",
        ids.len(),
        join_escaped(ids),
        kind.as_str(),
        escape(provenance),
    )
}

fn payload_len(n_samples: usize, dims: &[usize]) -> Option<usize> {
    dims.iter()
        .try_fold(0usize, |acc, &d| acc.checked_add(d))?
        .checked_mul(n_samples)?
        .checked_mul(4)
}

pub fn encode(file: &HsdFile) -> Vec<u8> {
    let ds = &file.dataset;
    let header = header_line(ds.agent_ids(), ds.n_samples(), &ds.dims(), ds.sample_kind(), &file.provenance);
    let mut out = Vec::with_capacity(header.len() + payload_len(ds.n_samples(), &ds.dims()).unwrap_or(0));
    out.extend_from_slice(header.as_bytes());
    for i in 0..ds.n_agents() {
        for v in ds.states(i).iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn parse_count(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| HsdError::Header(format!("{key}={v:?} is not a count")))
}

struct Header {
    ids: Vec<String>,
    n_samples: usize,
    dims: Vec<usize>,
    kind: SampleKind,
    provenance: String,
}

fn parse_header(line: &str) -> Result<Header> {
    let pairs: Vec<(&str, &str)> = line
        .split(' ')
        .map(|tok| tok.split_once('=').ok_or_else(|| HsdError::Header(format!("token {tok:?} is not key=value"))))
        .collect::<Result<_>>()?;
    match pairs.first() {
        Some(&("format", FORMAT_NAME)) => {}
        _ => return Err(HsdError::Header(format!("not an HSD file (expected leading format={FORMAT_NAME})"))),
    }
    match pairs.get(1) {
        Some(&("version", v)) if v == FORMAT_VERSION.to_string() => {}
        Some(&("version", v)) => return Err(HsdError::Version { found: v.to_owned(), supported: FORMAT_VERSION }),
        _ => return Err(HsdError::Header("missing version".into())),
    }
    let keys: Vec<&str> = pairs.iter().map(|(k, _)| *k).collect();
    if keys != KEYS {
        return Err(HsdError::Header(format!("expected keys {KEYS:?}, found {keys:?}")));
    }
    let value = |i: usize| pairs[i].1;

    let n_agents = parse_count("n_agents", value(2))?;
    let ids = value(3).split(',').map(unescape).collect::<Result<Vec<_>>>()?;
    let n_samples = parse_count("n_samples", value(4))?;
    let dims = value(5).split(',').map(|d| parse_count("dims", d)).collect::<Result<Vec<_>>>()?;
    let kind: SampleKind = unescape(value(6))?.parse().map_err(|e| HsdError::Header(format!("{e}")))?;
    let provenance = unescape(value(7))?;
    if ids.len() != n_agents || dims.len() != n_agents {
        return Err(HsdError::Header(format!(
            "n_agents={n_agents} but {} ids and {} dims",
            ids.len(),
            dims.len()
        )));
    }
    Ok(Header { ids, n_samples, dims, kind, provenance })
}

pub fn decode(bytes: &[u8]) -> Result<HsdFile> {
    let scan = &bytes[..bytes.len().min(MAX_HEADER_BYTES)];
    let end = scan
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| HsdError::Header("no newline-terminated header line".into()))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|_| HsdError::Header("header is not UTF-8".into()))?;
    let h = parse_header(line)?;
    let canonical = header_line(&h.ids, h.n_samples, &h.dims, h.kind, &h.provenance);
    if canonical.as_bytes() != &bytes[..=end] {
        return Err(HsdError::Header("header is not in canonical form".into()));
    }

    let expected =
        payload_len(h.n_samples, &h.dims).ok_or_else(|| HsdError::Header("payload size overflows".into()))?;
    let payload = &bytes[end + 1..];
    if payload.len() < expected {
        return Err(HsdError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(HsdError::SizeMismatch { expected, found: payload.len() });
    }

    let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let states = h
        .dims
        .iter()
        .map(|&d| {
            let vals: Vec<f32> = floats.by_ref().take(h.n_samples * d).collect();
            Array2::from_shape_vec((h.n_samples, d), vals).expect("payload length checked")
        })
        .collect();
    let dataset = HiddenStateDataset::new(h.ids, states, h.kind)?;
    Ok(HsdFile { dataset, provenance: h.provenance })
}

pub fn read_hsd(path: impl AsRef<Path>) -> Result<HsdFile> {
    decode(&fs::read(path)?)
}

pub fn write_hsd(file: &HsdFile, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HsdFile {
        let a = Array2::from_shape_vec((3, 2), vec![0.5f32, -1.0, 2.25, 3.0, 1e-7, -0.0]).unwrap();
        let b = Array2::from_shape_vec((3, 2), vec![9.0f32, 8.0, 7.0, 6.0, 5.0, 4.0]).unwrap();
        let ds = HiddenStateDataset::new(vec!["x".into(), "y".into()], vec![a, b], SampleKind::Episode).unwrap();
        HsdFile::new(ds, "unit test")
    }

    #[test]
    fn round_trip_small() {
        let f = small();
        let bytes = encode(&f);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn header_is_readable() {
        let bytes = encode(&small());
        let end = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..end]).unwrap(),
            "format=hsd version=1 n_agents=2 agent_ids=x,y n_samples=3 dims=2,2 sample_kind=episode provenance=unit%20test"
        );
        assert_eq!(bytes.len() - end - 1, 4 * 3 * 4);
    }

    #[test]
    fn escapes_round_trip() {
        for s in ["", "plain", "a b", "x=1,y=2", "100%", "tab\there", "ünï", "line\nbreak"] {
            let e = escape(s);
            assert!(!e.contains([' ', ',', '=', '\n']));
            assert_eq!(unescape(&e).unwrap(), s);
        }
    }

    #[test]
    fn short_payload_is_truncation() {
        let bytes = encode(&small());
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, HsdError::Truncated { expected: 48, found: 47 }), "{err}");
    }

    #[test]
    fn long_payload_is_size_mismatch() {
        let mut bytes = encode(&small());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode(&bytes), Err(HsdError::SizeMismatch { expected: 48, found: 52 })));
    }

    #[test]
    fn other_version_is_rejected() {
        let bytes = encode(&small());
        let text = String::from_utf8_lossy(&bytes).replacen("version=1", "version=2", 1);
        let err = decode(text.as_bytes()).unwrap_err();
        assert!(matches!(err, HsdError::Version { .. }));
        assert_eq!(err.code(), "hsd-version");
    }

    #[test]
    fn header_problems_are_header_errors() {
        let cases: [&[u8]; 6] = [
            b"",
            b"no newline at all",
            b"format=npy version=1\n",
            b"format=hsd version=1 n_agents=1\n",
            b"format=hsd version=1 n_agents=2 agent_ids=a n_samples=2 dims=1 sample_kind=episode provenance=\n",
            b"format=hsd version=1 n_agents=01 agent_ids=a n_samples=2 dims=1 sample_kind=episode provenance=\n",
        ];
        for c in cases {
            let err = decode(c).unwrap_err();
            assert_eq!(err.code(), "hsd-header", "{:?}: {err}", String::from_utf8_lossy(c));
        }
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = encode(&small());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap_err().code(), "hsd-dataset");
    }

    #[test]
    fn codes_are_distinct() {
        let errs = [
            HsdError::Io(std::io::Error::other("x")),
            HsdError::Header(String::new()),
            HsdError::Version { found: "2".into(), supported: 1 },
            HsdError::Truncated { expected: 1, found: 0 },
            HsdError::SizeMismatch { expected: 0, found: 1 },
            HsdError::Dataset(coalition_core::Error::Csv(String::new())),
        ];
        let mut codes: Vec<_> = errs.iter().map(HsdError::code).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
    }
}
