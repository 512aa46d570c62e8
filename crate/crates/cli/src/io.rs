//! File formats: series as JSONL or CSV, token streams as JSONL or a
//! versioned binary container.
//!
//! Series JSONL: one object per line, `{"id", "values", "meta"?}`. Missing
//! samples are `null` (JSON has no NaN literal) and are handled by the
//! configured policy. CSV: one series per line, comma-separated samples,
//! empty/`nan`/`na` fields treated as missing; ids derive from the file stem.
//!
//! Stream JSONL: `{"id", "stream"}` with the stream in its textual rendering
//! (`<ts_stream_v1_nN_pP><ts_scale_K><ts_1_J>…`). The binary container holds
//! the same records with raw token ids; layout documented at [`STREAM_MAGIC`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use tstok_core::stream::StreamHeader;
use tstok_core::{Series, TokenStream};

/// How non-finite samples are handled at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NanPolicy {
    /// Linear interpolation across interior gaps, nearest-value fill at the
    /// edges.
    Repair,
    /// Remove the non-finite samples, shortening the series.
    Drop,
}

#[derive(Serialize, Deserialize)]
struct SeriesRecord {
    id: String,
    values: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

fn finalize_series(
    id: String,
    mut values: Vec<f64>,
    meta: BTreeMap<String, String>,
    policy: NanPolicy,
) -> Result<Series> {
    match policy {
        NanPolicy::Repair => {
            tstok_core::corpus::repair_non_finite(&mut values)
                .with_context(|| format!("series {id}"))?;
        }
        NanPolicy::Drop => {
            values.retain(|v| v.is_finite());
            if values.is_empty() {
                bail!("series {id}: no finite samples left after dropping");
            }
        }
    }
    let series = Series::new(id, values)?;
    Ok(series.with_meta(meta))
}

/// Reads a series file, dispatching on extension (`.csv` → CSV, anything
/// else → JSONL).
pub fn read_series(path: &Path, policy: NanPolicy) -> Result<Vec<Series>> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        read_series_csv(path, policy)
    } else {
        read_series_jsonl(path, policy)
    }
}

fn read_series_jsonl(path: &Path, policy: NanPolicy) -> Result<Vec<Series>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SeriesRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let values = record
            .values
            .into_iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect();
        out.push(
            finalize_series(record.id, values, record.meta, policy)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    if out.is_empty() {
        bail!("{}: no series found", path.display());
    }
    Ok(out)
}

fn read_series_csv(path: &Path, policy: NanPolicy) -> Result<Vec<Series>> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::new();
        for (j, field) in line.split(',').enumerate() {
            let field = field.trim();
            if field.is_empty() || field.eq_ignore_ascii_case("nan") || field.eq_ignore_ascii_case("na") {
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = field.parse().with_context(|| {
                format!("{}:{}: field {} ({field:?})", path.display(), i + 1, j + 1)
            })?;
            values.push(v);
        }
        out.push(
            finalize_series(format!("{stem}-{}", i + 1), values, BTreeMap::new(), policy)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    if out.is_empty() {
        bail!("{}: no series found", path.display());
    }
    Ok(out)
}

/// Writes series as JSONL.
pub fn write_series_jsonl(path: &Path, series: &[Series]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for s in series {
        let record = SeriesRecord {
            id: s.id.clone(),
            values: s.values.iter().map(|&v| Some(v)).collect(),
            meta: s.meta.clone(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StreamRecord {
    id: String,
    stream: String,
}

/// One encoded series: its id plus the token stream.
pub type NamedStream = (String, TokenStream);

/// Writes streams in their textual rendering, one JSONL record per series.
pub fn write_streams_jsonl(path: &Path, streams: &[NamedStream]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for (id, stream) in streams {
        let record = StreamRecord {
            id: id.clone(),
            stream: stream.render_text(),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Magic bytes opening the binary stream container. Layout (little-endian):
/// magic, `u32` format version, `u64` record count, then per record:
/// `u32` id length + UTF-8 id, `u64` original sample count, `u32` token
/// count, and that many `u32` token ids. Pad length is derived from the
/// sample count, as in the textual header.
pub const STREAM_MAGIC: [u8; 8] = *b"TSTOKSB1";
const STREAM_CONTAINER_VERSION: u32 = 1;

/// Writes streams in the binary container format.
pub fn write_streams_binary(path: &Path, streams: &[NamedStream]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&STREAM_MAGIC)?;
    w.write_all(&STREAM_CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&(streams.len() as u64).to_le_bytes())?;
    for (id, stream) in streams {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        w.write_all(&(stream.header.len as u64).to_le_bytes())?;
        w.write_all(&(stream.tokens.len() as u32).to_le_bytes())?;
        for &t in &stream.tokens {
            w.write_all(&t.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a stream file, sniffing the binary magic and falling back to JSONL.
pub fn read_streams(path: &Path) -> Result<Vec<NamedStream>> {
    let mut file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut magic = [0u8; 8];
    let n = file.read(&mut magic)?;
    if n == 8 && magic == STREAM_MAGIC {
        read_streams_binary(&mut BufReader::new(file), path)
    } else {
        drop(file);
        read_streams_jsonl(path)
    }
}

fn read_streams_jsonl(path: &Path) -> Result<Vec<NamedStream>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StreamRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let stream = TokenStream::parse_text(&record.stream)
            .with_context(|| format!("{}:{} (id {})", path.display(), i + 1, record.id))?;
        out.push((record.id, stream));
    }
    if out.is_empty() {
        bail!("{}: no streams found", path.display());
    }
    Ok(out)
}

fn read_streams_binary(r: &mut impl Read, path: &Path) -> Result<Vec<NamedStream>> {
    let ctx = || format!("reading {}", path.display());
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf).with_context(ctx)?;
    let version = u32::from_le_bytes(u32buf);
    if version != STREAM_CONTAINER_VERSION {
        bail!("{}: unsupported stream container version {version}", path.display());
    }
    r.read_exact(&mut u64buf).with_context(ctx)?;
    let count = u64::from_le_bytes(u64buf);
    let mut out = Vec::with_capacity(count as usize);
    for rec in 0..count {
        r.read_exact(&mut u32buf).with_context(ctx)?;
        let mut id_bytes = vec![0u8; u32::from_le_bytes(u32buf) as usize];
        r.read_exact(&mut id_bytes).with_context(ctx)?;
        let id = String::from_utf8(id_bytes)
            .with_context(|| format!("{}: record {rec}: id not UTF-8", path.display()))?;
        r.read_exact(&mut u64buf).with_context(ctx)?;
        let len = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u32buf).with_context(ctx)?;
        let n_tokens = u32::from_le_bytes(u32buf) as usize;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            r.read_exact(&mut u32buf).with_context(ctx)?;
            tokens.push(u32::from_le_bytes(u32buf));
        }
        let stream = TokenStream {
            header: StreamHeader::for_len(len)
                .with_context(|| format!("{}: record {rec} (id {id})", path.display()))?,
            tokens,
        };
        stream
            .validate()
            .with_context(|| format!("{}: record {rec} (id {id})", path.display()))?;
        out.push((id, stream));
    }
    Ok(out)
}

/// Appends one JSON line to an open writer.
pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}
