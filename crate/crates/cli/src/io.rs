//! Embedding files and atomic artifact writes.
//!
//! Text format: CSV with header `id,label,e0,...,e{d-1}`. Files written by
//! this tool start with a `# config_hash=<hex>` comment line, which readers
//! skip.
//!
//! Binary format: magic `OBSD`, u16 version, u32 n, u32 d, then `n·d` f32
//! row-major, then `n` u32 labels; all little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"OBSD";
pub const BINARY_VERSION: u16 = 1;

/// Embedding table as stored on disk (rows need not be unit length).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub vectors: Array2<f64>,
}

impl EmbeddingFile {
    pub fn new(vectors: Array2<f64>, labels: Vec<usize>, id_prefix: &str) -> Self {
        let ids = (0..labels.len()).map(|i| format!("{id_prefix}{i}")).collect();
        Self { ids, labels, vectors }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Writes `bytes` to `path` through a temp file in the same directory and a
/// rename, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Builds CSV text whose first line is `# config_hash=<hash>`.
pub struct CsvBuilder {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvBuilder {
    pub fn new(config_hash: &str, header: &[String]) -> Self {
        let mut buf = Vec::new();
        writeln!(buf, "# config_hash={config_hash}").expect("write to vec");
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(header).expect("write to vec");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("write to vec");
    }

    pub fn finish(self) -> Vec<u8> {
        self.writer.into_inner().expect("flush to vec")
    }

    pub fn write(self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.finish())
    }
}

/// `f64` in its shortest round-tripping decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn embedding_csv(file: &EmbeddingFile, config_hash: &str) -> Vec<u8> {
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..file.dim()).map(|j| format!("e{j}")));
    let mut csv = CsvBuilder::new(config_hash, &header);
    for (i, row) in file.vectors.rows().into_iter().enumerate() {
        let mut fields = vec![file.ids[i].clone(), file.labels[i].to_string()];
        fields.extend(row.iter().map(|&x| fmt_f64(x)));
        csv.row(fields);
    }
    csv.finish()
}

pub fn embedding_binary(file: &EmbeddingFile) -> CliResult<Vec<u8>> {
    let n = u32::try_from(file.len()).map_err(|_| CliError::Validation("too many rows for binary format".into()))?;
    let d = u32::try_from(file.dim()).map_err(|_| CliError::Validation("dimension too large".into()))?;
    let mut out = Vec::with_capacity(14 + 4 * file.len() * (file.dim() + 1));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for &x in file.vectors.iter() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    for &l in &file.labels {
        let l = u32::try_from(l).map_err(|_| CliError::Validation(format!("label {l} does not fit in u32")))?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

fn parse_csv(bytes: &[u8], origin: &str) -> CliResult<EmbeddingFile> {
    let bad = |msg: String| CliError::Validation(format!("{origin}: {msg}"));
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let d = header.len().saturating_sub(2);
    let expected: Vec<String> = ["id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..d).map(|j| format!("e{j}")))
        .collect();
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad("header must be id,label,e0,...,e{d-1} with d >= 1".into()));
    }
    let (mut ids, mut labels, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != d + 2 {
            return Err(bad(format!("row {r} has {} fields, expected {}", record.len(), d + 2)));
        }
        ids.push(record[0].to_string());
        labels.push(
            record[1]
                .trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("row {r}: label {:?} is not a nonnegative integer", &record[1])))?,
        );
        for field in record.iter().skip(2) {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {r}: bad coordinate {field:?}")))?;
            if !x.is_finite() {
                return Err(bad(format!("row {r}: non-finite coordinate")));
            }
            values.push(x);
        }
    }
    let vectors = Array2::from_shape_vec((labels.len(), d), values).expect("row lengths checked");
    Ok(EmbeddingFile { ids, labels, vectors })
}

fn parse_binary(bytes: &[u8], origin: &str) -> CliResult<EmbeddingFile> {
    let bad = |msg: String| CliError::Validation(format!("{origin}: {msg}"));
    if bytes.len() < 14 {
        return Err(bad("truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BINARY_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_add(n))
        .and_then(|w| w.checked_mul(4))
        .and_then(|b| b.checked_add(14))
        .ok_or_else(|| bad("declared size overflows".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "declared n={n}, d={d} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    if d == 0 {
        return Err(bad("dimension must be positive".into()));
    }
    let word = |k: usize| -> [u8; 4] { bytes[14 + 4 * k..18 + 4 * k].try_into().unwrap() };
    let mut values = Vec::with_capacity(n * d);
    for k in 0..n * d {
        let x = f32::from_le_bytes(word(k));
        if !x.is_finite() {
            return Err(bad(format!("non-finite coordinate at row {}", k / d)));
        }
        values.push(f64::from(x));
    }
    let labels = (0..n).map(|i| u32::from_le_bytes(word(n * d + i)) as usize).collect();
    Ok(EmbeddingFile {
        ids: (0..n).map(|i| i.to_string()).collect(),
        labels,
        vectors: Array2::from_shape_vec((n, d), values).expect("size checked"),
    })
}

/// Parses either format, detected by the `OBSD` magic.
pub fn parse_embeddings(bytes: &[u8], origin: &str) -> CliResult<EmbeddingFile> {
    if bytes.starts_with(MAGIC) {
        parse_binary(bytes, origin)
    } else {
        parse_csv(bytes, origin)
    }
}

pub fn read_embeddings(path: &Path) -> CliResult<EmbeddingFile> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_embeddings(&bytes, &path.display().to_string())
}
