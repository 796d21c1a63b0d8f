//! On-disk formats: matrix CSV, recording CSV and binary, subject tables,
//! and directories of subject-level SPD means.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::Recording;
use crate::spd::SpdMatrix;

/// Magic bytes opening a binary recording.
pub const RECORDING_MAGIC: &[u8; 4] = b"SPDT";
/// Version byte written after the magic.
pub const RECORDING_VERSION: u8 = 1;
/// Name of the column holding subject ids in subject tables.
pub const ID_COLUMN: &str = "subject_id";

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("{what}: cannot read {field:?} as a number")))
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn with_path<T>(res: Result<T>, path: &Path) -> Result<T> {
    res.map_err(|e| e.context(path.display().to_string()))
}

// ---------------------------------------------------------------------------
// matrices

/// Square matrix as CSV: a `dim=<k>` line followed by `k` rows.
pub fn write_matrix_csv<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!("matrix CSV needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let mut w = BufWriter::new(w);
    writeln!(w, "dim={}", m.nrows())?;
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..m.nrows() {
        out.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string())).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(r);
    let mut first = String::new();
    r.read_line(&mut first)?;
    let dim: usize = first
        .trim()
        .strip_prefix("dim=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse(format!("expected a `dim=<k>` header, found {:?}", first.trim())))?;
    let mut rows = Vec::with_capacity(dim * dim);
    let mut count = 0;
    for rec in csv::ReaderBuilder::new().has_headers(false).from_reader(r).records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != dim {
            return Err(Error::Parse(format!("matrix row {count} has {} entries, expected {dim}", rec.len())));
        }
        for f in rec.iter() {
            rows.push(parse_f64(f, "matrix entry")?);
        }
        count += 1;
    }
    if count != dim {
        return Err(Error::Parse(format!("matrix has {count} rows, expected {dim}")));
    }
    Ok(DMatrix::from_row_slice(dim, dim, &rows))
}

pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    with_path(fs::File::create(path).map_err(Error::from).and_then(|f| write_matrix_csv(f, m)), path)
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    with_path(fs::File::open(path).map_err(Error::from).and_then(read_matrix_csv), path)
}

pub fn load_spd(path: &Path) -> Result<SpdMatrix> {
    with_path(load_matrix(path).and_then(SpdMatrix::from_matrix), path)
}

// ---------------------------------------------------------------------------
// recordings

/// Recording as CSV: metadata lines `fs=<Hz>` and optionally `paradigm=<name>`,
/// then a header of channel names and one row per sample.
pub fn write_recording_csv<W: Write>(w: W, rec: &Recording) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "fs={}", rec.samples_per_second())?;
    if !rec.paradigm().is_empty() {
        writeln!(w, "paradigm={}", rec.paradigm())?;
    }
    let mut out = csv::WriterBuilder::new().from_writer(w);
    out.write_record(rec.channels()).map_err(csv_error)?;
    let data = rec.data();
    for t in 0..rec.n_samples() {
        out.write_record((0..rec.n_channels()).map(|c| data[(c, t)].to_string())).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_recording_csv<R: Read>(r: R) -> Result<Recording> {
    let mut r = BufReader::new(r);
    let mut fs_hz = None;
    let mut paradigm = String::new();
    loop {
        let buf = r.fill_buf()?;
        let Some(&b) = buf.first() else { break };
        // metadata lines are `key=value`; the channel header contains none
        let mut peek = String::new();
        if b == b'#' || buf.iter().take_while(|&&c| c != b'\n').any(|&c| c == b'=') {
            r.read_line(&mut peek)?;
            let line = peek.trim().trim_start_matches('#').trim();
            match line.split_once('=') {
                Some(("fs", v)) => fs_hz = Some(parse_f64(v, "fs")?),
                Some(("paradigm", v)) => paradigm = v.trim().to_string(),
                Some((k, _)) => return Err(Error::Parse(format!("unknown recording metadata key {k:?}"))),
                None => {}
            }
        } else {
            break;
        }
    }
    let fs_hz = fs_hz.ok_or_else(|| Error::Parse("recording CSV lacks an `fs=<Hz>` line".into()))?;
    let mut reader = csv::ReaderBuilder::new().from_reader(r);
    let channels: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(|s| s.trim().to_string()).collect();
    let n = channels.len();
    let mut samples = Vec::new();
    let mut t = 0;
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != n {
            return Err(Error::Parse(format!("sample row {t} has {} values, expected {n}", rec.len())));
        }
        for f in rec.iter() {
            samples.push(parse_f64(f, "sample")?);
        }
        t += 1;
    }
    // samples are time-major; recordings store one row per channel
    let data = DMatrix::from_row_slice(t, n, &samples).transpose();
    Recording::new(channels, fs_hz, data, paradigm)
}

/// Binary recording: magic, version, channel count (u32), sample count
/// (u64), sampling rate (f64), then channel-major samples. All
/// little-endian. Channel names are not stored.
pub fn write_recording_binary<W: Write>(w: W, rec: &Recording) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(RECORDING_MAGIC)?;
    w.write_all(&[RECORDING_VERSION])?;
    w.write_all(&(rec.n_channels() as u32).to_le_bytes())?;
    w.write_all(&(rec.n_samples() as u64).to_le_bytes())?;
    w.write_all(&rec.samples_per_second().to_le_bytes())?;
    let data = rec.data();
    for c in 0..rec.n_channels() {
        for t in 0..rec.n_samples() {
            w.write_all(&data[(c, t)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_recording_binary<R: Read>(r: R, paradigm: &str) -> Result<Recording> {
    let mut r = BufReader::new(r);
    let mut head = [0u8; 25];
    r.read_exact(&mut head)
        .map_err(|_| Error::Parse("binary recording is shorter than its header".into()))?;
    if &head[..4] != RECORDING_MAGIC {
        return Err(Error::Parse("not a binary recording (bad magic bytes)".into()));
    }
    if head[4] != RECORDING_VERSION {
        return Err(Error::Parse(format!("unsupported binary recording version {}", head[4])));
    }
    let n = u32::from_le_bytes(head[5..9].try_into().expect("4 bytes")) as usize;
    let t = u64::from_le_bytes(head[9..17].try_into().expect("8 bytes")) as usize;
    let fs_hz = f64::from_le_bytes(head[17..25].try_into().expect("8 bytes"));
    let len = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Parse("binary recording header overflows".into()))?;
    let mut body = Vec::with_capacity(len);
    r.read_to_end(&mut body)?;
    if body.len() != len {
        return Err(Error::Parse(format!("binary recording holds {} bytes of samples, expected {len}", body.len())));
    }
    let values: Vec<f64> =
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Recording::with_default_names(fs_hz, DMatrix::from_row_slice(n, t, &values), paradigm)
}

/// Reads a recording, choosing the format by extension (`.bin` or `.csv`).
pub fn load_recording(path: &Path) -> Result<Recording> {
    let res = fs::File::open(path).map_err(Error::from).and_then(|f| {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => read_recording_binary(f, ""),
            Some("csv") => read_recording_csv(f),
            _ => Err(Error::invalid("recording files must end in .csv or .bin")),
        }
    });
    with_path(res, path)
}

pub fn save_recording(path: &Path, rec: &Recording) -> Result<()> {
    let res = fs::File::create(path).map_err(Error::from).and_then(|f| {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => write_recording_binary(f, rec),
            Some("csv") => write_recording_csv(f, rec),
            _ => Err(Error::invalid("recording files must end in .csv or .bin")),
        }
    });
    with_path(res, path)
}

// ---------------------------------------------------------------------------
// subject tables

/// Rows keyed by subject id with named numeric columns. Used for cohort
/// targets and covariates and for exported feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTable {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

impl SubjectTable {
    pub fn new(ids: Vec<String>, columns: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != ids.len() {
            return Err(Error::DimensionMismatch { expected: ids.len(), got: values.nrows() });
        }
        if values.ncols() != columns.len() {
            return Err(Error::DimensionMismatch { expected: columns.len(), got: values.ncols() });
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("duplicate subject id {dup:?}")));
        }
        Ok(SubjectTable { ids, columns, values })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::invalid(format!("table has no column {name:?}")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.values.column(j).iter().copied().collect())
    }

    /// Sub-table holding the named columns in the given order.
    pub fn select(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let idx = names.iter().map(|n| self.column_index(n)).collect::<Result<Vec<_>>>()?;
        Ok(self.values.select_columns(&idx))
    }
}

pub fn write_table<W: Write>(w: W, t: &SubjectTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(w));
    out.write_record(std::iter::once(ID_COLUMN).chain(t.columns.iter().map(String::as_str)))
        .map_err(csv_error)?;
    for (i, id) in t.ids.iter().enumerate() {
        let row = std::iter::once(id.clone()).chain((0..t.values.ncols()).map(|j| t.values[(i, j)].to_string()));
        out.write_record(row).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(r: R) -> Result<SubjectTable> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.get(0) != Some(ID_COLUMN) {
        return Err(Error::Parse(format!("first column must be {ID_COLUMN:?}")));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != columns.len() + 1 {
            return Err(Error::Parse(format!("row {} has {} fields, expected {}", ids.len(), rec.len(), columns.len() + 1)));
        }
        ids.push(rec[0].to_string());
        for (f, name) in rec.iter().skip(1).zip(&columns) {
            values.push(parse_f64(f, name)?);
        }
    }
    let n = ids.len();
    SubjectTable::new(ids, columns.clone(), DMatrix::from_row_slice(n, columns.len(), &values))
}

pub fn save_table(path: &Path, t: &SubjectTable) -> Result<()> {
    with_path(fs::File::create(path).map_err(Error::from).and_then(|f| write_table(f, t)), path)
}

pub fn load_table(path: &Path) -> Result<SubjectTable> {
    with_path(fs::File::open(path).map_err(Error::from).and_then(read_table), path)
}

// ---------------------------------------------------------------------------
// subject means and JSON

/// File holding the mean of subject `id` within a means directory.
pub fn mean_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.csv"))
}

pub fn save_subject_means(dir: &Path, ids: &[String], means: &[SpdMatrix]) -> Result<()> {
    if ids.len() != means.len() {
        return Err(Error::DimensionMismatch { expected: ids.len(), got: means.len() });
    }
    fs::create_dir_all(dir)?;
    for (id, m) in ids.iter().zip(means) {
        save_matrix(&mean_path(dir, id), m.as_matrix())?;
    }
    Ok(())
}

pub fn load_subject_means(dir: &Path, ids: &[String]) -> Result<Vec<SpdMatrix>> {
    let means: Vec<SpdMatrix> = ids
        .iter()
        .map(|id| load_spd(&mean_path(dir, id)).map_err(|e| e.context(format!("subject {id}"))))
        .collect::<Result<_>>()?;
    if let Some(first) = means.first() {
        if let Some(bad) = means.iter().find(|m| m.dim() != first.dim()) {
            return Err(Error::DimensionMismatch { expected: first.dim(), got: bad.dim() });
        }
    }
    Ok(means)
}

/// Pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    with_path(fs::write(path, text).map_err(Error::from), path)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let res = fs::read_to_string(path)
        .map_err(Error::from)
        .and_then(|s| serde_json::from_str(&s).map_err(Error::from));
    with_path(res, path)
}
