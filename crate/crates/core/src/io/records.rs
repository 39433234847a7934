//! Binary gradient record files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "OODK" | version u32 | param_len u32 | flags u8
//! repeated rows: id u64 | log_density f64 | param_len * f64
//! ```
//!
//! Bit 0 of `flags` marks gradient presence; files without gradients store
//! `param_len = 0` and rows carry no gradient payload. Readers stream rows
//! and report truncation with the byte offset where the file ended.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::stats::GradientRecord;

const MAGIC: &[u8; 4] = b"OODK";
const VERSION: u32 = 1;
const FLAG_HAS_GRADIENT: u8 = 1;

/// Streaming writer for gradient record files.
pub struct RecordWriter<W: Write> {
    out: W,
    param_len: usize,
    has_gradient: bool,
    written: u64,
}

impl<W: Write> RecordWriter<W> {
    /// Writes the header. Gradient-bearing files need `param_len >= 1`;
    /// files without gradients must use `param_len == 0`.
    pub fn new(mut out: W, param_len: usize, has_gradient: bool) -> Result<Self> {
        if has_gradient && param_len == 0 {
            return Err(Error::Domain(
                "gradient records need a positive parameter length".into(),
            ));
        }
        if !has_gradient && param_len != 0 {
            return Err(Error::Domain(
                "records without gradients must declare a zero parameter length".into(),
            ));
        }
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        out.write_u32::<LittleEndian>(param_len as u32)?;
        out.write_u8(if has_gradient { FLAG_HAS_GRADIENT } else { 0 })?;
        Ok(RecordWriter {
            out,
            param_len,
            has_gradient,
            written: 0,
        })
    }

    /// Appends one record; its shape must match the header.
    pub fn write_record(&mut self, record: &GradientRecord) -> Result<()> {
        if !record.log_density.is_finite() {
            return Err(Error::Domain(format!(
                "log-density must be finite, got {} for record {}",
                record.log_density, record.id
            )));
        }
        self.out.write_u64::<LittleEndian>(record.id)?;
        self.out.write_f64::<LittleEndian>(record.log_density)?;
        match (&record.gradient, self.has_gradient) {
            (Some(g), true) => {
                if g.len() != self.param_len {
                    return Err(Error::LengthMismatch {
                        expected: self.param_len,
                        got: g.len(),
                    });
                }
                for v in g {
                    if !v.is_finite() {
                        return Err(Error::Domain(format!(
                            "gradient entries must be finite, got {v} for record {}",
                            record.id
                        )));
                    }
                    self.out.write_f64::<LittleEndian>(*v)?;
                }
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Domain(format!(
                    "file declares no gradients but record {} carries one",
                    record.id
                )));
            }
            (None, true) => {
                return Err(Error::Capability(format!(
                    "file declares gradients but record {} has none",
                    record.id
                )));
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    /// Flushes and returns the underlying writer.
    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Streaming reader over a gradient record file.
pub struct RecordReader<R: Read> {
    input: R,
    param_len: usize,
    has_gradient: bool,
    offset: u64,
    done: bool,
}

impl RecordReader<BufReader<File>> {
    /// Opens a record file for streaming.
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        RecordReader::new(BufReader::new(file))
    }
}

impl<R: Read> RecordReader<R> {
    /// Reads and validates the header.
    pub fn new(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| {
            Error::Format("record file shorter than its magic number".into())
        })?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad record file magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported record file version {version}, expected {VERSION}"
            )));
        }
        let param_len = input.read_u32::<LittleEndian>()? as usize;
        let flags = input.read_u8()?;
        if flags & !FLAG_HAS_GRADIENT != 0 {
            return Err(Error::Format(format!("unknown record file flags {flags:#x}")));
        }
        let has_gradient = flags & FLAG_HAS_GRADIENT != 0;
        if has_gradient && param_len == 0 {
            return Err(Error::Format(
                "record file declares gradients with zero parameter length".into(),
            ));
        }
        if !has_gradient && param_len != 0 {
            return Err(Error::Format(
                "record file declares a parameter length but no gradients".into(),
            ));
        }
        Ok(RecordReader {
            input,
            param_len,
            has_gradient,
            offset: 13,
            done: false,
        })
    }

    /// Parameter length declared in the header.
    pub fn param_len(&self) -> usize {
        self.param_len
    }

    /// Whether rows carry gradients.
    pub fn has_gradient(&self) -> bool {
        self.has_gradient
    }

    /// Reads exactly `buf.len()` bytes, or reports clean end-of-file when no
    /// bytes remain at a row boundary.
    fn read_or_eof(&mut self, buf: &mut [u8], at_row_start: bool) -> Result<bool> {
        let mut total = 0;
        while total < buf.len() {
            let n = self.input.read(&mut buf[total..])?;
            if n == 0 {
                break;
            }
            total += n;
        }
        self.offset += total as u64;
        if total == buf.len() {
            return Ok(true);
        }
        if total == 0 && at_row_start {
            return Ok(false);
        }
        Err(Error::Format(format!(
            "truncated record file at byte {}",
            self.offset
        )))
    }

    fn next_record(&mut self) -> Result<Option<GradientRecord>> {
        let mut id_bytes = [0u8; 8];
        if !self.read_or_eof(&mut id_bytes, true)? {
            self.done = true;
            return Ok(None);
        }
        let id = u64::from_le_bytes(id_bytes);

        let mut f = [0u8; 8];
        self.read_or_eof(&mut f, false)?;
        let log_density = f64::from_le_bytes(f);
        if !log_density.is_finite() {
            return Err(Error::Format(format!(
                "non-finite log-density {log_density} for record {id}"
            )));
        }
        let gradient = if self.has_gradient {
            let mut g = Vec::with_capacity(self.param_len);
            for _ in 0..self.param_len {
                self.read_or_eof(&mut f, false)?;
                let v = f64::from_le_bytes(f);
                if !v.is_finite() {
                    return Err(Error::Format(format!(
                        "non-finite gradient entry {v} for record {id}"
                    )));
                }
                g.push(v);
            }
            Some(g)
        } else {
            None
        };
        Ok(Some(GradientRecord {
            id,
            log_density,
            gradient,
        }))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<GradientRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(rec)) => Some(Ok(rec)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Writes `records` to `path`, inferring the shape from the first record.
pub fn write_gradient_records(path: &Path, records: &[GradientRecord]) -> Result<()> {
    let first = records.first().ok_or(Error::Empty("gradient records"))?;
    let (param_len, has_gradient) = match &first.gradient {
        Some(g) => (g.len(), true),
        None => (0, false),
    };
    let file = File::create(path)?;
    let mut writer = RecordWriter::new(BufWriter::new(file), param_len, has_gradient)?;
    for rec in records {
        writer.write_record(rec)?;
    }
    writer.finish()?;
    Ok(())
}

/// Reads a whole record file into memory.
pub fn read_gradient_records(path: &Path) -> Result<Vec<GradientRecord>> {
    RecordReader::open(path)?.collect()
}
