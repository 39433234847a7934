//! Loader for IDX-format image tensors.
//!
//! The format stores a big-endian header, `[0, 0, dtype, ndim]` followed by
//! `ndim` u32 dimension sizes, then the raw payload. Only the unsigned-byte
//! dtype (0x08) is supported; pixel values are scaled to `[0, 1]` by 255.
//! The first dimension indexes examples and the remaining dimensions are
//! flattened into one row each.

use std::io::Read;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

const DTYPE_U8: u8 = 0x08;

/// Loads an IDX image tensor as a row-major matrix scaled to `[0, 1]`.
pub fn load_idx(path: &Path) -> Result<DataMatrix> {
    let file = std::fs::File::open(path)?;
    load_idx_from(std::io::BufReader::new(file))
}

/// As [`load_idx`], from any reader.
pub fn load_idx_from(mut input: impl Read) -> Result<DataMatrix> {
    let mut head = [0u8; 4];
    input
        .read_exact(&mut head)
        .map_err(|_| Error::Format("idx file shorter than its header".into()))?;
    if head[0] != 0 || head[1] != 0 {
        return Err(Error::Format(format!(
            "bad idx header prefix [{}, {}], expected zeros",
            head[0], head[1]
        )));
    }
    if head[2] != DTYPE_U8 {
        return Err(Error::Format(format!(
            "unsupported idx dtype {:#04x}, only unsigned byte (0x08) is supported",
            head[2]
        )));
    }
    let ndim = head[3] as usize;
    if !(2..=4).contains(&ndim) {
        return Err(Error::Format(format!(
            "expected an example tensor with 2 to 4 dimensions, got {ndim}"
        )));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(input.read_u32::<BigEndian>()? as usize);
    }
    let rows = dims[0];
    let cols: usize = dims[1..].iter().product();
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty idx tensor with dims {dims:?}")));
    }

    let expected = rows * cols;
    let mut payload = vec![0u8; expected];
    input.read_exact(&mut payload).map_err(|_| {
        Error::Format(format!(
            "idx payload shorter than the declared {expected} bytes"
        ))
    })?;
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(Error::Format(format!(
            "idx payload longer than the declared {expected} bytes"
        )));
    }

    let values: Vec<f64> = payload.iter().map(|b| *b as f64 / 255.0).collect();
    DataMatrix::new(values, rows, cols)
}
