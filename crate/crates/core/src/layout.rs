//! Flattened parameter layouts.
//!
//! Every model exposes its parameters as one flat `f64` vector so that
//! gradients, Fisher information diagonals, and serialized models all agree
//! on a single indexing scheme. A layout names the contiguous blocks of that
//! vector; it is fixed when the model is constructed and never changes.

use crate::error::{ensure_all_finite, ensure_len, Error, Result};

/// One named contiguous block of a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered list of non-overlapping blocks covering `0..total_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLayout {
    blocks: Vec<LayoutBlock>,
    total_len: usize,
}

impl ParameterLayout {
    /// Builds a layout from `(name, len)` pairs in storage order.
    pub fn new<S: Into<String>>(blocks: impl IntoIterator<Item = (S, usize)>) -> Self {
        let mut out = Vec::new();
        let mut offset = 0;
        for (name, len) in blocks {
            out.push(LayoutBlock {
                name: name.into(),
                offset,
                len,
            });
            offset += len;
        }
        ParameterLayout {
            blocks: out,
            total_len: offset,
        }
    }

    /// Total number of scalar parameters.
    pub fn total_len(&self) -> usize {
        self.total_len
    }

    /// All blocks in storage order.
    pub fn blocks(&self) -> &[LayoutBlock] {
        &self.blocks
    }

    /// Looks a block up by name.
    pub fn block(&self, name: &str) -> Option<&LayoutBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Slices `values` down to the named block.
    pub fn slice<'a>(&self, values: &'a [f64], name: &str) -> Result<&'a [f64]> {
        ensure_len(self.total_len, values.len())?;
        let block = self
            .block(name)
            .ok_or_else(|| Error::Domain(format!("no parameter block named {name:?}")))?;
        Ok(&values[block.offset..block.offset + block.len])
    }
}

/// A parameter vector paired with the layout that interprets it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub layout: ParameterLayout,
    pub values: Vec<f64>,
}

impl ParameterVector {
    /// Validates that `values` matches `layout` and contains only finite entries.
    pub fn new(layout: ParameterLayout, values: Vec<f64>) -> Result<Self> {
        ensure_len(layout.total_len(), values.len())?;
        ensure_all_finite(&values, "parameter vector")?;
        Ok(ParameterVector { layout, values })
    }
}
