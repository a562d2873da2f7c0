//! Named parameter collections and their on-disk checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CONMLPV1"
//! count   u32
//! record* name_len u32 | name utf-8 | ndim u32 | dims u64 * ndim | payload f64 * numel
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

const MAGIC: &[u8; 8] = b"CONMLPV1";

/// Ordered, uniquely named set of tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector {
    entries: Vec<(String, Tensor)>,
}

/// Name and shape of one entry, as written to the JSON manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(String, Tensor)>) -> Result<Self, AutodiffError> {
        let mut pv = Self::new();
        for (name, t) in entries {
            pv.push(name, t)?;
        }
        Ok(pv)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(AutodiffError::DuplicateName(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.entries
            .iter()
            .map(|(n, t)| ParamSpec {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Concatenation of every entry, in order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParamVector::flatten`] given a layout.
    pub fn unflatten(specs: &[ParamSpec], flat: &[f64]) -> Result<Self, AutodiffError> {
        let total: usize = specs.iter().map(|s| s.shape.iter().product::<usize>()).sum();
        if total != flat.len() {
            return Err(AutodiffError::DataLength {
                shape: vec![total],
                len: flat.len(),
            });
        }
        let mut offset = 0;
        let mut pv = Self::new();
        for s in specs {
            let n: usize = s.shape.iter().product();
            let t = Tensor::new(s.shape.clone(), flat[offset..offset + n].to_vec())?;
            pv.push(s.name.clone(), t)?;
            offset += n;
        }
        Ok(pv)
    }

    /// Same layout, new values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, AutodiffError> {
        Self::unflatten(&self.specs(), flat)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Records every entry as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect(),
        }
    }

    pub fn write_checkpoint(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self, AutodiffError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic".into()));
        }
        let count = read_u32(r)?;
        let mut pv = Self::new();
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            pv.push(name, Tensor::new(shape, data)?)?;
        }
        Ok(pv)
    }

    /// Writes `<stem>.bin` and a `<stem>.json` manifest of names and shapes.
    pub fn save(&self, bin_path: &Path) -> Result<(), AutodiffError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(bin_path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        let manifest = serde_json::to_string_pretty(&self.specs())
            .map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
        std::fs::write(bin_path.with_extension("json"), manifest)?;
        Ok(())
    }

    pub fn load(bin_path: &Path) -> Result<Self, AutodiffError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(bin_path)?);
        Self::read_checkpoint(&mut f)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, AutodiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// A [`ParamVector`] recorded on a tape, one var per entry in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Current values, packaged with `layout`'s names.
    pub fn values(&self, tape: &Tape, layout: &ParamVector) -> Result<ParamVector, AutodiffError> {
        ParamVector::from_entries(
            layout
                .names()
                .zip(&self.vars)
                .map(|(n, &v)| (n.to_string(), tape.value(v).clone()))
                .collect(),
        )
    }

    /// All entries flattened and concatenated into one 1-D var.
    pub fn flatten(&self, tape: &mut Tape) -> Result<Var, AutodiffError> {
        let flat: Vec<Var> = self
            .vars
            .iter()
            .map(|&v| tape.flatten(v))
            .collect::<Result<_, _>>()?;
        tape.concat(&flat)
    }
}
