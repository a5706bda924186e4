//! Binary tensor container used for feature caches, dictionaries, pseudo
//! labels and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "SEDT"
//! version      u32      currently 1
//! meta_len     u32      byte length of the metadata block
//! metadata     UTF-8    one `key=value` pair per line, keys sorted
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32
//!   name       UTF-8
//!   ndim       u32
//!   dims       u64 x ndim   (row-major, slowest axis first)
//!   data       f64 x prod(dims)
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SEDT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            name: name.into(),
            shape,
            data,
        })
    }

    pub fn from_array2(name: impl Into<String>, a: &Array2<f64>) -> Self {
        Tensor {
            name: name.into(),
            shape: a.shape().to_vec(),
            data: a.iter().copied().collect(),
        }
    }

    pub fn from_array1(name: impl Into<String>, a: &Array1<f64>) -> Self {
        Tensor {
            name: name.into(),
            shape: vec![a.len()],
            data: a.to_vec(),
        }
    }

    pub fn to_array2(&self) -> Result<Array2<f64>> {
        match self.shape.as_slice() {
            &[r, c] => Ok(Array2::from_shape_vec((r, c), self.data.clone())
                .expect("length checked at construction")),
            s => Err(Error::Format(format!(
                "tensor `{}` has shape {s:?}, expected 2-D",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.insert(key.into(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata key `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata `{key}`: cannot parse `{raw}`")))
    }

    pub fn push(&mut self, t: Tensor) {
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut meta = String::new();
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("unencodable metadata `{k}`")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_u32(&mut w, meta.len())?;
        w.write_all(meta.as_bytes())?;
        write_u32(&mut w, self.tensors.len())?;
        for t in &self.tensors {
            write_u32(&mut w, t.name.len())?;
            w.write_all(t.name.as_bytes())?;
            write_u32(&mut w, t.shape.len())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let meta_raw = read_string(&mut r, meta_len)?;
        let mut meta = BTreeMap::new();
        for line in meta_raw.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = read_string(&mut r, name_len)?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        Ok(TensorFile { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_u32<W: Write>(w: &mut W, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Format(format!("length {n} exceeds u32")))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_stable() {
        let mut f = TensorFile::new();
        f.set_meta("class", "Speech");
        f.push(Tensor::new("x", vec![1, 2], vec![1.0, -2.5]).unwrap());
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SEDT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 13);
        assert_eq!(&buf[12..25], b"class=Speech\n");
        // count + name + ndim + dims + data
        assert_eq!(buf.len(), 25 + 4 + 4 + 1 + 4 + 16 + 16);
        assert_eq!(
            f64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap()),
            -2.5
        );
    }

    #[test]
    fn rejects_bad_magic_and_length() {
        assert!(TensorFile::read_from(&b"NOPE\x01\0\0\0"[..]).is_err());
        assert!(Tensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..5, cols in 0usize..5, seed in any::<u64>(), label in "[a-zA-Z_ ]{0,12}") {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| (seed.wrapping_mul(i as u64 + 1) as f64).sin())
                .collect();
            let mut f = TensorFile::new();
            f.set_meta("label", &label);
            f.push(Tensor::new("a", vec![rows, cols], data).unwrap());
            f.push(Tensor::new("scalar", vec![], vec![seed as f64]).unwrap());
            let mut buf = Vec::new();
            f.write_to(&mut buf).unwrap();
            let back = TensorFile::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
