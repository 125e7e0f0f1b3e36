//! Binary checkpoints: magic, format version, float width, config echo, class
//! count, input standardisation, then named little-endian tensors.

use std::collections::HashMap;
use std::path::Path;

use super::{Model, ModelConfig, Param};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

const MAGIC: &[u8; 8] = b"VRIDCKPT";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_values<T: Real>(out: &mut Vec<u8>, v: &[T]) {
    for &x in v {
        if T::BITS == 32 {
            out.extend_from_slice(&(x.f() as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&x.f().to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }

    fn values<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let w = (T::BITS / 8) as usize;
        let raw = self.take(n.checked_mul(w).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(raw
            .chunks_exact(w)
            .map(|b| {
                if w == 4 {
                    T::c(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                } else {
                    T::c(f64::from_le_bytes(b.try_into().expect("8 bytes")))
                }
            })
            .collect())
    }
}

impl<T: Real> Model<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, T::BITS);
        put_str(&mut out, &self.config.to_text());
        put_u32(&mut out, self.n_classes as u32);
        put_u32(&mut out, self.norm_mean.len() as u32);
        put_values(&mut out, &self.norm_mean);
        put_values(&mut out, &self.norm_std);
        put_u32(&mut out, self.params.len() as u32);
        for p in &self.params {
            put_str(&mut out, &p.name);
            out.push(p.trainable as u8);
            put_u32(&mut out, p.value.shape().len() as u32);
            for &d in p.value.shape() {
                put_u32(&mut out, d as u32);
            }
            put_values(&mut out, p.value.data());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("format version {version}, expected {VERSION}")));
        }
        let bits = r.u32()?;
        if bits != T::BITS {
            return Err(Error::Checkpoint(format!("checkpoint holds f{bits} values, requested f{}", T::BITS)));
        }
        let config = ModelConfig::from_text(&r.string()?)?;
        let n_classes = r.u32()? as usize;
        let mut model = Model::<T>::new(config, n_classes, 0)?;
        let nf = r.u32()? as usize;
        if nf != model.norm_mean.len() {
            return Err(Error::Checkpoint(format!("{nf} standardisation entries, expected {}", model.norm_mean.len())));
        }
        model.norm_mean = r.values(nf)?;
        model.norm_std = r.values(nf)?;
        let count = r.u32()? as usize;
        if count != model.params.len() {
            return Err(Error::Checkpoint(format!("{count} tensors, expected {}", model.params.len())));
        }
        let mut loaded: HashMap<String, Param<T>> = HashMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let trainable = r.take(1)?[0] != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().product();
            let value = Tensor::new(&shape, r.values(n)?)?;
            loaded.insert(name.clone(), Param { name, value, trainable });
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        for p in model.params.iter_mut() {
            let l = loaded
                .remove(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if l.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    l.value.shape(),
                    p.value.shape()
                )));
            }
            *p = l;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn round_trip_is_identical() {
        for kind in ModelKind::ALL {
            let mut m = Model::<f32>::new(ModelConfig::bench(kind), 3, 9).unwrap();
            m.set_trainable("head", false);
            let bytes = m.to_bytes();
            let back = Model::<f32>::from_bytes(&bytes).unwrap();
            assert_eq!(back, m, "{kind}");
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_wrong_width_and_truncation() {
        let m = Model::<f32>::new(ModelConfig::bench(ModelKind::Mlp), 3, 0).unwrap();
        let bytes = m.to_bytes();
        assert!(matches!(Model::<f64>::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        assert!(matches!(Model::<f32>::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::<f32>::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
    }
}
