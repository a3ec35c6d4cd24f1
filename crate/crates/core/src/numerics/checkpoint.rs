//! Binary parameter checkpoints.
//!
//! Layout: the 8-byte magic `MSTARCKP`, one format-version byte, then one
//! record per parameter until end of input:
//!
//! ```text
//! u32 name_len | name bytes (UTF-8) | u32 rank | u64 dim × rank | f64 × Π dims
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{self, Read, Write};

use super::{NumericsError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSTARCKP";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore) -> Result<(), NumericsError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads every `(name, tensor)` record of a checkpoint in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let bad = |msg: &str| NumericsError::Checkpoint(msg.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)
        .map_err(|_| bad("truncated header"))?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported version {}",
            version[0]
        )));
    }

    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let mut rank = [0u8; 4];
        r.read_exact(&mut rank).map_err(|_| bad("truncated rank"))?;
        let mut shape = Vec::new();
        for _ in 0..u32::from_le_bytes(rank) {
            let mut d = [0u8; 8];
            r.read_exact(&mut d).map_err(|_| bad("truncated shape"))?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

impl ParamStore {
    /// Overwrites parameter values from checkpoint records. Every parameter
    /// must be present with an identical shape; extra records are an error.
    pub fn load_records(&mut self, records: Vec<(String, Tensor)>) -> Result<(), NumericsError> {
        if records.len() != self.len() {
            return Err(NumericsError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                records.len()
            )));
        }
        for (name, tensor) in records {
            let id = self
                .find(&name)
                .ok_or_else(|| NumericsError::Checkpoint(format!("unknown parameter `{name}`")))?;
            if self.tensor(id).shape() != tensor.shape() {
                return Err(NumericsError::Checkpoint(format!(
                    "shape of `{name}`: expected {:?}, found {:?}",
                    self.tensor(id).shape(),
                    tensor.shape()
                )));
            }
            *self.tensor_mut(id) = tensor;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![1.5, -2.0])).unwrap();
        store.add("bb", Tensor::zeros(&[2, 1, 3])).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store).unwrap();
        assert_eq!(&buf[..8], b"MSTARCKP");
        assert_eq!(buf[8], 1);
        // first record: name length 1, "a", rank 1, dim 2, two floats
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(buf[13], b'a');
        assert_eq!(&buf[14..18], &1u32.to_le_bytes());
        assert_eq!(&buf[18..26], &2u64.to_le_bytes());
        assert_eq!(&buf[26..34], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 9 + (4 + 1 + 4 + 8 + 16) + (4 + 2 + 4 + 24 + 48));

        let recs = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(recs[1].0, "bb");
        assert_eq!(recs[1].1.shape(), &[2, 1, 3]);
        let mut other = store.clone();
        *other.tensor_mut(other.find("a").unwrap()) = Tensor::zeros(&[2]);
        other.load_records(recs).unwrap();
        assert_eq!(other.tensor(other.find("a").unwrap()).data(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_corruption() {
        assert!(read_checkpoint(&b"NOTMAGIC\x01"[..]).is_err());
        assert!(read_checkpoint(&b"MSTARCKP\x09"[..]).is_err());
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![1.0])).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store).unwrap();
        buf.pop();
        assert!(read_checkpoint(&buf[..]).is_err());

        let mut wrong = ParamStore::new();
        wrong.add("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store).unwrap();
        assert!(wrong
            .load_records(read_checkpoint(&buf[..]).unwrap())
            .is_err());
    }
}
