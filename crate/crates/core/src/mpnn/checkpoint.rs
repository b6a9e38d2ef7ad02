//! Flat binary checkpoints: a magic tag, a record count, then for each
//! parameter its name, shape and little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MKCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub value: Tensor,
}

pub fn write_checkpoint(store: &ParamStore, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for p in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_len(r: &mut impl Read, limit: u64, what: &str) -> Result<usize> {
    let v = u64::from_le_bytes(read_array(r)?);
    if v > limit {
        return Err(Error::Checkpoint(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<CheckpointRecord>> {
    if &read_array::<8>(r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = read_len(r, 1 << 24, "record count")?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(read_array(r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = u32::from_le_bytes(read_array(r)?) as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank} too large")));
        }
        let shape = (0..rank)
            .map(|_| read_len(r, 1 << 32, "dimension"))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| Ok(f64::from_le_bytes(read_array(r)?)))
            .collect::<Result<Vec<_>>>()?;
        records.push(CheckpointRecord {
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last record".into()));
    }
    Ok(records)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointRecord>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Copies record values into `store`; every parameter must be covered with
/// a matching shape.
pub fn apply_checkpoint(store: &mut ParamStore, records: &[CheckpointRecord]) -> Result<()> {
    if records.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} records, model has {} parameters",
            records.len(),
            store.len()
        )));
    }
    for rec in records {
        let id = store
            .id_of(&rec.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {:?}", rec.name)))?;
        let slot = store.value_mut(id);
        if slot.shape() != rec.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} does not match model {:?}",
                rec.name,
                rec.value.shape(),
                slot.shape()
            )));
        }
        *slot = rec.value.clone();
    }
    Ok(())
}
