//! Binary checkpoint format.
//!
//! ```text
//! magic "APEM" | version u32 | d_model n_layers n_heads ffn_dim max_positions vocab_size seed (u32 each)
//! tensor_count u32 | { name_len u32, name utf-8, ndim u32, dims u32*, data f32* }*
//! alias_count u32  | { alias_len u32, alias utf-8, target_len u32, target utf-8 }*
//! ```
//!
//! Everything is little-endian. Shared tensors are written once under their
//! canonical name; the alias table lists the other names they go by.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::ModelParams;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"APEM";
pub const VERSION: u32 = 1;

const MAX_NAME_LEN: u32 = 4096;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn io_err(e: std::io::Error) -> Error {
    corrupt(format!("i/o error: {e}"))
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| corrupt(format!("value {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = get_u32(r)?;
    if len > MAX_NAME_LEN {
        return Err(corrupt(format!("name length {len} is implausible")));
    }
    let mut b = vec![0u8; len as usize];
    r.read_exact(&mut b).map_err(io_err)?;
    String::from_utf8(b).map_err(|_| corrupt("tensor name is not UTF-8"))
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, w: &mut W) -> Result<()> {
    let c = params.config();
    w.write_all(&MAGIC).map_err(io_err)?;
    put_u32(w, VERSION as usize)?;
    for v in [
        c.d_model,
        c.n_layers,
        c.n_heads,
        c.ffn_dim,
        c.max_positions,
        c.vocab_size,
        c.seed as usize,
    ] {
        put_u32(w, v)?;
    }
    let store = params.store();
    put_u32(w, store.len())?;
    for (_, p) in store.iter() {
        put_str(w, &p.name)?;
        put_u32(w, p.shape.len())?;
        for &d in &p.shape {
            put_u32(w, d)?;
        }
        let mut bytes = Vec::with_capacity(p.data.len() * 4);
        for &x in &p.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&bytes).map_err(io_err)?;
    }
    let aliases = params.layout().aliases(store);
    put_u32(w, aliases.len())?;
    for (alias, target) in &aliases {
        put_str(w, alias)?;
        put_str(w, target)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != MAGIC {
        return Err(corrupt("bad magic; not a model checkpoint"));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let mut fields = [0usize; 7];
    for f in &mut fields {
        *f = get_u32(r)? as usize;
    }
    let config = ModelConfig {
        d_model: fields[0],
        n_layers: fields[1],
        n_heads: fields[2],
        ffn_dim: fields[3],
        max_positions: fields[4],
        vocab_size: fields[5],
        seed: fields[6] as u32,
    };
    let mut params = ModelParams::allocate(config)?;

    let count = get_u32(r)? as usize;
    if count != params.store().len() {
        return Err(corrupt(format!(
            "expected {} tensors, found {count}",
            params.store().len()
        )));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name = get_str(r)?;
        let id = params
            .store()
            .find(&name)
            .ok_or_else(|| corrupt(format!("unexpected tensor {name:?}")))?;
        if !seen.insert(id) {
            return Err(corrupt(format!("tensor {name:?} appears twice")));
        }
        let ndim = get_u32(r)? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(get_u32(r)? as usize);
        }
        let param = params.store_mut().get_mut(id);
        if shape != param.shape {
            return Err(corrupt(format!(
                "tensor {name:?} has shape {shape:?}, expected {:?}",
                param.shape
            )));
        }
        let mut bytes = vec![0u8; param.data.len() * 4];
        r.read_exact(&mut bytes).map_err(io_err)?;
        for (x, chunk) in param.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *x = f64::from(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
    }

    let alias_count = get_u32(r)? as usize;
    let mut aliases = Vec::with_capacity(alias_count.min(1024));
    for _ in 0..alias_count {
        aliases.push((get_str(r)?, get_str(r)?));
    }
    if aliases != params.layout().aliases(params.store()) {
        return Err(corrupt("alias table does not match the model's sharing structure"));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> ModelParams {
        ModelParams::new(ModelConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 12,
            max_positions: 10,
            vocab_size: 9,
            seed: 77,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_rounds_to_f32() {
        let p = micro();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(q.config(), p.config());
        for ((_, a), (_, b)) in p.store().iter().zip(q.store().iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*y, f64::from(*x as f32));
            }
        }
        // A second trip is lossless.
        let mut again = Vec::new();
        write_checkpoint(&q, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn header_layout() {
        let p = micro();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"APEM");
        let words: Vec<u32> = buf[4..36]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, [1, 8, 2, 2, 12, 10, 9, 77]);
    }

    #[test]
    fn shared_tensors_written_once() {
        let p = micro();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf);
        // Alias names appear only in the alias table.
        assert_eq!(text.matches("decoder.0.self_attn.q.weight").count(), 1);
        assert_eq!(text.matches("output_projection.weight").count(), 1);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&mut &b"nope"[..]).is_err());
        let p = micro();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
