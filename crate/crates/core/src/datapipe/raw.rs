//! Raw frame container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  b"FBARRAY\0"
//! version u32      1
//! dtype   u32      1 = f32, 2 = u8 (scaled by 1/255 on read)
//! ndim    u32
//! dims    ndim × u64
//! payload row-major elements
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array4, ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FBARRAY\0";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const DTYPE_U8: u32 = 2;

pub fn write_frames(path: &Path, frames: &Array4<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(&mut w, frames).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode(w: &mut impl Write, frames: &Array4<f32>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(DTYPE_F32)?;
    w.write_u32::<LittleEndian>(4)?;
    for &d in frames.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in frames.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_array(path: &Path) -> Result<ArrayD<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::schema(path, "header", m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dtype = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    let ndim = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(bad(&format!("implausible rank {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize);
    }
    let n: usize = dims.iter().product();
    let data = match dtype {
        DTYPE_F32 => {
            let mut v = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut v).map_err(|e| Error::io(path, e))?;
            v
        }
        DTYPE_U8 => {
            let mut v = vec![0u8; n];
            r.read_exact(&mut v).map_err(|e| Error::io(path, e))?;
            v.into_iter().map(|b| b as f32 / 255.0).collect()
        }
        other => return Err(bad(&format!("unknown dtype {other}"))),
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(bad(&format!("{} trailing bytes", rest.len())));
    }
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| bad(&e.to_string()))
}

/// Reads a `(T, H, W, C)` frame array.
pub fn read_frames(path: &Path) -> Result<Array4<f32>> {
    let a = read_array(path)?;
    let rank = a.ndim();
    a.into_dimensionality()
        .map_err(|_| Error::schema(path, "dims", format!("expected rank 4 (T, H, W, C), got {rank}")))
}
