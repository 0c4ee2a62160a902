//! MBT1 tensor files: magic `MBT1`, u32-LE ndim, ndim u32-LE extents, then the
//! row-major payload as f32 little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MBT_MAGIC: &[u8; 4] = b"MBT1";

pub fn write_mbt(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MBT_MAGIC)?;
    w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
    for &dim in tensor.shape() {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mbt(path: &Path) -> Result<Tensor> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MBT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            MBT_MAGIC
        )));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let ndim = u32::from_le_bytes(buf4) as usize;
    if ndim == 0 || ndim > 8 {
        return Err(Error::Format(format!(
            "{}: unsupported rank {ndim}",
            path.display()
        )));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut buf4)?;
        shape.push(u32::from_le_bytes(buf4) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        r.read_exact(&mut buf4)?;
        data.push(f32::from_le_bytes(buf4) as f64);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    Tensor::new(shape, data).map_err(|_| Error::Format(format!("{}: invalid shape", path.display())))
}

/// Quantizes through the file payload precision without touching disk. The
/// dataset generator uses this so derived values (masks) are computed from
/// exactly what a reader will see.
pub fn f32_quantize(t: &Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}
