//! Binary patch cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "BWPC"
//! version 1 byte   0x01
//! size    u32      patch edge length shared by every record
//! count   u64      number of records
//! per record:
//!   painting_id  64 bytes  UTF-8, zero-padded
//!   x            u32
//!   y            u32
//!   label        u8        0 blank, 1 human, 2 robot
//!   pixels       size*size f32
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ClassLabel, PatchRecord};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BWPC";
const VERSION: u8 = 1;
const ID_FIELD: usize = 64;

pub fn write_patch_cache(path: &Path, patches: &[PatchRecord]) -> Result<()> {
    let size = match patches.first() {
        Some(p) => p.size,
        None => 0,
    };
    if patches.iter().any(|p| p.size != size) {
        return Err(Error::Usage("patch cache requires a uniform patch size".into()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&[VERSION]).map_err(io)?;
    w.write_all(&(size as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(patches.len() as u64).to_le_bytes()).map_err(io)?;
    for patch in patches {
        let id = patch.painting_id.as_bytes();
        if id.len() > ID_FIELD {
            return Err(Error::Usage(format!(
                "painting_id '{}' exceeds the {ID_FIELD}-byte cache field",
                patch.painting_id
            )));
        }
        let mut field = [0u8; ID_FIELD];
        field[..id.len()].copy_from_slice(id);
        w.write_all(&field).map_err(|e| Error::io(path, e))?;
        w.write_all(&(patch.x as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&(patch.y as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&[patch.label.index() as u8])
            .map_err(|e| Error::io(path, e))?;
        for &px in &patch.pixels {
            w.write_all(&px.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_patch_cache(path: &Path) -> Result<Vec<PatchRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let format_err = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(format_err("bad magic, not a patch cache".into()));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version).map_err(|e| Error::io(path, e))?;
    if version[0] != VERSION {
        return Err(format_err(format!("unsupported cache version {}", version[0])));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
    let size = u32::from_le_bytes(buf4) as usize;
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8).map_err(|e| Error::io(path, e))?;
    let count = u64::from_le_bytes(buf8) as usize;

    let mut patches = Vec::with_capacity(count);
    let mut pixel_buf = vec![0u8; size * size * 4];
    for _ in 0..count {
        let mut id_field = [0u8; ID_FIELD];
        r.read_exact(&mut id_field).map_err(|e| Error::io(path, e))?;
        let id_len = id_field.iter().position(|&b| b == 0).unwrap_or(ID_FIELD);
        let painting_id = std::str::from_utf8(&id_field[..id_len])
            .map_err(|e| format_err(format!("painting_id is not UTF-8: {e}")))?
            .to_string();
        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let x = u32::from_le_bytes(buf4) as usize;
        r.read_exact(&mut buf4).map_err(|e| Error::io(path, e))?;
        let y = u32::from_le_bytes(buf4) as usize;
        let mut label_byte = [0u8; 1];
        r.read_exact(&mut label_byte).map_err(|e| Error::io(path, e))?;
        let label = ClassLabel::from_index(label_byte[0] as usize)
            .map_err(|_| format_err(format!("invalid label byte {}", label_byte[0])))?;
        r.read_exact(&mut pixel_buf).map_err(|e| Error::io(path, e))?;
        let pixels: Vec<f32> = pixel_buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        patches.push(PatchRecord {
            painting_id,
            x,
            y,
            size,
            label,
            pixels,
        });
    }
    Ok(patches)
}
