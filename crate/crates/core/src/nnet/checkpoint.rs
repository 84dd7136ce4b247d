use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{layout, NetConfig, PolicyNet, CRITIC};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADVLNET\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` (binary parameters) and `path.json` (net config).
///
/// Layout: magic, u32 version, u32 layer count, then per layer
/// {u32 name length, name bytes, u32 rows, u32 cols}, then every layer's
/// weights followed by its bias as little-endian f64.
pub fn save_checkpoint(net: &PolicyNet, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for l in &net.layers {
        w.write_all(&(l.name.len() as u32).to_le_bytes())?;
        w.write_all(l.name.as_bytes())?;
        w.write_all(&(l.rows as u32).to_le_bytes())?;
        w.write_all(&(l.cols as u32).to_le_bytes())?;
    }
    for p in &net.params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    fs::write(sidecar(path), serde_json::to_string_pretty(net.config())?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyNet> {
    let cfg: NetConfig = serde_json::from_str(&fs::read_to_string(sidecar(path)).map_err(|e| {
        Error::Checkpoint(format!("cannot read config sidecar {}: {e}", sidecar(path).display()))
    })?)?;
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a parameter checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    let layers = layout(&cfg);
    let n_layers = r.u32()? as usize;
    if n_layers != layers.len() {
        return Err(Error::Checkpoint(format!("{n_layers} layers, expected {}", layers.len())));
    }
    for l in &layers {
        let len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(len)?).into_owned();
        let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
        if name != l.name || rows != l.rows || cols != l.cols {
            return Err(Error::Checkpoint(format!(
                "layer {name} is {rows}x{cols}, config implies {} {}x{}",
                l.name, l.rows, l.cols
            )));
        }
    }
    let n = layers[CRITIC].end();
    if r.buf.len() != n * 8 {
        return Err(Error::Checkpoint(format!("expected {} parameter bytes, found {}", n * 8, r.buf.len())));
    }
    let params = r.buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    PolicyNet::from_params(cfg, params)
}
