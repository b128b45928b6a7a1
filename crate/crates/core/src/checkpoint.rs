//! Checkpoint format: magic "VASL1", the canonical config text, the epoch
//! and optimizer step counters, then every parameter record in lexicographic
//! name order with little-endian f64 payloads. Learnable records carry their
//! Adam moments. Saving, loading and saving again is byte-identical.

use std::io::Write;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::network::{build_model, Network};
use crate::params::ParamStore;
use crate::tensor::Dims;

pub const MAGIC: &[u8; 5] = b"VASL1";

pub fn save(path: &Path, cfg: &ModelConfig, store: &ParamStore, epoch: u32) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let cfg_text = cfg.to_text();
    buf.extend_from_slice(&(cfg_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg_text.as_bytes());
    buf.extend_from_slice(&epoch.to_le_bytes());
    buf.extend_from_slice(&store.step_count().to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, p) in store.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(p.learnable as u8);
        for d in p.dims.0 {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if p.learnable {
            for v in p.m.iter().chain(p.v.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("sized")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("sized")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("sized")))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("sized"))).collect())
    }
}

/// Load a checkpoint: rebuilds the network from the embedded config, then
/// overwrites the fresh store with the stored values. Record names and
/// dimensions must match the rebuilt model exactly.
pub fn load(path: &Path) -> Result<(Network, ParamStore, u32)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::format(path, "bad magic (not a VASL1 checkpoint)"));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| Error::format(path, "config text is not utf-8"))?;
    let cfg = ModelConfig::from_text(cfg_text)?;
    let epoch = r.u32()?;
    let step = r.u64()?;
    let n_records = r.u32()? as usize;

    let (net, mut store) = build_model(&cfg)?;
    if n_records != store.len() {
        return Err(Error::format(
            path,
            format!("checkpoint has {n_records} records, model has {}", store.len()),
        ));
    }
    for _ in 0..n_records {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format(path, "parameter name is not utf-8"))?
            .to_string();
        let learnable = r.take(1)?[0] != 0;
        let dims = Dims([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize]);
        if !store.contains(&name) {
            return Err(Error::format(path, format!("unknown parameter {name} for this config")));
        }
        let expected = store.get(&name).dims;
        if dims != expected {
            return Err(Error::format(
                path,
                format!("parameter {name}: dims {dims} do not match config ({expected})"),
            ));
        }
        if learnable != store.get(&name).learnable {
            return Err(Error::format(path, format!("parameter {name}: learnable flag mismatch")));
        }
        let n = dims.count();
        let data = r.f64_vec(n)?;
        let (m, v) = if learnable { (r.f64_vec(n)?, r.f64_vec(n)?) } else { (Vec::new(), Vec::new()) };
        let p = store.buffer_mut(&name);
        p.copy_from_slice(&data);
        if learnable {
            store.set_moments(&name, m, v);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    store.set_step_count(step);
    Ok((net, store, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Domain;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            enabled_domains: vec![Domain::Edge],
            stem_channels: 4,
            block_layers: 1,
            growth_rate: 2,
            bottleneck_factor: 2,
            squeeze_out: 8,
            mrfu_widths: vec![4, 4, 4, 4],
            seed: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let (_, store) = build_model(&cfg).unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &cfg, &store, 3).unwrap();
        let (_, loaded, epoch) = load(&p1).unwrap();
        assert_eq!(epoch, 3);
        save(&p2, &cfg, &loaded, epoch).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let (_, store) = build_model(&cfg).unwrap();
        let p = dir.path().join("x.ckpt");
        save(&p, &cfg, &store, 0).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, bytes).unwrap();
        let Err(err) = load(&p) else { panic!("corrupt magic accepted") };
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let (_, store) = build_model(&cfg).unwrap();
        let p = dir.path().join("t.ckpt");
        save(&p, &cfg, &store, 0).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load(&p).is_err());
    }

    #[test]
    fn load_restores_exact_values_and_step() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let (_, mut store) = build_model(&cfg).unwrap();
        // Touch the store so it differs from a fresh build.
        for name in store.names().cloned().collect::<Vec<_>>() {
            store.buffer_mut(&name)[0] = 42.5;
        }
        store.set_step_count(17);
        let p = dir.path().join("v.ckpt");
        save(&p, &cfg, &store, 9).unwrap();
        let (_, loaded, epoch) = load(&p).unwrap();
        assert_eq!(epoch, 9);
        assert_eq!(loaded.step_count(), 17);
        for (name, param) in loaded.iter() {
            assert_eq!(param.data[0], 42.5, "{name}");
        }
    }
}
