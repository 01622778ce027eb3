//! Flat binary network checkpoints.
//!
//! Layout: the magic `MCDNET1\n`, then one entry per parameter followed by
//! one entry per buffer, in network order. Each entry is
//! `name_len: u64 LE, name bytes, rank: u64 LE, extents: u64 LE each,
//! values: f64 LE each`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{init_network, Mode, Network, NetworkSpec, Param};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MCDNET1\n";

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    for p in net.params().iter().chain(net.buffers()) {
        write_entry(&mut bytes, p);
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn write_entry(out: &mut Vec<u8>, p: &Param) {
    out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
    out.extend_from_slice(p.name.as_bytes());
    out.extend_from_slice(&(p.shape.len() as u64).to_le_bytes());
    for &e in &p.shape {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Load a checkpoint into a network of the given spec. Every parameter and
/// buffer of the spec must be present with matching shape; the loaded
/// network starts in eval mode.
pub fn load_network(spec: &NetworkSpec, path: &Path) -> Result<Network> {
    let bytes = fs::read(path)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not an MCDNET1 checkpoint",
            path.display()
        )));
    }
    let mut entries = Vec::new();
    let mut off = CHECKPOINT_MAGIC.len();
    while off < bytes.len() {
        let (entry, next) = read_entry(&bytes, off, path)?;
        entries.push(entry);
        off = next;
    }

    let mut net = init_network(spec, 0);
    net.set_mode(Mode::Eval);
    let expected = net.params().len() + net.buffers().len();
    if entries.len() != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} entries, spec needs {expected}",
            entries.len()
        )));
    }
    for entry in entries {
        let fill = |slot: &mut Param| -> Result<()> {
            if slot.shape != entry.shape {
                return Err(Error::Checkpoint(format!(
                    "entry `{}` has shape {:?}, spec expects {:?}",
                    entry.name, entry.shape, slot.shape
                )));
            }
            slot.data = entry.data.clone();
            Ok(())
        };
        if let Some(p) = net.params_mut().iter_mut().find(|p| p.name == entry.name) {
            fill(p)?;
        } else if let Some(b) = net.buffers_mut().iter_mut().find(|b| b.name == entry.name) {
            fill(b)?;
        } else {
            return Err(Error::Checkpoint(format!(
                "unexpected entry `{}`",
                entry.name
            )));
        }
    }
    Ok(net)
}

fn read_entry(bytes: &[u8], mut off: usize, path: &Path) -> Result<(Param, usize)> {
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} is truncated at byte {off}",
                path.display()
            )));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let read_u64 = |off: &mut usize| -> Result<u64> {
        let s = take(off, 8)?;
        Ok(u64::from_le_bytes(s.try_into().expect("8 bytes")))
    };

    let name_len = read_u64(&mut off)? as usize;
    let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("entry name is not utf-8".into()))?;
    let rank = read_u64(&mut off)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(&mut off)? as usize);
    }
    let numel: usize = shape.iter().product();
    let raw = take(&mut off, numel * 8)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((Param { name, shape, data }, off))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_network;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = std::env::temp_dir().join(format!("mcdnet-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.mcdnet");

        let spec = NetworkSpec::digit_classifier(4);
        let net = init_network(&spec, 42);
        save_network(&net, &path).unwrap();
        let loaded = load_network(&spec, &path).unwrap();

        for (a, b) in net.params().iter().zip(loaded.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert_eq!(a.data, b.data);
        }
        for (a, b) in net.buffers().iter().zip(loaded.buffers()) {
            assert_eq!(a.data, b.data);
        }
        assert_eq!(loaded.mode(), Mode::Eval);

        // byte determinism: saving twice produces identical files
        let path2 = dir.join("g2.mcdnet");
        save_network(&net, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join(format!("mcdnet-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.mcdnet");
        std::fs::write(&path, b"NOTMAGIC whatever").unwrap();
        let spec = NetworkSpec::toy_generator();
        assert!(matches!(
            load_network(&spec, &path),
            Err(Error::Checkpoint(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
