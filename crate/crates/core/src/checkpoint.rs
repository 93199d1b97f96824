//! Binary checkpoint: `dtrf-ckpt v1\n`, the model config as length-prefixed
//! JSON, then every parameter as (name, shape, little-endian f32 data).
//! All integers are little-endian u32.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{parameter_layout, ModelConfig, ModelParams};
use crate::numerics::Tensor;

const MAGIC: &[u8] = b"dtrf-ckpt v1\n";

fn write_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Data(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf) as usize)
}

pub fn write_checkpoint(w: &mut impl Write, params: &ModelParams) -> Result<()> {
    w.write_all(MAGIC)?;
    let config = serde_json::to_vec(&params.config)?;
    write_u32(w, config.len())?;
    w.write_all(&config)?;
    let named = params.named_tensors();
    write_u32(w, named.len())?;
    for (name, t) in named {
        write_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        write_u32(w, t.rank())?;
        for &d in t.shape() {
            write_u32(w, d)?;
        }
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams> {
    let mut magic = vec![0u8; MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Data("not a dtrf-ckpt v1 file".into()));
    }
    let config_len = read_u32(r)?;
    let mut config = vec![0u8; config_len];
    r.read_exact(&mut config)?;
    let config: ModelConfig = serde_json::from_slice(&config)?;
    config.validate()?;

    let layout = parameter_layout(&config);
    let count = read_u32(r)?;
    if count != layout.len() {
        return Err(Error::Data(format!(
            "checkpoint has {count} tensors, config expects {}",
            layout.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (expected_name, expected_shape) in &layout {
        let name_len = read_u32(r)?;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Data("tensor name is not UTF-8".into()))?;
        if &name != expected_name {
            return Err(Error::Data(format!(
                "expected tensor {expected_name}, found {name}"
            )));
        }
        let rank = read_u32(r)?;
        let shape = (0..rank).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
        if &shape != expected_shape {
            return Err(Error::Data(format!(
                "tensor {name} has shape {shape:?}, expected {expected_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    ModelParams::from_tensors(config, tensors)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

/// Rounds every parameter to the nearest f32, i.e. what a save/load cycle
/// produces.
pub fn round_to_f32(params: &mut ModelParams) {
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn config() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            model_dim: 8,
            n_heads: 2,
            vocab_size: 20,
            context_len: 16,
            use_segment_embedding: true,
            seed: 9,
        }
    }

    #[test]
    fn roundtrip_matches_f32_rounding() {
        let mut p = init_params(&config()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert!(buf.starts_with(b"dtrf-ckpt v1\n"));
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        round_to_f32(&mut p);
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let p = init_params(&config()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'x';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        let cut = &buf[..buf.len() - 3];
        assert!(read_checkpoint(&mut &cut[..]).is_err());
    }

    #[test]
    fn rejects_renamed_tensor() {
        let p = init_params(&config()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let pos = buf
            .windows(b"position_embedding".len())
            .position(|w| w == b"position_embedding")
            .unwrap();
        buf[pos] = b'q';
        let err = read_checkpoint(&mut buf.as_slice()).unwrap_err().to_string();
        assert!(err.contains("position_embedding"), "{err}");
    }
}
