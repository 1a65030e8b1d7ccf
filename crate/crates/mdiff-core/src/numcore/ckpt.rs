//! Parameter checkpoints: a one-line JSON header describing layer shapes,
//! activations, and precision, followed by the raw little-endian f32
//! payload (per layer: weights row-major, then bias). Round-trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::net::{Activation, Layer, ParamStore};

#[derive(Serialize, Deserialize)]
struct Header {
    precision: String,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    act: String,
}

/// Write `params` to `path`. The on-disk payload is always f32 (training
/// precision); f64 stores exist only inside gradient-check tests and are
/// never checkpointed.
pub fn save_checkpoint(params: &ParamStore<f32>, path: &Path) -> Result<()> {
    params.validate()?;
    let header = Header {
        precision: "f32".to_string(),
        layers: params
            .layers
            .iter()
            .map(|l| LayerHeader {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                act: l.act.name().to_string(),
            })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for layer in &params.layers {
        for v in layer.w.iter().chain(&layer.b) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: 1,
                msg: "checkpoint header line missing newline".into(),
            });
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    if header.precision != "f32" {
        return Err(Error::Config(format!(
            "unsupported checkpoint precision '{}'",
            header.precision
        )));
    }

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected: usize = header
        .layers
        .iter()
        .map(|l| l.in_dim * l.out_dim + l.out_dim)
        .sum();
    if payload.len() != expected * 4 {
        return Err(Error::Parse {
            file: path.display().to_string(),
            line: 2,
            msg: format!("payload holds {} bytes, expected {}", payload.len(), expected * 4),
        });
    }

    let mut offset = 0usize;
    let mut take = |n: usize| {
        let vals: Vec<f32> = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += 4 * n;
        vals
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for lh in &header.layers {
        let w = take(lh.in_dim * lh.out_dim);
        let b = take(lh.out_dim);
        layers.push(Layer {
            w,
            b,
            act: Activation::from_name(&lh.act)?,
            in_dim: lh.in_dim,
            out_dim: lh.out_dim,
        });
    }
    let store = ParamStore { layers };
    store.validate()?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net: ParamStore<f32> =
            ParamStore::init(&[7, 33, 4], &[Activation::Mish, Activation::Identity], 99).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(net.layers.len(), loaded.layers.len());
        for (a, b) in net.layers.iter().zip(&loaded.layers) {
            assert_eq!(a.act, b.act);
            assert!(a.w.iter().zip(&b.w).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.b.iter().zip(&b.b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        // byte-identical on re-save
        let path2 = dir.path().join("net2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_payload_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net: ParamStore<f32> = ParamStore::init(&[3, 2], &[Activation::Tanh], 1).unwrap();
        save_checkpoint(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
