//! Binary model files.
//!
//! | offset          | size | content                                     |
//! |-----------------|------|---------------------------------------------|
//! | 0               | 4    | magic `BIGS`                                |
//! | 4               | 4    | format version, u32 LE (currently 1)        |
//! | 8               | 8    | primitive count N, u64 LE                   |
//! | 16 + 4356 k     | 4356 | primitive k: 1,089 f32 LE in field order    |
//!
//! Field order per primitive: position (3), rotation quaternion w,x,y,z (4),
//! log-scale (3), opacity logit (1), albedo logit (3), direct transport SH
//! (25), indirect transport SH per channel R,G,B (3 x 25), scattering per
//! channel R,G,B as the packed upper triangle of the symmetric 25x25
//! coefficient matrix (3 x 325). Total file size is exactly `16 + 4356 N`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{Primitive, Scene, BYTES_PER_PRIMITIVE, PARAMS_PER_PRIMITIVE};

pub const MAGIC: [u8; 4] = *b"BIGS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;

pub fn encode_model<T: Real>(scene: &Scene<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + scene.len() * BYTES_PER_PRIMITIVE);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    let mut buf = vec![T::zero(); PARAMS_PER_PRIMITIVE];
    for prim in &scene.primitives {
        prim.write_params(&mut buf);
        for v in &buf {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

/// Header fields: (version, primitive count).
pub fn decode_header(bytes: &[u8]) -> Result<(u32, u64)> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Truncated { expected: HEADER_BYTES as u64, actual: bytes.len() as u64 });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    Ok((version, count))
}

pub fn decode_model<T: Real>(bytes: &[u8]) -> Result<Scene<T>> {
    let (_, count) = decode_header(bytes)?;
    let expected = (count as u128) * BYTES_PER_PRIMITIVE as u128 + HEADER_BYTES as u128;
    let actual = bytes.len() as u128;
    if actual < expected {
        return Err(Error::Truncated { expected: expected as u64, actual: actual as u64 });
    }
    if actual > expected {
        return Err(Error::invalid(format!(
            "model file has {} trailing bytes after {count} primitives",
            actual - expected
        )));
    }
    let mut params = vec![T::zero(); PARAMS_PER_PRIMITIVE];
    let primitives = bytes[HEADER_BYTES..]
        .chunks_exact(BYTES_PER_PRIMITIVE)
        .map(|chunk| {
            for (p, raw) in params.iter_mut().zip(chunk.chunks_exact(4)) {
                *p = T::from_f32_exact(f32::from_le_bytes(raw.try_into().unwrap()));
            }
            Primitive::from_params(&params)
        })
        .collect();
    Ok(Scene { primitives })
}

pub fn save_model<T: Real>(scene: &Scene<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<Scene<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Parameter and memory accounting read from a model file's header and size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelAccounting {
    pub primitives: u64,
    pub parameters: u64,
    pub bytes_per_primitive: u64,
    pub payload_bytes: u64,
}

pub fn model_accounting(bytes: &[u8]) -> Result<ModelAccounting> {
    let (_, count) = decode_header(bytes)?;
    let payload = bytes.len() as u64 - HEADER_BYTES as u64;
    if payload != count * BYTES_PER_PRIMITIVE as u64 {
        return Err(Error::Truncated {
            expected: HEADER_BYTES as u64 + count * BYTES_PER_PRIMITIVE as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(ModelAccounting {
        primitives: count,
        parameters: count * PARAMS_PER_PRIMITIVE as u64,
        bytes_per_primitive: if count == 0 { BYTES_PER_PRIMITIVE as u64 } else { payload / count },
        payload_bytes: payload,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scene_from_seed(n: usize, seed: u64) -> Scene<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let prims = (0..n)
            .map(|_| {
                let p: Vec<f32> = (0..PARAMS_PER_PRIMITIVE).map(|_| rng.random_range(-5.0..5.0)).collect();
                Primitive::from_params(&p)
            })
            .collect();
        Scene::new(prims)
    }

    #[test]
    fn empty_scene_is_16_bytes() {
        let bytes = encode_model(&Scene::<f32>::default());
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[0..4], b"BIGS");
        assert!(decode_model::<f32>(&bytes).unwrap().is_empty());
    }

    #[test]
    fn one_primitive_is_16_plus_4356() {
        assert_eq!(encode_model(&scene_from_seed(1, 0)).len(), 16 + 4356);
    }

    #[test]
    fn save_load_save_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        let scene = scene_from_seed(3, 1);
        save_model(&scene, &a).unwrap();
        let loaded: Scene<f64> = load_model(&a).unwrap();
        save_model(&loaded, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(loaded.cast::<f32>(), scene);
    }

    #[test]
    fn distinct_errors() {
        let good = encode_model(&scene_from_seed(2, 2));
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_model::<f32>(&bad_magic), Err(Error::BadMagic { .. })));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode_model::<f32>(&bad_version),
            Err(Error::VersionMismatch { found: 9, supported: 1 })
        ));
        assert!(matches!(
            decode_model::<f32>(&good[..good.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(decode_model::<f32>(&good[..10]), Err(Error::Truncated { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode_model::<f32>(&long), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn accounting() {
        let acc = model_accounting(&encode_model(&scene_from_seed(2, 3))).unwrap();
        assert_eq!(acc.parameters, 2 * 1089);
        assert_eq!(acc.bytes_per_primitive, 4356);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn encode_decode_encode_is_identity(n in 0usize..4, seed in any::<u64>()) {
            let bytes = encode_model(&scene_from_seed(n, seed));
            let back: Scene<f32> = decode_model(&bytes).unwrap();
            prop_assert_eq!(encode_model(&back), bytes);
        }
    }
}
