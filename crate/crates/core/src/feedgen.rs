//! Deterministic pseudo-random feed generation.
//!
//! Feeds must be byte-identical across runs, machines, and releases, so the
//! generator is pinned here rather than borrowed from a crate whose stream
//! could change: SplitMix64 with one independent stream per tensor, each
//! stream seeded from a SHA-256 hash of the base seed and the stream name.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::f16::f16_bits_from_f32;
use crate::interp::TensorMap;
use crate::ir::{DType, TensorData, TensorSpec, TensorValue};

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_f32(&mut self, lo: f64, hi: f64) -> f32 {
        (lo + (hi - lo) * self.next_f64()) as f32
    }

    /// Uniform integer in [lo, hi], both ends inclusive. The tiny modulo
    /// bias is irrelevant for test feeds.
    pub fn uniform_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = hi.wrapping_sub(lo) as u64;
        if span == u64::MAX {
            return self.next_u64() as i64;
        }
        lo.wrapping_add((self.next_u64() % (span + 1)) as i64)
    }
}

/// Derives an independent stream seed from a base seed and a stream name.
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Error)]
pub enum FeedGenError {
    #[error("input {0} has a symbolic shape; bind all symbols before generating feeds")]
    Symbolic(String),
    #[error("input {0} declares a range with no representable values for its dtype")]
    EmptyRange(String),
}

const DEFAULT_FLOAT_RANGE: (f64, f64) = (-1.0, 1.0);
const DEFAULT_INT_RANGE: (f64, f64) = (0.0, 9.0);

fn int_bounds(dtype: DType) -> (i64, i64) {
    match dtype {
        DType::I64 => (i64::MIN, i64::MAX),
        DType::I16 => (i16::MIN as i64, i16::MAX as i64),
        DType::I8 => (i8::MIN as i64, i8::MAX as i64),
        DType::U8 => (0, u8::MAX as i64),
        DType::F32 | DType::F16 => unreachable!("not an integer dtype"),
    }
}

fn gen_one(spec: &TensorSpec, rng: &mut SplitMix64) -> Result<TensorValue, FeedGenError> {
    let shape = spec
        .static_shape()
        .ok_or_else(|| FeedGenError::Symbolic(spec.name.clone()))?;
    let count = crate::ir::element_count(&shape) as usize;
    let data = if spec.dtype.is_float() {
        let (lo, hi) = spec.range.unwrap_or(DEFAULT_FLOAT_RANGE);
        let values: Vec<f32> = (0..count).map(|_| rng.uniform_f32(lo, hi)).collect();
        match spec.dtype {
            DType::F32 => TensorData::F32(values),
            DType::F16 => TensorData::F16(values.iter().map(|&v| f16_bits_from_f32(v)).collect()),
            _ => unreachable!(),
        }
    } else {
        let (lo, hi) = spec.range.unwrap_or(DEFAULT_INT_RANGE);
        let (dlo, dhi) = int_bounds(spec.dtype);
        let lo = (lo.ceil() as i64).max(dlo);
        let hi = (hi.floor() as i64).min(dhi);
        if lo > hi {
            return Err(FeedGenError::EmptyRange(spec.name.clone()));
        }
        let values: Vec<i64> = (0..count).map(|_| rng.uniform_i64(lo, hi)).collect();
        match spec.dtype {
            DType::I64 => TensorData::I64(values),
            DType::I16 => TensorData::I16(values.iter().map(|&v| v as i16).collect()),
            DType::I8 => TensorData::I8(values.iter().map(|&v| v as i8).collect()),
            DType::U8 => TensorData::U8(values.iter().map(|&v| v as u8).collect()),
            _ => unreachable!(),
        }
    };
    Ok(TensorValue { shape, data })
}

/// Generates one feed per spec. Each tensor draws from its own stream, so
/// adding or reordering inputs does not perturb the others.
pub fn gen_feeds(specs: &[TensorSpec], seed: u64) -> Result<TensorMap, FeedGenError> {
    let mut feeds = TensorMap::new();
    for spec in specs {
        let mut rng = SplitMix64::new(derive_seed(seed, &spec.name));
        feeds.insert(spec.name.clone(), gen_one(spec, &mut rng)?);
    }
    Ok(feeds)
}

/// Generates `count` independent feed sets; sample `i` uses streams named
/// `{tensor}/{i}`.
pub fn gen_feed_sets(
    specs: &[TensorSpec],
    seed: u64,
    count: usize,
) -> Result<Vec<TensorMap>, FeedGenError> {
    let mut sets = Vec::with_capacity(count);
    for i in 0..count {
        let mut feeds = TensorMap::new();
        for spec in specs {
            let mut rng = SplitMix64::new(derive_seed(seed, &format!("{}/{i}", spec.name)));
            feeds.insert(spec.name.clone(), gen_one(spec, &mut rng)?);
        }
        sets.push(feeds);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::dims;

    #[test]
    fn splitmix64_matches_reference_stream() {
        // First outputs of the published SplitMix64 for seed 0.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn next_f64_is_in_unit_interval() {
        let mut rng = SplitMix64::new(42);
        for _ in 0..1000 {
            let v = rng.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn streams_are_independent_of_order() {
        let a = TensorSpec::new("a", DType::F32, dims(&[4]));
        let b = TensorSpec::new("b", DType::F32, dims(&[4]));
        let ab = gen_feeds(&[a.clone(), b.clone()], 7).unwrap();
        let ba = gen_feeds(&[b, a], 7).unwrap();
        assert_eq!(ab["a"], ba["a"]);
        assert_eq!(ab["b"], ba["b"]);
    }

    #[test]
    fn same_seed_reproduces_different_seed_differs() {
        let spec = [TensorSpec::new("x", DType::F32, dims(&[16]))];
        let one = gen_feeds(&spec, 42).unwrap();
        let two = gen_feeds(&spec, 42).unwrap();
        let other = gen_feeds(&spec, 43).unwrap();
        assert_eq!(one["x"], two["x"]);
        assert_ne!(one["x"], other["x"]);
    }

    #[test]
    fn declared_ranges_are_respected() {
        let spec = [TensorSpec::new("idx", DType::I64, dims(&[64])).with_range(0.0, 9.0)];
        let feeds = gen_feeds(&spec, 1).unwrap();
        let values = feeds["idx"].as_i64().unwrap();
        assert!(values.iter().all(|&v| (0..=9).contains(&v)));
        // With 64 draws over 10 values, hitting both ends is near certain.
        assert!(values.contains(&0));
        assert!(values.contains(&9));
    }

    #[test]
    fn default_float_range_is_unit_ball() {
        let spec = [TensorSpec::new("x", DType::F32, dims(&[256]))];
        let feeds = gen_feeds(&spec, 5).unwrap();
        assert!(feeds["x"].as_f32().unwrap().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn int_range_clamps_to_dtype_bounds() {
        let spec = [TensorSpec::new("x", DType::U8, dims(&[32])).with_range(-5.0, 300.0)];
        let feeds = gen_feeds(&spec, 5).unwrap();
        match &feeds["x"].data {
            TensorData::U8(v) => assert_eq!(v.len(), 32),
            other => panic!("expected u8 data, got {other:?}"),
        }
    }

    #[test]
    fn empty_clamped_range_is_an_error() {
        let spec = [TensorSpec::new("x", DType::U8, dims(&[4])).with_range(300.0, 400.0)];
        assert!(matches!(
            gen_feeds(&spec, 5),
            Err(FeedGenError::EmptyRange(name)) if name == "x"
        ));
    }

    #[test]
    fn symbolic_shape_is_an_error() {
        let spec = [TensorSpec::new(
            "x",
            DType::F32,
            vec![crate::ir::Dim::Symbolic("n".to_string())],
        )];
        assert!(matches!(gen_feeds(&spec, 5), Err(FeedGenError::Symbolic(_))));
    }

    #[test]
    fn feed_sets_differ_per_sample() {
        let spec = [TensorSpec::new("x", DType::F32, dims(&[8]))];
        let sets = gen_feed_sets(&spec, 42, 3).unwrap();
        assert_eq!(sets.len(), 3);
        assert_ne!(sets[0]["x"], sets[1]["x"]);
        assert_ne!(sets[1]["x"], sets[2]["x"]);
        let again = gen_feed_sets(&spec, 42, 3).unwrap();
        assert_eq!(sets[2]["x"], again[2]["x"]);
    }
}
