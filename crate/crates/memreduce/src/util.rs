//! Small shared helpers: the FNV-1a hash used for metadata placement and
//! order-independent output checksums used by the benchmark harness.

use crate::codec;
use crate::types::{Pair, Value};

/// 64-bit FNV-1a over a byte string.
///
/// Used wherever the system needs a stable, implementation-independent hash
/// (metadata placement, default key partitioning, output checksums).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// SplitMix64 finalizer: spreads correlated integers (seeds, task indexes)
/// into well-distributed 64-bit values for RNG seeding.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-independent multiset checksum of a pair sequence: the wrapping sum of
/// the FNV-1a hash of each encoded record. Two sequences hash equal iff they
/// hold the same records with the same multiplicities, regardless of order.
pub fn multiset_checksum<'a>(pairs: impl IntoIterator<Item = &'a Pair>) -> u64 {
    let mut sum = 0u64;
    for p in pairs {
        sum = sum.wrapping_add(fnv1a64(&codec::encode_pair(p)));
    }
    sum
}

/// Multiset checksum with floating-point payloads quantized to `resolution`
/// before encoding, so results that differ only by summation order hash equal.
pub fn quantized_checksum<'a>(pairs: impl IntoIterator<Item = &'a Pair>, resolution: f64) -> u64 {
    let mut sum = 0u64;
    for p in pairs {
        let key = p.key.get();
        let value = quantize_value(&p.value.get(), resolution);
        sum = sum.wrapping_add(fnv1a64(&codec::encode_kv(&key, &value)));
    }
    sum
}

fn quantize_value(v: &Value, resolution: f64) -> Value {
    let q = |x: f64| (x / resolution).round() * resolution;
    match v {
        Value::DenseVec(xs) => Value::DenseVec(xs.iter().copied().map(q).collect()),
        Value::Csc(b) => {
            let mut b = b.clone();
            for x in &mut b.values {
                *x = q(*x);
            }
            Value::Csc(b)
        }
        other => other.clone(),
    }
}
