//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

pub mod gradients;

use hashguard::bch::{BchCode, BinaryCode, CodeRole};
use hashguard::protocol::hash_template;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense 0/1 parity-check rows of a code.
pub fn dense_parity_check(code: &BchCode) -> Vec<Vec<u8>> {
    let h = code.parity_check();
    (0..h.row_count())
        .map(|r| (0..h.col_count()).map(|c| u8::from(h.get(r, c))).collect())
        .collect()
}

/// Textbook flooding sum-product decoder on a dense parity-check matrix.
/// Messages are stored in full `checks x variables` tables; products are
/// recomputed from scratch for every excluded variable.
pub fn reference_bp(h: &[Vec<u8>], llr: &[f64], iterations: usize) -> Vec<f64> {
    let r = h.len();
    let n = llr.len();
    let bound = 1.0 - 1e-12;
    let mut q = vec![vec![0.0; n]; r];
    let mut m = vec![vec![0.0; n]; r];
    for c in 0..r {
        for v in 0..n {
            if h[c][v] == 1 {
                q[c][v] = llr[v];
            }
        }
    }
    for it in 0..iterations {
        for c in 0..r {
            for v in 0..n {
                if h[c][v] == 0 {
                    continue;
                }
                let mut prod = 1.0;
                for u in 0..n {
                    if u != v && h[c][u] == 1 {
                        prod *= (q[c][u] / 2.0).tanh();
                    }
                }
                let prod = prod.clamp(-bound, bound);
                m[c][v] = ((1.0 + prod) / (1.0 - prod)).ln();
            }
        }
        if it + 1 == iterations {
            break;
        }
        for c in 0..r {
            for v in 0..n {
                if h[c][v] == 0 {
                    continue;
                }
                let mut s = llr[v];
                for d in 0..r {
                    if d != c && h[d][v] == 1 {
                        s += m[d][v];
                    }
                }
                q[c][v] = s;
            }
        }
    }
    (0..n)
        .map(|v| {
            let total: f64 = llr[v] + (0..r).filter(|&c| h[c][v] == 1).map(|c| m[c][v]).sum::<f64>();
            1.0 / (1.0 + total.exp())
        })
        .collect()
}

/// Denominator floor for gradient comparisons. Central differences at
/// `h = 1e-5` carry roundoff near `1e-16 * |L| / h`, about `1e-11` here.
pub const FD_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` with respect to parameter `i` of `params`.
pub fn central_difference(params: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let x = params[i];
    params[i] = x + h;
    let plus = f(params);
    params[i] = x - h;
    let minus = f(params);
    params[i] = x;
    (plus - minus) / (2.0 * h)
}

/// FIPS-202 SHA3-512 example vectors as (message, digest hex).
pub const SHA3_512_VECTORS: [(&[u8], &str); 3] = [
    (
        b"",
        "a69f73cca23a9ac5c8b567dc185a756e97c982164fe25859e0d1dcc1475c80a615b2123af1f5f94c11e3e9402c3ac558f500199d95b6d3e301758586281dcd26",
    ),
    (
        b"abc",
        "b751850b1a57168a5693cd924b6b096e08f621827444f70d884f5d0240d2712e10e116e9192af3c91a7ec57647e3934057340b4cf408d5a56592f8274eec53f0",
    ),
    (
        b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
        "04a371e84ecfb5b8b77cb48610fca8182dd457ce6f326a0fd3d7ec2f1e91636dee691fbe0c985302ba1b0d8dc78c086346b533b49c030d99a27daf1139d6e75e",
    ),
];

/// Code whose most-significant-first packing is exactly `bytes`.
pub fn code_from_bytes(bytes: &[u8]) -> BinaryCode {
    let bits = bytes.iter().flat_map(|b| (0..8).map(move |i| (b >> (7 - i)) & 1 == 1)).collect();
    BinaryCode::new(bits, CodeRole::Final)
}

/// Mean digest bit distance after flipping one random bit of a random
/// `len`-bit code, over `trials` draws.
pub fn avalanche_mean(len: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: u32 = (0..trials)
        .map(|_| {
            let bits: Vec<bool> = (0..len).map(|_| rng.random()).collect();
            let mut flipped = bits.clone();
            let i = rng.random_range(0..len);
            flipped[i] = !flipped[i];
            let a = hash_template(&BinaryCode::new(bits, CodeRole::Final), None);
            let b = hash_template(&BinaryCode::new(flipped, CodeRole::Final), None);
            a.bit_distance(&b)
        })
        .sum();
    f64::from(total) / trials as f64
}

/// Text renderings of a code that a plaintext leak could take. Hex forms are
/// only included from 8 packed bytes up; shorter ones occur inside random
/// digests by chance.
pub fn code_renderings(code: &BinaryCode) -> Vec<String> {
    let bits = code.bits();
    let binary: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
    let json_bools = serde_json::to_string(bits).unwrap();
    let json_ints = serde_json::to_string(&bits.iter().map(|&b| u8::from(b)).collect::<Vec<_>>()).unwrap();
    let packed = hashguard::protocol::pack_bits(code);
    let mut out = vec![binary, json_bools, json_ints];
    if packed.len() >= 8 {
        out.extend([hex::encode(&packed), hex::encode_upper(&packed)]);
    }
    out
}
