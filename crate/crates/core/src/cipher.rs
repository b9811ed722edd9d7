//! Pluggable toy ciphers and the fixed chosen plaintext.
//!
//! Every cipher here maps an `n`-bit key and a `3n`-bit plaintext to a
//! `3n`-bit ciphertext. The ciphertext of the fixed plaintext is the key's
//! *fingerprint*, the value the dictionary is sorted by.
//!
//! Bit strings are packed big-endian into `ceil(bits / 8)` bytes with the
//! unused high bits of the first byte cleared, so lexicographic byte order
//! and numeric order coincide.

use std::fmt;

use thiserror::Error;

/// Golden-ratio increment of splitmix64.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub const MIN_KEY_BITS: u32 = 4;
pub const MAX_KEY_BITS: u32 = 32;

/// Round count used by [`CipherSpec::feistel`] callers that don't pick one.
pub const DEFAULT_FEISTEL_ROUNDS: u8 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CipherError {
    #[error("key_bits {0} outside {MIN_KEY_BITS}..={MAX_KEY_BITS}")]
    KeyBits(u32),
    #[error("feistel cipher needs an even key_bits, got {0}")]
    OddKeyBits(u32),
    #[error("param {param} invalid for {cipher}: {reason}")]
    Param {
        cipher: CipherId,
        param: u8,
        reason: &'static str,
    },
    #[error("unknown cipher id {0}")]
    UnknownCipher(u8),
    #[error("key {key:#x} does not fit in {bits} bits")]
    KeyRange { key: u64, bits: u32 },
    #[error("expected {expected}-bit {what}, got {found} bits")]
    Width {
        what: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("expected {expected} bytes of {what}, got {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("nonzero pad bits in {0}")]
    PadBits(&'static str),
    #[error("invalid hex in {0}")]
    Hex(&'static str),
}

/// Stable one-byte cipher codes, shared by the dictionary file header and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CipherId {
    Ideal = 0,
    FeistelToy = 1,
    Trunc = 2,
}

impl CipherId {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, CipherError> {
        match code {
            0 => Ok(CipherId::Ideal),
            1 => Ok(CipherId::FeistelToy),
            2 => Ok(CipherId::Trunc),
            other => Err(CipherError::UnknownCipher(other)),
        }
    }

    /// CLI spelling.
    pub fn name(self) -> &'static str {
        match self {
            CipherId::Ideal => "ideal",
            CipherId::FeistelToy => "feistel",
            CipherId::Trunc => "trunc",
        }
    }
}

impl fmt::Display for CipherId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A cipher choice together with its key width and parameter.
///
/// `param` is the round count for [`CipherId::FeistelToy`], the collapsed
/// top-bit count for [`CipherId::Trunc`], and zero for [`CipherId::Ideal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CipherSpec {
    id: CipherId,
    key_bits: u32,
    param: u8,
}

impl CipherSpec {
    pub fn new(id: CipherId, key_bits: u32, param: u8) -> Result<Self, CipherError> {
        if !(MIN_KEY_BITS..=MAX_KEY_BITS).contains(&key_bits) {
            return Err(CipherError::KeyBits(key_bits));
        }
        match id {
            CipherId::Ideal if param != 0 => Err(CipherError::Param {
                cipher: id,
                param,
                reason: "ideal cipher takes no parameter",
            }),
            CipherId::FeistelToy if !key_bits.is_multiple_of(2) => {
                Err(CipherError::OddKeyBits(key_bits))
            }
            CipherId::FeistelToy if param == 0 => Err(CipherError::Param {
                cipher: id,
                param,
                reason: "round count must be at least 1",
            }),
            CipherId::Trunc if param == 0 || u32::from(param) >= key_bits => {
                Err(CipherError::Param {
                    cipher: id,
                    param,
                    reason: "collapse width must satisfy 1 <= c < key_bits",
                })
            }
            _ => Ok(CipherSpec {
                id,
                key_bits,
                param,
            }),
        }
    }

    pub fn ideal(key_bits: u32) -> Result<Self, CipherError> {
        Self::new(CipherId::Ideal, key_bits, 0)
    }

    pub fn feistel(key_bits: u32, rounds: u8) -> Result<Self, CipherError> {
        Self::new(CipherId::FeistelToy, key_bits, rounds)
    }

    pub fn trunc(key_bits: u32, collapse: u8) -> Result<Self, CipherError> {
        Self::new(CipherId::Trunc, key_bits, collapse)
    }

    pub fn id(&self) -> CipherId {
        self.id
    }

    pub fn key_bits(&self) -> u32 {
        self.key_bits
    }

    pub fn param(&self) -> u8 {
        self.param
    }

    /// Width of plaintexts and fingerprints: three key widths.
    pub fn block_bits(&self) -> u32 {
        3 * self.key_bits
    }

    /// Bytes per packed fingerprint / plaintext.
    pub fn block_len(&self) -> usize {
        packed_len(self.block_bits())
    }

    /// Bytes per packed key.
    pub fn key_len(&self) -> usize {
        packed_len(self.key_bits)
    }

    /// Size of the key space, `2^n`.
    pub fn key_space(&self) -> u64 {
        1u64 << self.key_bits
    }

    pub fn key(&self, value: u64) -> Result<KeyValue, CipherError> {
        KeyValue::new(value, self.key_bits)
    }

    pub fn fingerprint(&self, key: KeyValue, x0: &Plaintext) -> Result<Fingerprint, CipherError> {
        fingerprint(self, key, x0)
    }
}

impl fmt::Display for CipherSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.id {
            CipherId::Ideal => write!(f, "ideal/n={}", self.key_bits),
            CipherId::FeistelToy => write!(f, "feistel/n={}/rounds={}", self.key_bits, self.param),
            CipherId::Trunc => write!(f, "trunc/n={}/c={}", self.key_bits, self.param),
        }
    }
}

pub(crate) fn packed_len(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

/// An `n`-bit secret key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyValue(pub u32);

impl KeyValue {
    pub fn new(value: u64, bits: u32) -> Result<Self, CipherError> {
        if bits > MAX_KEY_BITS || value >> bits != 0 {
            return Err(CipherError::KeyRange { key: value, bits });
        }
        Ok(KeyValue(value as u32))
    }

    pub fn value(self) -> u64 {
        u64::from(self.0)
    }

    /// Big-endian bytes, `ceil(bits / 8)` of them.
    pub fn to_bytes(self, bits: u32) -> Vec<u8> {
        let len = packed_len(bits);
        self.0.to_be_bytes()[4 - len..].to_vec()
    }

    pub fn to_hex(self, bits: u32) -> String {
        hex::encode(self.to_bytes(bits))
    }

    pub fn from_bytes(bytes: &[u8], bits: u32) -> Result<Self, CipherError> {
        let expected = packed_len(bits);
        if bytes.len() != expected {
            return Err(CipherError::Length {
                what: "key",
                expected,
                found: bytes.len(),
            });
        }
        let value = bytes.iter().fold(0u64, |acc, &b| acc << 8 | u64::from(b));
        Self::new(value, bits)
    }

    /// Parses up to `2 * ceil(bits / 8)` hex digits.
    pub fn from_hex(s: &str, bits: u32) -> Result<Self, CipherError> {
        let s = s.trim();
        if s.is_empty() || s.len() > 2 * packed_len(bits) {
            return Err(CipherError::Hex("key"));
        }
        let value = u64::from_str_radix(s, 16).map_err(|_| CipherError::Hex("key"))?;
        Self::new(value, bits)
    }
}

impl fmt::Display for KeyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// The chosen plaintext, a `3n`-bit packed string.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Plaintext {
    bytes: Vec<u8>,
    bits: u32,
}

impl Plaintext {
    /// Wraps packed bytes, checking the length and that pad bits are clear.
    pub fn from_bytes(bytes: Vec<u8>, bits: u32) -> Result<Self, CipherError> {
        let expected = packed_len(bits);
        if bytes.len() != expected {
            return Err(CipherError::Length {
                what: "plaintext",
                expected,
                found: bytes.len(),
            });
        }
        if !pad_clear(&bytes, bits) {
            return Err(CipherError::PadBits("plaintext"));
        }
        Ok(Plaintext { bytes, bits })
    }

    pub fn from_hex(s: &str, bits: u32) -> Result<Self, CipherError> {
        let bytes = hex::decode(s.trim()).map_err(|_| CipherError::Hex("plaintext"))?;
        Self::from_bytes(bytes, bits)
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    /// XOR of the little-endian 64-bit chunks, last chunk zero-padded.
    fn fold64(&self) -> u64 {
        self.bytes.chunks(8).fold(0, |acc, chunk| {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            acc ^ u64::from_le_bytes(word)
        })
    }

    /// Numeric value; only meaningful up to 128 bits.
    fn as_u128(&self) -> u128 {
        self.bytes
            .iter()
            .fold(0u128, |acc, &b| acc << 8 | u128::from(b))
    }
}

fn pad_clear(bytes: &[u8], bits: u32) -> bool {
    let pad = (8 * bytes.len() as u32).saturating_sub(bits);
    pad == 0 || bytes.first().is_none_or(|&b| b >> (8 - pad) == 0)
}

/// Default chosen plaintext for key width `n`: counter bytes `0, 1, 2, ...`
/// over `ceil(3n / 8)` bytes with the pad bits of byte 0 cleared.
pub fn default_x0(n: u32) -> Plaintext {
    let bits = 3 * n;
    let len = packed_len(bits);
    let mut bytes: Vec<u8> = (0..len).map(|i| i as u8).collect();
    let pad = 8 * len as u32 - bits;
    if let Some(first) = bytes.first_mut() {
        *first &= 0xff >> pad;
    }
    Plaintext { bytes, bits }
}

/// A `3n`-bit ciphertext of the chosen plaintext, at most 96 bits wide.
///
/// Ordering is numeric, which is the same as the order of the packed bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint {
    bits: u32,
    value: u128,
}

impl Fingerprint {
    pub fn new(value: u128, bits: u32) -> Result<Self, CipherError> {
        if bits == 0 || bits > 3 * MAX_KEY_BITS {
            return Err(CipherError::Width {
                what: "fingerprint",
                expected: 3 * MAX_KEY_BITS,
                found: bits,
            });
        }
        if value >> bits != 0 {
            return Err(CipherError::PadBits("fingerprint"));
        }
        Ok(Fingerprint { bits, value })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn value(&self) -> u128 {
        self.value
    }

    pub fn byte_len(&self) -> usize {
        packed_len(self.bits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let len = self.byte_len();
        self.value.to_be_bytes()[16 - len..].to_vec()
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        let len = self.byte_len();
        out.extend_from_slice(&self.value.to_be_bytes()[16 - len..]);
    }

    pub fn from_bytes(bytes: &[u8], bits: u32) -> Result<Self, CipherError> {
        let expected = packed_len(bits);
        if bytes.len() != expected {
            return Err(CipherError::Length {
                what: "fingerprint",
                expected,
                found: bytes.len(),
            });
        }
        if !pad_clear(bytes, bits) {
            return Err(CipherError::PadBits("fingerprint"));
        }
        let value = bytes.iter().fold(0u128, |acc, &b| acc << 8 | u128::from(b));
        Self::new(value, bits)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str, bits: u32) -> Result<Self, CipherError> {
        let bytes = hex::decode(s.trim()).map_err(|_| CipherError::Hex("fingerprint"))?;
        Self::from_bytes(&bytes, bits)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// One splitmix64 output step for state `z`.
#[inline]
pub fn mix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn round_subkey(key: KeyValue, round: u32, half_mask: u64) -> u64 {
    mix64(
        key.value()
            .wrapping_add(u64::from(round).wrapping_mul(GOLDEN_GAMMA)),
    ) & half_mask
}

#[inline]
fn round_function(x: u64, subkey: u64, half_mask: u64) -> u64 {
    mix64(x << 32 | subkey) & half_mask
}

fn check_feistel_width(bits: u32) -> Result<u64, CipherError> {
    if !bits.is_multiple_of(2) {
        return Err(CipherError::OddKeyBits(bits));
    }
    if !(2..=2 * MAX_KEY_BITS).contains(&bits) {
        return Err(CipherError::KeyBits(bits));
    }
    Ok((1u64 << (bits / 2)) - 1)
}

/// Balanced Feistel encryption of one `bits`-wide block.
///
/// Round `r` maps `(L, R)` to `(R, L ^ F(R, k_r))`; the output is `L || R`.
pub fn feistel_block(
    key: KeyValue,
    block: u64,
    bits: u32,
    rounds: u32,
) -> Result<u64, CipherError> {
    let half_mask = check_feistel_width(bits)?;
    let half = bits / 2;
    let (mut left, mut right) = ((block >> half) & half_mask, block & half_mask);
    for r in 0..rounds {
        let k = round_subkey(key, r, half_mask);
        (left, right) = (right, left ^ round_function(right, k, half_mask));
    }
    Ok(left << half | right)
}

/// Inverse of [`feistel_block`].
pub fn feistel_block_decrypt(
    key: KeyValue,
    block: u64,
    bits: u32,
    rounds: u32,
) -> Result<u64, CipherError> {
    let half_mask = check_feistel_width(bits)?;
    let half = bits / 2;
    let (mut left, mut right) = ((block >> half) & half_mask, block & half_mask);
    for r in (0..rounds).rev() {
        let k = round_subkey(key, r, half_mask);
        (left, right) = (right ^ round_function(left, k, half_mask), left);
    }
    Ok(left << half | right)
}

fn ideal_fingerprint(key_value: u64, fold: u64, out_bits: u32) -> u128 {
    let blocks = out_bits.div_ceil(64);
    let mut acc = 0u128;
    for j in 1..=u64::from(blocks) {
        let block = mix64(mix64(key_value.wrapping_add(j.wrapping_mul(GOLDEN_GAMMA))) ^ fold);
        acc = acc << 64 | u128::from(block);
    }
    acc >> (64 * blocks - out_bits)
}

/// Ciphertext of `x0` under `key`, the key's fingerprint.
pub fn fingerprint(
    spec: &CipherSpec,
    key: KeyValue,
    x0: &Plaintext,
) -> Result<Fingerprint, CipherError> {
    let n = spec.key_bits;
    if key.value() >> n != 0 {
        return Err(CipherError::KeyRange {
            key: key.value(),
            bits: n,
        });
    }
    let out_bits = spec.block_bits();
    if x0.bits != out_bits {
        return Err(CipherError::Width {
            what: "plaintext",
            expected: out_bits,
            found: x0.bits,
        });
    }
    let value = match spec.id {
        CipherId::Ideal => ideal_fingerprint(key.value(), x0.fold64(), out_bits),
        CipherId::Trunc => {
            let kept = n - u32::from(spec.param);
            ideal_fingerprint(key.value() & ((1 << kept) - 1), x0.fold64(), out_bits)
        }
        CipherId::FeistelToy => {
            let mask = (1u128 << n) - 1;
            let pt = x0.as_u128();
            let rounds = u32::from(spec.param);
            let mut acc = 0u128;
            for shift in [2 * n, n, 0] {
                let block = ((pt >> shift) & mask) as u64;
                acc = acc << n | u128::from(feistel_block(key, block, n, rounds)?);
            }
            acc
        }
    };
    Ok(Fingerprint {
        bits: out_bits,
        value,
    })
}
