//! The sorted precomputation dictionary of `(fingerprint, keys)` entries.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cipher::{
    fingerprint, packed_len, CipherError, CipherId, CipherSpec, Fingerprint, KeyValue, Plaintext,
};
use crate::parallel::with_workers;

pub const MAGIC: &[u8; 4] = b"KDT1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum DictError {
    #[error(transparent)]
    Cipher(#[from] CipherError),
    #[error("m={m} exceeds key width n={n}")]
    TooManyKeys { n: u32, m: u32 },
    #[error("duplicate input key {0}")]
    DuplicateKey(KeyValue),
    #[error("fingerprint width {found} does not match dictionary width {expected}")]
    WidthMismatch { expected: u32, found: u32 },
    #[error("entry {index} holds {size} keys, more than the format allows")]
    EntryTooLarge { index: usize, size: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("version mismatch: found {0}, expected {FORMAT_VERSION}")]
    VersionMismatch(u16),
    #[error("truncated input while reading {0}")]
    Truncated(&'static str),
    #[error("unsorted entries at entry {0}")]
    UnsortedEntries(usize),
    #[error("nonzero pad bits in {0}")]
    NonzeroPadBits(&'static str),
    #[error("invalid header field {field}: {reason}")]
    InvalidHeader { field: &'static str, reason: String },
    #[error("invalid entry {index}: {reason}")]
    InvalidEntry { index: usize, reason: &'static str },
    #[error("total_keys {declared} disagrees with entry key count {counted}")]
    TotalKeys { declared: u64, counted: u64 },
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
    #[error("key {key} in entry {index} does not reproduce the entry fingerprint")]
    Unsound { index: usize, key: KeyValue },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyMode {
    Sequential,
    Sampled,
}

/// `2^m` distinct `n`-bit keys in ascending order.
///
/// `Sampled` draws without replacement from the whole key space, seeded.
pub fn enumerate_keys(
    mode: KeyMode,
    n: u32,
    m: u32,
    seed: u64,
) -> Result<Vec<KeyValue>, DictError> {
    if m > n {
        return Err(DictError::TooManyKeys { n, m });
    }
    if n > crate::cipher::MAX_KEY_BITS {
        return Err(CipherError::KeyBits(n).into());
    }
    let count = 1usize << m;
    let keys = match mode {
        KeyMode::Sequential => (0..count as u32).map(KeyValue).collect(),
        KeyMode::Sampled => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keys: Vec<KeyValue> = rand::seq::index::sample(&mut rng, 1usize << n, count)
                .into_iter()
                .map(|v| KeyValue(v as u32))
                .collect();
            keys.sort_unstable();
            keys
        }
    };
    Ok(keys)
}

/// One dictionary record: a fingerprint and every key that produces it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DictEntry {
    pub fp: Fingerprint,
    /// Strictly ascending, never empty.
    pub keys: Vec<KeyValue>,
}

/// Outcome of a dictionary lookup. `probes` counts entry comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchResult<'a> {
    Miss { probes: u32 },
    Hit { entry: &'a DictEntry, probes: u32 },
}

impl<'a> MatchResult<'a> {
    pub fn entry(&self) -> Option<&'a DictEntry> {
        match *self {
            MatchResult::Hit { entry, .. } => Some(entry),
            MatchResult::Miss { .. } => None,
        }
    }

    pub fn probes(&self) -> u32 {
        match *self {
            MatchResult::Hit { probes, .. } | MatchResult::Miss { probes } => probes,
        }
    }
}

/// Worst-case probe count of [`Dictionary::lookup`] over `entries` entries:
/// `ceil(log2 E) + 1`.
pub fn probe_budget(entries: usize) -> u32 {
    if entries <= 1 {
        1
    } else {
        (usize::BITS - (entries - 1).leading_zeros()) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    spec: CipherSpec,
    x0: Plaintext,
    entries: Vec<DictEntry>,
    total_keys: u64,
}

impl Dictionary {
    /// Builds on the current rayon pool.
    pub fn build(spec: CipherSpec, keys: &[KeyValue], x0: Plaintext) -> Result<Self, DictError> {
        Self::build_inner(spec, keys, x0)
    }

    /// Builds on a dedicated pool of `workers` threads. The result does not
    /// depend on `workers`.
    pub fn build_with_workers(
        spec: CipherSpec,
        keys: &[KeyValue],
        x0: Plaintext,
        workers: usize,
    ) -> Result<Self, DictError> {
        with_workers(Some(workers), || Self::build_inner(spec, keys, x0))
    }

    fn build_inner(spec: CipherSpec, keys: &[KeyValue], x0: Plaintext) -> Result<Self, DictError> {
        let mut pairs: Vec<(Fingerprint, KeyValue)> = keys
            .par_iter()
            .map(|&k| fingerprint(&spec, k, &x0).map(|fp| (fp, k)))
            .collect::<Result<_, _>>()?;
        pairs.par_sort_unstable();

        // Equal keys give equal fingerprints, so duplicates end up adjacent.
        if let Some(w) = pairs.windows(2).find(|w| w[0] == w[1]) {
            return Err(DictError::DuplicateKey(w[0].1));
        }

        let mut entries: Vec<DictEntry> = Vec::with_capacity(pairs.len());
        for (fp, key) in pairs {
            match entries.last_mut() {
                Some(last) if last.fp == fp => last.keys.push(key),
                _ => entries.push(DictEntry {
                    fp,
                    keys: vec![key],
                }),
            }
        }
        Ok(Dictionary {
            spec,
            x0,
            entries,
            total_keys: keys.len() as u64,
        })
    }

    pub fn spec(&self) -> &CipherSpec {
        &self.spec
    }

    pub fn x0(&self) -> &Plaintext {
        &self.x0
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn total_keys(&self) -> u64 {
        self.total_keys
    }

    /// Largest collision set.
    pub fn max_entry_size(&self) -> usize {
        self.entries.iter().map(|e| e.keys.len()).max().unwrap_or(0)
    }

    pub fn keys(&self) -> impl Iterator<Item = KeyValue> + '_ {
        self.entries.iter().flat_map(|e| e.keys.iter().copied())
    }

    pub fn fingerprint(&self, key: KeyValue) -> Result<Fingerprint, CipherError> {
        fingerprint(&self.spec, key, &self.x0)
    }

    /// Binary search by fingerprint, counting entry comparisons.
    pub fn lookup(&self, fp: &Fingerprint) -> Result<MatchResult<'_>, DictError> {
        let expected = self.spec.block_bits();
        if fp.bits() != expected {
            return Err(DictError::WidthMismatch {
                expected,
                found: fp.bits(),
            });
        }
        let (mut lo, mut hi) = (0usize, self.entries.len());
        let mut probes = 0u32;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            probes += 1;
            match self.entries[mid].fp.cmp(fp) {
                std::cmp::Ordering::Equal => {
                    return Ok(MatchResult::Hit {
                        entry: &self.entries[mid],
                        probes,
                    })
                }
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
            }
        }
        Ok(MatchResult::Miss { probes })
    }

    /// Recomputes every stored key's fingerprint.
    pub fn verify_soundness(&self) -> Result<(), DictError> {
        self.entries
            .par_iter()
            .enumerate()
            .try_for_each(|(index, entry)| {
                for &key in &entry.keys {
                    if self.fingerprint(key)? != entry.fp {
                        return Err(DictError::Unsound { index, key });
                    }
                }
                Ok(())
            })
    }

    /// Encodes the dictionary file.
    ///
    /// ```text
    /// "KDT1" | version u16 | cipher_id u8 | cipher_param u8 | key_bits u16
    ///        | x0_len u16 | x0 | entry_count u64 | total_keys u64 | entries
    /// entry: fingerprint (BE, zero pad) | s u16 | s keys (BE, ascending)
    /// ```
    /// Integers in the header are little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>, DictError> {
        let fp_len = self.spec.block_len();
        let key_len = self.spec.key_len();
        let body: usize = self
            .entries
            .iter()
            .map(|e| fp_len + 2 + key_len * e.keys.len())
            .sum();
        let mut out = Vec::with_capacity(4 + 10 + self.x0.bytes().len() + 16 + body);
        out.extend_from_slice(MAGIC);
        out.write_u16::<LittleEndian>(FORMAT_VERSION)?;
        out.write_u8(self.spec.id().code())?;
        out.write_u8(self.spec.param())?;
        out.write_u16::<LittleEndian>(self.spec.key_bits() as u16)?;
        out.write_u16::<LittleEndian>(self.x0.bytes().len() as u16)?;
        out.extend_from_slice(self.x0.bytes());
        out.write_u64::<LittleEndian>(self.entries.len() as u64)?;
        out.write_u64::<LittleEndian>(self.total_keys)?;
        for (index, entry) in self.entries.iter().enumerate() {
            let size = u16::try_from(entry.keys.len()).map_err(|_| DictError::EntryTooLarge {
                index,
                size: entry.keys.len(),
            })?;
            entry.fp.write_to(&mut out);
            out.write_u16::<LittleEndian>(size)?;
            for key in &entry.keys {
                out.extend_from_slice(&key.to_bytes(self.spec.key_bits()));
            }
        }
        Ok(out)
    }

    /// Decodes and structurally validates a dictionary file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DictError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| DictError::Truncated("magic"))?;
        if &magic != MAGIC {
            return Err(DictError::BadMagic);
        }
        let version = r
            .read_u16::<LittleEndian>()
            .map_err(|_| DictError::Truncated("version"))?;
        if version != FORMAT_VERSION {
            return Err(DictError::VersionMismatch(version));
        }
        let cipher_id = r.read_u8().map_err(|_| DictError::Truncated("cipher_id"))?;
        let param = r
            .read_u8()
            .map_err(|_| DictError::Truncated("cipher_param"))?;
        let key_bits = r
            .read_u16::<LittleEndian>()
            .map_err(|_| DictError::Truncated("key_bits"))?;
        let id = CipherId::from_code(cipher_id).map_err(|e| DictError::InvalidHeader {
            field: "cipher_id",
            reason: e.to_string(),
        })?;
        let spec = CipherSpec::new(id, u32::from(key_bits), param).map_err(|e| {
            DictError::InvalidHeader {
                field: "cipher_param/key_bits",
                reason: e.to_string(),
            }
        })?;

        let x0_len = r
            .read_u16::<LittleEndian>()
            .map_err(|_| DictError::Truncated("x0_len"))?;
        if usize::from(x0_len) != spec.block_len() {
            return Err(DictError::InvalidHeader {
                field: "x0_len",
                reason: format!("expected {}, found {x0_len}", spec.block_len()),
            });
        }
        let mut x0 = vec![0u8; usize::from(x0_len)];
        r.read_exact(&mut x0)
            .map_err(|_| DictError::Truncated("x0"))?;
        let x0 = Plaintext::from_bytes(x0, spec.block_bits()).map_err(|e| match e {
            CipherError::PadBits(_) => DictError::NonzeroPadBits("x0"),
            other => other.into(),
        })?;

        let entry_count = r
            .read_u64::<LittleEndian>()
            .map_err(|_| DictError::Truncated("entry_count"))?;
        let total_keys = r
            .read_u64::<LittleEndian>()
            .map_err(|_| DictError::Truncated("total_keys"))?;

        let fp_len = spec.block_len();
        let key_len = packed_len(spec.key_bits());
        // Each entry takes at least fp_len + 2 + key_len bytes.
        let remaining = bytes.len() as u64 - r.position();
        if entry_count > remaining / (fp_len + 2 + key_len) as u64 {
            return Err(DictError::Truncated("entries"));
        }

        let mut entries: Vec<DictEntry> = Vec::with_capacity(entry_count as usize);
        let mut counted = 0u64;
        let mut fp_buf = vec![0u8; fp_len];
        let mut key_buf = vec![0u8; key_len];
        for index in 0..entry_count as usize {
            r.read_exact(&mut fp_buf)
                .map_err(|_| DictError::Truncated("entry fingerprint"))?;
            let fp = Fingerprint::from_bytes(&fp_buf, spec.block_bits()).map_err(|e| match e {
                CipherError::PadBits(_) => DictError::NonzeroPadBits("entry fingerprint"),
                other => other.into(),
            })?;
            if let Some(prev) = entries.last() {
                if prev.fp >= fp {
                    return Err(DictError::UnsortedEntries(index));
                }
            }
            let size = r
                .read_u16::<LittleEndian>()
                .map_err(|_| DictError::Truncated("entry size"))?;
            if size == 0 {
                return Err(DictError::InvalidEntry {
                    index,
                    reason: "empty key set",
                });
            }
            let mut keys = Vec::with_capacity(usize::from(size));
            for _ in 0..size {
                r.read_exact(&mut key_buf)
                    .map_err(|_| DictError::Truncated("entry key"))?;
                let key = KeyValue::from_bytes(&key_buf, spec.key_bits())
                    .map_err(|_| DictError::NonzeroPadBits("entry key"))?;
                if keys.last().is_some_and(|&prev| prev >= key) {
                    return Err(DictError::InvalidEntry {
                        index,
                        reason: "keys not strictly ascending",
                    });
                }
                keys.push(key);
            }
            counted += u64::from(size);
            entries.push(DictEntry { fp, keys });
        }
        if counted != total_keys {
            return Err(DictError::TotalKeys {
                declared: total_keys,
                counted,
            });
        }
        let trailing = bytes.len() - r.position() as usize;
        if trailing != 0 {
            return Err(DictError::TrailingBytes(trailing));
        }
        Ok(Dictionary {
            spec,
            x0,
            entries,
            total_keys,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), DictError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, DictError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::cipher::default_x0;

    fn naive_entries(
        spec: &CipherSpec,
        keys: &[KeyValue],
        x0: &Plaintext,
    ) -> Vec<(Fingerprint, Vec<KeyValue>)> {
        let mut groups: HashMap<Fingerprint, Vec<KeyValue>> = HashMap::new();
        for &k in keys {
            groups
                .entry(fingerprint(spec, k, x0).unwrap())
                .or_default()
                .push(k);
        }
        let mut out: Vec<_> = groups
            .into_iter()
            .map(|(fp, mut ks)| {
                ks.sort();
                (fp, ks)
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn enumerate_sequential() {
        let keys = enumerate_keys(KeyMode::Sequential, 4, 2, 99).unwrap();
        assert_eq!(
            keys,
            vec![KeyValue(0), KeyValue(1), KeyValue(2), KeyValue(3)]
        );
        assert!(matches!(
            enumerate_keys(KeyMode::Sequential, 4, 5, 0),
            Err(DictError::TooManyKeys { n: 4, m: 5 })
        ));
    }

    #[test]
    fn enumerate_sampled() {
        let a = enumerate_keys(KeyMode::Sampled, 20, 10, 7).unwrap();
        let b = enumerate_keys(KeyMode::Sampled, 20, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1024);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|k| k.value() < 1 << 20));
        assert_ne!(a, enumerate_keys(KeyMode::Sampled, 20, 10, 8).unwrap());

        let all = enumerate_keys(KeyMode::Sampled, 8, 8, 1).unwrap();
        assert_eq!(all, (0..256).map(KeyValue).collect::<Vec<_>>());
    }

    #[test]
    fn single_key() {
        let spec = CipherSpec::ideal(8).unwrap();
        let d = Dictionary::build(spec, &[KeyValue(17)], default_x0(8)).unwrap();
        assert_eq!(d.entry_count(), 1);
        assert_eq!(d.entries()[0].keys, vec![KeyValue(17)]);
        assert_eq!(d.total_keys(), 1);
    }

    #[test]
    fn trunc_classes() {
        let spec = CipherSpec::trunc(8, 2).unwrap();
        let keys = enumerate_keys(KeyMode::Sequential, 8, 8, 0).unwrap();
        let d = Dictionary::build(spec, &keys, default_x0(8)).unwrap();
        assert_eq!(d.entry_count(), 64);
        for e in d.entries() {
            assert_eq!(e.keys.len(), 4);
            let low = e.keys[0].0 & 0x3f;
            assert!(e.keys.iter().all(|k| k.0 & 0x3f == low));
        }
    }

    #[test]
    fn matches_naive_grouping() {
        let x0 = default_x0(8);
        let keys = enumerate_keys(KeyMode::Sequential, 8, 8, 0).unwrap();
        for spec in [
            CipherSpec::ideal(8).unwrap(),
            CipherSpec::feistel(8, 8).unwrap(),
            CipherSpec::trunc(8, 3).unwrap(),
        ] {
            let d = Dictionary::build(spec, &keys, x0.clone()).unwrap();
            let naive = naive_entries(&spec, &keys, &x0);
            assert_eq!(d.entry_count(), naive.len());
            for (e, (fp, ks)) in d.entries().iter().zip(&naive) {
                assert_eq!(&e.fp, fp);
                assert_eq!(&e.keys, ks);
            }
        }
    }

    #[test]
    fn duplicate_keys_rejected() {
        let spec = CipherSpec::ideal(8).unwrap();
        let err = Dictionary::build(
            spec,
            &[KeyValue(3), KeyValue(9), KeyValue(3)],
            default_x0(8),
        );
        assert!(matches!(err, Err(DictError::DuplicateKey(KeyValue(3)))));
        let err = Dictionary::build(spec, &[KeyValue(300)], default_x0(8));
        assert!(matches!(
            err,
            Err(DictError::Cipher(CipherError::KeyRange { .. }))
        ));
    }

    #[test]
    fn lookup_hit_and_miss() {
        let spec = CipherSpec::ideal(10).unwrap();
        let keys = enumerate_keys(KeyMode::Sequential, 10, 10, 0).unwrap();
        let d = Dictionary::build(spec, &keys, default_x0(10)).unwrap();
        for &k in &keys {
            let fp = d.fingerprint(k).unwrap();
            let hit = d.lookup(&fp).unwrap();
            assert!(hit.entry().unwrap().keys.contains(&k));
            assert!(hit.probes() <= probe_budget(d.entry_count()));
        }
        // flip the last bit of a stored fingerprint until it's absent
        let stored: std::collections::HashSet<_> = d.entries().iter().map(|e| e.fp).collect();
        let probe = d
            .entries()
            .iter()
            .map(|e| Fingerprint::new(e.fp.value() ^ 1, 30).unwrap())
            .find(|fp| !stored.contains(fp))
            .unwrap();
        assert!(matches!(
            d.lookup(&probe).unwrap(),
            MatchResult::Miss { .. }
        ));

        let wrong = Fingerprint::new(1, 33).unwrap();
        assert!(matches!(
            d.lookup(&wrong),
            Err(DictError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn lookup_on_empty_dictionary() {
        let spec = CipherSpec::ideal(8).unwrap();
        let d = Dictionary::build(spec, &[], default_x0(8)).unwrap();
        let fp = Fingerprint::new(0, 24).unwrap();
        assert_eq!(d.lookup(&fp).unwrap(), MatchResult::Miss { probes: 0 });
    }

    #[test]
    fn probe_budget_values() {
        assert_eq!(probe_budget(1), 1);
        assert_eq!(probe_budget(2), 2);
        assert_eq!(probe_budget(3), 3);
        assert_eq!(probe_budget(1024), 11);
        assert_eq!(probe_budget(1025), 12);
    }

    #[test]
    fn header_layout() {
        let spec = CipherSpec::ideal(8).unwrap();
        let d = Dictionary::build(spec, &[KeyValue(1), KeyValue(2)], default_x0(8)).unwrap();
        let bytes = d.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"KDT1");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 0);
        assert_eq!(bytes[7], 0);
        assert_eq!(&bytes[8..10], &[8, 0]);
        assert_eq!(&bytes[10..12], &[3, 0]);
        assert_eq!(&bytes[12..15], &[0, 1, 2]);
        assert_eq!(&bytes[15..23], &2u64.to_le_bytes());
        assert_eq!(&bytes[23..31], &2u64.to_le_bytes());
        // two entries of 3 + 2 + 1 bytes
        assert_eq!(bytes.len(), 31 + 2 * 6);
    }

    #[test]
    fn oversize_entry_cannot_serialize() {
        let spec = CipherSpec::trunc(20, 17).unwrap();
        let keys = enumerate_keys(KeyMode::Sequential, 20, 20, 0).unwrap();
        let d = Dictionary::build(spec, &keys, default_x0(20)).unwrap();
        assert_eq!(d.max_entry_size(), 1 << 17);
        assert!(matches!(
            d.to_bytes(),
            Err(DictError::EntryTooLarge { index: 0, .. })
        ));
    }
}
