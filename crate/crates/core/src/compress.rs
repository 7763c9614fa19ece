//! Bit-exact packed codec for N:M-masked tensors plus the closed-form
//! compression-ratio analytics.
//!
//! Storage model: per group of `m = 2n` consecutive entries, the `n` kept
//! values are stored verbatim and the keep-set (which columns survived) is
//! stored as its lexicographic rank among the C(2n,n) possible keep-sets,
//! either as a fixed-width code of ⌈log₂C(2n,n)⌉ bits or as a canonical
//! Huffman code built over equiprobable keep-sets.
//!
//! The analytic ratios compare against a 32-bit dense baseline with 4-bit
//! values, i.e. fixed coding costs (4n + ⌈log₂C(2n,n)⌉)/(64n) of the dense
//! bytes and Huffman coding (4n + L̄)/(64n); value quantization itself is
//! out of scope, so the ratios are closed-form, not measured file sizes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::path::Path;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::bits::{crc32, BitReader, BitWriter, Crc32};
use crate::sparsity::NMPattern;

pub const MAGIC: &[u8; 4] = b"NMSP";
pub const VERSION: u16 = 1;

/// Widest pattern the codec accepts: keeps the symbol space within u32 and
/// the rank arithmetic within u64.
pub const MAX_CODEC_N: usize = 16;
/// Largest keep-set alphabet for which a Huffman table is materialized.
pub const MAX_HUFFMAN_SYMBOLS: u64 = 1 << 20;

#[derive(thiserror::Error, Debug)]
pub enum CodecError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("shape {rows}x{cols} incompatible with pattern {pattern}: columns must be a positive multiple of {m}")]
    Shape { rows: usize, cols: usize, pattern: String, m: usize },
    #[error("pattern {0} unsupported by the codec: {1}")]
    Unsupported(String, String),
    #[error("tensor violates the {pattern} pattern: group {group} has {nonzero} nonzero entries (max {n})")]
    PatternViolation { pattern: String, group: usize, nonzero: usize, n: usize },
    #[error("packed data corrupt: {0}")]
    Format(String),
    #[error("packed data CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Crc { stored: u32, computed: u32 },
}

// ---------------------------------------------------------------------------
// exact binomials
// ---------------------------------------------------------------------------

/// Exact C(m, k) by the multiplicative formula; every intermediate division
/// is exact, no floating point anywhere.
pub fn binom(m: u64, k: u64) -> BigUint {
    if k > m {
        return BigUint::zero();
    }
    let k = k.min(m - k);
    let mut c = BigUint::one();
    for i in 1..=k {
        c = c * BigUint::from(m - k + i) / BigUint::from(i);
    }
    c
}

/// ⌈log₂ x⌉ for x ≥ 1.
fn ceil_log2(x: &BigUint) -> u32 {
    assert!(!x.is_zero(), "ceil_log2 of zero");
    if x == &BigUint::one() {
        0
    } else {
        (x - BigUint::one()).bits() as u32
    }
}

/// log₂ x as f64 (relative error ~1 ulp for arbitrarily wide x).
fn log2_big(x: &BigUint) -> f64 {
    assert!(!x.is_zero(), "log2 of zero");
    let bits = x.bits();
    if bits <= 53 {
        return x.to_f64().unwrap().log2();
    }
    let shift = bits - 53;
    (x >> shift).to_f64().unwrap().log2() + shift as f64
}

/// a / b as f64, safe for operands far past f64 range.
fn ratio_big(a: &BigUint, b: &BigUint) -> f64 {
    assert!(!b.is_zero(), "division by zero");
    if a.is_zero() {
        return 0.0;
    }
    let bits = a.bits().max(b.bits());
    let shift = bits.saturating_sub(53);
    (a >> shift).to_f64().unwrap() / (b >> shift).to_f64().unwrap()
}

// ---------------------------------------------------------------------------
// equiprobable canonical Huffman
// ---------------------------------------------------------------------------

/// Huffman code lengths for `k` equiprobable symbols, one length per symbol
/// in symbol order. Ties merge the lowest-index pair (leaves first, then
/// internal nodes in creation order), so the table is reproducible
/// byte-for-byte. The degenerate single-symbol alphabet gets a 1-bit code.
pub fn equiprobable_huffman_lengths(k: usize) -> Vec<u8> {
    assert!(k >= 1, "empty alphabet");
    if k == 1 {
        return vec![1];
    }
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        (0..k).map(|i| Reverse((1u64, i))).collect();
    let mut parent: Vec<usize> = vec![usize::MAX; k];
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let id = parent.len();
        parent.push(usize::MAX);
        parent[a] = id;
        parent[b] = id;
        heap.push(Reverse((wa + wb, id)));
    }
    (0..k)
        .map(|leaf| {
            let mut depth = 0u8;
            let mut node = leaf;
            while parent[node] != usize::MAX {
                node = parent[node];
                depth += 1;
            }
            depth
        })
        .collect()
}

/// Canonical prefix code derived from per-symbol lengths: code values are
/// assigned in (length, symbol) order, so the lengths alone reproduce the
/// exact codebook.
pub struct CanonicalCode {
    lengths: Vec<u8>,
    /// codeword per symbol, valid in the low `lengths[s]` bits
    codes: Vec<u64>,
    /// symbols sorted by (length, symbol)
    sorted: Vec<u32>,
    /// per length l: (first canonical code value, index into `sorted`, count)
    by_len: Vec<(u64, u32, u32)>,
    max_len: u8,
}

impl CanonicalCode {
    pub fn new(lengths: &[u8]) -> Result<CanonicalCode, CodecError> {
        if lengths.is_empty() {
            return Err(CodecError::Format("empty code table".into()));
        }
        let max_len = *lengths.iter().max().unwrap();
        if lengths.iter().any(|&l| l == 0) || max_len > 63 {
            return Err(CodecError::Format("code lengths must lie in 1..=63".into()));
        }
        // complete code check: Kraft sum must be exactly 1
        let kraft: u128 = lengths.iter().map(|&l| 1u128 << (max_len - l)).sum();
        if lengths.len() > 1 && kraft != 1u128 << max_len {
            return Err(CodecError::Format("code table is not a complete prefix code".into()));
        }
        let mut sorted: Vec<u32> = (0..lengths.len() as u32).collect();
        sorted.sort_by_key(|&s| (lengths[s as usize], s));

        let mut codes = vec![0u64; lengths.len()];
        let mut by_len = vec![(0u64, 0u32, 0u32); max_len as usize + 1];
        let mut code = 0u64;
        let mut prev_len = lengths[sorted[0] as usize];
        for (i, &s) in sorted.iter().enumerate() {
            let len = lengths[s as usize];
            code <<= len - prev_len;
            if by_len[len as usize].2 == 0 {
                by_len[len as usize] = (code, i as u32, 0);
            }
            by_len[len as usize].2 += 1;
            codes[s as usize] = code;
            code += 1;
            prev_len = len;
        }
        Ok(CanonicalCode { lengths: lengths.to_vec(), codes, sorted, by_len, max_len })
    }

    pub fn len(&self, symbol: usize) -> u32 {
        self.lengths[symbol] as u32
    }

    pub fn encode(&self, symbol: usize, w: &mut BitWriter) {
        w.write_bits(self.codes[symbol], self.lengths[symbol] as u32);
    }

    pub fn decode(&self, r: &mut BitReader) -> Result<u32, CodecError> {
        let mut acc = 0u64;
        for len in 1..=self.max_len {
            acc = (acc << 1) | r.read_bits(1).map_err(CodecError::Format)?;
            let (first, start, count) = self.by_len[len as usize];
            if count > 0 && acc >= first && acc - first < count as u64 {
                return Ok(self.sorted[(start as u64 + (acc - first)) as usize]);
            }
        }
        Err(CodecError::Format("invalid Huffman code in index stream".into()))
    }
}

// ---------------------------------------------------------------------------
// keep-set ranking (combinatorial number system, lexicographic)
// ---------------------------------------------------------------------------

/// Rank/unrank n-subsets of {0..m-1} in lexicographic order of the sorted
/// index tuple. Backed by a Pascal triangle in u64 (safe for m ≤ 64).
struct Ranker {
    m: usize,
    n: usize,
    pascal: Vec<Vec<u64>>,
}

impl Ranker {
    fn new(m: usize, n: usize) -> Ranker {
        assert!(m <= 64, "ranker limited to m <= 64");
        let mut pascal = vec![vec![0u64; m + 1]; m + 1];
        for a in 0..=m {
            pascal[a][0] = 1;
            for b in 1..=a {
                pascal[a][b] = pascal[a - 1][b - 1] + pascal[a - 1].get(b).copied().unwrap_or(0);
            }
        }
        Ranker { m, n, pascal }
    }

    fn count(&self) -> u64 {
        self.pascal[self.m][self.n]
    }

    /// Lexicographic rank of a sorted keep-set.
    fn rank(&self, combo: &[usize]) -> u64 {
        debug_assert_eq!(combo.len(), self.n);
        let mut rank = 0u64;
        let mut next = 0usize;
        for (pos, &c) in combo.iter().enumerate() {
            for j in next..c {
                rank += self.pascal[self.m - 1 - j][self.n - 1 - pos];
            }
            next = c + 1;
        }
        rank
    }

    /// Inverse of `rank`.
    fn unrank(&self, mut rank: u64, out: &mut Vec<usize>) {
        out.clear();
        let mut j = 0usize;
        for pos in 0..self.n {
            loop {
                let with_j = self.pascal[self.m - 1 - j][self.n - 1 - pos];
                if rank < with_j {
                    out.push(j);
                    j += 1;
                    break;
                }
                rank -= with_j;
                j += 1;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// packed tensor
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Coding {
    Fixed,
    Huffman,
}

impl Coding {
    pub fn name(self) -> &'static str {
        match self {
            Coding::Fixed => "fixed",
            Coding::Huffman => "huffman",
        }
    }

    fn to_u8(self) -> u8 {
        match self {
            Coding::Fixed => 0,
            Coding::Huffman => 1,
        }
    }

    fn from_u8(v: u8) -> Result<Coding, CodecError> {
        match v {
            0 => Ok(Coding::Fixed),
            1 => Ok(Coding::Huffman),
            other => Err(CodecError::Format(format!("unknown coding mode {other}"))),
        }
    }
}

impl std::fmt::Display for Coding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Coding {
    type Err = String;
    fn from_str(s: &str) -> Result<Coding, String> {
        match s {
            "fixed" => Ok(Coding::Fixed),
            "huffman" => Ok(Coding::Huffman),
            other => Err(format!("unknown coding {other:?} (expected fixed or huffman)")),
        }
    }
}

/// On-disk/in-memory packed form of one N:M-masked matrix.
#[derive(Clone, PartialEq, Debug)]
pub struct PackedSparseTensor {
    pub pattern: NMPattern,
    pub rows: usize,
    pub cols: usize,
    pub mode: Coding,
    /// Canonical Huffman code lengths per keep-set symbol in lexicographic
    /// symbol order; empty in fixed mode.
    pub table: Vec<u8>,
    /// Kept values, row-major, ascending column within each group.
    pub values: Vec<f32>,
    /// Bit-packed keep-set codes, MSB-first, zero-padded to a byte.
    pub stream: Vec<u8>,
}

fn check_pattern(rows: usize, cols: usize, pattern: NMPattern) -> Result<(), CodecError> {
    let (n, m) = (pattern.n, pattern.m);
    if m != 2 * n {
        return Err(CodecError::Unsupported(
            pattern.to_string(),
            "the packed format covers 50% patterns (m = 2n) only".into(),
        ));
    }
    if n > MAX_CODEC_N {
        return Err(CodecError::Unsupported(
            pattern.to_string(),
            format!("patterns wider than {MAX_CODEC_N}:{} are not packable", 2 * MAX_CODEC_N),
        ));
    }
    if rows == 0 || cols == 0 || cols % m != 0 {
        return Err(CodecError::Shape { rows, cols, pattern: pattern.to_string(), m });
    }
    Ok(())
}

/// Pack a masked row-major matrix: pruned slots must hold exact (+0.0)
/// zeros, as the mask writes them. A kept slot that trained to exactly 0.0
/// is indistinguishable from a pruned one, so keep-sets are completed with
/// the lowest free columns; the roundtrip stays bit-exact either way.
pub fn pack(
    w: &[f32],
    rows: usize,
    cols: usize,
    pattern: NMPattern,
    mode: Coding,
) -> Result<PackedSparseTensor, CodecError> {
    check_pattern(rows, cols, pattern)?;
    if w.len() != rows * cols {
        return Err(CodecError::Shape { rows, cols, pattern: pattern.to_string(), m: pattern.m });
    }
    let (n, m) = (pattern.n, pattern.m);
    let ranker = Ranker::new(m, n);
    let symbols = ranker.count();

    let code = match mode {
        Coding::Fixed => None,
        Coding::Huffman => {
            if symbols > MAX_HUFFMAN_SYMBOLS {
                return Err(CodecError::Unsupported(
                    pattern.to_string(),
                    format!("Huffman table would need {symbols} entries (limit {MAX_HUFFMAN_SYMBOLS})"),
                ));
            }
            Some(CanonicalCode::new(&equiprobable_huffman_lengths(symbols as usize))?)
        }
    };
    let fixed_bits = ceil_log2(&BigUint::from(symbols)).max(1);

    let groups = rows * cols / m;
    let mut values = Vec::with_capacity(groups * n);
    let mut writer = BitWriter::new();
    let mut keep = Vec::with_capacity(n);
    for g in 0..groups {
        let slice = &w[g * m..(g + 1) * m];
        keep.clear();
        for (j, v) in slice.iter().enumerate() {
            // bit-level test so kept -0.0 survives; pruned slots are +0.0
            if v.to_bits() != 0 {
                keep.push(j);
            }
        }
        if keep.len() > n {
            return Err(CodecError::PatternViolation {
                pattern: pattern.to_string(),
                group: g,
                nonzero: keep.len(),
                n,
            });
        }
        let mut fill = 0usize;
        while keep.len() < n {
            if !keep.contains(&fill) {
                keep.insert(keep.partition_point(|&x| x < fill), fill);
            }
            fill += 1;
        }
        values.extend(keep.iter().map(|&j| slice[j]));
        let rank = ranker.rank(&keep);
        match &code {
            None => writer.write_bits(rank, fixed_bits),
            Some(c) => c.encode(rank as usize, &mut writer),
        }
    }

    Ok(PackedSparseTensor {
        pattern,
        rows,
        cols,
        mode,
        table: code.map(|c| c.lengths).unwrap_or_default(),
        values,
        stream: writer.finish(),
    })
}

impl PackedSparseTensor {
    pub fn groups(&self) -> usize {
        self.rows * self.cols / self.pattern.m
    }

    fn decode_ranks(&self) -> Result<(Vec<u64>, u64), CodecError> {
        let symbols = Ranker::new(self.pattern.m, self.pattern.n).count();
        let fixed_bits = ceil_log2(&BigUint::from(symbols)).max(1);
        let code = match self.mode {
            Coding::Fixed => None,
            Coding::Huffman => Some(CanonicalCode::new(&self.table)?),
        };
        let mut reader = BitReader::new(&self.stream);
        let mut ranks = Vec::with_capacity(self.groups());
        for _ in 0..self.groups() {
            let rank = match &code {
                None => reader.read_bits(fixed_bits).map_err(CodecError::Format)?,
                Some(c) => c.decode(&mut reader)? as u64,
            };
            if rank >= symbols {
                return Err(CodecError::Format(format!(
                    "keep-set index {rank} out of range (alphabet {symbols})"
                )));
            }
            ranks.push(rank);
        }
        let bits = reader.bit_pos() as u64;
        let total = self.stream.len() as u64 * 8;
        // the stream must be exactly the codes plus sub-byte zero padding
        if total - bits >= 8 {
            return Err(CodecError::Format("index stream longer than its codes".into()));
        }
        if bits < total {
            let tail = (total - bits) as u32;
            let byte = self.stream[self.stream.len() - 1];
            if byte & ((1u8 << tail) - 1) != 0 {
                return Err(CodecError::Format("nonzero padding bits in index stream".into()));
            }
        }
        Ok((ranks, bits))
    }

    /// Number of meaningful (pre-padding) bits in the index stream.
    pub fn encoded_bits(&self) -> Result<u64, CodecError> {
        Ok(self.decode_ranks()?.1)
    }

    /// Reconstruct the dense row-major matrix, bit-for-bit.
    pub fn unpack(&self) -> Result<Vec<f32>, CodecError> {
        let (n, m) = (self.pattern.n, self.pattern.m);
        if self.values.len() != self.groups() * n {
            return Err(CodecError::Format(format!(
                "value count {} does not match {} groups of {n}",
                self.values.len(),
                self.groups()
            )));
        }
        let (ranks, _) = self.decode_ranks()?;
        let ranker = Ranker::new(m, n);
        let mut out = vec![0f32; self.rows * self.cols];
        let mut keep = Vec::with_capacity(n);
        for (g, &rank) in ranks.iter().enumerate() {
            ranker.unrank(rank, &mut keep);
            for (slot, &j) in keep.iter().enumerate() {
                out[g * m + j] = self.values[g * n + slot];
            }
        }
        Ok(out)
    }

    /// Serialize: magic, version u16, n u8, m u8, rows u32, cols u32, mode
    /// u8, table (count u32 + lengths), values f32 LE, index bitstream,
    /// trailing CRC32. All little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.table.len() + self.values.len() * 4 + self.stream.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.pattern.n as u8);
        out.push(self.pattern.m as u8);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.push(self.mode.to_u8());
        out.extend_from_slice(&(self.table.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.table);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.stream);
        let mut crc = Crc32::new();
        crc.update(&out);
        out.extend_from_slice(&crc.finalize().to_le_bytes());
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<PackedSparseTensor, CodecError> {
        if data.len() < 4 {
            return Err(CodecError::Format("file shorter than its magic".into()));
        }
        if &data[..4] != MAGIC {
            return Err(CodecError::Format("bad magic (not an NMSP file)".into()));
        }
        if data.len() < 25 {
            return Err(CodecError::Format("truncated header".into()));
        }
        let body = &data[..data.len() - 4];
        let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
        let computed = crc32(body);
        if stored != computed {
            return Err(CodecError::Crc { stored, computed });
        }

        let version = u16::from_le_bytes(body[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(CodecError::Format(format!("unsupported version {version}")));
        }
        let n = body[6] as usize;
        let m = body[7] as usize;
        if n == 0 || m != 2 * n || n > MAX_CODEC_N {
            return Err(CodecError::Format(format!("invalid pattern {n}:{m} in header")));
        }
        let pattern = NMPattern::new(n, m);
        let rows = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        check_pattern(rows, cols, pattern)?;
        let mode = Coding::from_u8(body[16])?;
        let table_len = u32::from_le_bytes(body[17..21].try_into().unwrap()) as usize;
        let mut pos = 21;
        if body.len() < pos + table_len {
            return Err(CodecError::Format("truncated code table".into()));
        }
        let table = body[pos..pos + table_len].to_vec();
        pos += table_len;

        let symbols = Ranker::new(m, n).count();
        match mode {
            Coding::Fixed if table_len != 0 => {
                return Err(CodecError::Format("fixed mode carries no code table".into()));
            }
            Coding::Huffman if table_len as u64 != symbols => {
                return Err(CodecError::Format(format!(
                    "code table has {table_len} entries, alphabet needs {symbols}"
                )));
            }
            _ => {}
        }

        let groups = rows * cols / m;
        let value_bytes = groups * n * 4;
        if body.len() < pos + value_bytes {
            return Err(CodecError::Format("truncated value block".into()));
        }
        let values: Vec<f32> = body[pos..pos + value_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += value_bytes;
        let stream = body[pos..].to_vec();

        Ok(PackedSparseTensor { pattern, rows, cols, mode, table, values, stream })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CodecError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<PackedSparseTensor, CodecError> {
        let mut data = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut data)?;
        PackedSparseTensor::from_bytes(&data)
    }
}

// ---------------------------------------------------------------------------
// ratio analytics
// ---------------------------------------------------------------------------

/// Fixed-code index width for the n:2n pattern: ⌈log₂ C(2n,n)⌉ bits.
pub fn ceil_index_bits(n: u64) -> u32 {
    assert!(n >= 1);
    ceil_log2(&binom(2 * n, n))
}

/// Closed-form fixed-coding ratio C_n = 1/16 + ⌈log₂C(2n,n)⌉/(64n) against
/// the 32-bit dense baseline with 4-bit values.
pub fn fixed_ratio(n: u64) -> f64 {
    1.0 / 16.0 + ceil_index_bits(n) as f64 / (64.0 * n as f64)
}

/// Average canonical-Huffman code length over C(2n,n) equiprobable
/// keep-sets. With K symbols and L = ⌈log₂K⌉, the complete binary code has
/// 2^L − K words of length L−1 and 2K − 2^L of length L, so
/// L̄ = L + 1 − 2^L/K — evaluated exactly, no tree is materialized.
pub fn avg_code_len(n: u64) -> f64 {
    assert!(n >= 1);
    let k = binom(2 * n, n);
    let l = ceil_log2(&k).max(1);
    let pow = BigUint::one() << l;
    l as f64 + 1.0 - ratio_big(&pow, &k)
}

/// Huffman-coding ratio (4n + L̄)/(64n).
pub fn huffman_ratio(n: u64) -> f64 {
    (4.0 * n as f64 + avg_code_len(n)) / (64.0 * n as f64)
}

/// Index entropy log₂ C(2n,n), the lower bound on any prefix code.
pub fn entropy_bits(n: u64) -> f64 {
    log2_big(&binom(2 * n, n))
}

#[derive(Clone, Debug)]
pub struct RatioRow {
    pub n: u64,
    pub index_bits: u32,
    pub entropy: f64,
    pub avg_len: f64,
    pub fixed: f64,
    pub huffman: f64,
}

/// Analytic table for patterns n:2n, n = 1..=n_max.
pub fn ratio_table(n_max: u64) -> Vec<RatioRow> {
    (1..=n_max)
        .map(|n| RatioRow {
            n,
            index_bits: ceil_index_bits(n),
            entropy: entropy_bits(n),
            avg_len: avg_code_len(n),
            fixed: fixed_ratio(n),
            huffman: huffman_ratio(n),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BoundRow {
    pub n: u64,
    pub log2_binom: f64,
    /// 2n − ½log₂(πn), i.e. log₂ of the 4ⁿ/√(πn) envelope
    pub log2_bound: f64,
    pub huffman_ratio: f64,
}

#[derive(Clone, Debug, Default)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub violations: Vec<String>,
}

impl BoundReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check that C(2n,n) ≤ 4ⁿ/√(πn) and that the Huffman ratio stays under the
/// 3/32 envelope for every 1 ≤ n ≤ n_max.
pub fn verify_bound(n_max: u64) -> BoundReport {
    let mut report = BoundReport::default();
    for n in 1..=n_max {
        let log2_binom = log2_big(&binom(2 * n, n));
        let log2_bound = 2.0 * n as f64 - 0.5 * (std::f64::consts::PI * n as f64).log2();
        let ratio = huffman_ratio(n);
        if log2_binom > log2_bound {
            report.violations.push(format!(
                "n={n}: log2 C(2n,n) = {log2_binom} exceeds the envelope {log2_bound}"
            ));
        }
        if ratio >= 3.0 / 32.0 {
            report.violations.push(format!(
                "n={n}: huffman ratio {ratio} reaches the 3/32 ceiling"
            ));
        }
        report.rows.push(BoundRow { n, log2_binom, log2_bound, huffman_ratio: ratio });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::sparsity::Mask;

    /// All n-subsets of {0..m-1} in lexicographic order — independent
    /// enumeration oracle for the ranker.
    fn combos(m: usize, n: usize) -> Vec<Vec<usize>> {
        fn rec(start: usize, m: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if left == 0 {
                out.push(cur.clone());
                return;
            }
            for j in start..=(m - left) {
                cur.push(j);
                rec(j + 1, m, left - 1, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(0, m, n, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn binomials_match_pascal_oracle() {
        // addition-only Pascal triangle vs the multiplicative formula
        let max = 130usize;
        let mut row: Vec<BigUint> = vec![BigUint::one()];
        for a in 1..=max {
            let mut next = vec![BigUint::one(); a + 1];
            for b in 1..a {
                next[b] = &row[b - 1] + &row[b];
            }
            row = next;
            for (b, want) in row.iter().enumerate() {
                assert_eq!(&binom(a as u64, b as u64), want, "C({a},{b})");
            }
        }
        assert_eq!(binom(2, 1), BigUint::from(2u32));
        assert_eq!(binom(4, 2), BigUint::from(6u32));
        assert_eq!(binom(8, 4), BigUint::from(70u32));
        assert_eq!(binom(16, 8), BigUint::from(12870u32));
    }

    #[test]
    fn rank_and_unrank_follow_lexicographic_enumeration() {
        for (m, n) in [(2, 1), (4, 2), (8, 4), (6, 3), (8, 2)] {
            let ranker = Ranker::new(m, n);
            let all = combos(m, n);
            assert_eq!(ranker.count() as usize, all.len());
            let mut back = Vec::new();
            for (i, combo) in all.iter().enumerate() {
                assert_eq!(ranker.rank(combo), i as u64, "rank of {combo:?} in {n}:{m}");
                ranker.unrank(i as u64, &mut back);
                assert_eq!(&back, combo, "unrank {i} in {n}:{m}");
            }
        }
        // the 2:4 keep-set order pins {0,1}<{0,2}<{0,3}<{1,2}<{1,3}<{2,3}
        let r = Ranker::new(4, 2);
        assert_eq!(r.rank(&[1, 2]), 3);
    }

    #[test]
    fn spec_group_packs_to_rank_three_code_011() {
        let w = [0.0f32, 2.5, -1.0, 0.0];
        let p = pack(&w, 1, 4, NMPattern::new(2, 4), Coding::Fixed).unwrap();
        assert_eq!(p.values, vec![2.5, -1.0]);
        // independent oracle: position of {1,2} among all enumerated keep-sets
        let oracle = combos(4, 2).iter().position(|c| c == &vec![1, 2]).unwrap();
        assert_eq!(oracle, 3);
        // 3 bits, MSB-first: 011 then zero padding
        assert_eq!(p.stream, vec![0b0110_0000]);
        assert_eq!(p.encoded_bits().unwrap(), 3);
        assert_eq!(p.unpack().unwrap(), w.to_vec());
    }

    #[test]
    fn equiprobable_tree_matches_known_small_tables() {
        // 6 equal weights: the Huffman tree yields lengths {2,2,3,3,3,3}
        let lens = equiprobable_huffman_lengths(6);
        let mut sorted = lens.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![2, 2, 3, 3, 3, 3]);
        let code = CanonicalCode::new(&lens).unwrap();
        for s in 0..6 {
            let mut w = BitWriter::new();
            code.encode(s, &mut w);
            let bytes = w.finish();
            let mut r = BitReader::new(&bytes);
            assert_eq!(code.decode(&mut r).unwrap() as usize, s);
        }

        // 70 equal weights: 58 codes of length 6 and 12 of length 7
        let lens = equiprobable_huffman_lengths(70);
        assert_eq!(lens.iter().filter(|&&l| l == 6).count(), 58);
        assert_eq!(lens.iter().filter(|&&l| l == 7).count(), 12);

        // degenerate single-symbol alphabet gets a 1-bit code
        assert_eq!(equiprobable_huffman_lengths(1), vec![1]);
    }

    #[test]
    fn tree_lengths_agree_with_analytic_profile() {
        for k in [2usize, 3, 5, 6, 7, 20, 64, 70, 256, 12870] {
            let lens = equiprobable_huffman_lengths(k);
            let l = ceil_log2(&BigUint::from(k)).max(1);
            let short = (1usize << l) - k;
            let long = 2 * k - (1usize << l);
            assert_eq!(lens.iter().filter(|&&x| x as u32 == l - 1).count(), short, "k={k}");
            assert_eq!(lens.iter().filter(|&&x| x as u32 == l).count(), long, "k={k}");
            let avg = lens.iter().map(|&x| x as f64).sum::<f64>() / k as f64;
            // alphabet sizes C(2n,n): probe the analytic mean where defined
            for n in [1u64, 2, 4, 8] {
                if binom(2 * n, n) == BigUint::from(k) {
                    assert!((avg_code_len(n) - avg).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ratio_table_reproduces_published_percentages() {
        // closed-form exact points
        assert_eq!(ceil_index_bits(2), 3, "2:4 needs exactly 3 extra bits");
        assert!((fixed_ratio(2) - 11.0 / 128.0).abs() < 1e-15);
        assert!((huffman_ratio(1) - 5.0 / 64.0).abs() < 1e-15);
        assert!((avg_code_len(2) - 8.0 / 3.0).abs() < 1e-12);
        assert!((huffman_ratio(2) - 1.0 / 12.0).abs() < 1e-12);
        let l70 = (58.0 * 6.0 + 12.0 * 7.0) / 70.0;
        assert!((avg_code_len(4) - l70).abs() < 1e-12);
        assert!((huffman_ratio(4) - (16.0 + l70) / 256.0).abs() < 1e-12);

        // published two-decimal percentages, ±0.01pp
        let published = [(1u64, 7.81), (2, 8.33), (4, 8.66), (8, 8.93), (16, 9.10), (32, 9.22)];
        for (n, pct) in published {
            let got = huffman_ratio(n) * 100.0;
            assert!((got - pct).abs() < 0.01, "n={n}: {got:.4}% vs {pct}%");
        }
        // strictly increasing across the six patterns
        for w in published.windows(2) {
            assert!(huffman_ratio(w[0].0) < huffman_ratio(w[1].0));
        }
    }

    #[test]
    fn entropy_average_and_ceiling_are_ordered() {
        for n in 1..=64u64 {
            let h = entropy_bits(n);
            let avg = avg_code_len(n);
            let ceil = ceil_index_bits(n) as f64;
            assert!(h <= avg + 1e-9, "n={n}: entropy {h} above mean length {avg}");
            assert!(avg <= ceil + 1e-9, "n={n}: mean length {avg} above ceiling {ceil}");
            assert!(huffman_ratio(n) <= fixed_ratio(n) + 1e-15, "n={n}");
            assert!(huffman_ratio(n) < 3.0 / 32.0, "n={n} breaches 3/32");
        }
    }

    #[test]
    fn bound_verification_holds_through_n_64() {
        let report = verify_bound(64);
        assert!(report.ok(), "violations: {:?}", report.violations);
        assert_eq!(report.rows.len(), 64);
        // n=1 numerically: C(2,1)=2 ≤ 4/√π ≈ 2.2567
        assert!(2.0 <= 4.0 / std::f64::consts::PI.sqrt());
        assert!((report.rows[0].log2_bound - (4.0 / std::f64::consts::PI.sqrt()).log2()).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_cost_one_code_each() {
        // every group keeps {1,2} (rank 3); 4×8 in 2:4 → 8 groups
        let mut w = vec![0f32; 32];
        for g in 0..8 {
            w[g * 4 + 1] = 1.0 + g as f32;
            w[g * 4 + 2] = -2.0;
        }
        let p = pack(&w, 4, 8, NMPattern::new(2, 4), Coding::Huffman).unwrap();
        let code = CanonicalCode::new(&p.table).unwrap();
        assert_eq!(p.encoded_bits().unwrap(), 8 * code.len(3) as u64);
        assert_eq!(p.unpack().unwrap(), w);
    }

    #[test]
    fn random_masked_tensors_roundtrip_bit_exactly() {
        let mut rng = SplitMix64::stream(2024, "codec");
        for pattern in [NMPattern::new(1, 2), NMPattern::new(2, 4), NMPattern::new(4, 8)] {
            for mode in [Coding::Fixed, Coding::Huffman] {
                for trial in 0..24 {
                    let (rows, cols) = if trial == 0 {
                        (8, 16) // the pinned shape
                    } else {
                        (
                            1 + (rng.next_u64() % 12) as usize,
                            pattern.m * (1 + (rng.next_u64() % 9) as usize),
                        )
                    };
                    let mut dense = vec![0f32; rows * cols];
                    rng.fill_uniform(&mut dense, -3.0, 3.0);
                    let mask = Mask::select_magnitude(&dense, rows, cols, pattern);
                    let masked = mask.apply(&dense);
                    let packed = pack(&masked, rows, cols, pattern, mode).unwrap();
                    assert_eq!(packed.values.len(), rows * cols * pattern.n / pattern.m);
                    let back = packed.unpack().unwrap();
                    let same = masked
                        .iter()
                        .zip(&back)
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                    assert!(same, "value bits changed ({pattern} {mode:?} {rows}x{cols})");

                    let reread = PackedSparseTensor::from_bytes(&packed.to_bytes()).unwrap();
                    assert_eq!(reread, packed, "file roundtrip ({pattern} {mode:?})");
                }
            }
        }
    }

    #[test]
    fn kept_negative_zero_survives_and_zero_groups_pack() {
        // a kept -0.0 is a nonzero bit pattern and must survive verbatim
        let w = [0.0f32, -0.0, 0.0, 1.5];
        let p = pack(&w, 1, 4, NMPattern::new(2, 4), Coding::Fixed).unwrap();
        let back = p.unpack().unwrap();
        assert_eq!(back[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back[3], 1.5);

        // an all-zero group is ambiguous; the lowest columns complete the
        // keep-set and the roundtrip stays exact
        let w = [0.0f32; 8];
        for mode in [Coding::Fixed, Coding::Huffman] {
            let p = pack(&w, 1, 8, NMPattern::new(4, 8), mode).unwrap();
            assert_eq!(p.unpack().unwrap(), w.to_vec());
        }
    }

    #[test]
    fn pattern_violations_and_bad_patterns_are_rejected() {
        let w = [1.0f32, 2.5, -1.0, 0.0];
        let err = pack(&w, 1, 4, NMPattern::new(2, 4), Coding::Fixed).unwrap_err();
        match err {
            CodecError::PatternViolation { group, nonzero, n, .. } => {
                assert_eq!((group, nonzero, n), (0, 3, 2));
            }
            other => panic!("wrong error {other:?}"),
        }

        // non-50% pattern
        let err = pack(&[0.0; 8], 2, 4, NMPattern::new(1, 4), Coding::Fixed).unwrap_err();
        assert!(matches!(err, CodecError::Unsupported(..)), "{err:?}");
        // columns not a multiple of m
        let err = pack(&[0.0; 6], 1, 6, NMPattern::new(2, 4), Coding::Fixed).unwrap_err();
        assert!(matches!(err, CodecError::Shape { .. }), "{err:?}");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let w = [0.0f32, 2.5, -1.0, 0.0, 4.0, 0.0, 0.0, -0.5];
        let p = pack(&w, 2, 4, NMPattern::new(2, 4), Coding::Huffman).unwrap();
        let good = p.to_bytes();
        assert_eq!(PackedSparseTensor::from_bytes(&good).unwrap(), p);

        // flipped payload byte → CRC mismatch
        let mut bad = good.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(PackedSparseTensor::from_bytes(&bad).unwrap_err(), CodecError::Crc { .. }));

        // bad magic
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(PackedSparseTensor::from_bytes(&bad).is_err());

        // truncation
        assert!(PackedSparseTensor::from_bytes(&good[..good.len() - 5]).is_err());
    }

    #[test]
    fn tampered_streams_fail_decoding() {
        fn rewrite_crc(buf: &mut Vec<u8>) {
            let body = buf.len() - 4;
            let crc = crc32(&buf[..body]);
            buf[body..].copy_from_slice(&crc.to_le_bytes());
        }

        // fixed mode: force the 3-bit code 111 = rank 7 ≥ 6 symbols
        let w = [0.0f32, 2.5, -1.0, 0.0];
        let p = pack(&w, 1, 4, NMPattern::new(2, 4), Coding::Fixed).unwrap();
        let mut buf = p.to_bytes();
        let stream_at = buf.len() - 4 - 1; // single stream byte before the CRC
        buf[stream_at] = 0b1110_0000;
        rewrite_crc(&mut buf);
        let bad = PackedSparseTensor::from_bytes(&buf).unwrap();
        let err = bad.unpack().unwrap_err();
        assert!(matches!(err, CodecError::Format(ref s) if s.contains("out of range")), "{err:?}");

        // nonzero padding bits after the last code
        let mut buf = p.to_bytes();
        buf[stream_at] = 0b0110_0001;
        rewrite_crc(&mut buf);
        let bad = PackedSparseTensor::from_bytes(&buf).unwrap();
        let err = bad.unpack().unwrap_err();
        assert!(matches!(err, CodecError::Format(ref s) if s.contains("padding")), "{err:?}");
    }
}
