//! SimHash machinery: centering, the norm-equalizing inner-product
//! transform, seeded K x L signed random projections, hash-table build and
//! query with the at-least-two-tables rule, and the analytic collision,
//! sampling, and budget probability formulas.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Hash-family shape: `bits_per_table` (K) sign bits per table and
/// `num_tables` (L) tables. A key becomes a candidate when its code matches
/// the query's in at least `min_collisions` tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LshConfig {
    pub bits_per_table: u32,
    pub num_tables: u32,
    pub min_collisions: u32,
    pub seed: u64,
}

impl LshConfig {
    /// Standard two-table-rule configuration.
    pub fn new(bits_per_table: u32, num_tables: u32, seed: u64) -> Result<Self> {
        Self::with_min_collisions(bits_per_table, num_tables, 2, seed)
    }

    pub fn with_min_collisions(
        bits_per_table: u32,
        num_tables: u32,
        min_collisions: u32,
        seed: u64,
    ) -> Result<Self> {
        if bits_per_table == 0 || bits_per_table > 32 {
            return Err(Error::InvalidInput(format!(
                "bits_per_table must lie in 1..=32 so codes fit one word, got {bits_per_table}"
            )));
        }
        if min_collisions == 0 {
            return Err(Error::InvalidInput("min_collisions must be >= 1".into()));
        }
        if num_tables < min_collisions {
            return Err(Error::InvalidInput(format!(
                "num_tables={num_tables} cannot satisfy min_collisions={min_collisions}"
            )));
        }
        Ok(Self {
            bits_per_table,
            num_tables,
            min_collisions,
            seed,
        })
    }
}

/// An immutable SimHash index over `n` centered keys of width `d`.
///
/// Projections are stored dimension-major: component `r` of hyperplane `j`
/// lives at `projections[r * (K*L) + j]`, so encoding accumulates over
/// contiguous rows. Hyperplane `j = t*K + b` is bit `b` of table `t`.
#[derive(Debug, Clone)]
pub struct LshIndex {
    projections: Vec<f64>,
    tables: Vec<HashMap<u32, Vec<u32>>>,
    centering: Vec<f64>,
    centered_keys: Vec<f64>,
    n: usize,
    d: usize,
    config: LshConfig,
}

/// Query result: candidate token indices (strictly ascending), how many
/// tables each matched in, and each token's analytic inclusion probability
/// `u` in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub indices: Vec<usize>,
    pub collision_counts: Vec<u32>,
    pub probs: Vec<f64>,
}

impl CandidateSet {
    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
            collision_counts: Vec::new(),
            probs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Angular collision probability of one sign bit. `degenerate` marks the
/// zero-norm case, where a projection sign carries no information and the
/// probability is pinned at 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionProb {
    pub p: f64,
    pub degenerate: bool,
}

/// Subtracts the key mean: returns the centered keys and the mean vector.
/// Centering shifts every logit by the same amount, so softmax output is
/// unchanged while key directions spread out for hashing.
pub fn center_keys(keys: &[f64], n: usize, d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_matrix(keys, n, d, "keys")?;
    let mut mean = vec![0.0; d];
    for row in 0..n {
        for (m, &x) in mean.iter_mut().zip(&keys[row * d..(row + 1) * d]) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = keys.to_vec();
    for row in 0..n {
        for (x, &m) in centered[row * d..(row + 1) * d].iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    Ok((centered, mean))
}

/// Equalizes key norms while preserving inner products: appends
/// `sqrt(r^2 - ||k_i||^2)` to each key (with `r` the largest key norm) and
/// a zero to the query, so `q'.k'_i = q.k_i` and `||k'_i|| = r`.
pub fn mips_transform(q: &[f64], keys: &[f64], n: usize, d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_matrix(keys, n, d, "keys")?;
    if q.len() != d {
        return Err(Error::InvalidInput(format!(
            "query length {} does not match d={d}",
            q.len()
        )));
    }
    let norms_sq: Vec<f64> = (0..n)
        .map(|i| crate::attention::dot(&keys[i * d..(i + 1) * d], &keys[i * d..(i + 1) * d]))
        .collect();
    let r_sq = norms_sq.iter().copied().fold(0.0, f64::max);
    if r_sq == 0.0 {
        return Err(Error::DegenerateKeys(
            "all keys are zero; the norm-equalizing transform is undefined".into(),
        ));
    }
    let mut q_out = Vec::with_capacity(d + 1);
    q_out.extend_from_slice(q);
    q_out.push(0.0);
    let mut keys_out = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        keys_out.extend_from_slice(&keys[i * d..(i + 1) * d]);
        // max() absorbs rounding that would otherwise produce sqrt of a
        // tiny negative for the largest-norm key.
        keys_out.push((r_sq - norms_sq[i]).max(0.0).sqrt());
    }
    Ok((q_out, keys_out))
}

/// Centers the keys, draws the seeded Gaussian hyperplanes, encodes every
/// centered key, and fills the L hash tables.
///
/// Hyperplanes are drawn from `ChaCha8` seeded with `config.seed`: the `d`
/// standard-normal components of hyperplane `j` are consecutive draws, for
/// `j = 0, 1, ..., K*L-1` in order. Rebuilding with the same keys and
/// config reproduces the index exactly.
pub fn build_index(keys: &[f64], n: usize, d: usize, config: &LshConfig) -> Result<LshIndex> {
    if n == 0 {
        return Err(Error::EmptyIndex);
    }
    check_matrix(keys, n, d, "keys")?;
    if n > u32::MAX as usize {
        return Err(Error::InvalidInput(format!(
            "n={n} exceeds the table entry width"
        )));
    }
    let (centered_keys, centering) = center_keys(keys, n, d)?;

    let k = config.bits_per_table as usize;
    let l = config.num_tables as usize;
    let kl = k * l;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut projections = vec![0.0; d * kl];
    for j in 0..kl {
        for r in 0..d {
            projections[r * kl + j] = rng.sample(StandardNormal);
        }
    }

    let mut index = LshIndex {
        projections,
        tables: vec![HashMap::new(); l],
        centering,
        centered_keys,
        n,
        d,
        config: *config,
    };
    for i in 0..n {
        let codes = index.encode(&index.centered_keys[i * d..(i + 1) * d]);
        for (table, code) in index.tables.iter_mut().zip(codes) {
            // Keys are inserted in ascending order, so buckets stay sorted.
            table.entry(code).or_default().push(i as u32);
        }
    }
    Ok(index)
}

impl LshIndex {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn config(&self) -> &LshConfig {
        &self.config
    }

    /// The key mean subtracted before hashing.
    pub fn centering(&self) -> &[f64] {
        &self.centering
    }

    /// Centered key row `i`.
    pub fn centered_key(&self, i: usize) -> &[f64] {
        &self.centered_keys[i * self.d..(i + 1) * self.d]
    }

    /// The hash tables, one map from code to ascending token list per table.
    pub fn tables(&self) -> &[HashMap<u32, Vec<u32>>] {
        &self.tables
    }

    /// One K-bit code per table for vector `x` (length `d`): bit `b` of
    /// table `t` is 1 iff `x . hyperplane_{t*K+b} >= 0`, packed
    /// little-endian (bit 0 = the table's first hyperplane).
    pub fn encode(&self, x: &[f64]) -> Vec<u32> {
        assert_eq!(x.len(), self.d, "encode input must have length d");
        let k = self.config.bits_per_table as usize;
        let l = self.config.num_tables as usize;
        let kl = k * l;
        // Dimension-major accumulation: the inner loop runs over a
        // contiguous projection row, which keeps this hot path
        // vectorizable without reordering any per-dot summation.
        let mut dots = vec![0.0; kl];
        for (r, &xr) in x.iter().enumerate() {
            let row = &self.projections[r * kl..(r + 1) * kl];
            for (acc, &w) in dots.iter_mut().zip(row) {
                *acc += xr * w;
            }
        }
        (0..l)
            .map(|t| {
                let mut code = 0u32;
                for b in 0..k {
                    if dots[t * k + b] >= 0.0 {
                        code |= 1 << b;
                    }
                }
                code
            })
            .collect()
    }
}

/// Encodes a vector against the index's hyperplanes.
pub fn simhash_encode(index: &LshIndex, x: &[f64]) -> Vec<u32> {
    index.encode(x)
}

/// Looks up the query's code in every table, keeps tokens matching in at
/// least `min_collisions` tables, and attaches each survivor's analytic
/// inclusion probability computed from its true cosine against the query.
///
/// The query is hashed raw: only keys are centered (a uniform logit shift
/// that softmax ignores), so the query stays in its original frame.
/// Candidates whose probability underflows to zero are dropped.
pub fn query_candidates(index: &LshIndex, q: &[f64]) -> CandidateSet {
    assert_eq!(q.len(), index.d, "query length must match index dimension");
    let codes = index.encode(q);
    let mut counts = vec![0u32; index.n];
    for (table, code) in index.tables.iter().zip(&codes) {
        if let Some(bucket) = table.get(code) {
            for &token in bucket {
                counts[token as usize] += 1;
            }
        }
    }
    let mut result = CandidateSet::empty();
    for (token, &count) in counts.iter().enumerate() {
        if count < index.config.min_collisions {
            continue;
        }
        let p = collision_prob(q, index.centered_key(token)).p;
        let u = sampling_prob(
            p,
            index.config.bits_per_table,
            index.config.num_tables,
            index.config.min_collisions,
        );
        if u > 0.0 {
            result.indices.push(token);
            result.collision_counts.push(count);
            result.probs.push(u);
        }
    }
    result
}

/// Probability that one random hyperplane puts `q` and `k` on the same
/// side: `1 - angle(q, k) / pi`. The cosine is clamped to [-1, 1] before
/// `acos` to absorb rounding. A zero-norm input pins `p` at 1/2 with the
/// `degenerate` flag set, since the sign of a zero projection is noise.
pub fn collision_prob(q: &[f64], k: &[f64]) -> CollisionProb {
    debug_assert_eq!(q.len(), k.len());
    let qn = crate::attention::l2_norm(q);
    let kn = crate::attention::l2_norm(k);
    if qn == 0.0 || kn == 0.0 {
        return CollisionProb {
            p: 0.5,
            degenerate: true,
        };
    }
    let cosine = (crate::attention::dot(q, k) / (qn * kn)).clamp(-1.0, 1.0);
    CollisionProb {
        p: 1.0 - cosine.acos() / std::f64::consts::PI,
        degenerate: false,
    }
}

/// Probability that a key with per-bit collision probability `p` matches
/// the query's K-bit code in at least `min_collisions` of the L tables:
/// the binomial tail over per-table probability `p^K`. For the default
/// `min_collisions = 2` this is `1 - (1-p^K)^L - L p^K (1-p^K)^(L-1)`, and
/// for 1 it is `1 - (1-p^K)^L`.
///
/// `p` is clamped to [0, 1]; out-of-range shape parameters are the
/// caller's bug and only debug-asserted.
pub fn sampling_prob(p: f64, bits_per_table: u32, num_tables: u32, min_collisions: u32) -> f64 {
    debug_assert!(bits_per_table >= 1 && min_collisions >= 1);
    let p = p.clamp(0.0, 1.0);
    let per_table = p.powi(bits_per_table as i32);
    binomial_tail_at_least(num_tables, min_collisions, per_table)
}

/// Expected sampled fraction of tokens under the idealized fair-coin model
/// where every bit collides with probability 1/2:
/// `sampling_prob(0.5, K, L, min_collisions)`.
pub fn expected_budget(bits_per_table: u32, num_tables: u32, min_collisions: u32) -> f64 {
    sampling_prob(0.5, bits_per_table, num_tables, min_collisions)
}

/// P[Binomial(l, q) >= m], organized so the directly-summed side is the
/// numerically small one and no catastrophic cancellation occurs.
fn binomial_tail_at_least(l: u32, m: u32, q: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if m > l || q <= 0.0 {
        return 0.0;
    }
    if q >= 1.0 {
        return 1.0;
    }
    let mean = f64::from(l) * q;
    if f64::from(m) > mean {
        // Above the mean the tail terms decay; sum them directly.
        let mut term = binomial_term(l, m, q);
        let mut sum = term;
        for j in m..l {
            term *= f64::from(l - j) / f64::from(j + 1) * q / (1.0 - q);
            sum += term;
        }
        sum.min(1.0)
    } else {
        // Below the mean the complement is the small side.
        let mut term = binomial_term(l, 0, q);
        let mut sum = term;
        for j in 0..m.saturating_sub(1) {
            term *= f64::from(l - j) / f64::from(j + 1) * q / (1.0 - q);
            sum += term;
        }
        (1.0 - sum).clamp(0.0, 1.0)
    }
}

/// `C(l, j) q^j (1-q)^(l-j)`, falling back to log space when the binomial
/// coefficient alone would overflow f64.
fn binomial_term(l: u32, j: u32, q: f64) -> f64 {
    let mut coeff = 1.0f64;
    let jj = j.min(l - j);
    for i in 1..=jj {
        coeff *= f64::from(l - jj + i) / f64::from(i);
    }
    if coeff.is_finite() {
        coeff * q.powi(j as i32) * (1.0 - q).powi((l - j) as i32)
    } else {
        let mut log_coeff = 0.0f64;
        for i in 1..=jj {
            log_coeff += (f64::from(l - jj + i) / f64::from(i)).ln();
        }
        (log_coeff + f64::from(j) * q.ln() + f64::from(l - j) * (-q).ln_1p()).exp()
    }
}

fn check_matrix(m: &[f64], n: usize, d: usize, name: &str) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "{name} requires n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    if m.len() != n * d {
        return Err(Error::InvalidInput(format!(
            "{name} length {} does not match n*d={}",
            m.len(),
            n * d
        )));
    }
    Ok(())
}

const INDEX_MAGIC: &[u8; 4] = b"MPLI";
const INDEX_VERSION: u16 = 1;

/// Serializes the index's table structure: magic `MPLI`, u16 version, u32
/// n, u32 d, u16 K, u16 L, u64 seed, then each table as `(code: u32,
/// count: u32, indices: u32 * count)` runs with codes ascending, all
/// little-endian.
///
/// Keys, the centering vector, and `min_collisions` are deliberately not
/// stored: the caller that owns the keys supplies them again on read, and
/// projections regenerate from the seed.
pub fn write_index(index: &LshIndex, writer: &mut impl Write) -> Result<()> {
    if index.config.num_tables > u32::from(u16::MAX) {
        return Err(Error::InvalidInput(format!(
            "num_tables={} exceeds the u16 field of the index format",
            index.config.num_tables
        )));
    }
    writer.write_all(INDEX_MAGIC)?;
    writer.write_all(&INDEX_VERSION.to_le_bytes())?;
    writer.write_all(&(index.n as u32).to_le_bytes())?;
    writer.write_all(&(index.d as u32).to_le_bytes())?;
    writer.write_all(&(index.config.bits_per_table as u16).to_le_bytes())?;
    writer.write_all(&(index.config.num_tables as u16).to_le_bytes())?;
    writer.write_all(&index.config.seed.to_le_bytes())?;
    for table in &index.tables {
        let mut codes: Vec<u32> = table.keys().copied().collect();
        codes.sort_unstable();
        for code in codes {
            let bucket = &table[&code];
            writer.write_all(&code.to_le_bytes())?;
            writer.write_all(&(bucket.len() as u32).to_le_bytes())?;
            for &token in bucket {
                writer.write_all(&token.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads an index written by [`write_index`]. The caller supplies the same
/// keys the index was built over (to recompute centering and the
/// per-candidate cosines) and the `min_collisions` policy, neither of
/// which the blob stores. Table structure is validated; the
/// correspondence between blob and keys is the caller's contract.
pub fn read_index(
    reader: &mut impl Read,
    keys: &[f64],
    n: usize,
    d: usize,
    min_collisions: u32,
) -> Result<LshIndex> {
    let mut cursor = ByteCursor { reader, offset: 0 };
    let magic = cursor.bytes::<4>("magic")?;
    if &magic != INDEX_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected {INDEX_MAGIC:?}"),
        });
    }
    let version = u16::from_le_bytes(cursor.bytes("version")?);
    if version != INDEX_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}, expected {INDEX_VERSION}"),
        });
    }
    let stored_n = u32::from_le_bytes(cursor.bytes("n")?) as usize;
    let stored_d = u32::from_le_bytes(cursor.bytes("d")?) as usize;
    if stored_n != n || stored_d != d {
        return Err(Error::Format {
            offset: 6,
            message: format!(
                "stored shape n={stored_n}, d={stored_d} does not match supplied keys n={n}, d={d}"
            ),
        });
    }
    let bits_per_table = u32::from(u16::from_le_bytes(cursor.bytes("K")?));
    let num_tables = u32::from(u16::from_le_bytes(cursor.bytes("L")?));
    let seed = u64::from_le_bytes(cursor.bytes("seed")?);
    let config = LshConfig::with_min_collisions(bits_per_table, num_tables, min_collisions, seed)
        .map_err(|e| Error::Format {
        offset: 14,
        message: format!("stored config is invalid: {e}"),
    })?;

    if n == 0 {
        return Err(Error::EmptyIndex);
    }
    check_matrix(keys, n, d, "keys")?;
    let (centered_keys, centering) = center_keys(keys, n, d)?;
    let k = bits_per_table as usize;
    let l = num_tables as usize;
    let kl = k * l;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut projections = vec![0.0; d * kl];
    for j in 0..kl {
        for r in 0..d {
            projections[r * kl + j] = rng.sample(StandardNormal);
        }
    }

    let code_limit: u64 = 1u64 << bits_per_table;
    let mut tables = Vec::with_capacity(l);
    for t in 0..l {
        let mut table: HashMap<u32, Vec<u32>> = HashMap::new();
        let mut seen = vec![false; n];
        let mut remaining = n;
        let mut prev_code: Option<u32> = None;
        while remaining > 0 {
            let code_offset = cursor.offset;
            let code = u32::from_le_bytes(cursor.bytes("bucket code")?);
            if u64::from(code) >= code_limit {
                return Err(Error::Format {
                    offset: code_offset,
                    message: format!("table {t}: code {code} exceeds {bits_per_table} bits"),
                });
            }
            if let Some(p) = prev_code {
                if code <= p {
                    return Err(Error::Format {
                        offset: code_offset,
                        message: format!("table {t}: codes must be strictly ascending"),
                    });
                }
            }
            prev_code = Some(code);
            let count = u32::from_le_bytes(cursor.bytes("bucket count")?) as usize;
            if count == 0 || count > remaining {
                return Err(Error::Format {
                    offset: code_offset + 4,
                    message: format!(
                        "table {t}: bucket count {count} invalid with {remaining} tokens left"
                    ),
                });
            }
            let mut bucket = Vec::with_capacity(count);
            let mut prev_token: Option<u32> = None;
            for _ in 0..count {
                let token_offset = cursor.offset;
                let token = u32::from_le_bytes(cursor.bytes("token index")?);
                if token as usize >= n || seen[token as usize] {
                    return Err(Error::Format {
                        offset: token_offset,
                        message: format!("table {t}: token {token} out of range or repeated"),
                    });
                }
                if let Some(p) = prev_token {
                    if token <= p {
                        return Err(Error::Format {
                            offset: token_offset,
                            message: format!("table {t}: bucket tokens must be ascending"),
                        });
                    }
                }
                prev_token = Some(token);
                seen[token as usize] = true;
                bucket.push(token);
            }
            remaining -= count;
            table.insert(code, bucket);
        }
        tables.push(table);
    }
    let trailing = cursor.offset;
    let mut probe = [0u8; 1];
    if cursor.reader.read(&mut probe)? != 0 {
        return Err(Error::Format {
            offset: trailing,
            message: "trailing bytes after the last table".into(),
        });
    }

    Ok(LshIndex {
        projections,
        tables,
        centering,
        centered_keys,
        n,
        d,
        config,
    })
}

/// Tracks the byte offset so format errors can name the exact position.
struct ByteCursor<'a, R: Read> {
    reader: &'a mut R,
    offset: u64,
}

impl<R: Read> ByteCursor<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        let mut filled = 0;
        while filled < N {
            let got = self.reader.read(&mut buf[filled..])?;
            if got == 0 {
                return Err(Error::Format {
                    offset: self.offset + filled as u64,
                    message: format!(
                        "unexpected end of data reading {what}: needed {N} bytes, got {filled}"
                    ),
                });
            }
            filled += got;
        }
        self.offset += N as u64;
        Ok(buf)
    }
}
