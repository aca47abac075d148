//! Size-`b` index multisets (batches): exact counting, canonical
//! enumeration with rank-based resumption, the per-class batch census and
//! the combinatorial repulsion factor with its brute-force oracle.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::LabelVector;

/// Instance-size guard for brute-force oracles.
const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Binomial coefficient `C(a, b)` in checked 128-bit arithmetic.
fn binomial(a: u128, b: u128) -> Result<u128> {
    if b > a {
        return Ok(0);
    }
    let b = b.min(a - b);
    let mut result: u128 = 1;
    for i in 1..=b {
        // Exact at every step: the running product of i consecutive
        // integers is divisible by i!.
        result = result
            .checked_mul(a - b + i)
            .ok_or_else(|| Error::Overflow(format!("C({a}, {b})")))?
            / i;
    }
    Ok(result)
}

/// Number of `m`-multisets over an `n`-element set, `C(n+m-1, m)`.
/// Exact; overflow is reported, never wrapped. `n = 0` is only allowed
/// together with `m = 0`.
pub fn multichoose(n: u64, m: u64) -> Result<u128> {
    if n == 0 && m > 0 {
        return Err(Error::InvalidArgument(
            "multichoose(0, m) with m > 0: no multiset over the empty set".into(),
        ));
    }
    multichoose_count(n, m)
}

/// Counting convention used internally: zero multisets over an empty set.
fn multichoose_count(n: u64, m: u64) -> Result<u128> {
    if m == 0 {
        return Ok(1);
    }
    if n == 0 {
        return Ok(0);
    }
    binomial(n as u128 + m as u128 - 1, m as u128)
}

/// A size-`b` multiset of point indices, stored as index -> multiplicity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Batch {
    entries: BTreeMap<usize, usize>,
    size: usize,
}

impl Batch {
    /// Builds a batch from (not necessarily sorted) point indices.
    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("batch must contain at least one index".into()));
        }
        let mut entries = BTreeMap::new();
        for &i in indices {
            *entries.entry(i).or_insert(0) += 1;
        }
        Ok(Self { entries, size: indices.len() })
    }

    pub fn from_multiplicities(entries: BTreeMap<usize, usize>) -> Result<Self> {
        if entries.is_empty() || entries.values().any(|&m| m == 0) {
            return Err(Error::InvalidArgument(
                "batch multiplicities must be nonempty and >= 1".into(),
            ));
        }
        let size = entries.values().sum();
        Ok(Self { entries, size })
    }

    /// Total size `b` counting multiplicities.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn multiplicity(&self, index: usize) -> usize {
        self.entries.get(&index).copied().unwrap_or(0)
    }

    /// Distinct indices with their multiplicities, in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().map(|(&i, &m)| (i, m))
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn max_index(&self) -> usize {
        *self.entries.keys().next_back().expect("batch is nonempty")
    }

    /// Expansion into nondecreasing slot indices.
    pub fn slots(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.size);
        for (&i, &m) in &self.entries {
            out.extend(std::iter::repeat(i).take(m));
        }
        out
    }

    /// Multiplicity of each class among the batch slots, `|B_y|` for all y.
    pub fn class_multiplicities(&self, labels: &LabelVector) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; labels.k()];
        for (&i, &m) in &self.entries {
            if i >= labels.len() {
                return Err(Error::InvalidArgument(format!(
                    "batch index {i} outside configuration of {} points",
                    labels.len()
                )));
            }
            counts[labels.label(i)] += m;
        }
        Ok(counts)
    }
}

/// Streaming cursor over all size-`b` multisets of `[0, n)` in canonical
/// (lexicographic nondecreasing-slot) order. Disjoint rank ranges may be
/// consumed concurrently via [`BatchCursor::starting_at`].
#[derive(Debug, Clone)]
pub struct BatchCursor {
    n: usize,
    slots: Vec<usize>,
    exhausted: bool,
    fresh: bool,
}

impl BatchCursor {
    pub fn new(n: usize, b: usize) -> Result<Self> {
        Self::starting_at(n, b, 0)
    }

    /// Positions the cursor at the batch of the given canonical rank.
    pub fn starting_at(n: usize, b: usize, rank: u128) -> Result<Self> {
        if n == 0 || b == 0 {
            return Err(Error::InvalidArgument("enumeration requires N >= 1 and b >= 1".into()));
        }
        let total = multichoose(n as u64, b as u64)?;
        if rank >= total {
            return Ok(Self { n, slots: vec![0; b], exhausted: true, fresh: false });
        }
        Ok(Self { n, slots: unrank_batch_slots(n, b, rank)?, exhausted: false, fresh: true })
    }

    /// Advances to the next batch; returns false once the stream is done.
    /// The first call yields the starting batch itself.
    pub fn advance(&mut self) -> bool {
        if self.exhausted {
            return false;
        }
        if self.fresh {
            self.fresh = false;
            return true;
        }
        // Odometer step on the nondecreasing slot vector.
        let b = self.slots.len();
        let mut p = b;
        while p > 0 {
            if self.slots[p - 1] < self.n - 1 {
                let v = self.slots[p - 1] + 1;
                for s in &mut self.slots[p - 1..] {
                    *s = v;
                }
                return true;
            }
            p -= 1;
        }
        self.exhausted = true;
        false
    }

    /// Current batch as nondecreasing slot indices.
    pub fn slots(&self) -> &[usize] {
        &self.slots
    }
}

/// Iterator over every size-`b` multiset of `[0, n)` in canonical order,
/// yielding owned [`Batch`] values. Total count is `multichoose(n, b)`.
pub fn enumerate_batches(n: usize, b: usize) -> Result<impl Iterator<Item = Batch>> {
    let mut cursor = BatchCursor::new(n, b)?;
    Ok(std::iter::from_fn(move || {
        if cursor.advance() {
            Some(Batch::from_indices(cursor.slots()).expect("cursor yields valid batches"))
        } else {
            None
        }
    }))
}

/// Canonical rank of a batch: slot vector `d` maps to the strictly
/// increasing combination `d_i + i` over `[0, n+b-1)`, ranked
/// lexicographically.
pub fn batch_rank(n: usize, batch: &Batch) -> Result<u128> {
    let slots = batch.slots();
    rank_batch_slots(n, &slots)
}

/// Inverse of [`batch_rank`].
pub fn batch_unrank(n: usize, b: usize, rank: u128) -> Result<Batch> {
    let slots = unrank_batch_slots(n, b, rank)?;
    Batch::from_indices(&slots)
}

pub(crate) fn rank_batch_slots(n: usize, slots: &[usize]) -> Result<u128> {
    let b = slots.len();
    let m = n + b - 1;
    let mut rank: u128 = 0;
    let mut prev = 0usize;
    for (i, &d) in slots.iter().enumerate() {
        let e = d + i;
        for j in prev..e {
            rank += binomial((m - j - 1) as u128, (b - i - 1) as u128)?;
        }
        prev = e + 1;
    }
    Ok(rank)
}

pub(crate) fn unrank_batch_slots(n: usize, b: usize, mut rank: u128) -> Result<Vec<usize>> {
    let m = n + b - 1;
    let mut slots = Vec::with_capacity(b);
    let mut next = 0usize;
    for i in 0..b {
        let mut e = next;
        loop {
            let below = binomial((m - e - 1) as u128, (b - i - 1) as u128)?;
            if below <= rank {
                rank -= below;
                e += 1;
            } else {
                slots.push(e - i);
                next = e + 1;
                break;
            }
        }
    }
    Ok(slots)
}

/// `|B_{y,l}|`: the number of size-`b` batches in which a class of `n_y`
/// points appears with multiplicity exactly `l`, out of `n` points total:
/// `multichoose(n_y, l) * multichoose(n - n_y, b - l)`.
pub fn count_batches_yl(n_y: u64, n: u64, b: u64, l: u64) -> Result<u128> {
    if l > b || n_y > n {
        return Err(Error::InvalidArgument(format!(
            "count_batches_yl requires l <= b and N_y <= N (got N_y={n_y}, N={n}, b={b}, l={l})"
        )));
    }
    let inside = multichoose_count(n_y, l)?;
    let outside = multichoose_count(n - n_y, b - l)?;
    inside
        .checked_mul(outside)
        .ok_or_else(|| Error::Overflow(format!("|B_(y,{l})| for N={n}, b={b}")))
}

/// Exact batch-partition counts for a label configuration: per-(y,l)
/// cardinalities `|B_{y,l}|`, the per-l totals `M_l` and the total number
/// of batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchCensus {
    pub n: usize,
    pub k: usize,
    pub b: usize,
    /// `counts_yl[y][l]` = `|B_{y,l}|`, for l in `0..=b`.
    pub counts_yl: Vec<Vec<u128>>,
    /// `m_l[l]` = sum over classes of `counts_yl[y][l]`.
    pub m_l: Vec<u128>,
    /// `multichoose(N, b)`.
    pub total_batches: u128,
}

/// Tallies `|B_{y,l}|` and `M_l` from the closed-form product of
/// multichoose factors. The census identities (each class partitions the
/// batch set; the `M_l` column sums) hold by construction and are checked.
pub fn census(labels: &LabelVector, b: usize) -> Result<BatchCensus> {
    if b == 0 {
        return Err(Error::InvalidArgument("batch size b must be >= 1".into()));
    }
    let n = labels.len();
    let k = labels.k();
    let total = multichoose(n as u64, b as u64)?;
    let mut counts_yl = vec![vec![0u128; b + 1]; k];
    let mut m_l = vec![0u128; b + 1];
    for y in 0..k {
        let n_y = labels.count(y) as u64;
        let mut row_sum: u128 = 0;
        for l in 0..=b {
            let c = count_batches_yl(n_y, n as u64, b as u64, l as u64)?;
            counts_yl[y][l] = c;
            m_l[l] = m_l[l]
                .checked_add(c)
                .ok_or_else(|| Error::Overflow(format!("M_{l} for N={n}, b={b}")))?;
            row_sum += c;
        }
        if row_sum != total {
            return Err(Error::Overflow(format!(
                "census self-check failed for class {y}: {row_sum} != {total}"
            )));
        }
    }
    Ok(BatchCensus { n, k, b, counts_yl, m_l, total_batches: total })
}

/// The combinatorial repulsion weight `K_{n,m}(y,l) = |B_{y,l}| /
/// (N_y (N - N_y))`, converting the batch-summed repulsion terms into a
/// pairwise inner-product sum. Independent of the concrete pair (n, m).
pub fn k_factor(labels: &LabelVector, y: usize, l: usize, b: usize) -> Result<f64> {
    if y >= labels.k() {
        return Err(Error::InvalidArgument(format!("class {y} outside 0..{}", labels.k())));
    }
    if l < 1 || l > b.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "k_factor requires 1 <= l <= b-1 (got l={l}, b={b})"
        )));
    }
    let n = labels.len() as u64;
    let n_y = labels.count(y) as u64;
    if n_y == 0 || n_y == n {
        return Err(Error::InvalidArgument(format!(
            "k_factor requires a nonempty class and a nonempty complement (N_y={n_y}, N={n})"
        )));
    }
    let count = count_batches_yl(n_y, n, b as u64, l as u64)?;
    Ok(count as f64 / (n_y as f64 * (n - n_y) as f64))
}

/// Brute-force evaluation of the repulsion weight from its definition:
/// `(1/(l(b-l))) * sum over B in B_{y,l} of mult_{B_y}(n) * mult_{B_y^C}(m)`,
/// by full enumeration. Oracle for [`k_factor`]; limited to instances with
/// at most 10^6 batches.
pub fn brute_force_k_factor(
    labels: &LabelVector,
    y: usize,
    l: usize,
    b: usize,
    n_idx: usize,
    m_idx: usize,
) -> Result<f64> {
    let n = labels.len();
    if n_idx >= n || m_idx >= n {
        return Err(Error::InvalidArgument("pair indices outside the configuration".into()));
    }
    if labels.label(n_idx) != y || labels.label(m_idx) == y {
        return Err(Error::InvalidArgument(format!(
            "brute_force_k_factor requires y_n = {y} and y_m != {y}"
        )));
    }
    if l < 1 || l > b.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "brute_force_k_factor requires 1 <= l <= b-1 (got l={l}, b={b})"
        )));
    }
    let total = multichoose(n as u64, b as u64)?;
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::BudgetExceeded { batches: total, budget: BRUTE_FORCE_LIMIT });
    }

    let mut acc: u128 = 0;
    let mut cursor = BatchCursor::new(n, b)?;
    while cursor.advance() {
        let slots = cursor.slots();
        let class_mult = slots.iter().filter(|&&i| labels.label(i) == y).count();
        if class_mult != l {
            continue;
        }
        let mult_n = slots.iter().filter(|&&i| i == n_idx).count() as u128;
        let mult_m = slots.iter().filter(|&&i| i == m_idx).count() as u128;
        acc += mult_n * mult_m;
    }
    Ok(acc as f64 / (l as f64 * (b - l) as f64))
}
