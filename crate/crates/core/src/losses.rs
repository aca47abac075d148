//! Exact evaluation and analytic gradients of the cross-entropy loss and
//! the batch-wise / total supervised-contrastive losses, plus the
//! attraction/repulsion functionals used by the loss decoupling.
//!
//! Multiplicity semantics: an index occurring `m` times in a batch
//! contributes `m` anchor terms, and the positive set removes exactly one
//! copy of the anchor. Temperature is not a parameter; callers encode a
//! temperature `tau` by placing points on the sphere of radius
//! `1/sqrt(tau)`.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::combinatorics::{multichoose, Batch, BatchCursor};
use crate::error::{Error, Result};
use crate::geometry::{check_labels_match, l2_norm, LabelVector, PointConfig};

/// Default cap on the number of batches a full enumeration may visit.
pub const DEFAULT_ENUMERATION_BUDGET: u128 = 10_000_000;

/// Fixed chunk length for deterministic parallel reduction: per-batch
/// contributions are reduced in canonical order within each chunk and the
/// chunk results are combined in chunk order, so parallel and serial runs
/// agree bitwise.
const REDUCTION_CHUNK: u128 = 8192;

/// The `K x h` linear classifier weight matrix, rows `w_y`, with an
/// optional per-row norm cap.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    rows: Array2<f64>,
    norm_cap: Option<f64>,
}

impl WeightMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "weight matrix must have K >= 1 rows and h >= 1 columns".into(),
            ));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("weight matrix contains a non-finite entry".into()));
        }
        Ok(Self { rows, norm_cap: None })
    }

    /// Validates `|w_y| <= cap` for every row (relative tolerance 1e-9).
    pub fn with_norm_cap(rows: Array2<f64>, cap: f64) -> Result<Self> {
        crate::geometry::require_positive(cap, "weight norm cap")?;
        let w = Self::new(rows)?;
        for (y, row) in w.rows.rows().into_iter().enumerate() {
            let norm = l2_norm(row);
            if norm > cap * (1.0 + 1e-9) {
                return Err(Error::ConstraintViolation(format!(
                    "weight row {y} has norm {norm}, above the cap {cap}"
                )));
            }
        }
        Ok(Self { norm_cap: Some(cap), ..w })
    }

    pub fn k(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn norm_cap(&self) -> Option<f64> {
        self.norm_cap
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.rows.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Mean of the per-row norms.
    pub fn mean_row_norm(&self) -> f64 {
        let s: f64 = self.rows.rows().into_iter().map(l2_norm).sum();
        s / self.k() as f64
    }
}

/// A loss value with its per-instance (CE) or per-batch (SC) components.
/// `total` is the in-order sum of the components; `mean = total / len`.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    components: Vec<f64>,
    total: f64,
    mean: f64,
}

impl LossBreakdown {
    fn from_components(components: Vec<f64>) -> Self {
        let total: f64 = components.iter().sum();
        let mean = total / components.len() as f64;
        Self { components, total, mean }
    }

    fn from_chunks(chunks: Vec<(f64, Vec<f64>)>) -> Self {
        let mut components = Vec::with_capacity(chunks.iter().map(|(_, c)| c.len()).sum());
        let mut total = 0.0;
        for (partial, chunk) in chunks {
            total += partial;
            components.extend_from_slice(&chunk);
        }
        let mean = total / components.len() as f64;
        Self { components, total, mean }
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

fn check_ce_shapes(z: &PointConfig, w: &WeightMatrix, y: &LabelVector) -> Result<()> {
    check_labels_match(z, y)?;
    if w.dim() != z.dim() {
        return Err(Error::InvalidArgument(format!(
            "weights have {} columns but points have {} dimensions",
            w.dim(),
            z.dim()
        )));
    }
    if w.k() != y.k() {
        return Err(Error::InvalidArgument(format!(
            "weights have {} rows but labels declare {} classes",
            w.k(),
            y.k()
        )));
    }
    Ok(())
}

/// Cross-entropy loss of instance `n`:
/// `-log(exp<z_n, w_(y_n)> / sum_l exp<z_n, w_l>)`, evaluated through the
/// log-sum-exp shift.
pub fn ce_instance_loss(
    z: &PointConfig,
    w: &WeightMatrix,
    y: &LabelVector,
    n: usize,
) -> Result<f64> {
    check_ce_shapes(z, w, y)?;
    if n >= z.n_points() {
        return Err(Error::InvalidArgument(format!("instance index {n} outside configuration")));
    }
    Ok(ce_instance_loss_unchecked(z.points(), w.rows(), y, n))
}

fn ce_instance_loss_unchecked(
    points: ArrayView2<'_, f64>,
    weights: ArrayView2<'_, f64>,
    y: &LabelVector,
    n: usize,
) -> f64 {
    let z_n = points.row(n);
    let mut max_logit = f64::NEG_INFINITY;
    let mut logits = Vec::with_capacity(weights.nrows());
    for w_row in weights.rows() {
        let logit = z_n.dot(&w_row);
        max_logit = max_logit.max(logit);
        logits.push(logit);
    }
    let lse = max_logit + logits.iter().map(|l| (l - max_logit).exp()).sum::<f64>().ln();
    lse - logits[y.label(n)]
}

/// Mean of [`ce_instance_loss`] over all instances. The cross-entropy
/// loss itself is the `mean` field of the returned breakdown.
pub fn ce_loss(z: &PointConfig, w: &WeightMatrix, y: &LabelVector) -> Result<LossBreakdown> {
    check_ce_shapes(z, w, y)?;
    let components: Vec<f64> = (0..z.n_points())
        .map(|n| ce_instance_loss_unchecked(z.points(), w.rows(), y, n))
        .collect();
    Ok(LossBreakdown::from_components(components))
}

/// Analytic gradients of the mean cross-entropy loss with an `L2` weight
/// penalty of strength `lambda`: the weight gradient includes `+2 lambda W`,
/// the point gradient excludes the regularizer.
pub fn ce_gradients(
    z: &PointConfig,
    w: &WeightMatrix,
    y: &LabelVector,
    lambda: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_ce_shapes(z, w, y)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let n_points = z.n_points();
    let inv_n = 1.0 / n_points as f64;
    let points = z.points();
    let weights = w.rows();
    let k = w.k();

    let mut d_z = Array2::<f64>::zeros(points.raw_dim());
    let mut d_w = Array2::<f64>::zeros(weights.raw_dim());
    let mut probs = vec![0.0f64; k];
    for n in 0..n_points {
        let z_n = points.row(n);
        let mut max_logit = f64::NEG_INFINITY;
        for (l, w_row) in weights.rows().into_iter().enumerate() {
            probs[l] = z_n.dot(&w_row);
            max_logit = max_logit.max(probs[l]);
        }
        let mut denom = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max_logit).exp();
            denom += *p;
        }
        let inv_denom = 1.0 / denom;
        let y_n = y.label(n);
        let mut d_z_row = d_z.row_mut(n);
        for l in 0..k {
            let p = probs[l] * inv_denom;
            let coeff = inv_n * (p - if l == y_n { 1.0 } else { 0.0 });
            d_z_row.scaled_add(coeff, &weights.row(l));
            d_w.row_mut(l).scaled_add(coeff, &z_n);
        }
    }
    if lambda > 0.0 {
        d_w.scaled_add(2.0 * lambda, &weights);
    }
    Ok((d_z, d_w))
}

/// Inner products of all point pairs together with shifted exponentials
/// for stable softmax denominators, stored row-major for the hot batch
/// loops. Shared read-only by workers.
pub(crate) struct GramTable {
    n: usize,
    g: Vec<f64>,
    exp_shifted: Vec<f64>,
    row_max: Vec<f64>,
}

impl GramTable {
    pub(crate) fn new(points: ArrayView2<'_, f64>) -> Self {
        let gram = points.dot(&points.t());
        let n = gram.nrows();
        let mut g = Vec::with_capacity(n * n);
        g.extend(gram.iter());
        let mut row_max = vec![f64::NEG_INFINITY; n];
        for i in 0..n {
            for j in 0..n {
                row_max[i] = row_max[i].max(g[i * n + j]);
            }
        }
        let mut exp_shifted = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                exp_shifted[i * n + j] = (g[i * n + j] - row_max[i]).exp();
            }
        }
        Self { n, g, exp_shifted, row_max }
    }

    #[inline]
    fn g_row(&self, i: usize) -> &[f64] {
        &self.g[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    fn exp_row(&self, i: usize) -> &[f64] {
        &self.exp_shifted[i * self.n..(i + 1) * self.n]
    }
}

/// Per-worker scratch for batch evaluation.
struct BatchScratch {
    support: Vec<(usize, usize)>,
    class_mult: Vec<usize>,
}

impl BatchScratch {
    fn new(b: usize, k: usize) -> Self {
        Self { support: Vec::with_capacity(b), class_mult: vec![0; k] }
    }

    fn load_slots(&mut self, slots: &[usize], labels: &LabelVector) {
        self.support.clear();
        self.class_mult.fill(0);
        let mut prev = usize::MAX;
        for &i in slots {
            if i == prev {
                self.support.last_mut().expect("slots are grouped").1 += 1;
            } else {
                self.support.push((i, 1));
                prev = i;
            }
            self.class_mult[labels.label(i)] += 1;
        }
    }

    fn load_batch(&mut self, batch: &Batch, labels: &LabelVector) {
        self.support.clear();
        self.class_mult.fill(0);
        for (i, m) in batch.iter() {
            self.support.push((i, m));
            self.class_mult[labels.label(i)] += m;
        }
    }
}

/// Batch-wise SC loss from precomputed inner products. `only_class`
/// restricts the anchors to one class. Anchors whose class appears once
/// contribute zero (the 0/0 := 0 convention).
fn sc_batch_loss_kernel(
    gram: &GramTable,
    labels: &[usize],
    scratch: &BatchScratch,
    only_class: Option<usize>,
) -> f64 {
    let mut total = 0.0;
    for &(i, m_i) in &scratch.support {
        let y_i = labels[i];
        if let Some(c) = only_class {
            if y_i != c {
                continue;
            }
        }
        let l_i = scratch.class_mult[y_i];
        if l_i < 2 {
            continue;
        }
        let gi = gram.g_row(i);
        let ei = gram.exp_row(i);
        let mut den = 0.0;
        let mut pos = 0.0;
        for &(j, m_j) in &scratch.support {
            let m_j = m_j as f64;
            den += m_j * ei[j];
            if labels[j] == y_i {
                pos += m_j * gi[j];
            }
        }
        den -= ei[i];
        pos -= gi[i];
        total += m_i as f64 * (gram.row_max[i] + den.ln() - pos / (l_i as f64 - 1.0));
    }
    total
}

/// Fused batch loss and derivative with respect to each inner product
/// `<z_i, z_j>`, accumulated into the row-major `coeffs` matrix.
fn sc_batch_fused_kernel(
    gram: &GramTable,
    labels: &[usize],
    scratch: &BatchScratch,
    coeffs: &mut [f64],
) -> f64 {
    let n = gram.n;
    let mut total = 0.0;
    for &(i, m_i) in &scratch.support {
        let y_i = labels[i];
        let l_i = scratch.class_mult[y_i];
        if l_i < 2 {
            continue;
        }
        let gi = gram.g_row(i);
        let ei = gram.exp_row(i);
        let mut den = 0.0;
        let mut pos = 0.0;
        for &(j, m_j) in &scratch.support {
            let m_j = m_j as f64;
            den += m_j * ei[j];
            if labels[j] == y_i {
                pos += m_j * gi[j];
            }
        }
        den -= ei[i];
        pos -= gi[i];
        let m_i = m_i as f64;
        let inv_pos = 1.0 / (l_i as f64 - 1.0);
        total += m_i * (gram.row_max[i] + den.ln() - pos * inv_pos);

        let inv_den = 1.0 / den;
        let row = &mut coeffs[i * n..(i + 1) * n];
        for &(j, m_j) in &scratch.support {
            let m_j = m_j as f64;
            let mut softmax_w = m_j * ei[j];
            if j == i {
                softmax_w -= ei[i];
            }
            let mut coeff = softmax_w * inv_den;
            if labels[j] == y_i {
                let copies = if j == i { m_j - 1.0 } else { m_j };
                coeff -= copies * inv_pos;
            }
            row[j] += m_i * coeff;
        }
    }
    total
}

/// Maps accumulated inner-product coefficients to the point gradient:
/// `d/dz = (C + C^T) Z`.
fn grad_from_coeffs(coeffs: Vec<f64>, n: usize, points: ArrayView2<'_, f64>) -> Array2<f64> {
    let c = Array2::from_shape_vec((n, n), coeffs).expect("square coefficient matrix");
    let sym = &c + &c.t();
    sym.dot(&points)
}

fn check_sc_inputs(z: &PointConfig, y: &LabelVector) -> Result<()> {
    check_labels_match(z, y)?;
    z.sphere_radius()?;
    Ok(())
}

fn check_batch(batch: &Batch, n_points: usize) -> Result<()> {
    if batch.size() < 2 {
        return Err(Error::InvalidArgument(format!(
            "SC loss requires batch size b >= 2, got {}",
            batch.size()
        )));
    }
    if batch.max_index() >= n_points {
        return Err(Error::InvalidArgument(format!(
            "batch index {} outside configuration of {n_points} points",
            batch.max_index()
        )));
    }
    Ok(())
}

/// Gram table over the distinct indices of one batch, plus the local
/// relabeling that lets the shared kernels run on it.
fn local_tables(
    z: &PointConfig,
    y: &LabelVector,
    batch: &Batch,
) -> Result<(GramTable, LabelVector, BatchScratch, Vec<usize>)> {
    let support: Vec<(usize, usize)> = batch.iter().collect();
    let s = support.len();
    let mut rows = Array2::<f64>::zeros((s, z.dim()));
    let mut local_labels = Vec::with_capacity(s);
    let mut global = Vec::with_capacity(s);
    for (local, &(i, _)) in support.iter().enumerate() {
        rows.row_mut(local).assign(&z.row(i));
        local_labels.push(y.label(i));
        global.push(i);
    }
    let gram = GramTable::new(rows.view());
    let labels = LabelVector::new(local_labels, y.k())?;
    let mut scratch = BatchScratch::new(batch.size(), y.k());
    let local_batch = Batch::from_multiplicities(
        support.iter().enumerate().map(|(local, &(_, m))| (local, m)).collect(),
    )?;
    scratch.load_batch(&local_batch, &labels);
    Ok((gram, labels, scratch, global))
}

/// Batch-wise supervised contrastive loss for one batch. Requires a
/// sphere-constrained configuration and `b >= 2`.
pub fn sc_batch_loss(z: &PointConfig, y: &LabelVector, batch: &Batch) -> Result<f64> {
    check_sc_inputs(z, y)?;
    check_batch(batch, z.n_points())?;
    let (gram, labels, scratch, _) = local_tables(z, y, batch)?;
    Ok(sc_batch_loss_kernel(&gram, labels.labels(), &scratch, None))
}

/// The class-restricted inner sum of the batch-wise loss; zero whenever
/// the class appears at most once in the batch. Summing over all classes
/// recovers [`sc_batch_loss`] exactly.
pub fn sc_class_batch_loss(
    z: &PointConfig,
    y: &LabelVector,
    batch: &Batch,
    class: usize,
) -> Result<f64> {
    check_sc_inputs(z, y)?;
    check_batch(batch, z.n_points())?;
    if class >= y.k() {
        return Err(Error::InvalidArgument(format!("class {class} outside 0..{}", y.k())));
    }
    let (gram, labels, scratch, _) = local_tables(z, y, batch)?;
    Ok(sc_batch_loss_kernel(&gram, labels.labels(), &scratch, Some(class)))
}

/// Mean intra-class inner product of a batch, negated:
/// `-1/(l(l-1)) * sum over ordered positive pairs` with one anchor copy
/// removed. Requires the class to appear at least twice.
pub fn s_att(z: &PointConfig, y: &LabelVector, batch: &Batch, class: usize) -> Result<f64> {
    check_sc_inputs(z, y)?;
    check_batch(batch, z.n_points())?;
    let class_mult = batch.class_multiplicities(y)?;
    let l = class_mult[class];
    if l < 2 {
        return Err(Error::InvalidArgument(format!(
            "s_att requires the class to appear at least twice in the batch, got {l}"
        )));
    }
    let mut paired = 0.0;
    for (i, m_i) in batch.iter() {
        if y.label(i) != class {
            continue;
        }
        let mut row = 0.0;
        for (j, m_j) in batch.iter() {
            if y.label(j) == class {
                row += m_j as f64 * z.row(i).dot(&z.row(j));
            }
        }
        row -= z.row(i).dot(&z.row(i));
        paired += m_i as f64 * row;
    }
    Ok(-paired / (l as f64 * (l as f64 - 1.0)))
}

/// Mean inter-class inner product of a batch:
/// `1/(l(b-l)) * sum over anchor/complement pairs`; zero when the class
/// fills the whole batch.
pub fn s_rep(z: &PointConfig, y: &LabelVector, batch: &Batch, class: usize) -> Result<f64> {
    check_sc_inputs(z, y)?;
    check_batch(batch, z.n_points())?;
    let class_mult = batch.class_multiplicities(y)?;
    let l = class_mult[class];
    let b = batch.size();
    if l == 0 {
        return Err(Error::InvalidArgument(
            "s_rep requires the class to appear in the batch".into(),
        ));
    }
    if l == b {
        return Ok(0.0);
    }
    let mut paired = 0.0;
    for (i, m_i) in batch.iter() {
        if y.label(i) != class {
            continue;
        }
        for (j, m_j) in batch.iter() {
            if y.label(j) != class {
                paired += (m_i * m_j) as f64 * z.row(i).dot(&z.row(j));
            }
        }
    }
    Ok(paired / (l as f64 * (b - l) as f64))
}

fn checked_enumeration_size(n: usize, b: usize, budget: u128) -> Result<u128> {
    let total = multichoose(n as u64, b as u64)?;
    if total > budget {
        return Err(Error::BudgetExceeded { batches: total, budget });
    }
    Ok(total)
}

/// Splits the canonical rank range into fixed chunks, evaluates each chunk
/// in parallel and returns the per-chunk results in chunk order.
fn map_chunks<R, F>(total: u128, chunk_fn: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u128, u128) -> Result<R> + Sync,
{
    let n_chunks = total.div_ceil(REDUCTION_CHUNK) as usize;
    (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c as u128 * REDUCTION_CHUNK;
            let end = (start + REDUCTION_CHUNK).min(total);
            chunk_fn(start, end)
        })
        .collect()
}

/// Supervised contrastive loss summed over every size-`b` batch, together
/// with the per-batch values in canonical order. The result is bitwise
/// independent of the worker count. `budget` defaults to 10^7 batches;
/// larger instances are rejected with advice to use the SGD optimizer.
pub fn sc_total_loss(
    z: &PointConfig,
    y: &LabelVector,
    b: usize,
    budget: Option<u128>,
) -> Result<LossBreakdown> {
    check_sc_inputs(z, y)?;
    if b < 2 {
        return Err(Error::InvalidArgument(format!("SC loss requires b >= 2, got {b}")));
    }
    let n = z.n_points();
    let total = checked_enumeration_size(n, b, budget.unwrap_or(DEFAULT_ENUMERATION_BUDGET))?;
    let gram = GramTable::new(z.points());

    let chunks = map_chunks(total, |start, end| {
        let mut cursor = BatchCursor::starting_at(n, b, start)?;
        let mut scratch = BatchScratch::new(b, y.k());
        let mut partial = 0.0;
        let mut values = Vec::with_capacity((end - start) as usize);
        let mut remaining = end - start;
        while remaining > 0 && cursor.advance() {
            scratch.load_slots(cursor.slots(), y);
            let value = sc_batch_loss_kernel(&gram, y.labels(), &scratch, None);
            partial += value;
            values.push(value);
            remaining -= 1;
        }
        Ok((partial, values))
    })?;
    Ok(LossBreakdown::from_chunks(chunks))
}

/// Euclidean gradient of the total SC loss with respect to every point,
/// accumulated over all batches with the same deterministic reduction as
/// [`sc_total_loss`].
pub fn sc_gradient_total(
    z: &PointConfig,
    y: &LabelVector,
    b: usize,
    budget: Option<u128>,
) -> Result<Array2<f64>> {
    let (_, grad) = sc_total_loss_and_grad(z, y, b, budget)?;
    Ok(grad)
}

/// Fused total loss and gradient in one enumeration pass.
pub(crate) fn sc_total_loss_and_grad(
    z: &PointConfig,
    y: &LabelVector,
    b: usize,
    budget: Option<u128>,
) -> Result<(f64, Array2<f64>)> {
    check_sc_inputs(z, y)?;
    if b < 2 {
        return Err(Error::InvalidArgument(format!("SC loss requires b >= 2, got {b}")));
    }
    let n = z.n_points();
    let total = checked_enumeration_size(n, b, budget.unwrap_or(DEFAULT_ENUMERATION_BUDGET))?;
    let gram = GramTable::new(z.points());

    let chunks = map_chunks(total, |start, end| {
        let mut cursor = BatchCursor::starting_at(n, b, start)?;
        let mut scratch = BatchScratch::new(b, y.k());
        let mut partial = 0.0;
        let mut coeffs = vec![0.0f64; n * n];
        let mut remaining = end - start;
        while remaining > 0 && cursor.advance() {
            scratch.load_slots(cursor.slots(), y);
            partial += sc_batch_fused_kernel(&gram, y.labels(), &scratch, &mut coeffs);
            remaining -= 1;
        }
        Ok((partial, coeffs))
    })?;

    let mut loss = 0.0;
    let mut coeffs = vec![0.0f64; n * n];
    for (partial, chunk_coeffs) in chunks {
        loss += partial;
        for (acc, v) in coeffs.iter_mut().zip(chunk_coeffs) {
            *acc += v;
        }
    }
    Ok((loss, grad_from_coeffs(coeffs, n, z.points())))
}

/// Loss and gradient of a single batch, scattered into a full `N x h`
/// gradient accumulator. Used by the SGD and single-batch optimizers.
pub(crate) fn sc_batch_loss_and_grad_into(
    z: &PointConfig,
    y: &LabelVector,
    batch: &Batch,
    grad: &mut Array2<f64>,
) -> Result<f64> {
    check_sc_inputs(z, y)?;
    check_batch(batch, z.n_points())?;
    let (gram, labels, scratch, global) = local_tables(z, y, batch)?;
    let s = global.len();
    let mut coeffs = vec![0.0f64; s * s];
    let loss = sc_batch_fused_kernel(&gram, labels.labels(), &scratch, &mut coeffs);
    for a in 0..s {
        for c in 0..s {
            let w = coeffs[a * s + c] + coeffs[c * s + a];
            if w != 0.0 {
                let mut row = grad.row_mut(global[a]);
                row.scaled_add(w, &z.row(global[c]));
            }
        }
    }
    Ok(loss)
}

/// Tangential norm of a gradient after removing its radial component at
/// each point of a sphere-constrained configuration.
pub fn tangential_grad_norm(z: &PointConfig, grad: ArrayView2<'_, f64>) -> Result<f64> {
    let rho = z.sphere_radius()?;
    let mut sq = 0.0;
    for (zr, gr) in z.points().rows().into_iter().zip(grad.rows()) {
        let radial = zr.dot(&gr) / (rho * rho);
        let mut row_sq = 0.0;
        for (zv, gv) in zr.iter().zip(gr.iter()) {
            let t = gv - radial * zv;
            row_sq += t * t;
        }
        sq += row_sq;
    }
    Ok(sq.sqrt())
}
