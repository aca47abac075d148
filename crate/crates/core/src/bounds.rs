//! Closed-form lower bounds for the cross-entropy and supervised
//! contrastive losses, the implicit weight-norm root `r_W(rho, lambda)`,
//! and the auxiliary Jensen functional for the cross-entropy chain.
//!
//! All bounds assume balanced labels. They are tight exactly at
//! within-class collapse onto a sphere-inscribed regular simplex, which
//! requires `K <= h + 1`; reports carry that flag once the ambient
//! dimension is known.

use serde::Serialize;

use crate::combinatorics::census;
use crate::error::{Error, Result};
use crate::geometry::{check_labels_match, require_positive, LabelVector, PointConfig};
use crate::losses::WeightMatrix;

/// Default root tolerance for [`solve_r_w`].
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;

/// Whether the bound can be attained given the ambient dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Tightness {
    /// `K <= h + 1`: the simplex exists, the bound is attainable.
    TightCapable,
    /// `K > h + 1`: the bound still holds but is not necessarily tight.
    NotNecessarilyTight,
    /// Ambient dimension not supplied.
    Unknown,
}

impl Tightness {
    fn from_dims(k: usize, h: usize) -> Self {
        if k <= h + 1 {
            Tightness::TightCapable
        } else {
            Tightness::NotNecessarilyTight
        }
    }
}

/// A cross-entropy bound value with the inputs it was computed from.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub value: f64,
    pub k: usize,
    pub rho_z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frob_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub tightness: Tightness,
}

impl BoundReport {
    fn new(value: f64, k: usize, rho_z: f64) -> Self {
        Self { value, k, rho_z, frob_w: None, r_w: None, lambda: None, tightness: Tightness::Unknown }
    }

    /// Records whether the simplex equality configuration exists in `h`
    /// ambient dimensions.
    pub fn with_ambient_dim(mut self, h: usize) -> Self {
        self.tightness = Tightness::from_dims(self.k, h);
        self
    }
}

fn check_k_rho(k: usize, rho_z: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("bounds require K >= 2, got {k}")));
    }
    require_positive(rho_z, "rho_Z")
}

/// Lower bound on the mean CE loss over ball-constrained points with
/// balanced labels: `log(1 + (K-1) exp(-rho sqrt(K) |W|_F / (K-1)))`.
pub fn ce_bound_frobenius(k: usize, rho_z: f64, frob_w: f64) -> Result<BoundReport> {
    check_k_rho(k, rho_z)?;
    if frob_w < 0.0 || !frob_w.is_finite() {
        return Err(Error::InvalidArgument(format!("|W|_F must be >= 0, got {frob_w}")));
    }
    let kf = k as f64;
    let value = ((kf - 1.0) * (-rho_z * kf.sqrt() * frob_w / (kf - 1.0)).exp()).ln_1p();
    let mut report = BoundReport::new(value, k, rho_z);
    report.frob_w = Some(frob_w);
    Ok(report)
}

/// Lower bound under the per-row cap `|w_y| <= r_W`:
/// `log(1 + (K-1) exp(-K rho r_W / (K-1)))`.
pub fn ce_bound_rw(k: usize, rho_z: f64, r_w: f64) -> Result<BoundReport> {
    check_k_rho(k, rho_z)?;
    if r_w < 0.0 || !r_w.is_finite() {
        return Err(Error::InvalidArgument(format!("r_W must be >= 0, got {r_w}")));
    }
    let kf = k as f64;
    let value = ((kf - 1.0) * (-kf * rho_z * r_w / (kf - 1.0)).exp()).ln_1p();
    let mut report = BoundReport::new(value, k, rho_z);
    report.r_w = Some(r_w);
    Ok(report)
}

/// Derivative of the per-row bound objective
/// `x -> log(1 + (K-1) exp(-K rho x/(K-1))) + lambda K x^2`, whose unique
/// positive root is `r_W(rho, lambda)`.
fn bound_objective_derivative(k: f64, rho_z: f64, lambda: f64, x: f64) -> f64 {
    k * (2.0 * lambda * x - rho_z / ((k * rho_z * x / (k - 1.0)).exp() + k - 1.0))
}

fn bound_objective_second_derivative(k: f64, rho_z: f64, lambda: f64, x: f64) -> f64 {
    let e = (k * rho_z * x / (k - 1.0)).exp();
    let den = e + k - 1.0;
    k * (2.0 * lambda + k * rho_z * rho_z * e / ((k - 1.0) * den * den))
}

/// The unique positive solution of
/// `0 = K (2 lambda x - rho / (exp(K rho x/(K-1)) + K - 1))`.
///
/// The derivative is strictly increasing with value `-rho` at zero, and
/// any root satisfies `2 lambda x <= rho / K`, so `[0, rho/(2 lambda K)]`
/// brackets it analytically; bisection narrows the bracket below `tol`
/// and one Newton step polishes the midpoint.
pub fn solve_r_w(k: usize, rho_z: f64, lambda: f64, tol: f64) -> Result<f64> {
    check_k_rho(k, rho_z)?;
    require_positive(lambda, "lambda")?;
    require_positive(tol, "root tolerance")?;
    let kf = k as f64;
    let f = |x: f64| bound_objective_derivative(kf, rho_z, lambda, x);

    let mut lo = 0.0f64;
    let mut hi = rho_z / (2.0 * lambda * kf);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let polished = mid - f(mid) / bound_objective_second_derivative(kf, rho_z, lambda, mid);
    Ok(if polished.is_finite() && polished > 0.0 { polished } else { mid })
}

/// Lower bound on the L2-regularized objective `L_CE + lambda |W|_F^2`:
/// the per-row bound evaluated at `r = r_W(rho, lambda)` plus
/// `lambda K r^2`. The report echoes `r` in `r_w`.
pub fn ce_bound_l2(k: usize, rho_z: f64, lambda: f64) -> Result<BoundReport> {
    ce_bound_l2_with_tol(k, rho_z, lambda, DEFAULT_ROOT_TOL)
}

pub fn ce_bound_l2_with_tol(k: usize, rho_z: f64, lambda: f64, tol: f64) -> Result<BoundReport> {
    let r = solve_r_w(k, rho_z, lambda, tol)?;
    let base = ce_bound_rw(k, rho_z, r)?;
    let value = base.value + lambda * k as f64 * r * r;
    let mut report = BoundReport::new(value, k, rho_z);
    report.r_w = Some(r);
    report.lambda = Some(lambda);
    Ok(report)
}

/// The supervised-contrastive lower bound, as a total over all batches
/// and as a per-batch mean.
#[derive(Debug, Clone, Serialize)]
pub struct ScBoundReport {
    pub total: f64,
    pub mean: f64,
    pub n: usize,
    pub k: usize,
    pub b: usize,
    pub rho_z: f64,
    /// Number of size-`b` batches, `multichoose(N, b)`.
    pub batch_count: u128,
    /// `M_l` for `l = 0..=b`.
    pub m_l: Vec<u128>,
    pub tightness: Tightness,
}

impl ScBoundReport {
    pub fn with_ambient_dim(mut self, h: usize) -> Self {
        self.tightness = Tightness::from_dims(self.k, h);
        self
    }
}

/// Lower bound on the total SC loss for balanced labels:
/// `sum_(l=2..b) l M_l log(l - 1 + (b-l) exp(-K rho^2/(K-1)))`.
/// Rejects unbalanced configurations and `b < 3`.
pub fn sc_bound(labels: &LabelVector, b: usize, rho_z: f64) -> Result<ScBoundReport> {
    let k = labels.k();
    check_k_rho(k, rho_z)?;
    if b < 3 {
        return Err(Error::InvalidArgument(format!(
            "the SC bound is stated for batch sizes b >= 3, got {b}"
        )));
    }
    labels.require_balanced().map_err(|_| {
        Error::UnbalancedLabels(format!(
            "the SC bound assumes balanced labels; got class counts {:?} over N={} points",
            labels.counts(),
            labels.len()
        ))
    })?;

    let census = census(labels, b)?;
    let kf = k as f64;
    let exponent = -kf * rho_z * rho_z / (kf - 1.0);
    let damp = exponent.exp();
    let mut total = 0.0;
    for l in 2..=b {
        let lf = l as f64;
        // log(l-1 + (b-l) e^x) through log1p, exact even when e^x
        // underflows to zero.
        let term = (lf - 1.0).ln() + ((b - l) as f64 * damp / (lf - 1.0)).ln_1p();
        total += lf * census.m_l[l] as f64 * term;
    }
    let mean = total / census.total_batches as f64;
    Ok(ScBoundReport {
        total,
        mean,
        n: labels.len(),
        k,
        b,
        rho_z,
        batch_count: census.total_batches,
        m_l: census.m_l,
        tightness: Tightness::Unknown,
    })
}

/// The auxiliary functional of the cross-entropy Jensen chain:
/// `(1/N) (K/(K-1)) sum_n <z_n, wbar - w_(y_n)>` with `wbar` the row mean
/// of `W`. Defined for any label configuration.
pub fn aux_s_ce(z: &PointConfig, w: &WeightMatrix, y: &LabelVector) -> Result<f64> {
    check_labels_match(z, y)?;
    if w.k() != y.k() || w.dim() != z.dim() {
        return Err(Error::InvalidArgument("weight shape does not match points/labels".into()));
    }
    let k = w.k() as f64;
    let w_bar = w.rows().mean_axis(ndarray::Axis(0)).expect("K >= 1");
    let mut acc = 0.0;
    for (n, &label) in y.labels().iter().enumerate() {
        let diff = &w_bar - &w.rows().row(label);
        acc += z.row(n).dot(&diff);
    }
    Ok(acc * k / ((k - 1.0) * y.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_simplex, collapsed_configuration};
    use crate::losses::ce_loss;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    #[test]
    fn frobenius_bound_closed_forms() {
        assert_relative_eq!(ce_bound_frobenius(3, 1.0, 0.0).unwrap().value, 3.0f64.ln());
        // frob = sqrt(3) corresponds to r_W = 1 per row for K = 3.
        let via_frob = ce_bound_frobenius(3, 1.0, 3.0f64.sqrt()).unwrap().value;
        let via_rw = ce_bound_rw(3, 1.0, 1.0).unwrap().value;
        assert_relative_eq!(via_frob, via_rw, epsilon = 1e-15);
        assert_relative_eq!(via_rw, (1.0 + 2.0 * (-1.5f64).exp()).ln(), epsilon = 1e-15);
    }

    #[test]
    fn frobenius_bound_monotone_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let v = ce_bound_frobenius(4, 0.7, i as f64 * 0.3).unwrap().value;
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn rw_bound_values() {
        assert_relative_eq!(ce_bound_rw(5, 2.0, 0.0).unwrap().value, 5.0f64.ln());
        assert_relative_eq!(
            ce_bound_rw(2, 1.0, 1.0).unwrap().value,
            (1.0 + (-2.0f64).exp()).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn rw_bound_equals_collapsed_simplex_loss() {
        for (k, rho, r_w) in [(3usize, 1.0, 1.0), (2, 1.0, 1.0), (4, 0.5, 2.0)] {
            let s = build_simplex(k, k, rho).unwrap();
            let y = LabelVector::balanced(2 * k, k).unwrap();
            let z = collapsed_configuration(&s, &y).unwrap();
            let mut w_rows = Array2::<f64>::zeros((k, k));
            for row in 0..k {
                w_rows.row_mut(row).assign(&s.row(row));
                w_rows.row_mut(row).mapv_inplace(|v| v * r_w / rho);
            }
            let w = WeightMatrix::with_norm_cap(w_rows, r_w).unwrap();
            let loss = ce_loss(&z, &w, &y).unwrap().mean();
            let bound = ce_bound_rw(k, rho, r_w).unwrap().value;
            assert_relative_eq!(loss, bound, epsilon = 1e-12);
        }
    }

    #[test]
    fn root_residual_is_tiny() {
        for (k, rho, lambda) in [(3usize, 1.0, 0.1), (2, 0.5, 0.01), (10, 2.0, 1e-3)] {
            let x = solve_r_w(k, rho, lambda, 1e-12).unwrap();
            let res = bound_objective_derivative(k as f64, rho, lambda, x);
            assert!(res.abs() < 1e-12, "K={k} rho={rho} lambda={lambda}: residual {res}");
        }
    }

    #[test]
    fn root_shrinks_with_large_lambda() {
        let x = solve_r_w(3, 1.0, 1e3, 1e-12).unwrap();
        assert!(x > 0.0 && x < 1e-3, "x = {x}");
    }

    #[test]
    fn root_agrees_with_independent_brackets() {
        // Strict convexity makes the root unique; an independent plain
        // bisection from assorted brackets lands on the same point.
        let (k, rho, lambda) = (3usize, 1.0, 0.05);
        let reference = solve_r_w(k, rho, lambda, 1e-12).unwrap();
        let f = |x: f64| bound_objective_derivative(k as f64, rho, lambda, x);
        for i in 1..=10 {
            let mut lo = 0.0;
            let mut hi = rho / (2.0 * lambda * k as f64) * (1.0 + i as f64 * 0.7);
            while hi - lo > 1e-13 {
                let mid = 0.5 * (lo + hi);
                if f(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((0.5 * (lo + hi) - reference).abs() < 1e-10);
        }
    }

    #[test]
    fn l2_bound_is_the_envelope_minimum() {
        for (k, rho, lambda) in [(3usize, 1.0, 0.01), (2, 1.0, 0.1), (5, 0.5, 0.02)] {
            let report = ce_bound_l2(k, rho, lambda).unwrap();
            let grid_hi = 5.0 * rho / (2.0 * lambda * k as f64);
            let mut best = f64::INFINITY;
            let mut x = 0.0;
            while x <= grid_hi {
                let v = ce_bound_rw(k, rho, x).unwrap().value + lambda * k as f64 * x * x;
                best = best.min(v);
                x += 1e-4 * grid_hi.max(1.0);
            }
            assert!(
                report.value <= best + 1e-9,
                "K={k}: grid found {best} below bound {}",
                report.value
            );
        }
    }

    #[test]
    fn l2_bound_monotone_in_lambda() {
        let mut prev = 0.0;
        for i in 1..=100 {
            let lambda = 1e-3 * 10.0f64.powf((i as f64) / 50.0);
            let v = ce_bound_l2(3, 1.0, lambda).unwrap().value;
            assert!(v > prev, "bound not increasing at lambda={lambda}");
            prev = v;
        }
    }

    #[test]
    fn sc_bound_paper_toy_value() {
        let labels = LabelVector::balanced(12, 3).unwrap();
        let report = sc_bound(&labels, 9, 1.0).unwrap();
        assert_eq!(report.batch_count, 167_960);
        // Paper reports 12.12015 for this configuration.
        assert!((report.mean - 12.12015).abs() < 1e-4);
        assert_relative_eq!(report.mean, 12.120150127382521, epsilon = 1e-12);
        assert_relative_eq!(report.total, report.mean * 167_960.0, max_relative = 1e-15);
    }

    #[test]
    fn sc_bound_rho_zero_limit() {
        // As rho -> 0, exp(-K rho^2/(K-1)) -> 1 and every term approaches
        // log(b-1), so the total approaches log(b-1) * sum_l l M_l.
        let labels = LabelVector::balanced(6, 3).unwrap();
        let b = 4;
        let report = sc_bound(&labels, b, 1e-9).unwrap();
        let census = census(&labels, b).unwrap();
        let weight: f64 = (2..=b).map(|l| l as f64 * census.m_l[l] as f64).sum();
        let expect = ((b - 1) as f64).ln() * weight;
        assert!((report.total - expect).abs() <= weight * 1e-12);
    }

    #[test]
    fn sc_bound_rejects_unbalanced_and_small_b() {
        let unbalanced = LabelVector::new(vec![0, 0, 0, 1], 2).unwrap();
        assert!(matches!(sc_bound(&unbalanced, 3, 1.0), Err(Error::UnbalancedLabels(_))));
        let balanced = LabelVector::balanced(4, 2).unwrap();
        assert!(sc_bound(&balanced, 2, 1.0).is_err());
    }

    #[test]
    fn sc_bound_underflow_regime() {
        // K rho^2/(K-1) = 1200: exp underflows to zero, terms reduce to
        // log(l-1) without producing -inf or NaN.
        let labels = LabelVector::balanced(4, 2).unwrap();
        let report = sc_bound(&labels, 3, (600.0f64).sqrt()).unwrap();
        assert!(report.total.is_finite());
        let census = census(&labels, 3).unwrap();
        let expect: f64 = (2..=3)
            .map(|l| l as f64 * census.m_l[l] as f64 * ((l - 1) as f64).ln())
            .sum();
        assert_relative_eq!(report.total, expect, max_relative = 1e-12);
    }

    #[test]
    fn tightness_flag() {
        let labels = LabelVector::balanced(8, 4).unwrap();
        let r = sc_bound(&labels, 3, 1.0).unwrap();
        assert_eq!(r.tightness, Tightness::Unknown);
        assert_eq!(r.clone().with_ambient_dim(3).tightness, Tightness::TightCapable);
        assert_eq!(r.with_ambient_dim(2).tightness, Tightness::NotNecessarilyTight);
        let b = ce_bound_rw(4, 1.0, 1.0).unwrap().with_ambient_dim(2);
        assert_eq!(b.tightness, Tightness::NotNecessarilyTight);
    }

    #[test]
    fn aux_s_zero_weights() {
        let z = collapsed_configuration(
            &build_simplex(3, 2, 1.0).unwrap(),
            &LabelVector::balanced(6, 3).unwrap(),
        )
        .unwrap();
        let y = LabelVector::balanced(6, 3).unwrap();
        let w = WeightMatrix::new(Array2::zeros((3, 2))).unwrap();
        assert_eq!(aux_s_ce(&z, &w, &y).unwrap(), 0.0);
    }

    #[test]
    fn aux_s_collapsed_equality_value() {
        // At the collapsed simplex with proportional weights the
        // functional attains -rho (sqrt(K)/(K-1)) |W|_F.
        let (k, rho, rho_w) = (4usize, 1.3, 0.6);
        let s = build_simplex(k, k, rho).unwrap();
        let y = LabelVector::balanced(2 * k, k).unwrap();
        let z = collapsed_configuration(&s, &y).unwrap();
        let mut w_rows = s.vertices().to_owned();
        w_rows.mapv_inplace(|v| v * rho_w / rho);
        let w = WeightMatrix::new(w_rows).unwrap();
        let s_val = aux_s_ce(&z, &w, &y).unwrap();
        let expect = -rho * (k as f64).sqrt() / (k as f64 - 1.0) * w.frobenius_norm();
        assert_relative_eq!(s_val, expect, epsilon = 1e-12);
    }
}
