//! Equality-condition checking for the two bounds, cosine-similarity
//! geometry statistics, gap-to-bound reports and CSV ingestion of
//! externally produced embeddings.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    class_means, cosine_similarity, l2_norm, require_positive, verify_simplex, ConditionCheck,
    LabelVector, PointConfig,
};
use crate::losses::WeightMatrix;

/// Pass/fail of the equality conditions of a bound, with residuals.
#[derive(Debug, Clone, Serialize)]
pub struct EqualityReport {
    pub conditions: Vec<ConditionCheck>,
    pub tol: f64,
    pub pass: bool,
}

impl EqualityReport {
    fn from_conditions(conditions: Vec<ConditionCheck>, tol: f64) -> Self {
        let pass = conditions.iter().all(|c| c.pass);
        Self { conditions, tol, pass }
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name.starts_with(name))
    }
}

/// C1: collapse of every point onto its class mean, relative to `rho_z`.
fn collapse_residual(
    z: &PointConfig,
    y: &LabelVector,
    means: &Array2<f64>,
    rho_z: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (n, &label) in y.labels().iter().enumerate() {
        let diff = &z.row(n) - &means.row(label);
        worst = worst.max(l2_norm(diff.view()) / rho_z);
    }
    worst
}

/// C2: the class means form a regular simplex at radius `rho_z`; the
/// residual is the worst of the three simplex conditions.
fn simplex_residual(means: &Array2<f64>, rho_z: f64, tol: f64) -> Result<f64> {
    let report = verify_simplex(means.view(), rho_z, tol)?;
    Ok(report.s1.residual.max(report.s2.residual).max(report.s3.residual))
}

/// Equality conditions of the cross-entropy bounds: C1 collapse, C2
/// simplex on class means, C3 weights a common positive multiple of the
/// means. The free scale of C3 is estimated as the mean row norm of `W`.
pub fn equality_report_ce(
    z: &PointConfig,
    w: &WeightMatrix,
    y: &LabelVector,
    rho_z: f64,
    tol: f64,
) -> Result<EqualityReport> {
    require_positive(rho_z, "rho_Z")?;
    require_positive(tol, "tolerance")?;
    let means = class_means(z, y)?;
    if w.k() != y.k() || w.dim() != z.dim() {
        return Err(Error::InvalidArgument("weight shape does not match points/labels".into()));
    }

    let c1 = collapse_residual(z, y, &means, rho_z);
    let c2 = simplex_residual(&means, rho_z, tol)?;

    let rho_w = w.mean_row_norm();
    let c3 = if rho_w == 0.0 {
        f64::INFINITY
    } else {
        let scale = rho_w / rho_z;
        let mut worst = 0.0f64;
        for (label, w_row) in w.rows().rows().into_iter().enumerate() {
            let diff = &w_row - &means.row(label).mapv(|v| v * scale);
            worst = worst.max(l2_norm(diff.view()) / rho_w);
        }
        worst
    };

    Ok(EqualityReport::from_conditions(
        vec![
            ConditionCheck::new("C1 within-class collapse", c1, tol),
            ConditionCheck::new("C2 class means form a regular simplex", c2, tol),
            ConditionCheck::new("C3 weights proportional to class means", c3, tol),
        ],
        tol,
    ))
}

/// Equality conditions of the SC bound: C1 collapse and C2 simplex only.
pub fn equality_report_sc(
    z: &PointConfig,
    y: &LabelVector,
    rho_z: f64,
    tol: f64,
) -> Result<EqualityReport> {
    require_positive(rho_z, "rho_Z")?;
    require_positive(tol, "tolerance")?;
    let means = class_means(z, y)?;
    let c1 = collapse_residual(z, y, &means, rho_z);
    let c2 = simplex_residual(&means, rho_z, tol)?;
    Ok(EqualityReport::from_conditions(
        vec![
            ConditionCheck::new("C1 within-class collapse", c1, tol),
            ConditionCheck::new("C2 class means form a regular simplex", c2, tol),
        ],
        tol,
    ))
}

/// min/median/max of a statistic multiset.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StatSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl StatSummary {
    fn of(values: &[f64]) -> Self {
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Self { min: sorted[0], median, max: *sorted.last().expect("nonempty") }
    }
}

/// The three cosine-similarity statistics: separation across class
/// means, separation across classifier weights and within-class spread,
/// together with the values a regular simplex configuration attains.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryStats {
    /// `gamma(mu_i, mu_j)` for `i < j`, row-major pair order.
    pub across_means: Vec<f64>,
    /// `gamma(w_i, w_j)` for `i < j`, when weights are supplied.
    pub across_weights: Option<Vec<f64>>,
    /// `gamma(z_n, mu_(y_n))` per instance.
    pub to_means: Vec<f64>,
    /// `1 - arccos(-1/(K-1))/pi`: separation at the regular simplex.
    pub target_separation: f64,
    /// Spread at collapse.
    pub target_spread: f64,
    pub summary_across_means: StatSummary,
    pub summary_across_weights: Option<StatSummary>,
    pub summary_to_means: StatSummary,
}

pub fn geometry_stats(
    z: &PointConfig,
    y: &LabelVector,
    w: Option<&WeightMatrix>,
) -> Result<GeometryStats> {
    let means = class_means(z, y)?;
    let k = y.k();

    let mut across_means = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            across_means.push(cosine_similarity(means.row(i), means.row(j))?);
        }
    }
    let across_weights = match w {
        Some(w) => {
            if w.k() != k {
                return Err(Error::InvalidArgument(format!(
                    "weights have {} rows but labels declare {k} classes",
                    w.k()
                )));
            }
            let mut vals = Vec::with_capacity(k * (k - 1) / 2);
            for i in 0..k {
                for j in (i + 1)..k {
                    vals.push(cosine_similarity(w.rows().row(i), w.rows().row(j))?);
                }
            }
            Some(vals)
        }
        None => None,
    };
    let to_means: Vec<f64> = y
        .labels()
        .iter()
        .enumerate()
        .map(|(n, &label)| cosine_similarity(z.row(n), means.row(label)))
        .collect::<Result<_>>()?;

    let target_separation = 1.0 - (-1.0 / (k as f64 - 1.0)).acos() / std::f64::consts::PI;
    Ok(GeometryStats {
        summary_across_means: StatSummary::of(&across_means),
        summary_across_weights: across_weights.as_deref().map(StatSummary::of),
        summary_to_means: StatSummary::of(&to_means),
        across_means,
        across_weights,
        to_means,
        target_separation,
        target_spread: 1.0,
    })
}

/// Normalization of a loss or bound value entering a gap report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Normalization {
    /// Sum over instances or batches.
    Total,
    /// Mean per instance or per batch.
    Mean,
}

/// Empirical-minus-bound gap. A violation beyond 1e-9 is an error: the
/// bounds are proven, so crossing one signals an implementation bug.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub empirical: f64,
    pub bound: f64,
    pub absolute_gap: f64,
    pub relative_gap: f64,
    pub tight: bool,
    pub normalization: Normalization,
}

pub const BOUND_VIOLATION_TOL: f64 = 1e-9;

pub fn gap_report(
    empirical: f64,
    empirical_norm: Normalization,
    bound: f64,
    bound_norm: Normalization,
    tight_rel_threshold: f64,
) -> Result<GapReport> {
    if empirical_norm != bound_norm {
        return Err(Error::NormalizationMismatch(format!(
            "empirical is {empirical_norm:?} but bound is {bound_norm:?}"
        )));
    }
    require_positive(tight_rel_threshold, "tightness threshold")?;
    let gap = empirical - bound;
    if gap < -BOUND_VIOLATION_TOL {
        return Err(Error::BoundViolation { empirical, bound, tol: BOUND_VIOLATION_TOL });
    }
    let relative = if bound.abs() > 0.0 {
        gap / bound.abs()
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(GapReport {
        empirical,
        bound,
        absolute_gap: gap,
        relative_gap: relative,
        tight: relative <= tight_rel_threshold,
        normalization: empirical_norm,
    })
}

/// Embeddings parsed from CSV, with ingestion warnings (empty classes,
/// imbalance).
#[derive(Debug)]
pub struct LoadedEmbeddings {
    pub config: PointConfig,
    pub labels: LabelVector,
    pub warnings: Vec<String>,
}

/// Reads a `label,x1,...,xh` CSV of doubles. Labels are 1-based
/// positive integers; `K` is inferred as the maximum label, and classes
/// missing below the maximum are accepted with a warning. The returned
/// configuration is unconstrained.
pub fn load_embeddings<P: AsRef<Path>>(path: P) -> Result<LoadedEmbeddings> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let fail = |line: u64, msg: String| Error::CsvFormat { path: display.clone(), line, msg };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fail(1, format!("cannot open: {e}")))?;

    let headers = reader.headers().map_err(|e| fail(1, e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(fail(1, "header must be label,x1,...,xh with h >= 1".into()));
    }
    if headers.get(0) != Some("label") {
        return Err(fail(1, format!("first header field must be 'label', got '{}'", headers.get(0).unwrap_or(""))));
    }
    let h = headers.len() - 1;

    let mut raw_labels: Vec<u64> = Vec::new();
    let mut coords: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            fail(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != h + 1 {
            return Err(fail(
                line,
                format!("expected {} fields, found {}", h + 1, record.len()),
            ));
        }
        let label: u64 = record
            .get(0)
            .unwrap()
            .parse()
            .map_err(|e| fail(line, format!("bad label '{}': {e}", record.get(0).unwrap())))?;
        if label == 0 {
            return Err(fail(line, "labels are 1-based positive integers".into()));
        }
        raw_labels.push(label);
        for col in 1..=h {
            let cell = record.get(col).unwrap();
            let value: f64 = cell
                .parse()
                .map_err(|e| fail(line, format!("bad coordinate '{cell}': {e}")))?;
            coords.push(value);
        }
    }
    if raw_labels.is_empty() {
        return Err(fail(0, "file contains no data rows".into()));
    }

    let n = raw_labels.len();
    let k = *raw_labels.iter().max().unwrap() as usize;
    let labels = LabelVector::new(raw_labels.iter().map(|&l| l as usize - 1).collect(), k)?;

    let mut warnings = Vec::new();
    for class in 0..k {
        if labels.count(class) == 0 {
            warnings.push(format!(
                "class {} has no instances (labels are 1-based); bound entry points will reject this configuration",
                class + 1
            ));
        }
    }
    if !labels.is_balanced() {
        warnings.push(format!(
            "labels are not balanced (counts {:?}); the theorems assume exact balance",
            labels.counts()
        ));
    }

    let points = Array2::from_shape_vec((n, h), coords)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let config = PointConfig::free(points)?;
    Ok(LoadedEmbeddings { config, labels, warnings })
}

/// Writes embeddings in the ingestion format with 17 significant digits,
/// so that a load/save cycle reproduces finite doubles bit-exactly.
pub fn save_embeddings<P: AsRef<Path>>(path: P, z: &PointConfig, y: &LabelVector) -> Result<()> {
    crate::geometry::check_labels_match(z, y)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(file, "label")?;
    for j in 1..=z.dim() {
        write!(file, ",x{j}")?;
    }
    writeln!(file)?;
    for (n, &label) in y.labels().iter().enumerate() {
        write!(file, "{}", label + 1)?;
        for v in z.row(n).iter() {
            write!(file, ",{v:.16e}")?;
        }
        writeln!(file)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_simplex, collapsed_configuration, Constraint};
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    fn cor1_configuration(
        k: usize,
        h: usize,
        rho: f64,
        r_w: f64,
        per_class: usize,
    ) -> (PointConfig, WeightMatrix, LabelVector) {
        let s = build_simplex(k, h, rho).unwrap();
        let y = LabelVector::balanced(k * per_class, k).unwrap();
        let z = collapsed_configuration(&s, &y).unwrap();
        let mut w_rows = s.vertices().to_owned();
        w_rows.mapv_inplace(|v| v * r_w / rho);
        (z, WeightMatrix::new(w_rows).unwrap(), y)
    }

    #[test]
    fn ce_equality_passes_on_constructed_configuration() {
        let (z, w, y) = cor1_configuration(3, 2, 1.0, 0.8, 4);
        let report = equality_report_ce(&z, &w, &y, 1.0, 1e-9).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn ce_equality_detects_single_point_perturbation() {
        let (z, w, y) = cor1_configuration(3, 2, 1.0, 0.8, 4);
        let mut pts = z.points().to_owned();
        pts[[0, 0]] += 0.1;
        let z = PointConfig::free(pts).unwrap();
        let report = equality_report_ce(&z, &w, &y, 1.0, 1e-9).unwrap();
        let c1 = report.condition("C1").unwrap();
        assert!(!c1.pass);
        // Moving one of four class members by 0.1 shifts it 0.075 off the
        // new mean.
        assert_relative_eq!(c1.residual, 0.075, max_relative = 1e-10);
    }

    #[test]
    fn ce_equality_detects_negated_weight_row() {
        let (z, w, y) = cor1_configuration(3, 2, 1.0, 0.8, 4);
        let mut rows = w.rows().to_owned();
        let negated = rows.row(1).mapv(|v| -v);
        rows.row_mut(1).assign(&negated);
        let w = WeightMatrix::new(rows).unwrap();
        let report = equality_report_ce(&z, &w, &y, 1.0, 1e-9).unwrap();
        assert!(!report.condition("C3").unwrap().pass);
        assert!(report.condition("C1").unwrap().pass);
    }

    #[test]
    fn sc_equality_pass_and_fail() {
        let s = build_simplex(2, 2, 1.0).unwrap();
        let y = LabelVector::balanced(4, 2).unwrap();
        let z = collapsed_configuration(&s, &y).unwrap();
        assert!(equality_report_sc(&z, &y, 1.0, 1e-9).unwrap().pass);

        let random = crate::optimize::gaussian_sphere_init(4, 2, 1.0, 42).unwrap();
        assert!(!equality_report_sc(&random, &y, 1.0, 1e-3).unwrap().pass);
    }

    #[test]
    fn stats_on_collapsed_simplex() {
        let s = build_simplex(3, 2, 1.0).unwrap();
        let y = LabelVector::balanced(6, 3).unwrap();
        let z = collapsed_configuration(&s, &y).unwrap();
        let stats = geometry_stats(&z, &y, None).unwrap();
        assert_eq!(stats.across_means.len(), 3);
        assert_eq!(stats.to_means.len(), 6);
        for &v in &stats.across_means {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        for &v in &stats.to_means {
            assert_relative_eq!(v, 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(stats.target_separation, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_target_value_for_k10() {
        let s = build_simplex(10, 9, 1.0).unwrap();
        let y = LabelVector::balanced(10, 10).unwrap();
        let z = collapsed_configuration(&s, &y).unwrap();
        let stats = geometry_stats(&z, &y, None).unwrap();
        assert_relative_eq!(stats.target_separation, 0.46455905439753997, epsilon = 1e-12);
        for &v in &stats.across_means {
            assert_relative_eq!(v, stats.target_separation, epsilon = 1e-9);
        }
    }

    #[test]
    fn stats_positive_orthant_floor() {
        // Nonnegative coordinates force nonnegative mean inner products,
        // so the across-means similarity cannot drop below one half.
        let pts = array![
            [1.0, 0.1, 0.2],
            [0.8, 0.0, 0.3],
            [0.1, 1.0, 0.0],
            [0.2, 0.9, 0.1],
            [0.0, 0.2, 1.0],
            [0.1, 0.1, 0.9],
        ];
        let z = PointConfig::free(pts).unwrap();
        let y = LabelVector::balanced(6, 3).unwrap();
        let stats = geometry_stats(&z, &y, Some(&WeightMatrix::new(Array2::eye(3)).unwrap())).unwrap();
        assert!(stats.summary_across_means.min >= 0.5);
        assert!(stats.across_weights.unwrap().iter().all(|&v| v >= 0.5));
    }

    #[test]
    fn gap_report_cases() {
        let ok = gap_report(12.12016, Normalization::Mean, 12.12015, Normalization::Mean, 1e-4)
            .unwrap();
        assert_relative_eq!(ok.absolute_gap, 1e-5, max_relative = 1e-6);
        assert!(ok.tight);

        let same = gap_report(3.0, Normalization::Total, 3.0, Normalization::Total, 1e-6).unwrap();
        assert_eq!(same.absolute_gap, 0.0);
        assert!(same.tight);

        assert!(matches!(
            gap_report(1.0, Normalization::Total, 2.0, Normalization::Total, 1e-6),
            Err(Error::BoundViolation { .. })
        ));
        assert!(matches!(
            gap_report(3.0, Normalization::Total, 2.0, Normalization::Mean, 1e-6),
            Err(Error::NormalizationMismatch(_))
        ));
    }

    #[test]
    fn load_embeddings_happy_path() {
        let dir = std::env::temp_dir().join("simplexlab_test_load");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ok.csv");
        std::fs::write(&path, "label,x1,x2\n1,0.5,1.0\n1,-0.5,0.0\n2,0.25,0.125\n2,1.0,2.0\n")
            .unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(loaded.config.n_points(), 4);
        assert_eq!(loaded.config.dim(), 2);
        assert_eq!(loaded.labels.k(), 2);
        assert!(loaded.labels.is_balanced());
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.config.points()[[2, 1]], 0.125);
    }

    #[test]
    fn load_embeddings_ragged_row_names_line() {
        let dir = std::env::temp_dir().join("simplexlab_test_ragged");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ragged.csv");
        std::fs::write(&path, "label,x1,x2\n1,0.5,1.0\n2,0.25\n").unwrap();
        match load_embeddings(&path) {
            Err(Error::CsvFormat { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a csv error, got {other:?}"),
        }
    }

    #[test]
    fn load_embeddings_gap_label_warns() {
        let dir = std::env::temp_dir().join("simplexlab_test_gap");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("gap.csv");
        std::fs::write(&path, "label,x1\n1,0.5\n3,0.25\n").unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(loaded.labels.k(), 3);
        assert_eq!(loaded.labels.count(1), 0);
        assert!(!loaded.labels.is_balanced());
        assert!(!loaded.warnings.is_empty());
    }

    #[test]
    fn load_embeddings_rejects_bad_cells() {
        let dir = std::env::temp_dir().join("simplexlab_test_bad");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.csv");
        std::fs::write(&path, "label,x1\n1,abc\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::CsvFormat { .. })));
        std::fs::write(&path, "label,x1\n0,1.0\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::CsvFormat { .. })));
        std::fs::write(&path, "label,x1\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::CsvFormat { .. })));
        std::fs::write(&path, "id,x1\n1,1.0\n").unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::CsvFormat { .. })));
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let z = PointConfig::free(array![
            [0.1234567890123456, -7.25],
            [1e-300, 3.0e200],
            [std::f64::consts::PI, -0.0]
        ])
        .unwrap();
        let y = LabelVector::new(vec![0, 1, 0], 2).unwrap();
        let dir = std::env::temp_dir().join("simplexlab_test_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        save_embeddings(&path, &z, &y).unwrap();
        let loaded = load_embeddings(&path).unwrap();
        for (a, b) in z.points().iter().zip(loaded.config.points().iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
        assert_eq!(loaded.labels.labels(), y.labels());

        // Constraint metadata is not serialized; ingested configs are free.
        assert_eq!(loaded.config.constraint(), Constraint::Free);
    }
}
