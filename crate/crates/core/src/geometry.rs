//! Point configurations, sphere/ball projections, regular simplex
//! construction and verification, and the cosine-similarity statistic.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance used when validating norm constraints on user data.
pub const CONSTRAINT_REL_TOL: f64 = 1e-9;

/// Relative tolerance for construction-time simplex checks.
pub const SIMPLEX_REL_TOL: f64 = 1e-10;

/// Norm constraint attached to a [`PointConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Constraint {
    /// Every row has norm `radius` (relative tolerance 1e-9).
    Sphere { radius: f64 },
    /// Every row has norm at most `radius` (relative tolerance 1e-9).
    Ball { radius: f64 },
    /// Unconstrained rows.
    Free,
}

impl Constraint {
    pub fn radius(&self) -> Option<f64> {
        match self {
            Constraint::Sphere { radius } | Constraint::Ball { radius } => Some(*radius),
            Constraint::Free => None,
        }
    }

    fn validate(&self, points: &Array2<f64>) -> Result<()> {
        match *self {
            Constraint::Free => Ok(()),
            Constraint::Sphere { radius } => {
                require_positive(radius, "sphere radius")?;
                for (n, row) in points.rows().into_iter().enumerate() {
                    let norm = l2_norm(row);
                    if (norm - radius).abs() > CONSTRAINT_REL_TOL * radius {
                        return Err(Error::ConstraintViolation(format!(
                            "row {n} has norm {norm}, expected {radius} on the sphere"
                        )));
                    }
                }
                Ok(())
            }
            Constraint::Ball { radius } => {
                require_positive(radius, "ball radius")?;
                for (n, row) in points.rows().into_iter().enumerate() {
                    let norm = l2_norm(row);
                    if norm > radius * (1.0 + CONSTRAINT_REL_TOL) {
                        return Err(Error::ConstraintViolation(format!(
                            "row {n} has norm {norm}, outside the ball of radius {radius}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// An `N x h` configuration of representation points together with its
/// norm constraint. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PointConfig {
    points: Array2<f64>,
    constraint: Constraint,
}

impl PointConfig {
    /// Validates the constraint on every row.
    pub fn new(points: Array2<f64>, constraint: Constraint) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "point configuration must have N >= 1 points and h >= 1 dimensions".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "point configuration contains a non-finite coordinate".into(),
            ));
        }
        constraint.validate(&points)?;
        Ok(Self { points, constraint })
    }

    /// Unconstrained configuration.
    pub fn free(points: Array2<f64>) -> Result<Self> {
        Self::new(points, Constraint::Free)
    }

    pub fn n_points(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn row(&self, n: usize) -> ArrayView1<'_, f64> {
        self.points.row(n)
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Radius of the sphere constraint, or an error for ball/free configs.
    pub fn sphere_radius(&self) -> Result<f64> {
        match self.constraint {
            Constraint::Sphere { radius } => Ok(radius),
            other => Err(Error::ConstraintViolation(format!(
                "expected a sphere-constrained configuration, got {other:?}"
            ))),
        }
    }
}

/// Class assignments for a point configuration. Classes are 0-based
/// indices `0..K` internally; the CSV interfaces are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    k: usize,
    counts: Vec<usize>,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("label vector must be nonempty".into()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("class count K must be >= 1".into()));
        }
        let mut counts = vec![0usize; k];
        for (n, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::InvalidArgument(format!(
                    "label {y} at position {n} is outside 0..{k}"
                )));
            }
            counts[y] += 1;
        }
        Ok(Self { labels, k, counts })
    }

    /// Balanced labels `[0,..,0,1,..,1,...]` with `n/k` points per class.
    pub fn balanced(n: usize, k: usize) -> Result<Self> {
        if k == 0 || n == 0 || n % k != 0 {
            return Err(Error::UnbalancedLabels(format!(
                "cannot split {n} points into {k} equal classes"
            )));
        }
        let per = n / k;
        let labels = (0..n).map(|i| i / per).collect();
        Self::new(labels, k)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn label(&self, n: usize) -> usize {
        self.labels[n]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of points in class `y`.
    pub fn count(&self, y: usize) -> usize {
        self.counts[y]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// True iff every class holds exactly `N/K` points.
    pub fn is_balanced(&self) -> bool {
        self.len() % self.k == 0 && self.counts.iter().all(|&c| c == self.len() / self.k)
    }

    pub fn require_balanced(&self) -> Result<()> {
        if self.is_balanced() {
            Ok(())
        } else {
            Err(Error::UnbalancedLabels(format!(
                "class counts {:?} differ from N/K = {}/{}",
                self.counts,
                self.len(),
                self.k
            )))
        }
    }
}

/// Vertices of a sphere-inscribed regular simplex, one per row.
#[derive(Debug, Clone)]
pub struct SimplexVertices {
    vertices: Array2<f64>,
    radius: f64,
}

impl SimplexVertices {
    pub fn vertices(&self) -> ArrayView2<'_, f64> {
        self.vertices.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.vertices
    }

    pub fn k(&self) -> usize {
        self.vertices.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn row(&self, y: usize) -> ArrayView1<'_, f64> {
        self.vertices.row(y)
    }
}

/// One verified condition with its residual.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub residual: f64,
    pub pass: bool,
}

impl ConditionCheck {
    pub(crate) fn new(name: &str, residual: f64, tol: f64) -> Self {
        Self { name: name.to_string(), residual, pass: residual <= tol }
    }
}

/// Per-condition report produced by [`verify_simplex`]. Residuals are
/// relative: S1 is scaled by `K * rho`, S2 by `rho`, S3 by `rho^2`.
#[derive(Debug, Clone, Serialize)]
pub struct SimplexReport {
    pub s1: ConditionCheck,
    pub s2: ConditionCheck,
    pub s3: ConditionCheck,
    /// Mean pairwise inner product (absent for K < 2).
    pub common_inner_product: Option<f64>,
    /// The value `-rho^2 / (K-1)` forced by S1-S3 (absent for K < 2).
    pub target_inner_product: Option<f64>,
    /// `|common - target| / rho^2` (absent for K < 2).
    pub inner_product_deviation: Option<f64>,
    pub tol: f64,
    pub pass: bool,
}

/// Builds the vertices of a regular simplex inscribed in the sphere of
/// radius `rho`: the centered standard basis directions of a K-dimensional
/// space are expressed in an orthonormal basis of their (K-1)-dimensional
/// span, embedded into `h` dimensions and scaled to norm `rho`.
///
/// Requires `2 <= k <= h + 1` and `rho > 0`.
pub fn build_simplex(k: usize, h: usize, rho: f64) -> Result<SimplexVertices> {
    if k < 2 || k > h + 1 {
        return Err(Error::SimplexDoesNotExist { k, h });
    }
    require_positive(rho, "simplex radius")?;

    // Coordinates of e_y - 1/K in the Helmert basis of the zero-sum
    // hyperplane; column y of the Helmert matrix, then scaled to norm rho.
    let scale = rho * (k as f64 / (k as f64 - 1.0)).sqrt();
    let mut vertices = Array2::<f64>::zeros((k, h));
    for j in 1..k {
        let a = 1.0 / ((j as f64) * (j as f64 + 1.0)).sqrt();
        for y in 0..k {
            vertices[[y, j - 1]] = match y.cmp(&j) {
                std::cmp::Ordering::Less => scale * a,
                std::cmp::Ordering::Equal => -scale * (j as f64) * a,
                std::cmp::Ordering::Greater => 0.0,
            };
        }
    }
    Ok(SimplexVertices { vertices, radius: rho })
}

/// Checks the three simplex conditions (zero sum, common norm, common
/// pairwise inner product) and reports the residual of each.
pub fn verify_simplex(vertices: ArrayView2<'_, f64>, rho: f64, tol: f64) -> Result<SimplexReport> {
    let k = vertices.nrows();
    if k == 0 || vertices.ncols() == 0 {
        return Err(Error::InvalidArgument("vertex matrix must be nonempty".into()));
    }
    require_positive(rho, "simplex radius")?;
    require_positive(tol, "tolerance")?;

    let sum = vertices.sum_axis(ndarray::Axis(0));
    let s1_res = l2_norm(sum.view()) / (k as f64 * rho);

    let s2_res = vertices
        .rows()
        .into_iter()
        .map(|row| (l2_norm(row) - rho).abs() / rho)
        .fold(0.0_f64, f64::max);

    let rho2 = rho * rho;
    let (s3_res, common, target, deviation) = if k < 2 {
        (0.0, None, None, None)
    } else {
        let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in (i + 1)..k {
                pairs.push(vertices.row(i).dot(&vertices.row(j)));
            }
        }
        let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
        let res = pairs.iter().map(|p| (p - mean).abs() / rho2).fold(0.0_f64, f64::max);
        let target = -rho2 / (k as f64 - 1.0);
        (res, Some(mean), Some(target), Some((mean - target).abs() / rho2))
    };

    let s1 = ConditionCheck::new("S1 zero sum", s1_res, tol);
    let s2 = ConditionCheck::new("S2 common norm", s2_res, tol);
    let s3 = ConditionCheck::new("S3 common inner product", s3_res, tol);
    let pass = s1.pass && s2.pass && s3.pass;
    Ok(SimplexReport {
        s1,
        s2,
        s3,
        common_inner_product: common,
        target_inner_product: target,
        inner_product_deviation: deviation,
        tol,
        pass,
    })
}

/// Rescales every row to norm `rho`. Idempotent; rejects zero rows.
pub fn project_to_sphere(config: &PointConfig, rho: f64) -> Result<PointConfig> {
    require_positive(rho, "sphere radius")?;
    let mut points = config.points().to_owned();
    sphere_project_rows_in_place(&mut points, rho)?;
    PointConfig::new(points, Constraint::Sphere { radius: rho })
}

/// Rescales rows with norm above `rho` to norm `rho`; rows inside the
/// ball are left bitwise unchanged. Idempotent.
pub fn project_to_ball(config: &PointConfig, rho: f64) -> Result<PointConfig> {
    require_positive(rho, "ball radius")?;
    let mut points = config.points().to_owned();
    ball_project_rows_in_place(&mut points, rho);
    PointConfig::new(points, Constraint::Ball { radius: rho })
}

// Rows already within this relative distance of the target norm are left
// bitwise unchanged, making repeated projection a fixed point.
const PROJECTION_SNAP: f64 = 1e-12;

pub(crate) fn sphere_project_rows_in_place(points: &mut Array2<f64>, rho: f64) -> Result<()> {
    for (n, mut row) in points.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector { index: Some(n) });
        }
        if (norm - rho).abs() <= PROJECTION_SNAP * rho {
            continue;
        }
        let factor = rho / norm;
        row.mapv_inplace(|v| v * factor);
    }
    Ok(())
}

pub(crate) fn ball_project_rows_in_place(points: &mut Array2<f64>, rho: f64) {
    for mut row in points.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > rho * (1.0 + PROJECTION_SNAP) {
            let factor = rho / norm;
            row.mapv_inplace(|v| v * factor);
        }
    }
}

/// Cosine similarity `1 - arccos(<x/|x|, y/|y|>) / pi`, in `[0, 1]`.
/// The inner-product argument is clamped to `[-1, 1]` so numerically
/// parallel vectors do not produce NaN.
pub fn cosine_similarity(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    let nx = l2_norm(x);
    let ny = l2_norm(y);
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroVector { index: None });
    }
    let cos = (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0);
    Ok(1.0 - cos.acos() / std::f64::consts::PI)
}

/// Places every point on its class vertex: `z_n = zeta_(y_n)`. This is
/// the common minimizer geometry of both losses, returned as a
/// sphere-constrained configuration.
pub fn collapsed_configuration(
    simplex: &SimplexVertices,
    labels: &LabelVector,
) -> Result<PointConfig> {
    if labels.k() != simplex.k() {
        return Err(Error::InvalidArgument(format!(
            "labels declare {} classes but the simplex has {} vertices",
            labels.k(),
            simplex.k()
        )));
    }
    let mut points = Array2::<f64>::zeros((labels.len(), simplex.dim()));
    for (n, &y) in labels.labels().iter().enumerate() {
        points.row_mut(n).assign(&simplex.row(y));
    }
    PointConfig::new(points, Constraint::Sphere { radius: simplex.radius() })
}

/// Per-class mean of the points: row `y` is the mean of all points with
/// label `y`. Every class must be nonempty.
pub fn class_means(z: &PointConfig, y: &LabelVector) -> Result<Array2<f64>> {
    check_labels_match(z, y)?;
    for class in 0..y.k() {
        if y.count(class) == 0 {
            return Err(Error::EmptyClass { class });
        }
    }
    let mut means = Array2::<f64>::zeros((y.k(), z.dim()));
    for (n, &label) in y.labels().iter().enumerate() {
        let mut row = means.row_mut(label);
        row += &z.row(n);
    }
    for class in 0..y.k() {
        let inv = 1.0 / y.count(class) as f64;
        means.row_mut(class).mapv_inplace(|v| v * inv);
    }
    Ok(means)
}

pub(crate) fn check_labels_match(z: &PointConfig, y: &LabelVector) -> Result<()> {
    if z.n_points() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "configuration has {} points but label vector has {} entries",
            z.n_points(),
            y.len()
        )));
    }
    Ok(())
}

pub(crate) fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub(crate) fn require_positive(value: f64, what: &str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be positive and finite, got {value}")))
    }
}
