//! Projected gradient descent over free configurations: the
//! L2-regularized cross-entropy objective on the ball, the supervised
//! contrastive loss on the sphere (full-gradient and batch-sampled), and
//! single-batch minimizers.
//!
//! Every optimizer is deterministic given its seed: initialization and
//! batch sampling draw from a seeded ChaCha stream and gradient
//! reductions use a fixed order.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bounds::{ce_bound_l2, sc_bound};
use crate::combinatorics::{batch_unrank, multichoose, Batch};
use crate::error::{Error, Result};
use crate::geometry::{
    ball_project_rows_in_place, check_labels_match, require_positive,
    sphere_project_rows_in_place, Constraint, LabelVector, PointConfig,
};
use crate::losses::{
    ce_gradients, ce_loss, sc_batch_loss_and_grad_into, sc_total_loss_and_grad,
    tangential_grad_norm, WeightMatrix, DEFAULT_ENUMERATION_BUDGET,
};

/// Step-size schedule: `lr_t = lr0 * decay^t` for the exponential form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Schedule {
    Constant,
    Exponential { decay: f64 },
}

/// Optimizer configuration. The constraint must agree with the initial
/// configuration's constraint.
#[derive(Debug, Clone, Serialize)]
pub struct OptimConfig {
    pub steps: usize,
    pub lr0: f64,
    pub schedule: Schedule,
    /// Heavy-ball momentum in `[0, 1)`.
    pub momentum: f64,
    pub seed: u64,
    pub constraint: Constraint,
    pub log_every: usize,
    /// Optional early stop once the logged gradient norm falls below.
    pub grad_tol: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr0: 0.1,
            schedule: Schedule::Constant,
            momentum: 0.9,
            seed: 0,
            constraint: Constraint::Sphere { radius: 1.0 },
            log_every: 100,
            grad_tol: None,
        }
    }
}

impl OptimConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        require_positive(self.lr0, "initial step size")?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Schedule::Exponential { decay } = self.schedule {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "decay must lie in (0, 1], got {decay}"
                )));
            }
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log_every must be >= 1".into()));
        }
        if let Some(tol) = self.grad_tol {
            require_positive(tol, "gradient tolerance")?;
        }
        Ok(())
    }

    fn check_constraint_matches(&self, z: &PointConfig) -> Result<()> {
        if self.constraint != z.constraint() {
            return Err(Error::ConstraintViolation(format!(
                "config declares {:?} but the initial configuration carries {:?}",
                self.constraint,
                z.constraint()
            )));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr0,
            Schedule::Exponential { decay } => self.lr0 * decay.powi(step as i32),
        }
    }
}

/// One logged optimizer state.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub loss: f64,
    /// Loss minus the theoretical lower bound, when the bound applies.
    pub bound_gap: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    StepBudgetExhausted,
    GradientBelowTolerance,
}

/// Result of an optimization run. The final configuration satisfies the
/// declared constraint; `final_loss` is evaluated after the last update.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<TrajectoryPoint>,
    pub final_points: PointConfig,
    pub final_weights: Option<WeightMatrix>,
    pub final_loss: f64,
    pub bound: Option<f64>,
    pub stop: StopReason,
    pub warnings: Vec<String>,
}

/// Rows drawn i.i.d. standard Gaussian, then projected onto the sphere
/// of radius `rho`.
pub fn gaussian_sphere_init(n: usize, h: usize, rho: f64, seed: u64) -> Result<PointConfig> {
    require_positive(rho, "sphere radius")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::<f64>::zeros((n, h));
    for v in points.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    sphere_project_rows_in_place(&mut points, rho)?;
    PointConfig::new(points, Constraint::Sphere { radius: rho })
}

/// Gaussian weight rows scaled by `scale`.
pub fn gaussian_weights(k: usize, h: usize, scale: f64, seed: u64) -> Result<WeightMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Array2::<f64>::zeros((k, h));
    for v in rows.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = scale * g;
    }
    WeightMatrix::new(rows)
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Minimizes `L_CE(Z, W) + lambda |W|_F^2` by projected gradient descent
/// with momentum: points are re-projected onto the ball after every step,
/// weights move freely. Logs the regularized objective and its gap to the
/// L2 bound.
pub fn optimize_ce(
    z_init: &PointConfig,
    w_init: &WeightMatrix,
    y: &LabelVector,
    lambda: f64,
    cfg: &OptimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    cfg.check_constraint_matches(z_init)?;
    check_labels_match(z_init, y)?;
    let rho = match z_init.constraint() {
        Constraint::Ball { radius } => radius,
        other => {
            return Err(Error::ConstraintViolation(format!(
                "CE optimization expects a ball-constrained configuration, got {other:?}"
            )))
        }
    };
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be >= 0".into()));
    }

    let mut warnings = Vec::new();
    if !y.is_balanced() {
        warnings.push(format!(
            "labels are not balanced (counts {:?}); the CE bound does not apply",
            y.counts()
        ));
    }
    let bound = if y.is_balanced() && lambda > 0.0 {
        Some(ce_bound_l2(y.k(), rho, lambda)?.value)
    } else {
        None
    };

    let mut points = z_init.points().to_owned();
    let mut weights = w_init.rows().to_owned();
    let mut vel_z = Array2::<f64>::zeros(points.raw_dim());
    let mut vel_w = Array2::<f64>::zeros(weights.raw_dim());
    let mut records = Vec::new();
    let mut stop = StopReason::StepBudgetExhausted;

    let objective = |points: &Array2<f64>, weights: &Array2<f64>| -> Result<f64> {
        let z = PointConfig::new(points.clone(), Constraint::Ball { radius: rho })?;
        let w = WeightMatrix::new(weights.clone())?;
        let frob = w.frobenius_norm();
        Ok(ce_loss(&z, &w, y)?.mean() + lambda * frob * frob)
    };

    for step in 0..cfg.steps {
        let z = PointConfig::new(points.clone(), Constraint::Ball { radius: rho })?;
        let w = WeightMatrix::new(weights.clone())?;
        let (d_z, d_w) = ce_gradients(&z, &w, y, lambda)?;
        let grad_norm = (frobenius(&d_z).powi(2) + frobenius(&d_w).powi(2)).sqrt();

        if step % cfg.log_every == 0 {
            let loss = objective(&points, &weights)?;
            records.push(TrajectoryPoint {
                iter: step,
                loss,
                bound_gap: bound.map(|b| loss - b),
                grad_norm,
            });
        }
        if let Some(tol) = cfg.grad_tol {
            if grad_norm < tol {
                stop = StopReason::GradientBelowTolerance;
                break;
            }
        }

        let lr = cfg.lr_at(step);
        vel_z.mapv_inplace(|v| v * cfg.momentum);
        vel_z += &d_z;
        vel_w.mapv_inplace(|v| v * cfg.momentum);
        vel_w += &d_w;
        points.scaled_add(-lr, &vel_z);
        weights.scaled_add(-lr, &vel_w);
        ball_project_rows_in_place(&mut points, rho);
    }

    let final_loss = objective(&points, &weights)?;
    Ok(Trajectory {
        records,
        final_points: PointConfig::new(points, Constraint::Ball { radius: rho })?,
        final_weights: Some(WeightMatrix::new(weights)?),
        final_loss,
        bound,
        stop,
        warnings,
    })
}

/// Minimizes the mean-per-batch SC loss over all size-`b` batches by
/// full-gradient descent with renormalization to the sphere after every
/// step. Logs the mean batch loss, its gap to the SC bound and the
/// tangential gradient norm.
pub fn optimize_sc_full(
    z_init: &PointConfig,
    y: &LabelVector,
    b: usize,
    cfg: &OptimConfig,
    budget: Option<u128>,
) -> Result<Trajectory> {
    cfg.validate()?;
    cfg.check_constraint_matches(z_init)?;
    check_labels_match(z_init, y)?;
    let rho = z_init.sphere_radius()?;
    let batch_count = multichoose(z_init.n_points() as u64, b as u64)?;
    let budget_cap = budget.unwrap_or(DEFAULT_ENUMERATION_BUDGET);
    if batch_count > budget_cap {
        return Err(Error::BudgetExceeded { batches: batch_count, budget: budget_cap });
    }

    let mut warnings = Vec::new();
    let bound_mean = if y.is_balanced() && b >= 3 {
        Some(sc_bound(y, b, rho)?.mean)
    } else {
        if !y.is_balanced() {
            warnings.push("labels are not balanced; the SC bound does not apply".into());
        }
        None
    };

    let inv_count = 1.0 / batch_count as f64;
    let mut points = z_init.points().to_owned();
    let mut velocity = Array2::<f64>::zeros(points.raw_dim());
    let mut records = Vec::new();
    let mut stop = StopReason::StepBudgetExhausted;

    for step in 0..cfg.steps {
        let z = PointConfig::new(points.clone(), Constraint::Sphere { radius: rho })?;
        let (total, grad) = sc_total_loss_and_grad(&z, y, b, Some(budget_cap))?;
        let mean_grad = grad.mapv(|v| v * inv_count);
        let grad_norm = tangential_grad_norm(&z, mean_grad.view())?;
        let mean_loss = total * inv_count;

        if step % cfg.log_every == 0 {
            records.push(TrajectoryPoint {
                iter: step,
                loss: mean_loss,
                bound_gap: bound_mean.map(|bm| mean_loss - bm),
                grad_norm,
            });
        }
        if let Some(tol) = cfg.grad_tol {
            if grad_norm < tol {
                stop = StopReason::GradientBelowTolerance;
                break;
            }
        }

        let lr = cfg.lr_at(step);
        velocity.mapv_inplace(|v| v * cfg.momentum);
        velocity += &mean_grad;
        points.scaled_add(-lr, &velocity);
        sphere_project_rows_in_place(&mut points, rho)?;
    }

    let final_points = PointConfig::new(points, Constraint::Sphere { radius: rho })?;
    let (final_total, _) = sc_total_loss_and_grad(&final_points, y, b, Some(budget_cap))?;
    Ok(Trajectory {
        records,
        final_points,
        final_weights: None,
        final_loss: final_total * inv_count,
        bound: bound_mean,
        stop,
        warnings,
    })
}

/// Stochastic variant: each step samples `batches_per_step` batches
/// uniformly from the canonical enumeration (rank draws from the seeded
/// stream) and applies their mean gradient. Passing
/// `batches_per_step == multichoose(N, b)` replaces sampling with a full
/// sweep, making one step equal a full-gradient step.
pub fn optimize_sc_sgd(
    z_init: &PointConfig,
    y: &LabelVector,
    b: usize,
    batches_per_step: usize,
    cfg: &OptimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    cfg.check_constraint_matches(z_init)?;
    check_labels_match(z_init, y)?;
    let rho = z_init.sphere_radius()?;
    if batches_per_step == 0 {
        return Err(Error::InvalidArgument("batches_per_step must be >= 1".into()));
    }
    if b < 2 {
        return Err(Error::InvalidArgument("SC loss requires b >= 2".into()));
    }
    let n = z_init.n_points();
    let batch_count = multichoose(n as u64, b as u64)?;
    let full_sweep = batches_per_step as u128 == batch_count;

    let mut warnings = Vec::new();
    let bound_mean = if y.is_balanced() && b >= 3 {
        Some(sc_bound(y, b, rho)?.mean)
    } else {
        if !y.is_balanced() {
            warnings.push("labels are not balanced; the SC bound does not apply".into());
        }
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inv_per_step = 1.0 / batches_per_step as f64;
    let mut points = z_init.points().to_owned();
    let mut velocity = Array2::<f64>::zeros(points.raw_dim());
    let mut grad = Array2::<f64>::zeros(points.raw_dim());
    let mut records = Vec::new();

    for step in 0..cfg.steps {
        let z = PointConfig::new(points.clone(), Constraint::Sphere { radius: rho })?;
        grad.fill(0.0);
        let mut loss_sum = 0.0;
        if full_sweep {
            let (total, g) = sc_total_loss_and_grad(&z, y, b, Some(batch_count))?;
            loss_sum = total;
            grad.assign(&g);
        } else {
            for _ in 0..batches_per_step {
                let rank = rng.random_range(0..batch_count);
                let batch = batch_unrank(n, b, rank)?;
                loss_sum += sc_batch_loss_and_grad_into(&z, y, &batch, &mut grad)?;
            }
        }
        let mean_loss = loss_sum * inv_per_step;
        let mean_grad = grad.mapv(|v| v * inv_per_step);
        let grad_norm = tangential_grad_norm(&z, mean_grad.view())?;

        if step % cfg.log_every == 0 {
            records.push(TrajectoryPoint {
                iter: step,
                loss: mean_loss,
                bound_gap: bound_mean.map(|bm| mean_loss - bm),
                grad_norm,
            });
        }

        let lr = cfg.lr_at(step);
        velocity.mapv_inplace(|v| v * cfg.momentum);
        velocity += &mean_grad;
        points.scaled_add(-lr, &velocity);
        sphere_project_rows_in_place(&mut points, rho)?;
    }

    let final_points = PointConfig::new(points, Constraint::Sphere { radius: rho })?;
    // Sampled estimate at the last logged state; callers wanting the
    // exact value evaluate sc_total_loss on final_points.
    let final_loss = records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    Ok(Trajectory {
        records,
        final_points,
        final_weights: None,
        final_loss,
        bound: bound_mean,
        stop: StopReason::StepBudgetExhausted,
        warnings,
    })
}

/// Final arrangement of a single-batch minimization.
#[derive(Debug, Clone)]
pub struct SingleBatchResult {
    pub points: PointConfig,
    pub labels: LabelVector,
    pub loss: f64,
    pub records: Vec<TrajectoryPoint>,
}

/// Materializes one point per batch slot for the given class
/// multiplicities and minimizes the batch-wise SC loss on the sphere.
pub fn optimize_single_batch(
    multiplicities: &[usize],
    h: usize,
    rho: f64,
    cfg: &OptimConfig,
) -> Result<SingleBatchResult> {
    cfg.validate()?;
    if multiplicities.is_empty() || multiplicities.iter().any(|&m| m == 0) {
        return Err(Error::InvalidArgument(
            "class multiplicities must be nonempty and >= 1".into(),
        ));
    }
    let b: usize = multiplicities.iter().sum();
    if b < 2 {
        return Err(Error::InvalidArgument(format!("batch size b = {b} must be >= 2")));
    }
    let k = multiplicities.len();
    let mut label_seq = Vec::with_capacity(b);
    for (class, &m) in multiplicities.iter().enumerate() {
        label_seq.extend(std::iter::repeat(class).take(m));
    }
    let labels = LabelVector::new(label_seq, k)?;
    let batch = Batch::from_indices(&(0..b).collect::<Vec<_>>())?;

    let mut points = gaussian_sphere_init(b, h, rho, cfg.seed)?.points().to_owned();
    let mut velocity = Array2::<f64>::zeros(points.raw_dim());
    let mut grad = Array2::<f64>::zeros(points.raw_dim());
    let mut records = Vec::new();
    let mut last_loss = f64::NAN;

    for step in 0..cfg.steps {
        let z = PointConfig::new(points.clone(), Constraint::Sphere { radius: rho })?;
        grad.fill(0.0);
        let loss = sc_batch_loss_and_grad_into(&z, &labels, &batch, &mut grad)?;
        let grad_norm = tangential_grad_norm(&z, grad.view())?;
        last_loss = loss;
        if step % cfg.log_every == 0 {
            records.push(TrajectoryPoint { iter: step, loss, bound_gap: None, grad_norm });
        }
        if let Some(tol) = cfg.grad_tol {
            if grad_norm < tol {
                break;
            }
        }
        let lr = cfg.lr_at(step);
        velocity.mapv_inplace(|v| v * cfg.momentum);
        velocity += &grad;
        points.scaled_add(-lr, &velocity);
        sphere_project_rows_in_place(&mut points, rho)?;
    }

    let z = PointConfig::new(points, Constraint::Sphere { radius: rho })?;
    let mut sink = Array2::<f64>::zeros(z.points().raw_dim());
    let final_loss = sc_batch_loss_and_grad_into(&z, &labels, &batch, &mut sink)?;
    let _ = last_loss;
    Ok(SingleBatchResult { points: z, labels, loss: final_loss, records })
}
