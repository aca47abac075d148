//! Central finite-difference validation of the analytic gradients, using
//! an independent naive transcription of the SC loss as the function
//! being differenced.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use simplexlab_core::*;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-5;

fn gaussian_matrix(n: usize, h: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((n, h));
    for v in m.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    m
}

fn assert_close(analytic: f64, fd: f64, what: &str) {
    let scale = analytic.abs().max(fd.abs()).max(1e-4);
    assert!(
        (analytic - fd).abs() <= REL_TOL * scale,
        "{what}: analytic {analytic} vs fd {fd}"
    );
}

#[test]
fn ce_gradients_match_central_differences_on_50_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    for case in 0..50 {
        let n = rng.random_range(2..=5usize);
        let h = rng.random_range(2..=4usize);
        let k = rng.random_range(2..=4usize);
        let lambda = if case % 3 == 0 { 0.0 } else { rng.random_range(0.0..0.2) };
        let pts = gaussian_matrix(n, h, &mut rng);
        let w_rows = gaussian_matrix(k, h, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let y = LabelVector::new(labels, k).unwrap();

        let z = PointConfig::free(pts.clone()).unwrap();
        let w = WeightMatrix::new(w_rows.clone()).unwrap();
        let (d_z, d_w) = ce_gradients(&z, &w, &y, lambda).unwrap();

        let objective = |pts: &Array2<f64>, w_rows: &Array2<f64>| -> f64 {
            let z = PointConfig::free(pts.clone()).unwrap();
            let w = WeightMatrix::new(w_rows.clone()).unwrap();
            let frob = w.frobenius_norm();
            ce_loss(&z, &w, &y).unwrap().mean() + lambda * frob * frob
        };

        for r in 0..n {
            for c in 0..h {
                let mut hi = pts.clone();
                hi[[r, c]] += FD_STEP;
                let mut lo = pts.clone();
                lo[[r, c]] -= FD_STEP;
                let fd = (objective(&hi, &w_rows) - objective(&lo, &w_rows)) / (2.0 * FD_STEP);
                assert_close(d_z[[r, c]], fd, &format!("case {case} dZ[{r},{c}]"));
            }
        }
        for r in 0..k {
            for c in 0..h {
                let mut hi = w_rows.clone();
                hi[[r, c]] += FD_STEP;
                let mut lo = w_rows.clone();
                lo[[r, c]] -= FD_STEP;
                let fd = (objective(&pts, &hi) - objective(&pts, &lo)) / (2.0 * FD_STEP);
                assert_close(d_w[[r, c]], fd, &format!("case {case} dW[{r},{c}]"));
            }
        }
    }
}

/// Literal transcription of the batch-wise loss on expanded slot lists,
/// summed over the full enumeration. Independent of the production path.
fn naive_sc_total(points: &Array2<f64>, y: &LabelVector, b: usize) -> f64 {
    let n = points.nrows();
    let dot = |i: usize, j: usize| points.row(i).dot(&points.row(j));
    let mut total = 0.0;
    for batch in enumerate_batches(n, b).unwrap() {
        let slots = batch.slots();
        for (pos, &i) in slots.iter().enumerate() {
            let same: Vec<usize> =
                slots.iter().copied().filter(|&j| y.label(j) == y.label(i)).collect();
            if same.len() <= 1 {
                continue;
            }
            let mut others = slots.clone();
            others.remove(pos);
            let den: f64 = others.iter().map(|&c| dot(i, c).exp()).sum();
            let mut positives = same.clone();
            let self_pos = positives.iter().position(|&j| j == i).unwrap();
            positives.remove(self_pos);
            let inner: f64 = positives.iter().map(|&j| (dot(i, j).exp() / den).ln()).sum();
            total += -inner / (same.len() as f64 - 1.0);
        }
    }
    total
}

#[test]
fn sc_gradient_matches_central_differences_of_naive_loss_on_50_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(802);
    for case in 0..50 {
        let k = rng.random_range(2..=3usize);
        let n = rng.random_range(k.max(3)..=5usize);
        let h = rng.random_range(2..=3usize);
        let b = rng.random_range(2..=4usize);
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let y = LabelVector::new(labels, k).unwrap();
        let z = project_to_sphere(&PointConfig::free(gaussian_matrix(n, h, &mut rng)).unwrap(), 1.0)
            .unwrap();
        let base = z.points().to_owned();

        let grad = sc_gradient_total(&z, &y, b, None).unwrap();
        for r in 0..n {
            for c in 0..h {
                let mut hi = base.clone();
                hi[[r, c]] += FD_STEP;
                let mut lo = base.clone();
                lo[[r, c]] -= FD_STEP;
                let fd =
                    (naive_sc_total(&hi, &y, b) - naive_sc_total(&lo, &y, b)) / (2.0 * FD_STEP);
                assert_close(grad[[r, c]], fd, &format!("case {case} dZ[{r},{c}]"));
            }
        }
    }
}
