//! Number of statistically Different Bins: k-means bins fit on the training
//! samples, both sample sets assigned to the nearest centroid, and a
//! two-sample proportion z-test per bin. The score is the fraction of bins
//! whose occupancy differs significantly.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::matrix::{CoreError, DenseMatrix, Result};
use crate::rng::{stream, SeededRng};
use crate::stats::two_sided_z_critical;

const KMEANS_MAX_ITER: usize = 100;

/// Squared Euclidean distance between a sample row and a centroid row.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y) * (x - y);
    }
    acc
}

/// Nearest centroid index; ties go to the lower bin index.
fn nearest(centroids: &DenseMatrix, row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = dist2(row, centroids.row(0));
    for c in 1..centroids.rows() {
        let d = dist2(row, centroids.row(c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding, capped at 100 iterations.
/// A cluster that empties keeps its previous centroid.
pub fn kmeans(
    data: &DenseMatrix,
    k: usize,
    rng: &mut SeededRng,
) -> Result<(DenseMatrix, Vec<usize>)> {
    let n = data.rows();
    if k == 0 || k > n {
        return Err(CoreError::Parameter(alloc::format!(
            "kmeans k = {k} with {n} samples"
        )));
    }
    let d = data.cols();
    let mut centroids = DenseMatrix::zeros(k, d);

    // k-means++ init.
    let first = rng.next_below(n);
    centroids.row_mut(0).copy_from_slice(data.row(first));
    let mut min_d2: Vec<f64> = (0..n).map(|i| dist2(data.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.next_below(n)
        } else {
            let mut target = rng.next_f64() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.row_mut(c).copy_from_slice(data.row(pick));
        for i in 0..n {
            let nd = dist2(data.row(i), centroids.row(c));
            if nd < min_d2[i] {
                min_d2[i] = nd;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let a = nearest(&centroids, data.row(i));
            if a != assignments[i] {
                assignments[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignments[i]] += 1;
            for (s, &v) in sums.row_mut(assignments[i]).iter_mut().zip(data.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let srow: Vec<f64> = sums.row(c).iter().map(|&v| v * inv).collect();
                centroids.row_mut(c).copy_from_slice(&srow);
            }
        }
    }
    // Assignments against the final centroids.
    for i in 0..n {
        assignments[i] = nearest(&centroids, data.row(i));
    }
    Ok((centroids, assignments))
}

/// Per-bin occupancy comparison.
#[derive(Clone, Debug)]
pub struct NdbBin {
    pub train_count: usize,
    pub generated_count: usize,
    pub train_proportion: f64,
    pub generated_proportion: f64,
    pub z: f64,
    pub significant: bool,
    /// True when the bin holds no training samples and is excluded from the
    /// score denominator.
    pub excluded: bool,
}

#[derive(Clone, Debug)]
pub struct NdbReport {
    pub bins: Vec<NdbBin>,
    /// Fraction of non-excluded bins that test significantly different.
    pub ndb: f64,
    pub significant_bins: usize,
    pub excluded_bins: usize,
    pub z_critical: f64,
}

/// Two-sample two-sided proportion z statistic with pooled variance; 0 when
/// the pooled proportion is degenerate (0 or 1).
pub fn proportion_z(count1: usize, n1: usize, count2: usize, n2: usize) -> f64 {
    let p1 = count1 as f64 / n1 as f64;
    let p2 = count2 as f64 / n2 as f64;
    let pooled = (count1 + count2) as f64 / (n1 + n2) as f64;
    let var = pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64);
    if var <= 0.0 {
        0.0
    } else {
        (p1 - p2) / crate::math::sqrt(var)
    }
}

/// NDB between a training sample set and a generated set. Bins come from
/// seeded k-means on the training samples (substream `[NDB]` of `seed`);
/// a bin is significant iff `|z|` exceeds the two-sided critical value at
/// `significance`.
pub fn ndb_score(
    train_samples: &DenseMatrix,
    generated_samples: &DenseMatrix,
    bins: usize,
    significance: f64,
    seed: u64,
) -> Result<NdbReport> {
    if train_samples.rows() == 0 || generated_samples.rows() == 0 {
        return Err(CoreError::Data(String::from("ndb needs non-empty sample sets")));
    }
    if bins > train_samples.rows() {
        return Err(CoreError::Parameter(alloc::format!(
            "{bins} bins exceed {} training samples",
            train_samples.rows()
        )));
    }
    if !(0.0..1.0).contains(&significance) || significance <= 0.0 {
        return Err(CoreError::Parameter(alloc::format!(
            "significance {significance} outside (0, 1)"
        )));
    }
    if train_samples.cols() != generated_samples.cols() {
        return Err(CoreError::Shape(alloc::format!(
            "train dim {} vs generated dim {}",
            train_samples.cols(),
            generated_samples.cols()
        )));
    }

    let mut rng = SeededRng::substream(seed, &[stream::NDB]);
    let (centroids, train_assign) = kmeans(train_samples, bins, &mut rng)?;
    let n_train = train_samples.rows();
    let n_gen = generated_samples.rows();

    let mut train_counts = vec![0usize; bins];
    for &a in &train_assign {
        train_counts[a] += 1;
    }
    let mut gen_counts = vec![0usize; bins];
    for i in 0..n_gen {
        gen_counts[nearest(&centroids, generated_samples.row(i))] += 1;
    }

    let z_critical = two_sided_z_critical(significance);
    let mut report_bins = Vec::with_capacity(bins);
    let mut significant = 0usize;
    let mut excluded = 0usize;
    for b in 0..bins {
        let excl = train_counts[b] == 0;
        let z = if excl {
            0.0
        } else {
            proportion_z(train_counts[b], n_train, gen_counts[b], n_gen)
        };
        let sig = !excl && crate::math::abs(z) > z_critical;
        if excl {
            excluded += 1;
        }
        if sig {
            significant += 1;
        }
        report_bins.push(NdbBin {
            train_count: train_counts[b],
            generated_count: gen_counts[b],
            train_proportion: train_counts[b] as f64 / n_train as f64,
            generated_proportion: gen_counts[b] as f64 / n_gen as f64,
            z,
            significant: sig,
            excluded: excl,
        });
    }
    let effective = bins - excluded;
    Ok(NdbReport {
        bins: report_bins,
        ndb: if effective == 0 {
            0.0
        } else {
            significant as f64 / effective as f64
        },
        significant_bins: significant,
        excluded_bins: excluded,
        z_critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RingMixture;

    #[test]
    fn z_statistic_equal_counts_is_zero() {
        assert_eq!(proportion_z(50, 1000, 50, 1000), 0.0);
    }

    #[test]
    fn z_statistic_known_value() {
        // p1 = 0.2, p2 = 0.1, n = 100 each: pooled 0.15,
        // z = 0.1 / sqrt(0.15 * 0.85 * 0.02) = 1.9802...
        let z = proportion_z(20, 100, 10, 100);
        assert!((z - 1.980295).abs() < 1e-5, "z = {z}");
    }

    #[test]
    fn identical_resample_scores_near_significance_level() {
        // Generated set drawn i.i.d. from the same mixture: the expected
        // fraction of significant bins sits near the significance level.
        let ring = RingMixture::new(8, 2.0, 0.3).unwrap();
        let mut rng = SeededRng::new(1);
        let train = ring.sample(2000, &mut rng);
        let gen = ring.sample(2000, &mut rng);
        let report = ndb_score(&train, &gen, 20, 0.05, 7).unwrap();
        assert!(report.ndb <= 0.15, "null ndb = {}", report.ndb);
    }

    #[test]
    fn single_mode_collapse_scores_high() {
        let ring = RingMixture::new(8, 2.0, 0.1).unwrap();
        let mut rng = SeededRng::new(2);
        let train = ring.sample(2000, &mut rng);
        // All generated mass in one mode.
        let collapsed = RingMixture::new(1, 2.0, 0.1).unwrap();
        let gen = collapsed.sample(2000, &mut rng);
        let report = ndb_score(&train, &gen, 20, 0.05, 7).unwrap();
        assert!(report.ndb >= 0.8, "collapsed ndb = {}", report.ndb);
    }

    #[test]
    fn proportions_sum_to_one() {
        let ring = RingMixture::new(4, 1.0, 0.2).unwrap();
        let mut rng = SeededRng::new(3);
        let train = ring.sample(500, &mut rng);
        let gen = ring.sample(400, &mut rng);
        let report = ndb_score(&train, &gen, 10, 0.05, 11).unwrap();
        let ts: f64 = report.bins.iter().map(|b| b.train_proportion).sum();
        let gs: f64 = report.bins.iter().map(|b| b.generated_proportion).sum();
        assert!((ts - 1.0).abs() < 1e-10);
        assert!((gs - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ndb_deterministic_for_fixed_seed() {
        let ring = RingMixture::new(8, 2.0, 0.2).unwrap();
        let mut rng = SeededRng::new(4);
        let train = ring.sample(600, &mut rng);
        let gen = ring.sample(600, &mut rng);
        let a = ndb_score(&train, &gen, 15, 0.05, 21).unwrap();
        let b = ndb_score(&train, &gen, 15, 0.05, 21).unwrap();
        assert_eq!(a.ndb, b.ndb);
        for (x, y) in a.bins.iter().zip(&b.bins) {
            assert_eq!(x.z, y.z);
        }
    }

    #[test]
    fn kmeans_recovers_separated_clusters() {
        let ring = RingMixture::new(4, 5.0, 0.05).unwrap();
        let mut rng = SeededRng::new(5);
        let data = ring.sample(400, &mut rng);
        let (centroids, assignments) = kmeans(&data, 4, &mut rng).unwrap();
        // Each centroid should sit near one ring mode.
        for c in 0..4 {
            let m = ring.nearest_mode(centroids.get(c, 0), centroids.get(c, 1));
            let (mx, my) = ring.center(m);
            let d = dist2(centroids.row(c), &[mx, my]);
            assert!(d < 0.1, "centroid {c} off-mode by {d}");
        }
        // Assignments consistent with nearest centroid.
        for i in 0..400 {
            assert_eq!(assignments[i], nearest(&centroids, data.row(i)));
        }
    }

    #[test]
    fn k_larger_than_train_rejected() {
        let data = DenseMatrix::zeros(5, 2);
        let gen = DenseMatrix::zeros(5, 2);
        assert!(matches!(
            ndb_score(&data, &gen, 6, 0.05, 1),
            Err(CoreError::Parameter(_))
        ));
    }
}
