//! Evaluation suite: failure rate, k-NN density and coverage against a
//! reference sample, the one-tailed two-proportion z-test, and the
//! trajectory feature embedding used to compare failure distributions.

use statrs::function::erf::erfc;
use thiserror::Error;

use crate::sim::{SimOutcome, HORIZON};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric needs a nonempty input")]
    Empty,
    #[error("feature dimensionality mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("k-NN radius needs more than k={k} reference points, got {n}")]
    TooFewPoints { k: usize, n: usize },
    #[error("sample sizes must be positive")]
    BadCounts,
}

/// A labeled set of fixed-length feature vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetLabel {
    Real,
    Generated,
}

#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub points: Vec<Vec<f64>>,
    pub label: SetLabel,
}

impl FeatureSet {
    pub fn new(points: Vec<Vec<f64>>, label: SetLabel) -> Result<FeatureSet, MetricsError> {
        if let Some(first) = points.first() {
            let d = first.len();
            for p in &points {
                if p.len() != d {
                    return Err(MetricsError::DimMismatch(p.len(), d));
                }
            }
        }
        Ok(FeatureSet { points, label })
    }
}

/// Fraction of outcomes that collided.
pub fn failure_rate(outcomes: &[SimOutcome]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(outcomes.iter().filter(|o| o.collided).count() as f64 / outcomes.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each real point to its k-th nearest *other* real
/// point (equal-distance points count as inside by the `<=` comparisons
/// downstream).
fn knn_sq_radii(real: &[Vec<f64>], k: usize) -> Result<Vec<f64>, MetricsError> {
    let n = real.len();
    if n <= k {
        return Err(MetricsError::TooFewPoints { k, n });
    }
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for (i, p) in real.iter().enumerate() {
        dists.clear();
        for (j, q) in real.iter().enumerate() {
            if i != j {
                dists.push(sq_dist(p, q));
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        radii.push(dists[k - 1]);
    }
    Ok(radii)
}

/// k-NN density: the count of (generated point, real neighborhood)
/// containments, normalized by `k` times the generated count. Unbounded
/// above; equals `(k+1)/k` when the generated set coincides with a tie-free
/// real set.
pub fn density(real: &FeatureSet, fake: &FeatureSet, k: usize) -> Result<f64, MetricsError> {
    check_pair(real, fake)?;
    let radii = knn_sq_radii(&real.points, k)?;
    let m = fake.points.len();
    let mut hits = 0usize;
    for f in &fake.points {
        for (r, rad) in real.points.iter().zip(&radii) {
            if sq_dist(f, r) <= *rad {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (k * m) as f64)
}

/// k-NN coverage: fraction of real points whose k-NN neighborhood contains
/// at least one generated point. Bounded in [0, 1].
pub fn coverage(real: &FeatureSet, fake: &FeatureSet, k: usize) -> Result<f64, MetricsError> {
    check_pair(real, fake)?;
    let radii = knn_sq_radii(&real.points, k)?;
    let mut covered = 0usize;
    for (r, rad) in real.points.iter().zip(&radii) {
        if fake.points.iter().any(|f| sq_dist(f, r) <= *rad) {
            covered += 1;
        }
    }
    Ok(covered as f64 / real.points.len() as f64)
}

fn check_pair(real: &FeatureSet, fake: &FeatureSet) -> Result<(), MetricsError> {
    if real.points.is_empty() || fake.points.is_empty() {
        return Err(MetricsError::Empty);
    }
    let dr = real.points[0].len();
    let df = fake.points[0].len();
    if dr != df {
        return Err(MetricsError::DimMismatch(dr, df));
    }
    Ok(())
}

/// Result of the one-tailed two-proportion z-test for `p1 > p2`.
#[derive(Debug, Clone, Copy)]
pub struct ZTest {
    pub z: f64,
    /// Upper-tail p-value `P(Z >= z)`.
    pub p_one_tailed: f64,
    /// Set when the pooled variance is zero (degenerate identical rates).
    pub degenerate: bool,
}

/// Pooled two-proportion z statistic for `H1: p1 > p2`, with the one-tailed
/// normal p-value.
pub fn two_proportion_z(
    successes1: u64,
    n1: u64,
    successes2: u64,
    n2: u64,
) -> Result<ZTest, MetricsError> {
    if n1 == 0 || n2 == 0 {
        return Err(MetricsError::BadCounts);
    }
    let p1 = successes1 as f64 / n1 as f64;
    let p2 = successes2 as f64 / n2 as f64;
    let pooled = (successes1 + successes2) as f64 / (n1 + n2) as f64;
    let var = pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64);
    if var <= 0.0 {
        return Ok(ZTest {
            z: 0.0,
            p_one_tailed: 0.5,
            degenerate: true,
        });
    }
    let z = (p1 - p2) / var.sqrt();
    Ok(ZTest {
        z,
        p_one_tailed: normal_sf(z),
        degenerate: false,
    })
}

/// Standard normal survival function `P(Z >= z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Feature embedding of an outcome: per-step intruder state relative to the
/// ego (position and velocity), flattened over the 23 post-initial steps.
pub fn trajectory_features(outcome: &SimOutcome) -> Result<Vec<f64>, MetricsError> {
    if outcome.trajectory.len() != HORIZON + 1 {
        return Err(MetricsError::DimMismatch(
            outcome.trajectory.len(),
            HORIZON + 1,
        ));
    }
    let mut out = Vec::with_capacity(HORIZON * 4);
    for snap in &outcome.trajectory[1..] {
        out.push(snap.intruder.x - snap.ego.x);
        out.push(snap.intruder.y - snap.ego.y);
        out.push(snap.intruder.vx - snap.ego.vx);
        out.push(snap.intruder.vy - snap.ego.vy);
    }
    Ok(out)
}

/// Per-dimension mean and standard deviation of a point set, with zero
/// deviations replaced by one.
pub fn standardizer(points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let n = points.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut sd = vec![0.0; d];
    for p in points {
        for (s, (v, m)) in sd.iter_mut().zip(p.iter().zip(&mean)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in sd.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    Ok((mean, sd))
}

pub fn standardize(points: &mut [Vec<f64>], mean: &[f64], sd: &[f64]) {
    for p in points.iter_mut() {
        for (v, (m, s)) in p.iter_mut().zip(mean.iter().zip(sd)) {
            *v = (*v - m) / s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::sim::{Branch, Snapshot, VehicleState};
    use rand::Rng;

    fn fs(points: Vec<Vec<f64>>, label: SetLabel) -> FeatureSet {
        FeatureSet::new(points, label).unwrap()
    }

    fn random_points(n: usize, d: usize, tag: &str) -> Vec<Vec<f64>> {
        let mut rng = stream(71, tag, 0);
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Brute-force double-loop oracle, written independently of the library
    /// path (re-sorts per containment query, no radius reuse).
    fn brute_density_coverage(real: &[Vec<f64>], fake: &[Vec<f64>], k: usize) -> (f64, f64) {
        let radius = |i: usize| -> f64 {
            let mut ds: Vec<f64> = (0..real.len())
                .filter(|j| *j != i)
                .map(|j| {
                    real[i]
                        .iter()
                        .zip(&real[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ds[k - 1]
        };
        let mut dens = 0usize;
        for f in fake {
            for i in 0..real.len() {
                let d2: f64 = f
                    .iter()
                    .zip(&real[i])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d2 <= radius(i) {
                    dens += 1;
                }
            }
        }
        let mut cov = 0usize;
        for i in 0..real.len() {
            let r = radius(i);
            if fake.iter().any(|f| {
                let d2: f64 = f
                    .iter()
                    .zip(&real[i])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2 <= r
            }) {
                cov += 1;
            }
        }
        (
            dens as f64 / (k * fake.len()) as f64,
            cov as f64 / real.len() as f64,
        )
    }

    #[test]
    fn identical_sets_give_k_plus_one_over_k_and_full_coverage() {
        let pts = random_points(60, 5, "ident");
        let real = fs(pts.clone(), SetLabel::Real);
        let fake = fs(pts, SetLabel::Generated);
        let k = 5;
        let d = density(&real, &fake, k).unwrap();
        assert!((d - (k as f64 + 1.0) / k as f64).abs() < 1e-12, "{d}");
        assert_eq!(coverage(&real, &fake, k).unwrap(), 1.0);
    }

    #[test]
    fn displaced_fake_set_scores_zero() {
        let pts = random_points(40, 4, "disp");
        let far: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| p.iter().map(|v| v + 100.0).collect())
            .collect();
        let real = fs(pts, SetLabel::Real);
        let fake = fs(far, SetLabel::Generated);
        assert_eq!(density(&real, &fake, 5).unwrap(), 0.0);
        assert_eq!(coverage(&real, &fake, 5).unwrap(), 0.0);
    }

    #[test]
    fn matches_brute_force_exactly_on_random_sets() {
        for case in 0..10 {
            let real_pts = random_points(100, 6, &format!("r{case}"));
            let fake_pts = random_points(100, 6, &format!("f{case}"));
            let k = 5;
            let (bd, bc) = brute_density_coverage(&real_pts, &fake_pts, k);
            let real = fs(real_pts, SetLabel::Real);
            let fake = fs(fake_pts, SetLabel::Generated);
            assert_eq!(density(&real, &fake, k).unwrap(), bd);
            assert_eq!(coverage(&real, &fake, k).unwrap(), bc);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut real_pts = random_points(50, 3, "perm-r");
        let mut fake_pts = random_points(50, 3, "perm-f");
        let real = fs(real_pts.clone(), SetLabel::Real);
        let fake = fs(fake_pts.clone(), SetLabel::Generated);
        let d0 = density(&real, &fake, 4).unwrap();
        let c0 = coverage(&real, &fake, 4).unwrap();
        real_pts.reverse();
        fake_pts.rotate_left(17);
        let real = fs(real_pts, SetLabel::Real);
        let fake = fs(fake_pts, SetLabel::Generated);
        assert_eq!(density(&real, &fake, 4).unwrap(), d0);
        assert_eq!(coverage(&real, &fake, 4).unwrap(), c0);
    }

    #[test]
    fn too_few_reference_points_rejected() {
        let real = fs(random_points(5, 2, "few"), SetLabel::Real);
        let fake = fs(random_points(5, 2, "few-f"), SetLabel::Generated);
        assert!(density(&real, &fake, 5).is_err());
    }

    #[test]
    fn equal_proportions_give_z_zero() {
        let t = two_proportion_z(10, 100, 10, 100).unwrap();
        assert_eq!(t.z, 0.0);
        assert!((t.p_one_tailed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn z_antisymmetry_under_group_swap() {
        let a = two_proportion_z(29, 130_000, 11, 130_000).unwrap();
        let b = two_proportion_z(11, 130_000, 29, 130_000).unwrap();
        assert!((a.z + b.z).abs() < 1e-12);
    }

    #[test]
    fn published_planner_counts_reproduce_p_002() {
        // failure rates 2.231e-4 vs 0.846e-4 at n = 130,000 each
        let s1 = (2.231e-4 * 130_000.0_f64).round() as u64; // 29
        let s2 = (0.846e-4 * 130_000.0_f64).round() as u64; // 11
        assert_eq!((s1, s2), (29, 11));
        let t = two_proportion_z(s1, 130_000, s2, 130_000).unwrap();
        assert!(
            (t.p_one_tailed - 0.002).abs() <= 0.001,
            "p = {}",
            t.p_one_tailed
        );
    }

    #[test]
    fn textbook_case_matches_quadrature_oracle() {
        // independent normal-CDF evaluation: Simpson quadrature of the
        // standard normal density over [0, z]
        let t = two_proportion_z(45, 300, 30, 300).unwrap();
        let z = t.z;
        let n = 20_001;
        let h = z / (n - 1) as f64;
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut integral = phi(0.0) + phi(z);
        for i in 1..n - 1 {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += w * phi(i as f64 * h);
        }
        integral *= h / 3.0;
        let oracle_p = 0.5 - integral;
        assert!(
            (t.p_one_tailed - oracle_p).abs() < 1e-10,
            "{} vs {oracle_p}",
            t.p_one_tailed
        );
    }

    #[test]
    fn zero_variance_flagged() {
        let t = two_proportion_z(0, 50, 0, 80).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.p_one_tailed, 0.5);
    }

    fn outcome_with_offset(dx: f64) -> SimOutcome {
        let traj: Vec<Snapshot> = (0..HORIZON + 1)
            .map(|t| Snapshot {
                ego: VehicleState {
                    x: 0.1 * t as f64,
                    y: 0.0,
                    vx: 0.1,
                    vy: 0.0,
                    route_progress: 0.0,
                },
                intruder: VehicleState {
                    x: 0.1 * t as f64 + dx,
                    y: 0.5,
                    vx: 0.1,
                    vy: 0.0,
                    route_progress: 0.0,
                },
            })
            .collect();
        SimOutcome::from_trajectory(Branch::East, traj, 0.04)
    }

    #[test]
    fn identical_vehicles_give_zero_features() {
        let o = outcome_with_offset(0.0);
        let mut o2 = o.clone();
        for s in o2.trajectory.iter_mut() {
            s.intruder = s.ego;
        }
        let f = trajectory_features(&o2).unwrap();
        assert_eq!(f.len(), HORIZON * 4);
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn standardized_set_has_zero_mean_unit_variance() {
        let pts = random_points(200, 8, "std");
        let (mean, sd) = standardizer(&pts).unwrap();
        let mut std_pts = pts;
        standardize(&mut std_pts, &mean, &sd);
        let (m2, s2) = standardizer(&std_pts).unwrap();
        for v in m2 {
            assert!(v.abs() < 1e-12);
        }
        for v in s2 {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn features_stable_across_replays() {
        let o = outcome_with_offset(0.3);
        assert_eq!(
            trajectory_features(&o).unwrap(),
            trajectory_features(&o).unwrap()
        );
    }
}
