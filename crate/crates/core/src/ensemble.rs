//! Probability-weighted mixtures of Bell-diagonal states with k-means capping.

use crate::bell::BellDiagonal;

/// Default maximum number of member states.
pub const DEFAULT_CAP: usize = 100;

/// Lloyd iterations used when compressing an ensemble.
pub const KMEANS_ITERATIONS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    members: Vec<(f64, BellDiagonal)>,
    cap: usize,
}

impl WeightedEnsemble {
    pub fn new(cap: usize) -> Self {
        assert!(cap >= 1, "ensemble cap must be positive");
        Self {
            members: Vec::new(),
            cap,
        }
    }

    pub fn single(state: BellDiagonal, cap: usize) -> Self {
        let mut e = Self::new(cap);
        e.push(1.0, state);
        e
    }

    /// Adds a member; zero-weight members are dropped.
    pub fn push(&mut self, weight: f64, state: BellDiagonal) {
        debug_assert!(weight >= 0.0);
        if weight > 0.0 {
            self.members.push((weight, state));
        }
    }

    pub fn members(&self) -> &[(f64, BellDiagonal)] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|(w, _)| w).sum()
    }

    /// Weighted mean state, normalized by the total weight.
    pub fn mean(&self) -> BellDiagonal {
        let total = self.total_weight();
        let mut acc = [0.0; 4];
        for (w, s) in &self.members {
            for (a, x) in acc.iter_mut().zip(s.coeffs()) {
                *a += w * x;
            }
        }
        BellDiagonal::from_unnormalized(acc.map(|x| x / total))
            .expect("ensemble has positive weight")
    }

    /// Applies `f` to every member state.
    pub fn map_states(&self, mut f: impl FnMut(&BellDiagonal) -> BellDiagonal) -> Self {
        Self {
            members: self.members.iter().map(|(w, s)| (*w, f(s))).collect(),
            cap: self.cap,
        }
    }

    /// Pairs every member of `self` with every member of `other`, combines
    /// the states with `combine`, and compresses back to the cap.
    pub fn product(
        &self,
        other: &WeightedEnsemble,
        mut combine: impl FnMut(&BellDiagonal, &BellDiagonal) -> BellDiagonal,
    ) -> Self {
        let mut out = Self::new(self.cap);
        out.members.reserve(self.len() * other.len());
        for (wl, sl) in &self.members {
            for (wr, sr) in &other.members {
                out.push(wl * wr, combine(sl, sr));
            }
        }
        out.compress();
        out
    }

    /// Reduces the member count to at most the cap with weighted k-means in
    /// coefficient space. Total weight and the weighted mean are preserved.
    pub fn compress(&mut self) {
        if self.members.len() <= self.cap {
            return;
        }
        let points: Vec<[f64; 4]> = self.members.iter().map(|(_, s)| s.coeffs()).collect();
        let weights: Vec<f64> = self.members.iter().map(|(w, _)| *w).collect();
        let clusters = weighted_kmeans(&points, &weights, self.cap, KMEANS_ITERATIONS);
        self.members = clusters
            .into_iter()
            .map(|(w, c)| {
                let state =
                    BellDiagonal::from_unnormalized(c).expect("centroid of probability vectors");
                (w, state)
            })
            .collect();
    }
}

fn dist2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let mut d = 0.0;
    for i in 0..4 {
        let t = a[i] - b[i];
        d += t * t;
    }
    d
}

/// Weighted Lloyd k-means with deterministic farthest-point seeding.
///
/// Seeding starts from the heaviest point (lowest index on ties) and adds the
/// point farthest from all current centers until `k` centers exist or every
/// point coincides with a center. Returns `(cluster weight, weighted
/// centroid)` for the non-empty clusters.
pub fn weighted_kmeans(
    points: &[[f64; 4]],
    weights: &[f64],
    k: usize,
    iterations: usize,
) -> Vec<(f64, [f64; 4])> {
    assert_eq!(points.len(), weights.len());
    assert!(k >= 1 && !points.is_empty());

    let first = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, &w)| if w > weights[best] { i } else { best });
    let mut centers = vec![points[first]];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centers.len() < k {
        let (far, &d) = nearest
            .iter()
            .enumerate()
            .fold((0, &nearest[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
        if d <= 0.0 {
            break;
        }
        let c = points[far];
        centers.push(c);
        for (slot, p) in nearest.iter_mut().zip(points) {
            *slot = slot.min(dist2(p, &c));
        }
    }

    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let (sums, mass) = accumulate(points, weights, &assignment, centers.len());
        for (j, c) in centers.iter_mut().enumerate() {
            if mass[j] > 0.0 {
                *c = sums[j].map(|x| x / mass[j]);
            }
        }
    }

    let (sums, mass) = accumulate(points, weights, &assignment, centers.len());
    sums.into_iter()
        .zip(mass)
        .filter(|(_, m)| *m > 0.0)
        .map(|(s, m)| (m, s.map(|x| x / m)))
        .collect()
}

fn accumulate(
    points: &[[f64; 4]],
    weights: &[f64],
    assignment: &[usize],
    k: usize,
) -> (Vec<[f64; 4]>, Vec<f64>) {
    let mut sums = vec![[0.0; 4]; k];
    let mut mass = vec![0.0; k];
    for ((p, &w), &j) in points.iter().zip(weights).zip(assignment) {
        mass[j] += w;
        for i in 0..4 {
            sums[j][i] += w * p[i];
        }
    }
    (sums, mass)
}
