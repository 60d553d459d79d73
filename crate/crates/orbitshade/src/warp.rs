//! Monotone time-warp matching with a bottleneck (sup-distance) objective.
//!
//! `warp_distance` runs a dynamic program over monotone lattice matchings
//! of two sampled paths, where a step advances the reference, the
//! candidate, or both. The objective is the maximum pointwise distance
//! over matched pairs, minimized over matchings; both ends are anchored.
//! A slope constraint keeps the matching inside the discrete band
//! `|i - j| <= eps * max(i, j) + 1`, the lattice version of difference
//! quotients within `eps` of one.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarpConstraint {
    None,
    /// Local advance-ratio band: admissible cells satisfy
    /// `|i - j| <= eps * max(i, j) + 1`.
    Slope(f64),
}

impl WarpConstraint {
    fn admits(&self, i: usize, j: usize) -> bool {
        match self {
            WarpConstraint::None => true,
            WarpConstraint::Slope(eps) => {
                let d = i.abs_diff(j) as f64;
                d <= eps * i.max(j) as f64 + 1.0
            }
        }
    }
}

/// Piecewise-linear increasing reparametrization `h` with `h(0) = 0`,
/// stored as strictly increasing knots `(t, h(t))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reparametrization {
    pub knots: Vec<(f64, f64)>,
}

impl Reparametrization {
    pub fn identity(span: f64) -> Self {
        Reparametrization { knots: vec![(0.0, 0.0), (span.max(f64::MIN_POSITIVE), span)] }
    }

    /// Check the knot invariants; with `slope` given, also check every
    /// segment slope against `[1 - eps, 1 + eps]`.
    pub fn validate(&self, slope: Option<f64>) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::Precondition("reparametrization needs >= 2 knots".into()));
        }
        let (t0, h0) = self.knots[0];
        if t0 != 0.0 || h0 != 0.0 {
            return Err(Error::Precondition("first knot must be (0, 0)".into()));
        }
        for w in self.knots.windows(2) {
            let ((ta, ha), (tb, hb)) = (w[0], w[1]);
            if !(tb > ta) || !(hb > ha) {
                return Err(Error::Precondition(format!(
                    "knots not strictly increasing: ({}, {}) then ({}, {})",
                    ta, ha, tb, hb
                )));
            }
            if let Some(eps) = slope {
                let s = (hb - ha) / (tb - ta);
                if (s - 1.0).abs() > eps + 1e-12 {
                    return Err(Error::Precondition(format!(
                        "segment slope {} outside [1 - {eps}, 1 + {eps}]",
                        s
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluate `h(t)`; clamps t outside the knot span to the end values.
    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        if t >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let mut lo = 0;
        let mut hi = k.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if k[mid].0 <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (ta, ha) = k[lo];
        let (tb, hb) = k[hi];
        ha + (hb - ha) * (t - ta) / (tb - ta)
    }

    /// Swap the two time axes (the inverse homeomorphism).
    pub fn invert(&self) -> Self {
        Reparametrization { knots: self.knots.iter().map(|&(t, h)| (h, t)).collect() }
    }

    /// Project every segment slope into `[1 - eps, 1 + eps]`, rebuilding
    /// the h values cumulatively.
    pub fn clamp_slopes(&self, eps: f64) -> Self {
        let mut knots = Vec::with_capacity(self.knots.len());
        knots.push(self.knots[0]);
        for w in self.knots.windows(2) {
            let ((ta, _), (tb, hb)) = (w[0], w[1]);
            let (_, ha_new) = *knots.last().unwrap();
            let s = ((hb - w[0].1) / (tb - ta)).clamp(1.0 - eps, 1.0 + eps);
            knots.push((tb, ha_new + s * (tb - ta)));
        }
        Reparametrization { knots }
    }

    /// `sup_t |h(t) - t|` over the knot span (attained at a knot for a
    /// piecewise-linear h).
    pub fn sup_deviation_from_identity(&self) -> f64 {
        self.knots.iter().map(|&(t, h)| (h - t).abs()).fold(0.0, f64::max)
    }

    pub fn span(&self) -> f64 {
        self.knots.last().unwrap().0
    }
}

/// Core banded bottleneck DP. `cost(i, j)` is the pointwise distance of
/// reference sample i and candidate sample j. Returns `None` when no
/// admissible matching exists. With `want_path` the optimal matching is
/// reconstructed (deterministic tie-break: both-advance, then reference,
/// then candidate).
pub(crate) fn bottleneck_dp(
    n: usize,
    m: usize,
    cost: &dyn Fn(usize, usize) -> f64,
    constraint: WarpConstraint,
    band: Option<usize>,
    want_path: bool,
) -> Option<(f64, Vec<(usize, usize)>)> {
    if n == 0 || m == 0 {
        return None;
    }
    let window = |i: usize| -> (usize, usize) {
        match band {
            None => (0, m - 1),
            Some(w) => {
                let center = if n <= 1 {
                    (m - 1) as f64
                } else {
                    i as f64 * (m - 1) as f64 / (n - 1) as f64
                };
                let lo = (center - w as f64).max(0.0) as usize;
                let hi = ((center + w as f64) as usize).min(m - 1);
                (lo, hi)
            }
        }
    };
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    // banded backpointers: 0 = diag, 1 = from (i-1, j), 2 = from (i, j-1)
    let mut bp: Vec<u8> = Vec::new();
    let mut lows: Vec<usize> = Vec::new();
    let mut width = 0usize;
    if want_path {
        width = match band {
            Some(w) => 2 * w + 2,
            None => m,
        };
        bp = vec![255; n * width];
        lows = vec![0; n];
    }
    for i in 0..n {
        let (lo, hi) = window(i);
        if want_path {
            lows[i] = lo;
        }
        for v in cur[lo..=hi].iter_mut() {
            *v = f64::INFINITY;
        }
        // clear any cells outside the new window that the previous row set
        for j in lo..=hi {
            if !constraint.admits(i, j) {
                cur[j] = f64::INFINITY;
                continue;
            }
            let c = cost(i, j);
            let (mut best, mut dir) = (f64::INFINITY, 255u8);
            if i == 0 && j == 0 {
                best = 0.0;
                dir = 0;
            } else {
                if i > 0 && j > 0 && prev[j - 1] < best {
                    best = prev[j - 1];
                    dir = 0;
                }
                if i > 0 && prev[j] < best {
                    best = prev[j];
                    dir = 1;
                }
                if j > lo && cur[j - 1] < best {
                    best = cur[j - 1];
                    dir = 2;
                }
            }
            if best.is_finite() || (i == 0 && j == 0) {
                cur[j] = best.max(c);
                if want_path {
                    bp[i * width + (j - lo)] = dir;
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        // prev now holds row i; poison cur outside next row's window lazily
        if i + 1 < n {
            let (nlo, nhi) = window(i + 1);
            for v in cur[nlo..=nhi].iter_mut() {
                *v = f64::INFINITY;
            }
        }
    }
    let d = prev[m - 1];
    if !d.is_finite() {
        return None;
    }
    if !want_path {
        return Some((d, Vec::new()));
    }
    // reconstruct
    let mut path = Vec::new();
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        path.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        let dir = bp[i * width + (j - lows[i])];
        match dir {
            0 => {
                i -= 1;
                j -= 1;
            }
            1 => i -= 1,
            2 => j -= 1,
            _ => return None,
        }
    }
    path.reverse();
    Some((d, path))
}

/// Convert a lattice matching into strictly increasing knots on the time
/// grid. Straight runs are compressed to their endpoints; coordinates
/// that would repeat get a cumulative sub-resolution nudge so the knot
/// sequence stays strictly increasing in both axes.
pub(crate) fn path_to_warp(path: &[(usize, usize)], dt: f64) -> Reparametrization {
    let mut corners: Vec<(usize, usize)> = Vec::new();
    for (k, &p) in path.iter().enumerate() {
        if k == 0 || k + 1 == path.len() {
            corners.push(p);
            continue;
        }
        let (pi, pj) = path[k - 1];
        let (ni, nj) = path[k + 1];
        let din = (p.0 - pi, p.1 - pj);
        let dout = (ni - p.0, nj - p.1);
        if din != dout {
            corners.push(p);
        }
    }
    let kappa = dt * 1e-9 / (corners.len() as f64 + 1.0);
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(corners.len());
    for &(i, j) in &corners {
        let mut t = i as f64 * dt;
        let mut h = j as f64 * dt;
        if let Some(&(pt, ph)) = knots.last() {
            if t <= pt {
                t = pt + kappa;
            }
            if h <= ph {
                h = ph + kappa;
            }
        }
        knots.push((t, h));
    }
    if knots.len() < 2 {
        let end = knots.first().map(|&(t, _)| t.max(dt)).unwrap_or(dt);
        return Reparametrization::identity(end);
    }
    Reparametrization { knots }
}

/// Optimal monotone bottleneck matching between two sampled paths on a
/// common time step `dt`. Returns the optimal sup distance and the
/// matching as a reparametrization.
pub fn warp_distance(
    reference: &[Vec<f64>],
    candidate: &[Vec<f64>],
    dt: f64,
    constraint: WarpConstraint,
    metric: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Result<(f64, Reparametrization)> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(Error::Empty("warp inputs".into()));
    }
    let cost = |i: usize, j: usize| metric(&reference[i], &candidate[j]);
    match bottleneck_dp(reference.len(), candidate.len(), &cost, constraint, None, true) {
        Some((d, path)) => Ok((d, path_to_warp(&path, dt))),
        None => Err(Error::Precondition(
            "candidate too short for the warp constraint".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecutil::dist;

    fn euclid(a: &[f64], b: &[f64]) -> f64 {
        dist(a, b)
    }

    /// Exhaustive monotone-path enumeration with branch-and-bound pruning;
    /// independent of the DP recurrence.
    fn enumerate_bottleneck(
        n: usize,
        m: usize,
        cost: &dyn Fn(usize, usize) -> f64,
        constraint: WarpConstraint,
    ) -> Option<f64> {
        fn go(
            i: usize,
            j: usize,
            running: f64,
            n: usize,
            m: usize,
            cost: &dyn Fn(usize, usize) -> f64,
            constraint: WarpConstraint,
            best: &mut f64,
        ) {
            if !constraint.admits(i, j) {
                return;
            }
            let running = running.max(cost(i, j));
            if running >= *best {
                return;
            }
            if i == n - 1 && j == m - 1 {
                *best = running;
                return;
            }
            if i + 1 < n && j + 1 < m {
                go(i + 1, j + 1, running, n, m, cost, constraint, best);
            }
            if i + 1 < n {
                go(i + 1, j, running, n, m, cost, constraint, best);
            }
            if j + 1 < m {
                go(i, j + 1, running, n, m, cost, constraint, best);
            }
        }
        let mut best = f64::INFINITY;
        go(0, 0, 0.0, n, m, cost, constraint, &mut best);
        best.is_finite().then_some(best)
    }

    #[test]
    fn identity_case() {
        let path: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 * 0.3).sin(), i as f64]).collect();
        let (d, warp) = warp_distance(&path, &path, 0.1, WarpConstraint::None, &euclid).unwrap();
        assert!(d <= 1e-12);
        warp.validate(None).unwrap();
        assert!(warp.sup_deviation_from_identity() <= 1e-9);
    }

    #[test]
    fn shift_absorbed_after_anchor() {
        // candidate holds its first sample for 30 steps, then follows the
        // reference exactly: the warp eats the hold with a vertical run
        let orbit = |t: f64| vec![(0.2 * t).cos(), (0.17 * t).sin()];
        let n = 80;
        let dt = 0.05;
        let reference: Vec<Vec<f64>> = (0..n).map(|i| orbit(i as f64 * dt)).collect();
        let mut candidate: Vec<Vec<f64>> = (0..30).map(|_| orbit(0.0)).collect();
        candidate.extend((0..n).map(|i| orbit(i as f64 * dt)));
        let (d, warp) = warp_distance(&reference, &candidate, dt, WarpConstraint::None, &euclid)
            .unwrap();
        assert!(d <= 1e-12, "d = {}", d);
        warp.validate(None).unwrap();
    }

    #[test]
    fn slope_band_forces_mismatch_on_fast_candidate() {
        // candidate traverses the same 1-D ramp 10% faster, then holds at
        // the end; the free warp absorbs the speed difference, the tight
        // slope band cannot
        let n = 120;
        let dt = 0.1;
        let t_end = (n - 1) as f64 * dt;
        let reference: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 * dt]).collect();
        let candidate: Vec<Vec<f64>> =
            (0..n).map(|i| vec![(i as f64 * dt * 1.1).min(t_end)]).collect();
        let (d_free, _) =
            warp_distance(&reference, &candidate, dt, WarpConstraint::None, &euclid).unwrap();
        let (d_slope, _) =
            warp_distance(&reference, &candidate, dt, WarpConstraint::Slope(0.01), &euclid)
                .unwrap();
        assert!(d_free <= 0.2, "free warp should absorb the speed-up, got {}", d_free);
        assert!(d_slope > d_free, "slope {} vs free {}", d_slope, d_free);
        assert!(d_slope > 0.5, "forced mismatch should be large, got {}", d_slope);
    }

    #[test]
    fn dp_matches_enumeration_on_random_grids() {
        let mut lcg = 0x1234_5678_u64;
        let mut unif = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (lcg >> 11) as f64 / (1u64 << 53) as f64
        };
        for case in 0..60 {
            let n = 2 + (unif() * 7.0) as usize;
            let m = 2 + (unif() * 7.0) as usize;
            let a: Vec<Vec<f64>> = (0..n).map(|_| vec![unif() * 4.0, unif() * 4.0]).collect();
            let b: Vec<Vec<f64>> = (0..m).map(|_| vec![unif() * 4.0, unif() * 4.0]).collect();
            let constraint = if case % 3 == 0 { WarpConstraint::Slope(0.4) } else { WarpConstraint::None };
            let cost = |i: usize, j: usize| euclid(&a[i], &b[j]);
            let dp = bottleneck_dp(n, m, &cost, constraint, None, true);
            let brute = enumerate_bottleneck(n, m, &cost, constraint);
            match (dp, brute) {
                (Some((d, path)), Some(e)) => {
                    assert_eq!(d, e, "case {}: dp {} vs brute {}", case, d, e);
                    // path is a valid matching achieving d
                    assert_eq!(path[0], (0, 0));
                    assert_eq!(*path.last().unwrap(), (n - 1, m - 1));
                    let got =
                        path.iter().map(|&(i, j)| cost(i, j)).fold(0.0_f64, f64::max);
                    assert!((got - d).abs() <= 1e-15);
                }
                (None, None) => {}
                (dp, brute) => panic!("feasibility mismatch: {:?} vs {:?}", dp.map(|x| x.0), brute),
            }
        }
    }

    #[test]
    fn banded_dp_agrees_when_band_covers_grid() {
        let n = 40;
        let a: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 * 0.2).sin()]).collect();
        let b: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 * 0.2 + 0.35).sin()]).collect();
        let cost = |i: usize, j: usize| euclid(&a[i], &b[j]);
        let full = bottleneck_dp(n, n, &cost, WarpConstraint::None, None, false).unwrap().0;
        let banded = bottleneck_dp(n, n, &cost, WarpConstraint::None, Some(n), false).unwrap().0;
        assert_eq!(full, banded);
    }

    #[test]
    fn symmetry_up_to_inversion() {
        let mut lcg = 42_u64;
        let mut unif = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (lcg >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let n = 3 + (unif() * 9.0) as usize;
            let m = 3 + (unif() * 9.0) as usize;
            let a: Vec<Vec<f64>> = (0..n).map(|_| vec![unif(), unif()]).collect();
            let b: Vec<Vec<f64>> = (0..m).map(|_| vec![unif(), unif()]).collect();
            let (dab, wab) = warp_distance(&a, &b, 0.1, WarpConstraint::None, &euclid).unwrap();
            let (dba, _) = warp_distance(&b, &a, 0.1, WarpConstraint::None, &euclid).unwrap();
            assert!((dab - dba).abs() <= 1e-12);
            wab.invert().knots.windows(2).for_each(|w| {
                assert!(w[1].0 > w[0].0 && w[1].1 > w[0].1);
            });
        }
    }

    #[test]
    fn rule_ordering_constraint_never_helps() {
        let mut lcg = 4242_u64;
        let mut unif = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (lcg >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..30 {
            let n = 4 + (unif() * 10.0) as usize;
            let a: Vec<Vec<f64>> = (0..n).map(|_| vec![unif(), unif()]).collect();
            let b: Vec<Vec<f64>> = (0..n).map(|_| vec![unif(), unif()]).collect();
            let (free, _) = warp_distance(&a, &b, 0.1, WarpConstraint::None, &euclid).unwrap();
            let (tight, _) =
                warp_distance(&a, &b, 0.1, WarpConstraint::Slope(0.05), &euclid).unwrap();
            assert!(tight >= free - 1e-15);
        }
    }

    #[test]
    fn empty_and_short_inputs() {
        let a: Vec<Vec<f64>> = vec![];
        let b = vec![vec![0.0]];
        assert!(matches!(
            warp_distance(&a, &b, 0.1, WarpConstraint::None, &euclid),
            Err(Error::Empty(_))
        ));
        // slope band makes a wildly shorter candidate infeasible
        let a: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let b: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        assert!(warp_distance(&a, &b, 0.1, WarpConstraint::Slope(0.01), &euclid).is_err());
    }

    #[test]
    fn clamp_slopes_satisfies_rep_eps() {
        let path: Vec<(usize, usize)> =
            vec![(0, 0), (1, 1), (1, 2), (2, 3), (3, 3), (4, 4), (5, 5)];
        let warp = path_to_warp(&path, 0.1);
        warp.validate(None).unwrap();
        let clamped = warp.clamp_slopes(0.25);
        clamped.validate(Some(0.25)).unwrap();
    }
}
