//! Eigenframe box chart around a hyperbolic saddle: membership, the
//! diamond cross-section, exponential band indices, exit times and
//! boundary-crossing counts.
//!
//! The chart is the affine map `x -> (v^s, v^u)` decomposing `x - sigma`
//! in the (oblique) stable/unstable frames. For the small radii used here
//! the difference to a normal-coordinate chart is O(r^2) and immaterial to
//! membership and counting.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::field::VectorFieldDef;
use crate::flow::{collect_events, first_event, EventDir, EventHit};
use crate::singularity::{find_singularities, HyperbolicityCertificate, Singularity};
use crate::vecutil::dist;
use crate::{Error, Result};

/// Default number of dense sub-samples per integrator step scanned for
/// boundary events.
pub const DEFAULT_EVENT_SUBDIV: usize = 16;

#[derive(Debug, Clone)]
pub struct BoxNeighborhood {
    pub sigma: Singularity,
    pub cert: HyperbolicityCertificate,
    pub r: f64,
    basis: DMatrix<f64>,
    basis_inv: DMatrix<f64>,
    s: usize,
    u: usize,
    /// Smallest admissible band index: e^{-n} < r for every n >= k_min.
    pub k_min: i64,
}

/// Chart coordinates of a point: stable and unstable components.
#[derive(Debug, Clone)]
pub struct ChartPoint {
    pub vs: DVector<f64>,
    pub vu: DVector<f64>,
}

impl ChartPoint {
    pub fn rho(&self) -> f64 {
        self.vs.norm().max(self.vu.norm())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BandIndex {
    pub n: i64,
    pub k_min: i64,
}

impl BoxNeighborhood {
    pub fn chart(&self, x: &[f64]) -> ChartPoint {
        let d = DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.sigma.location).map(|(a, b)| a - b),
        );
        let v = &self.basis_inv * d;
        ChartPoint {
            vs: v.rows(0, self.s).into_owned(),
            vu: v.rows(self.s, self.u).into_owned(),
        }
    }

    pub fn from_chart(&self, vs: &DVector<f64>, vu: &DVector<f64>) -> Vec<f64> {
        let mut v = DVector::zeros(self.s + self.u);
        v.rows_mut(0, self.s).copy_from(vs);
        v.rows_mut(self.s, self.u).copy_from(vu);
        let amb = &self.basis * v;
        amb.iter()
            .zip(&self.sigma.location)
            .map(|(d, c)| d + c)
            .collect()
    }

    pub fn rho(&self, x: &[f64]) -> f64 {
        self.chart(x).rho()
    }

    /// Signed boundary function: negative inside, zero on the boundary.
    pub fn boundary_gap(&self, x: &[f64]) -> f64 {
        self.rho(x) - self.r
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let c = self.chart(x);
        c.vs.norm() <= self.r && c.vu.norm() <= self.r
    }

    /// Signed diamond-section function: |v^s| - |v^u|.
    pub fn diamond_gap(&self, x: &[f64]) -> f64 {
        let c = self.chart(x);
        c.vs.norm() - c.vu.norm()
    }

    pub fn stable_dim(&self) -> usize {
        self.s
    }

    pub fn unstable_dim(&self) -> usize {
        self.u
    }

    /// Unit unstable direction(s) as ambient columns.
    pub fn unstable_frame(&self) -> &DMatrix<f64> {
        &self.cert.unstable_frame
    }

    pub fn stable_frame(&self) -> &DMatrix<f64> {
        &self.cert.stable_frame
    }
}

fn quasi_unit(seq: &mut u64) -> f64 {
    *seq = seq.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (*seq >> 11) as f64 / (1u64 << 53) as f64
}

/// Build the box chart of radius `r` at a certified saddle, checking that
/// `sigma` is the only singularity inside and that sampled regular points
/// exit within `50 / lambda` (the operational form of dynamical isolation).
pub fn make_box(
    field: &VectorFieldDef,
    sigma: &Singularity,
    cert: &HyperbolicityCertificate,
    r: f64,
) -> Result<BoxNeighborhood> {
    if cert.stable_index == 0 || cert.unstable_index == 0 {
        return Err(Error::NotSaddle { s: cert.stable_index, u: cert.unstable_index });
    }
    if cert.dim != field.dimension() {
        return Err(Error::Precondition(
            "box charts require an unconstrained coordinate chart".into(),
        ));
    }
    if r <= 0.0 {
        return Err(Error::Precondition("box radius must be positive".into()));
    }
    let n = field.dimension();
    let mut basis = DMatrix::zeros(n, n);
    basis.columns_mut(0, cert.stable_index).copy_from(&cert.stable_frame);
    basis
        .columns_mut(cert.stable_index, cert.unstable_index)
        .copy_from(&cert.unstable_frame);
    let basis_inv = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("stable/unstable frames are degenerate".into()))?;
    let bx = BoxNeighborhood {
        sigma: sigma.clone(),
        cert: cert.clone(),
        r,
        basis,
        basis_inv,
        s: cert.stable_index,
        u: cert.unstable_index,
        k_min: band_k_min(r),
    };

    // uniqueness of sigma inside the box
    let mut region = Vec::with_capacity(n);
    for i in 0..n {
        let half: f64 = (0..n).map(|j| bx.basis[(i, j)].abs()).sum::<f64>() * r * 1.05;
        region.push((sigma.location[i] - half, sigma.location[i] + half));
    }
    for other in find_singularities(field, &region, 6)? {
        if dist(&other.location, &sigma.location) > 1e-6 && bx.contains(&other.location) {
            return Err(Error::SecondSingularity { point: other.location });
        }
    }

    // sampled regular interior points must leave forward or backward
    let horizon = 50.0 / cert.lambda;
    let mut seq = 0x9e3779b97f4a7c15_u64;
    for _ in 0..8 {
        let vs = DVector::from_iterator(
            bx.s,
            (0..bx.s).map(|_| (quasi_unit(&mut seq) - 0.5) * 1.2 * r),
        );
        let vu = DVector::from_iterator(
            bx.u,
            (0..bx.u).map(|_| (quasi_unit(&mut seq) - 0.5) * 1.2 * r),
        );
        if vs.norm() > 0.9 * r || vu.norm() > 0.9 * r || vs.norm().max(vu.norm()) < 0.05 * r {
            continue;
        }
        let p = bx.from_chart(&vs, &vu);
        let fwd = exit_time_forward(field, &bx, &p, horizon)?;
        if matches!(fwd, ExitOutcome::Exit { .. }) {
            continue;
        }
        let bwd = exit_time_backward(field, &bx, &p, horizon)?;
        if matches!(bwd, ExitOutcome::Exit { .. }) {
            continue;
        }
        return Err(Error::NoExitValidation { point: p, horizon });
    }
    Ok(bx)
}

fn band_k_min(r: f64) -> i64 {
    let mut k = (-r.ln()).floor() as i64;
    while (-(k as f64)).exp() >= r {
        k += 1;
    }
    k
}

/// Default box radius: `min(0.2, lambda / (10 L2))` with `L2` a sampled
/// bound on the Jacobian's Lipschitz constant near the singularity, which
/// keeps the flow within ~10% of its linearization inside the box.
pub fn suggest_radius(
    field: &VectorFieldDef,
    sigma: &Singularity,
    cert: &HyperbolicityCertificate,
) -> Result<f64> {
    let n = field.dimension();
    let j0 = field.jacobian(&sigma.location)?;
    let probe = 0.05;
    let mut l2 = 0.0_f64;
    let mut seq = 0xabcdef12345_u64;
    for _ in 0..12 {
        let dir: Vec<f64> = (0..n).map(|_| quasi_unit(&mut seq) - 0.5).collect();
        let nn = crate::vecutil::norm(&dir);
        if nn == 0.0 {
            continue;
        }
        let p: Vec<f64> = sigma
            .location
            .iter()
            .zip(&dir)
            .map(|(c, d)| c + probe * d / nn)
            .collect();
        let j = field.jacobian(&p)?;
        l2 = l2.max((&j - &j0).norm() / probe);
    }
    Ok(if l2 <= 1e-12 { 0.2 } else { (cert.lambda / (10.0 * l2)).min(0.2) })
}

/// Is `x` on the diamond section (up to `tol`, relative to the chart
/// radius of the point)?
pub fn diamond_membership(bx: &BoxNeighborhood, x: &[f64], tol: f64) -> bool {
    let c = bx.chart(x);
    let (vs, vu) = (c.vs.norm(), c.vu.norm());
    (vs - vu).abs() <= tol * vs.max(vu).max(1e-300)
}

/// Band index of a diamond point: `n = floor(-ln rho)`. Boundary radii
/// belong to the larger-n annulus (outer edge closed).
pub fn band_index(bx: &BoxNeighborhood, x: &[f64]) -> Result<BandIndex> {
    let c = bx.chart(x);
    let (vs, vu) = (c.vs.norm(), c.vu.norm());
    if (vs - vu).abs() > 1e-6 * vs.max(vu).max(1e-300) {
        return Err(Error::OffSection { vs, vu });
    }
    let rho = c.rho();
    if rho == 0.0 {
        return Err(Error::Precondition("band index undefined at the singularity".into()));
    }
    // nudge so that rho = e^{-n} exactly lands in band n
    let n = (-rho.ln() + 1e-12).floor() as i64;
    if n < bx.k_min || rho >= (-(bx.k_min as f64)).exp() {
        return Err(Error::OutsideBands { rho, k: bx.k_min });
    }
    Ok(BandIndex { n, k_min: bx.k_min })
}

#[derive(Debug, Clone)]
pub enum ExitOutcome {
    Exit { t: f64, point: Vec<f64> },
    NoExitWithinHorizon,
}

impl ExitOutcome {
    pub fn time(&self) -> Option<f64> {
        match self {
            ExitOutcome::Exit { t, .. } => Some(*t),
            ExitOutcome::NoExitWithinHorizon => None,
        }
    }
}

fn exit_time(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    x: &[f64],
    horizon: f64,
    tol: f64,
) -> Result<ExitOutcome> {
    if bx.boundary_gap(x) > 1e-9 {
        return Err(Error::Precondition("exit time requires a point inside the box".into()));
    }
    let g = |y: &[f64]| bx.boundary_gap(y);
    match first_event(field, x, horizon, tol, &g, EventDir::Rising, DEFAULT_EVENT_SUBDIV)? {
        Some(hit) => Ok(ExitOutcome::Exit { t: hit.t.abs(), point: hit.y }),
        None => Ok(ExitOutcome::NoExitWithinHorizon),
    }
}

/// First boundary hit forward in time (t^+), or `NoExitWithinHorizon` for
/// points numerically on the local stable set.
pub fn exit_time_forward(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    x: &[f64],
    horizon: f64,
) -> Result<ExitOutcome> {
    exit_time(field, bx, x, horizon, crate::flow::DEFAULT_TOL)
}

/// First boundary hit backward in time (t^-), reported as a positive
/// duration.
pub fn exit_time_backward(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    x: &[f64],
    horizon: f64,
) -> Result<ExitOutcome> {
    exit_time(field, bx, x, -horizon, crate::flow::DEFAULT_TOL)
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingEvent {
    pub t: f64,
    /// true when the orbit passes from outside to inside at this event.
    pub entering: bool,
    pub grazing: bool,
    pub point: Vec<f64>,
    pub chart_vs: Vec<f64>,
    pub chart_vu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossingReport {
    pub count: usize,
    pub events: Vec<CrossingEvent>,
    pub grazing_flagged: bool,
}

fn to_crossing(bx: &BoxNeighborhood, hit: &EventHit, t: f64, entering: bool) -> CrossingEvent {
    let c = bx.chart(&hit.y);
    CrossingEvent {
        t,
        entering,
        grazing: hit.grazing,
        point: hit.y.clone(),
        chart_vs: c.vs.iter().cloned().collect(),
        chart_vu: c.vu.iter().cloned().collect(),
    }
}

/// Count transversal crossings of the box boundary by the orbit of `x`
/// over `[-horizon_backward, horizon_forward]`. Grazing contacts are
/// counted once and flagged.
pub fn crossing_count(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    x: &[f64],
    horizon_backward: f64,
    horizon_forward: f64,
    subdiv: usize,
) -> Result<CrossingReport> {
    let g = |y: &[f64]| bx.boundary_gap(y);
    let tol = crate::flow::DEFAULT_TOL;
    let mut events: Vec<CrossingEvent> = Vec::new();

    // a start exactly on the boundary is one crossing at t = 0
    let g0 = bx.boundary_gap(x);
    if g0.abs() <= 1e-10 * bx.r.max(1.0) {
        let v = field.eval(x)?;
        let eps = 1e-7;
        let ahead: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let exiting = bx.boundary_gap(&ahead) > g0;
        let hit = EventHit { t: 0.0, y: x.to_vec(), rising: exiting, grazing: false };
        events.push(to_crossing(bx, &hit, 0.0, !exiting));
    }

    if horizon_backward > 0.0 {
        for hit in collect_events(field, x, -horizon_backward, tol, &g, EventDir::Any, subdiv)? {
            if hit.t.abs() <= 1e-9 {
                continue;
            }
            // rising along the backward sweep = entering in forward time
            events.push(to_crossing(bx, &hit, hit.t, hit.rising));
        }
    }
    if horizon_forward > 0.0 {
        for hit in collect_events(field, x, horizon_forward, tol, &g, EventDir::Any, subdiv)? {
            if hit.t.abs() <= 1e-9 {
                continue;
            }
            events.push(to_crossing(bx, &hit, hit.t, !hit.rising));
        }
    }
    events.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    let grazing_flagged = events.iter().any(|e| e.grazing);
    Ok(CrossingReport { count: events.len(), events, grazing_flagged })
}

#[derive(Debug, Clone)]
pub struct SingleCrossingReport {
    pub ok: bool,
    /// All diamond-section crossing times over [-t^-, t^+] (0 included:
    /// the point itself).
    pub times: Vec<f64>,
}

/// Verify that the in-box orbit segment through a diamond point meets the
/// section exactly once (diagnostic for chart quality).
pub fn single_crossing_check(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    x: &[f64],
) -> Result<SingleCrossingReport> {
    if !diamond_membership(bx, x, 1e-6) {
        let c = bx.chart(x);
        return Err(Error::OffSection { vs: c.vs.norm(), vu: c.vu.norm() });
    }
    let horizon = 80.0 / bx.cert.lambda;
    let t_plus = match exit_time_forward(field, bx, x, horizon)? {
        ExitOutcome::Exit { t, .. } => t,
        ExitOutcome::NoExitWithinHorizon => horizon,
    };
    let t_minus = match exit_time_backward(field, bx, x, horizon)? {
        ExitOutcome::Exit { t, .. } => t,
        ExitOutcome::NoExitWithinHorizon => horizon,
    };
    let g = |y: &[f64]| bx.diamond_gap(y);
    let tol = crate::flow::DEFAULT_TOL;
    let mut times = vec![0.0];
    for hit in collect_events(field, x, -t_minus, tol, &g, EventDir::Any, DEFAULT_EVENT_SUBDIV)? {
        if hit.t.abs() > 1e-9 && bx.contains(&hit.y) {
            times.push(hit.t);
        }
    }
    for hit in collect_events(field, x, t_plus, tol, &g, EventDir::Any, DEFAULT_EVENT_SUBDIV)? {
        if hit.t.abs() > 1e-9 && bx.contains(&hit.y) {
            times.push(hit.t);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(SingleCrossingReport { ok: times.len() == 1, times })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::VectorFieldDef;
    use crate::flow::{flow, flow_trajectory, DEFAULT_TOL};
    use crate::singularity::classify_singularity;

    fn saddle_box(id: &str, r: f64) -> (VectorFieldDef, BoxNeighborhood) {
        let f = VectorFieldDef::builtin(id, &[]).unwrap();
        let s = Singularity { location: vec![0.0; f.dimension()], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        let bx = make_box(&f, &s, &cert, r).unwrap();
        (f, bx)
    }

    #[test]
    fn linear_saddle_chart_is_axis_aligned() {
        let (_, bx) = saddle_box("linear-saddle-2d", 1.0);
        // E^u = x axis, E^s = y axis
        let c = bx.chart(&[0.3, 0.7]);
        assert!((c.vu.norm() - 0.3).abs() < 1e-12);
        assert!((c.vs.norm() - 0.7).abs() < 1e-12);
        assert!(bx.contains(&[0.99, -0.99]));
        assert!(!bx.contains(&[1.01, 0.0]));
    }

    #[test]
    fn duffing_box_in_eigenframe() {
        let (_, bx) = saddle_box("duffing-saddle", 0.2);
        // eigenvectors (1,1)/sqrt2 (unstable) and (1,-1)/sqrt2 (stable)
        let p = [0.1 / 2.0_f64.sqrt(), 0.1 / 2.0_f64.sqrt()];
        let c = bx.chart(&p);
        assert!(c.vs.norm() < 1e-12, "vs {}", c.vs.norm());
        assert!((c.vu.norm() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn duffing_large_box_sees_second_singularity() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let s = Singularity { location: vec![0.0, 0.0], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        match make_box(&f, &s, &cert, 3.0) {
            Err(Error::SecondSingularity { point }) => {
                assert!(dist(&point, &[1.0, 0.0]) < 1e-6);
            }
            other => panic!("expected second-singularity error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn sink_is_rejected() {
        let f = VectorFieldDef::parse("x' = -x; y' = -y").unwrap();
        let s = Singularity { location: vec![0.0, 0.0], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        assert!(matches!(make_box(&f, &s, &cert, 0.5), Err(Error::NotSaddle { .. })));
    }

    #[test]
    fn diamond_membership_cases() {
        let (_, bx) = saddle_box("linear-saddle-2d", 1.0);
        assert!(diamond_membership(&bx, &[0.1, 0.1], 1e-6));
        assert!(!diamond_membership(&bx, &[0.05, 0.1], 1e-6));
        // the singularity itself: 0 = 0 degenerate case
        assert!(diamond_membership(&bx, &[0.0, 0.0], 1e-6));
    }

    #[test]
    fn band_index_examples() {
        let (_, bx) = saddle_box("linear-saddle-2d", 1.0);
        assert_eq!(bx.k_min, 1);
        let rho = (-5.5_f64).exp();
        let b = band_index(&bx, &[rho, rho]).unwrap();
        assert_eq!(b.n, 5);
        let rho = (-7.0_f64).exp();
        let b = band_index(&bx, &[rho, rho]).unwrap();
        assert_eq!(b.n, 7);
        // off-section point
        assert!(matches!(band_index(&bx, &[0.01, 0.02]), Err(Error::OffSection { .. })));
        // rho >= e^{-k}: with r = 1, k = 1, rho = e^{-0.5}
        let rho = (-0.5_f64).exp();
        assert!(matches!(band_index(&bx, &[rho, rho]), Err(Error::OutsideBands { .. })));
    }

    #[test]
    fn band_index_k_requirement() {
        // r = 0.2 => K = 2 (e^{-2} = 0.135 < 0.2), so rho = e^{-1.5} errors
        let (_, bx) = saddle_box("linear-saddle-2d", 0.2);
        assert_eq!(bx.k_min, 2);
        let rho = (-1.5_f64).exp();
        assert!(matches!(band_index(&bx, &[rho, rho]), Err(Error::OutsideBands { .. })));
    }

    #[test]
    fn linear_exit_times_match_logarithm() {
        let (f, bx) = saddle_box("linear-saddle-2d", 0.5);
        let r = bx.r;
        for &a in &[0.01, 0.05, 0.2, 0.4] {
            let p = [a, a];
            let fwd = exit_time_forward(&f, &bx, &p, 100.0).unwrap();
            let t = fwd.time().expect("exit");
            assert!((t - (r / a).ln()).abs() < 1e-8, "a = {}: {} vs {}", a, t, (r / a).ln());
            let bwd = exit_time_backward(&f, &bx, &p, 100.0).unwrap();
            let t = bwd.time().expect("exit backward");
            assert!((t - (r / a).ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn stable_axis_never_exits_forward() {
        let (f, bx) = saddle_box("linear-saddle-2d", 0.5);
        let p = [0.0, 0.3]; // on E^s
        let fwd = exit_time_forward(&f, &bx, &p, 40.0).unwrap();
        assert!(matches!(fwd, ExitOutcome::NoExitWithinHorizon));
        let bwd = exit_time_backward(&f, &bx, &p, 40.0).unwrap();
        assert!(bwd.time().is_some());
    }

    #[test]
    fn exit_point_sits_on_boundary() {
        let (f, bx) = saddle_box("duffing-saddle", 0.15);
        let q = bx.from_chart(&nalgebra::dvector![0.03], &nalgebra::dvector![0.03]);
        if let ExitOutcome::Exit { point, .. } = exit_time_forward(&f, &bx, &q, 50.0).unwrap() {
            assert!(bx.boundary_gap(&point).abs() <= 1e-9);
        } else {
            panic!("expected exit");
        }
    }

    #[test]
    fn transiting_orbit_crosses_twice() {
        let (f, bx) = saddle_box("linear-saddle-2d", 0.5);
        // start outside on the stable side; orbit enters and exits once each
        let x = [1e-3, 2.0];
        let rep = crossing_count(&f, &bx, &x, 1.0, 20.0, DEFAULT_EVENT_SUBDIV).unwrap();
        assert_eq!(
            rep.count,
            2,
            "events: {:?}",
            rep.events.iter().map(|e| e.t).collect::<Vec<_>>()
        );
        assert!(rep.events[0].entering && !rep.events[1].entering);
    }

    #[test]
    fn disjoint_orbit_never_crosses() {
        let (f, bx) = saddle_box("linear-saddle-2d", 0.1);
        let x = [2.0, 2.0];
        let rep = crossing_count(&f, &bx, &x, 2.0, 2.0, DEFAULT_EVENT_SUBDIV).unwrap();
        assert_eq!(rep.count, 0);
    }

    #[test]
    fn crossing_count_stable_under_subdiv_doubling() {
        let (f, bx) = saddle_box("duffing-saddle", 0.1);
        // bounded periodic orbit just inside the homoclinic loop (H = -1e-3)
        let x0 = 0.1_f64;
        let y0 = -(2.0 * (-1e-3) + x0 * x0 - 2.0 * x0.powi(3) / 3.0).sqrt();
        let x = [x0, y0];
        let a = crossing_count(&f, &bx, &x, 2.0, 25.0, DEFAULT_EVENT_SUBDIV).unwrap();
        let b = crossing_count(&f, &bx, &x, 2.0, 25.0, DEFAULT_EVENT_SUBDIV * 2).unwrap();
        assert!(a.count >= 2);
        assert_eq!(a.count, b.count);
    }

    #[test]
    fn single_crossing_on_linear_and_duffing() {
        let (f, bx) = saddle_box("linear-saddle-2d", 0.5);
        for &a in &[0.02, 0.1, 0.3] {
            let rep = single_crossing_check(&f, &bx, &[a, a]).unwrap();
            assert!(rep.ok, "times {:?}", rep.times);
        }
        let (f, bx) = saddle_box("duffing-saddle", 0.1);
        let q = bx.from_chart(&nalgebra::dvector![0.02], &nalgebra::dvector![0.02]);
        let rep = single_crossing_check(&f, &bx, &q).unwrap();
        assert!(rep.ok, "times {:?}", rep.times);
    }

    #[test]
    fn rotated_frame_diagnostic_can_fail() {
        // corrupt the certificate by rotating the frames; the diagnostic
        // path must stay usable (no panic) whatever the verdict
        let f = VectorFieldDef::builtin("linear-saddle-2d", &[]).unwrap();
        let s = Singularity { location: vec![0.0, 0.0], residual: 0.0 };
        let mut cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        let th: f64 = 0.6;
        let rot = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        cert.stable_frame = &rot * &cert.stable_frame;
        cert.unstable_frame = &rot * &cert.unstable_frame;
        if let Ok(bx) = make_box(&f, &s, &cert, 0.5) {
            let p = bx.from_chart(&nalgebra::dvector![0.1], &nalgebra::dvector![0.1]);
            if let Ok(rep) = single_crossing_check(&f, &bx, &p) {
                assert!(!rep.times.is_empty());
            }
        }
    }

    #[test]
    fn monotone_cone_along_in_box_arcs() {
        // |v^u| nondecreasing, |v^s| nonincreasing along in-box arcs,
        // up to 1e-3 relative violations on the nonlinear saddles
        for id in ["duffing-saddle", "saddle-with-return"] {
            let (f, bx) = saddle_box(id, 0.2);
            let q = bx.from_chart(&nalgebra::dvector![0.05], &nalgebra::dvector![0.05]);
            let t_exit = exit_time_forward(&f, &bx, &q, 50.0).unwrap().time().expect("exit");
            let tr = flow_trajectory(&f, &q, t_exit, t_exit / 200.0, DEFAULT_TOL).unwrap();
            let mut prev_vu = 0.0_f64;
            let mut prev_vs = f64::INFINITY;
            for p in &tr.points {
                let c = bx.chart(p);
                let (vs, vu) = (c.vs.norm(), c.vu.norm());
                assert!(vu >= prev_vu * (1.0 - 1e-3), "{}: vu dropped", id);
                assert!(vs <= prev_vs * (1.0 + 1e-3), "{}: vs grew", id);
                prev_vu = vu;
                prev_vs = vs;
            }
        }
    }

    #[test]
    fn band_constant_at_unique_crossing() {
        // flowing an off-section in-box point to the section yields the
        // band of that unique crossing; the crossing is unique, so the
        // band of the in-box orbit is well defined
        let (f, bx) = saddle_box("duffing-saddle", 0.1);
        let q = bx.from_chart(&nalgebra::dvector![0.02], &nalgebra::dvector![0.005]);
        let g = |y: &[f64]| bx.diamond_gap(y);
        let hit = first_event(&f, &q, 20.0, DEFAULT_TOL, &g, EventDir::Any, 16)
            .unwrap()
            .expect("section hit");
        let b = band_index(&bx, &hit.y).unwrap();
        assert!(b.n >= bx.k_min);
        let rep = single_crossing_check(&f, &bx, &hit.y).unwrap();
        assert!(rep.ok);
    }

    #[test]
    fn suggested_radius_is_bounded() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let s = Singularity { location: vec![0.0, 0.0], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        let r = suggest_radius(&f, &s, &cert).unwrap();
        assert!(r > 0.0 && r <= 0.2);
        // linear field: no curvature, default cap
        let f = VectorFieldDef::builtin("linear-saddle-2d", &[]).unwrap();
        let cert2 = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        assert_eq!(suggest_radius(&f, &s, &cert2).unwrap(), 0.2);
    }

    #[test]
    fn exit_time_invariant_under_flow_inside_box() {
        // t+(X_dt(x)) = t+(x) - dt while both stay inside
        let (f, bx) = saddle_box("duffing-saddle", 0.1);
        let q = bx.from_chart(&nalgebra::dvector![0.02], &nalgebra::dvector![0.02]);
        let t0 = exit_time_forward(&f, &bx, &q, 50.0).unwrap().time().unwrap();
        let q2 = flow(&f, &q, 0.3, DEFAULT_TOL).unwrap();
        let t1 = exit_time_forward(&f, &bx, &q2, 50.0).unwrap().time().unwrap();
        assert!((t0 - 0.3 - t1).abs() < 1e-7);
    }
}
