//! Budgeted searches for shadowing orbits: candidate seeding, bottleneck
//! warp scoring against the concatenated pseudo-orbit path, derivative-free
//! refinement, and an independent re-simulation audit of reported
//! witnesses.
//!
//! Truncated bi-infinite chains carry declared constant tails; beyond the
//! listed entries the candidate must track the tail orbit pointwise in its
//! own time for a horizon `H_tail` on each side. That pinning is what
//! separates true asymptotic candidates from passers-by, and it is never
//! warped.

use rayon::prelude::*;
use serde::Serialize;

use crate::field::VectorFieldDef;
use crate::flow::{flow, sample_at, DEFAULT_TOL};
use crate::localmodel::{crossing_count, BoxNeighborhood, DEFAULT_EVENT_SUBDIV};
use crate::pseudo::{GaugeFunction, PseudoOrbit};
use crate::simplex::nelder_mead;
use crate::vecutil::norm;
use crate::warp::{bottleneck_dp, path_to_warp, Reparametrization, WarpConstraint};
use crate::{Error, Result};

/// Distance rule for shadowing searches.
#[derive(Debug, Clone)]
pub enum ShadowRule {
    Plain,
    /// Slope-banded reparametrizations (difference quotients within
    /// `slope` of 1).
    Strong { slope: f64 },
    /// Pointwise distances divided by the gauge at the reference point;
    /// found means ratio <= 1.
    Rescaled { gauge: GaugeFunction },
}

#[derive(Debug, Clone)]
pub struct SearchParams {
    pub seed_radius: f64,
    pub seed_count: usize,
    pub refine_iters: usize,
    /// Total candidate-evaluation budget (must be positive).
    pub budget: usize,
    /// Seed of the deterministic low-discrepancy sequence.
    pub seed: u64,
    /// Sampling step; default `min(0.01, min t_i / 50)`.
    pub dt: Option<f64>,
    /// DP band half-width; default `max(64, 0.15 n)`.
    pub band: Option<usize>,
    /// Tail horizon for truncated bi-infinite chains; default `20`
    /// (20 / lambda with the relevant lambda supplied by the caller).
    pub tail_horizon: Option<f64>,
    /// How many of the best seeds get simplex refinement.
    pub refine_top: usize,
    /// Integrator tolerance for candidate and reference sampling.
    pub int_tol: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            seed_radius: 0.1,
            seed_count: 16,
            refine_iters: 60,
            budget: 4000,
            seed: 42,
            dt: None,
            band: None,
            tail_horizon: None,
            refine_top: 3,
            int_tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ShadowStatus {
    Found,
    NotFoundWithinBudget,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinedCandidate {
    pub point: Vec<f64>,
    pub achieved: f64,
    pub crossing_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowingResult {
    pub status: ShadowStatus,
    pub witness: Option<Vec<f64>>,
    pub warp: Option<Reparametrization>,
    pub achieved: f64,
    pub epsilon: f64,
    pub budget_spent: usize,
    pub crossing_count_of_witness: Option<usize>,
    /// Every refined candidate with its final score (and crossing count
    /// when a box was supplied).
    pub refined: Vec<RefinedCandidate>,
    pub dt: f64,
}

/// The concatenated pseudo-orbit path sampled on a uniform grid, plus the
/// unwarped tail-orbit extensions for truncated bi-infinite chains.
pub(crate) struct ReferencePath {
    pub dt: f64,
    pub mid: Vec<Vec<f64>>,
    pub head: Vec<Vec<f64>>,
    pub tail: Vec<Vec<f64>>,
    pub gauge_mid: Option<Vec<f64>>,
    pub gauge_head: Option<Vec<f64>>,
    pub gauge_tail: Option<Vec<f64>>,
}

pub(crate) fn default_dt(po: &PseudoOrbit) -> f64 {
    let tmin = po.entries.iter().map(|(_, t)| *t).fold(f64::INFINITY, f64::min);
    (tmin / 50.0).min(0.01)
}

pub(crate) fn build_reference(
    field: &VectorFieldDef,
    po: &PseudoOrbit,
    dt: f64,
    tail_horizon: f64,
    gauge: Option<&GaugeFunction>,
    tol: f64,
) -> Result<ReferencePath> {
    let s_times = po.accumulated_times();
    let total = po.total_time();
    let n_mid = (total / dt + 1e-9).floor() as usize + 1;
    let mut mid: Vec<Vec<f64>> = Vec::with_capacity(n_mid);
    for (i, (x, _)) in po.entries.iter().enumerate() {
        let (s0, s1) = (s_times[i], s_times[i + 1]);
        let k_lo = (s0 / dt - 1e-9).ceil().max(0.0) as usize;
        let mut k_hi = ((s1 - 1e-9) / dt).floor() as usize;
        if i + 1 == po.entries.len() {
            k_hi = n_mid - 1;
        }
        if k_lo > k_hi {
            continue;
        }
        let local: Vec<f64> = (k_lo..=k_hi).map(|k| k as f64 * dt - s0).collect();
        let pts = sample_at(field, x, &local, tol)?;
        mid.extend(pts);
    }
    if mid.len() != n_mid {
        return Err(Error::Precondition(format!(
            "reference grid mismatch: {} vs {}",
            mid.len(),
            n_mid
        )));
    }
    let n_ext = if po.finite { 0 } else { (tail_horizon / dt).round() as usize };
    let mut head = Vec::new();
    let mut tail = Vec::new();
    if n_ext > 0 {
        let back_times: Vec<f64> = (1..=n_ext).rev().map(|k| -(k as f64) * dt).collect();
        let pts = sample_at(field, po.first_point(), &back_times, tol)?;
        // head[k] sits at time -(k+1) dt
        head = pts.into_iter().rev().collect();
        let (last_x, last_t) = po.entries.last().unwrap();
        let end_pt = flow(field, last_x, *last_t, tol)?;
        let fwd_times: Vec<f64> = (1..=n_ext).map(|k| k as f64 * dt).collect();
        tail = sample_at(field, &end_pt, &fwd_times, tol)?;
    }
    let gauge_of = |pts: &[Vec<f64>]| -> Option<Vec<f64>> {
        gauge.map(|g| pts.iter().map(|p| g.eval(field, p)).collect())
    };
    Ok(ReferencePath {
        dt,
        gauge_mid: gauge_of(&mid),
        gauge_head: gauge_of(&head),
        gauge_tail: gauge_of(&tail),
        mid,
        head,
        tail,
    })
}

/// Candidate sampling times for a reference path: the head window, the
/// mid grid, and the tail window appended after the final mid time.
fn candidate_times(rp: &ReferencePath) -> Vec<f64> {
    let n_mid = rp.mid.len();
    let n_ext = rp.head.len();
    let mut times = Vec::with_capacity(n_mid + 2 * n_ext);
    for k in (1..=n_ext).rev() {
        times.push(-(k as f64) * rp.dt);
    }
    for k in 0..n_mid {
        times.push(k as f64 * rp.dt);
    }
    let s_end = (n_mid - 1) as f64 * rp.dt;
    for k in 1..=rp.tail.len() {
        times.push(s_end + k as f64 * rp.dt);
    }
    times
}

fn ratio_metric(d: f64, gauge: Option<f64>) -> f64 {
    match gauge {
        None => d,
        Some(g) => d / g.max(1e-300),
    }
}

struct Scorer<'a> {
    field: &'a VectorFieldDef,
    rp: &'a ReferencePath,
    times: Vec<f64>,
    constraint: WarpConstraint,
    band: usize,
    rescaled: bool,
    tol: f64,
}

impl<'a> Scorer<'a> {
    fn new(
        field: &'a VectorFieldDef,
        rp: &'a ReferencePath,
        rule: &ShadowRule,
        band: Option<usize>,
        tol: f64,
    ) -> Self {
        let n = rp.mid.len();
        let constraint = match rule {
            ShadowRule::Strong { slope } => WarpConstraint::Slope(*slope),
            _ => WarpConstraint::None,
        };
        let band = band.unwrap_or_else(|| ((n as f64 * 0.15).ceil() as usize).clamp(64, 1500));
        Scorer {
            field,
            rp,
            times: candidate_times(rp),
            constraint,
            band,
            rescaled: matches!(rule, ShadowRule::Rescaled { .. }),
            tol,
        }
    }

    /// Candidate samples split into (head, mid, tail).
    fn sample_candidate(&self, y: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let pts = sample_at(self.field, y, &self.times, self.tol)?;
        let n_ext = self.rp.head.len();
        let n_mid = self.rp.mid.len();
        let head = pts[..n_ext].to_vec();
        let mid = pts[n_ext..n_ext + n_mid].to_vec();
        let tail = pts[n_ext + n_mid..].to_vec();
        Ok((head, mid, tail))
    }

    fn ends_sup(&self, head: &[Vec<f64>], tail: &[Vec<f64>]) -> f64 {
        let mut sup = 0.0_f64;
        // head[k] is at -(k+1) dt going back; candidate head is ordered the
        // same way (oldest first), so zip directly
        for (k, (c, r)) in head.iter().zip(&self.rp.head).enumerate() {
            let g = self.rp.gauge_head.as_ref().map(|v| v[k]);
            sup = sup.max(ratio_metric(self.field.distance(c, r), g));
        }
        for (k, (c, r)) in tail.iter().zip(&self.rp.tail).enumerate() {
            let g = self.rp.gauge_tail.as_ref().map(|v| v[k]);
            sup = sup.max(ratio_metric(self.field.distance(c, r), g));
        }
        sup
    }

    fn mid_cost(&self, cand: &'a [Vec<f64>]) -> impl Fn(usize, usize) -> f64 + '_ {
        move |i: usize, j: usize| {
            let d = self.field.distance(&self.rp.mid[i], &cand[j]);
            if self.rescaled {
                ratio_metric(d, self.rp.gauge_mid.as_ref().map(|v| v[i]))
            } else {
                d
            }
        }
    }

    /// Score a candidate start point; +inf on integration failure.
    fn score(&self, y: &[f64]) -> f64 {
        let Ok((head, mid, tail)) = self.sample_candidate(y) else {
            return f64::INFINITY;
        };
        let cost = self.mid_cost(&mid);
        let Some((d, _)) = bottleneck_dp(
            self.rp.mid.len(),
            mid.len(),
            &cost,
            self.constraint,
            Some(self.band),
            false,
        ) else {
            return f64::INFINITY;
        };
        d.max(self.ends_sup(&head, &tail))
    }

    /// Score with the optimal matching reconstructed.
    fn score_with_warp(&self, y: &[f64]) -> Result<(f64, Reparametrization)> {
        let (head, mid, tail) = self.sample_candidate(y)?;
        let cost = self.mid_cost(&mid);
        let Some((d, path)) = bottleneck_dp(
            self.rp.mid.len(),
            mid.len(),
            &cost,
            self.constraint,
            Some(self.band),
            true,
        ) else {
            return Err(Error::Precondition("no admissible matching".into()));
        };
        let warp = path_to_warp(&path, self.rp.dt);
        Ok((d.max(self.ends_sup(&head, &tail)), warp))
    }
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const HALTON_BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];

/// Deterministic quasi-random seed points in the ball around `x0`.
fn seed_points(x0: &[f64], radius: f64, count: usize, seq_seed: u64) -> Vec<Vec<f64>> {
    let d = x0.len();
    let offset = seq_seed.wrapping_mul(131).wrapping_add(7);
    (0..count)
        .map(|k| {
            let mut v: Vec<f64> = (0..d)
                .map(|dim| 2.0 * halton(offset + k as u64 + 1, HALTON_BASES[dim % 6]) - 1.0)
                .collect();
            let n = norm(&v);
            if n > 1.0 {
                for x in v.iter_mut() {
                    *x /= n;
                }
            }
            x0.iter().zip(&v).map(|(c, o)| c + o * radius).collect()
        })
        .collect()
}

/// Search for a shadowing orbit of the validated pseudo-orbit `po` at
/// tolerance `epsilon` (ratio 1 for the rescaled rule). Negative outcomes
/// are reported as budgeted evidence, never as certificates.
pub fn shadow_search(
    field: &VectorFieldDef,
    po: &PseudoOrbit,
    epsilon: f64,
    rule: &ShadowRule,
    params: &SearchParams,
    bx: Option<&BoxNeighborhood>,
) -> Result<ShadowingResult> {
    if params.budget == 0 {
        return Err(Error::Precondition("budget must be > 0".into()));
    }
    if !(epsilon > 0.0) && !matches!(rule, ShadowRule::Rescaled { .. }) {
        return Err(Error::Precondition("epsilon must be positive".into()));
    }
    let dt = params.dt.unwrap_or_else(|| default_dt(po));
    let tail_h = params.tail_horizon.unwrap_or(20.0);
    // the head/tail windows amplify integration error by e^{lambda H}:
    // truncated bi-infinite chains need a much tighter tolerance than the
    // bulk default or every asymptotic candidate drowns in solver noise
    let eff_tol = if po.finite { params.int_tol } else { params.int_tol.min(1e-12) };
    let gauge = match rule {
        ShadowRule::Rescaled { gauge } => Some(gauge),
        _ => None,
    };
    let rp = build_reference(field, po, dt, tail_h, gauge, eff_tol)?;
    let scorer = Scorer::new(field, &rp, rule, params.band, eff_tol);

    let mut budget = params.budget;
    let x0 = po.first_point().to_vec();
    let mut candidates = vec![field.project_point(&x0)];
    // the chain's first regular entry is the canonical candidate start:
    // for chains whose head tail sits on a singularity, ball seeds around
    // x0 cannot reach the exponentially thin basin of the true shadow
    if let Some((reg, _)) = po
        .entries
        .iter()
        .find(|(x, _)| field.eval(x).map(|v| norm(&v) > 1e-8).unwrap_or(false))
    {
        if crate::vecutil::dist(reg, &x0) > 1e-12 {
            candidates.push(field.project_point(reg));
        }
    }
    // with a box chart available and the head tail sitting at its saddle,
    // add candidates tracked onto the local unstable manifold, timed so
    // the transit starts where the chain's first regular segment does;
    // these are the only representable starts whose backward orbit
    // survives the head window
    if let Some(bx) = bx {
        if bx.unstable_dim() == 1 && field.distance(&x0, &bx.sigma.location) <= bx.r {
            if let Some(idx) = po
                .entries
                .iter()
                .position(|(x, _)| field.eval(x).map(|v| norm(&v) > 1e-8).unwrap_or(false))
            {
                let s_reg = po.accumulated_times()[idx];
                let lam_u = bx
                    .cert
                    .eigenvalues
                    .iter()
                    .filter(|v| v.re > 0.0)
                    .map(|v| v.re)
                    .fold(f64::INFINITY, f64::min);
                let target =
                    field.distance(&po.entries[idx].0, &bx.sigma.location) * (-lam_u * s_reg).exp();
                let eta0 = 1e-9_f64.min(target * 1e-3);
                if target > eta0 && lam_u.is_finite() {
                    let t_fwd = (target / eta0).ln() / lam_u;
                    for sign in [1.0, -1.0] {
                        let deep: Vec<f64> = bx
                            .sigma
                            .location
                            .iter()
                            .zip(bx.unstable_frame().column(0).iter())
                            .map(|(c, v)| c + sign * eta0 * v)
                            .collect();
                        if let Ok(y) = flow(field, &deep, t_fwd, 1e-13) {
                            candidates.push(y);
                        }
                    }
                }
            }
        }
    }
    candidates.extend(
        seed_points(&x0, params.seed_radius, params.seed_count, params.seed)
            .into_iter()
            .map(|p| field.project_point(&p)),
    );
    candidates.truncate(budget.max(1));
    let scores: Vec<f64> = candidates.par_iter().map(|y| scorer.score(y)).collect();
    if std::env::var("ORBITSHADE_DEBUG").is_ok() {
        for (i, (c, sc)) in candidates.iter().zip(&scores).enumerate() {
            eprintln!("seed {}: {:?} -> {:.6e}", i, &c[..c.len().min(3)], sc);
        }
    }
    budget = budget.saturating_sub(candidates.len());

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    // refine the best seeds with simplex descent
    let top = params.refine_top.max(1).min(order.len());
    let mut refined: Vec<RefinedCandidate> = Vec::new();
    let share = if top == 0 { 0 } else { budget / top };
    for &idx in order.iter().take(top) {
        if scores[idx].is_infinite() {
            refined.push(RefinedCandidate {
                point: candidates[idx].clone(),
                achieved: scores[idx],
                crossing_count: None,
            });
            continue;
        }
        let mut local_budget = share.min(budget);
        let before = local_budget;
        // coarse pass, then progressively finer restarts from the best
        // point: the head/tail pinning produces logarithmically narrow
        // descent funnels that a single simplex scale cannot follow
        let mut best_pt = candidates[idx].clone();
        let mut best_val = scores[idx];
        for scale_div in [4.0, 64.0, 4096.0, 1048576.0] {
            if local_budget == 0 {
                break;
            }
            let (pt, val) = nelder_mead(
                &|y: &[f64]| scorer.score(&field.project_point(y)),
                &best_pt,
                params.seed_radius / scale_div,
                params.refine_iters,
                &mut local_budget,
            );
            if val < best_val {
                best_val = val;
                best_pt = field.project_point(&pt);
            }
        }
        budget = budget.saturating_sub(before - local_budget);
        refined.push(RefinedCandidate {
            point: best_pt,
            achieved: best_val,
            crossing_count: None,
        });
    }
    // crossing counts of refined candidates, when a box chart is supplied
    if let Some(bx) = bx {
        let span = (rp.mid.len() - 1) as f64 * rp.dt + tail_h;
        let hb = if po.finite { 0.0 } else { tail_h };
        for rc in refined.iter_mut() {
            if !rc.achieved.is_finite() {
                continue;
            }
            rc.crossing_count =
                crossing_count(field, bx, &rc.point, hb, span, DEFAULT_EVENT_SUBDIV)
                    .ok()
                    .map(|r| r.count);
        }
    }

    let best = refined
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.achieved.partial_cmp(&b.achieved).unwrap().then(ia.cmp(ib))
        })
        .map(|(_, rc)| rc.clone())
        .ok_or_else(|| Error::Precondition("no candidates scored".into()))?;

    let threshold = if matches!(rule, ShadowRule::Rescaled { .. }) { 1.0 } else { epsilon };
    let mut warp = None;
    let mut achieved = best.achieved;
    if best.achieved.is_finite() {
        let (a2, w) = scorer.score_with_warp(&best.point)?;
        achieved = a2;
        warp = Some(match rule {
            ShadowRule::Strong { slope } => w.clamp_slopes(*slope),
            _ => w,
        });
    }
    let status = if achieved <= threshold {
        ShadowStatus::Found
    } else {
        ShadowStatus::NotFoundWithinBudget
    };
    Ok(ShadowingResult {
        status,
        witness: best.achieved.is_finite().then(|| best.point.clone()),
        warp,
        achieved,
        epsilon: threshold,
        budget_spent: params.budget - budget,
        crossing_count_of_witness: best.crossing_count,
        refined,
        dt,
    })
}

/// Best achieved distance with the found/not-found threshold removed.
/// Deterministic given the quasi-random seed.
pub fn shadowing_distance_estimate(
    field: &VectorFieldDef,
    po: &PseudoOrbit,
    rule: &ShadowRule,
    params: &SearchParams,
    bx: Option<&BoxNeighborhood>,
) -> Result<(f64, ShadowingResult)> {
    let res = shadow_search(field, po, f64::INFINITY, rule, params, bx)?;
    Ok((res.achieved, res))
}

/// Re-simulate a reported witness under its reparametrization and measure
/// the rule's sup objective, independently of the search internals.
pub fn verify_shadow(
    field: &VectorFieldDef,
    y: &[f64],
    warp: &Reparametrization,
    po: &PseudoOrbit,
    rule: &ShadowRule,
    params: &SearchParams,
) -> Result<f64> {
    match rule {
        ShadowRule::Strong { slope } => warp.validate(Some(*slope))?,
        _ => warp.validate(None)?,
    }
    let dt = params.dt.unwrap_or_else(|| default_dt(po));
    let tail_h = params.tail_horizon.unwrap_or(20.0);
    let eff_tol = if po.finite { params.int_tol } else { params.int_tol.min(1e-12) };
    let gauge = match rule {
        ShadowRule::Rescaled { gauge } => Some(gauge),
        _ => None,
    };
    let rp = build_reference(field, po, dt, tail_h, gauge, eff_tol)?;
    let n = rp.mid.len();

    // reconstruct the matched lattice pairs from the warp knots
    let snap = |v: f64, hi: usize| -> usize { ((v / dt).round().max(0.0) as usize).min(hi) };
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let knots = &warp.knots;
    let mut last_j = 0usize;
    for w in knots.windows(2) {
        let (i0, j0) = (snap(w[0].0, n - 1), snap(w[0].1, usize::MAX / 2));
        let (i1, j1) = (snap(w[1].0, n - 1), snap(w[1].1, usize::MAX / 2));
        let (di, dj) = (i1.saturating_sub(i0), j1.saturating_sub(j0));
        if di == dj {
            for k in 0..=di {
                pairs.push((i0 + k, j0 + k));
            }
        } else if di == 0 {
            for j in j0..=j1 {
                pairs.push((i0, j));
            }
        } else if dj == 0 {
            for i in i0..=i1 {
                pairs.push((i, j0));
            }
        } else {
            return Err(Error::Precondition(
                "warp knots do not follow a lattice matching".into(),
            ));
        }
        last_j = last_j.max(j1);
    }
    pairs.dedup();
    if pairs.is_empty() {
        return Err(Error::Empty("warp pairs".into()));
    }

    // candidate samples at the matched grid plus the tail windows
    let n_ext = rp.head.len();
    let mut times: Vec<f64> = Vec::new();
    for k in (1..=n_ext).rev() {
        times.push(-(k as f64) * dt);
    }
    for k in 0..=last_j {
        times.push(k as f64 * dt);
    }
    let s_end = last_j as f64 * dt;
    for k in 1..=rp.tail.len() {
        times.push(s_end + k as f64 * dt);
    }
    let pts = sample_at(field, &field.project_point(y), &times, eff_tol)?;
    let head = &pts[..n_ext];
    let midc = &pts[n_ext..n_ext + last_j + 1];
    let tailc = &pts[n_ext + last_j + 1..];

    let mut sup = 0.0_f64;
    for &(i, j) in &pairs {
        let d = field.distance(&rp.mid[i], &midc[j]);
        sup = sup.max(ratio_metric(d, rp.gauge_mid.as_ref().map(|v| v[i])));
    }
    for (k, (c, r)) in head.iter().zip(&rp.head).enumerate() {
        let d = field.distance(c, r);
        sup = sup.max(ratio_metric(d, rp.gauge_head.as_ref().map(|v| v[k])));
    }
    for (k, (c, r)) in tailc.iter().zip(&rp.tail).enumerate() {
        let d = field.distance(c, r);
        sup = sup.max(ratio_metric(d, rp.gauge_tail.as_ref().map(|v| v[k])));
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo::{slice_orbit, validate, JumpRule};

    #[test]
    fn self_shadowing_of_sliced_orbit() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let po = slice_orbit(
            &f,
            &[0.5, 0.0],
            &[1.0, 1.5, 1.2, 1.0],
            JumpRule::Uniform(10.0 * DEFAULT_TOL),
        )
        .unwrap();
        assert!(validate(&f, &po).unwrap().valid);
        let params = SearchParams { seed_count: 4, budget: 400, ..Default::default() };
        let res =
            shadow_search(&f, &po, 100.0 * DEFAULT_TOL, &ShadowRule::Plain, &params, None)
                .unwrap();
        assert_eq!(res.status, ShadowStatus::Found, "achieved {}", res.achieved);
        assert!(res.achieved <= 100.0 * DEFAULT_TOL);
        let warp = res.warp.as_ref().unwrap();
        assert!(warp.sup_deviation_from_identity() <= 2.0 * res.dt);
        // the witness is essentially the original initial point
        let w = res.witness.as_ref().unwrap();
        assert!(crate::vecutil::dist(w, &[0.5, 0.0]) <= 1e-3);
    }

    #[test]
    fn audit_reproduces_achieved_on_found_result() {
        let f = VectorFieldDef::builtin("saddle-with-return", &[]).unwrap();
        let po = slice_orbit(
            &f,
            &[0.4, 0.1],
            &[1.0, 1.0, 1.3],
            JumpRule::Uniform(10.0 * DEFAULT_TOL),
        )
        .unwrap();
        let params = SearchParams { seed_count: 4, budget: 300, ..Default::default() };
        let res =
            shadow_search(&f, &po, 100.0 * DEFAULT_TOL, &ShadowRule::Plain, &params, None)
                .unwrap();
        assert_eq!(res.status, ShadowStatus::Found);
        let audited = verify_shadow(
            &f,
            res.witness.as_ref().unwrap(),
            res.warp.as_ref().unwrap(),
            &po,
            &ShadowRule::Plain,
            &params,
        )
        .unwrap();
        assert!(
            (audited - res.achieved).abs() <= 10.0 * DEFAULT_TOL,
            "audit {} vs achieved {}",
            audited,
            res.achieved
        );
    }

    #[test]
    fn corrupted_warp_is_rejected() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let po = slice_orbit(&f, &[0.5, 0.0], &[1.0, 1.0], JumpRule::Uniform(1e-6)).unwrap();
        let bad = Reparametrization { knots: vec![(0.0, 0.0), (1.0, 0.5), (0.8, 0.9)] };
        let err = verify_shadow(
            &f,
            &[0.5, 0.0],
            &bad,
            &po,
            &ShadowRule::Plain,
            &SearchParams::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn rule_ordering_strong_never_beats_plain() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let po = slice_orbit(
            &f,
            &[0.45, 0.05],
            &[1.0, 1.4, 1.1],
            JumpRule::Uniform(1e-6),
        )
        .unwrap();
        let params = SearchParams { seed_count: 6, budget: 500, ..Default::default() };
        let (plain, _) =
            shadowing_distance_estimate(&f, &po, &ShadowRule::Plain, &params, None).unwrap();
        let (strong, _) = shadowing_distance_estimate(
            &f,
            &po,
            &ShadowRule::Strong { slope: 0.02 },
            &params,
            None,
        )
        .unwrap();
        assert!(strong >= plain - 1e-12, "strong {} < plain {}", strong, plain);
    }

    #[test]
    fn rescaled_self_shadow_found_at_ratio_one() {
        let f = VectorFieldDef::builtin("saddle-with-return", &[]).unwrap();
        let gauge = GaugeFunction::half_distance(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
        ]);
        // a regular orbit arc away from the singularities
        let po = slice_orbit(
            &f,
            &[0.5, 0.4],
            &[1.0, 1.0],
            JumpRule::Gauge(gauge.clone()),
        )
        .unwrap();
        assert!(validate(&f, &po).unwrap().valid);
        let params = SearchParams { seed_count: 4, budget: 300, ..Default::default() };
        let res = shadow_search(
            &f,
            &po,
            1.0,
            &ShadowRule::Rescaled { gauge },
            &params,
            None,
        )
        .unwrap();
        assert_eq!(res.status, ShadowStatus::Found);
        assert!(res.achieved <= 0.01, "ratio {}", res.achieved);
    }

    #[test]
    fn budget_zero_is_an_error() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let po = slice_orbit(&f, &[0.5, 0.0], &[1.0], JumpRule::Uniform(1e-6)).unwrap();
        let params = SearchParams { budget: 0, ..Default::default() };
        assert!(shadow_search(&f, &po, 0.1, &ShadowRule::Plain, &params, None).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let po = slice_orbit(&f, &[0.5, 0.0], &[1.0, 1.0], JumpRule::Uniform(1e-6)).unwrap();
        let params = SearchParams { seed_count: 8, budget: 300, ..Default::default() };
        let a = shadowing_distance_estimate(&f, &po, &ShadowRule::Plain, &params, None)
            .unwrap()
            .0;
        let b = shadowing_distance_estimate(&f, &po, &ShadowRule::Plain, &params, None)
            .unwrap()
            .0;
        assert_eq!(a, b);
    }
}
