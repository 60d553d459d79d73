//! Pseudo-orbit construction and validation: uniform-jump and
//! gauge-rescaled rules, finite chains, periodized chains, the loop-seed
//! and loop-multiplication constructions around a saddle, and the
//! all-regular rescaled chain built from a section return point.

use serde::{Deserialize, Serialize};

use crate::field::VectorFieldDef;
use crate::flow::{collect_events, first_event, flow, EventDir, DEFAULT_TOL};
use crate::localmodel::{band_index, exit_time_forward, BoxNeighborhood, ExitOutcome};
use crate::vecutil::{all_finite, norm};
use crate::{Error, Result};

/// Gauge function `e(x) = min(slope * dist(x, Sing), cap)`: continuous,
/// vanishing exactly on the singularity set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeFunction {
    pub singularities: Vec<Vec<f64>>,
    pub slope: f64,
    pub cap: f64,
}

impl GaugeFunction {
    pub fn new(singularities: Vec<Vec<f64>>, slope: f64, cap: f64) -> Self {
        GaugeFunction { singularities, slope, cap }
    }

    /// Distance-profile gauge with the default profile g(s) = s/2.
    pub fn half_distance(singularities: Vec<Vec<f64>>) -> Self {
        GaugeFunction { singularities, slope: 0.5, cap: f64::INFINITY }
    }

    pub fn eval(&self, field: &VectorFieldDef, x: &[f64]) -> f64 {
        let d = self
            .singularities
            .iter()
            .map(|s| field.distance(x, s))
            .fold(f64::INFINITY, f64::min);
        if !d.is_finite() {
            return self.cap;
        }
        (self.slope * d).min(self.cap)
    }
}

#[derive(Debug, Clone)]
pub enum JumpRule {
    Uniform(f64),
    Gauge(GaugeFunction),
}

/// A finite pseudo-orbit, or a finite truncation of a bi-infinite one
/// (`finite = false`), with per-entry durations `t_i >= t_min`.
#[derive(Debug, Clone)]
pub struct PseudoOrbit {
    pub entries: Vec<(Vec<f64>, f64)>,
    pub t_min: f64,
    pub jump_rule: JumpRule,
    pub finite: bool,
}

impl PseudoOrbit {
    pub fn new(
        entries: Vec<(Vec<f64>, f64)>,
        t_min: f64,
        jump_rule: JumpRule,
        finite: bool,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("pseudo-orbit entries".into()));
        }
        for (x, t) in &entries {
            if !all_finite(x) {
                return Err(Error::NonFinite { context: "pseudo-orbit entry".into() });
            }
            if *t < t_min {
                return Err(Error::Precondition(format!(
                    "entry duration {} below minimum {}",
                    t, t_min
                )));
            }
        }
        Ok(PseudoOrbit { entries, t_min, jump_rule, finite })
    }

    /// Accumulated times `s_i` (s_0 = 0, s_{i+1} - s_i = t_i), one per
    /// entry plus the final endpoint.
    pub fn accumulated_times(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.entries.len() + 1);
        let mut acc = 0.0;
        s.push(0.0);
        for (_, t) in &self.entries {
            acc += t;
            s.push(acc);
        }
        s
    }

    pub fn total_time(&self) -> f64 {
        self.entries.iter().map(|(_, t)| t).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_point(&self) -> &[f64] {
        &self.entries[0].0
    }
}

/// Per-jump audit of a pseudo-orbit.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub max_jump: f64,
    pub jumps: Vec<f64>,
    /// Allowed bound for each jump under the rule.
    pub bounds: Vec<f64>,
    pub first_violation: Option<usize>,
    pub rule: String,
    pub measure_tol: f64,
}

/// Measure every consecutive jump `d(X_{t_i}(x_i), x_{i+1})` with an
/// integrator tolerance well under the jump budget. Under the gauge rule
/// a jump is bounded by the gauge at the conservative end of the gluing:
/// `min(e(x_i), e(X_{t_i}(x_i)))`, which realizes the no-mixed-jump
/// obstruction in both directions.
pub fn validate(field: &VectorFieldDef, po: &PseudoOrbit) -> Result<ValidationReport> {
    let rule_desc = match &po.jump_rule {
        JumpRule::Uniform(d) => format!("uniform(delta={:.3e})", d),
        JumpRule::Gauge(g) => format!("gauge(slope={},cap={:.3e})", g.slope, g.cap),
    };
    let scale = match &po.jump_rule {
        JumpRule::Uniform(d) => *d,
        JumpRule::Gauge(g) => po
            .entries
            .iter()
            .map(|(x, _)| g.eval(field, x))
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min),
    };
    let measure_tol = (scale / 100.0).clamp(1e-13, DEFAULT_TOL);
    let mut jumps = Vec::with_capacity(po.entries.len().saturating_sub(1));
    let mut bounds = Vec::with_capacity(jumps.capacity());
    let mut first_violation = None;
    for i in 0..po.entries.len().saturating_sub(1) {
        let (x, t) = &po.entries[i];
        let flowed = flow(field, x, *t, measure_tol)?;
        let jump = field.distance(&flowed, &po.entries[i + 1].0);
        let bound = match &po.jump_rule {
            JumpRule::Uniform(d) => *d,
            JumpRule::Gauge(g) => g.eval(field, x).min(g.eval(field, &flowed)),
        };
        if jump > bound && first_violation.is_none() {
            first_violation = Some(i);
        }
        jumps.push(jump);
        bounds.push(bound);
    }
    let max_jump = jumps.iter().cloned().fold(0.0, f64::max);
    Ok(ValidationReport {
        valid: first_violation.is_none(),
        max_jump,
        jumps,
        bounds,
        first_violation,
        rule: rule_desc,
        measure_tol,
    })
}

/// Slice a true orbit into a pseudo-orbit with the given segment
/// durations (all jumps are integration noise).
pub fn slice_orbit(
    field: &VectorFieldDef,
    x0: &[f64],
    durations: &[f64],
    rule: JumpRule,
) -> Result<PseudoOrbit> {
    if durations.is_empty() {
        return Err(Error::Empty("durations".into()));
    }
    let mut entries = Vec::with_capacity(durations.len());
    let mut x = x0.to_vec();
    for &t in durations {
        entries.push((x.clone(), t));
        x = flow(field, &x, t, DEFAULT_TOL)?;
    }
    let t_min = durations.iter().cloned().fold(f64::INFINITY, f64::min);
    PseudoOrbit::new(entries, t_min, rule, true)
}

/// A random valid delta-chain: each entry flows for a random duration in
/// `t_range` and then jumps by at most `0.9 * delta` in a random
/// direction (projected back onto the constraint manifold). Deterministic
/// given `seed`.
pub fn random_chain(
    field: &VectorFieldDef,
    start: &[f64],
    segments: usize,
    delta: f64,
    t_range: (f64, f64),
    seed: u64,
) -> Result<PseudoOrbit> {
    if segments == 0 {
        return Err(Error::Empty("segments".into()));
    }
    if t_range.0 < 1.0 || t_range.1 < t_range.0 {
        return Err(Error::Precondition("need 1 <= t_lo <= t_hi".into()));
    }
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x2545f4914f6cdd1d) | 1;
    let mut unif = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let n = field.dimension();
    let mut entries = Vec::with_capacity(segments);
    let mut x = field.project_point(start);
    for _ in 0..segments {
        let t = t_range.0 + unif() * (t_range.1 - t_range.0);
        entries.push((x.clone(), t));
        let flowed = flow(field, &x, t, DEFAULT_TOL)?;
        let dir: Vec<f64> = (0..n).map(|_| unif() - 0.5).collect();
        let nn = norm(&dir).max(1e-12);
        let step = 0.9 * delta * unif();
        x = field.project_point(
            &flowed
                .iter()
                .zip(&dir)
                .map(|(f, d)| f + step * d / nn)
                .collect::<Vec<f64>>(),
        );
    }
    let po = PseudoOrbit::new(entries, t_range.0, JumpRule::Uniform(delta), true)?;
    let rep = validate(field, &po)?;
    if !rep.valid {
        return Err(Error::Precondition(format!(
            "random chain failed validation (max jump {:.3e} > {:.3e})",
            rep.max_jump, delta
        )));
    }
    Ok(po)
}

fn check_seed_distances(
    field: &VectorFieldDef,
    sigma: &[f64],
    x0: &[f64],
    t0: f64,
    delta: f64,
) -> Result<Vec<f64>> {
    if t0 < 1.0 {
        return Err(Error::Precondition(format!(
            "segment duration {} below the T = 1 rule",
            t0
        )));
    }
    let d_start = field.distance(sigma, x0);
    if d_start > delta {
        return Err(Error::Precondition(format!(
            "d(sigma, x0) = {:.3e} exceeds delta = {:.3e}",
            d_start, delta
        )));
    }
    let end = flow(field, x0, t0, DEFAULT_TOL)?;
    let d_end = field.distance(&end, sigma);
    if d_end > delta {
        return Err(Error::Precondition(format!(
            "d(X_t0(x0), sigma) = {:.3e} exceeds delta = {:.3e}",
            d_end, delta
        )));
    }
    Ok(end)
}

/// The loop-seed chain: a finite truncation of the bi-infinite chain
/// `..., (sigma,1), (x0,t0), (sigma,1), ...` with `tail_length` extra
/// `(sigma,1)` entries per side beyond the mandatory one.
pub fn build_loop_seed_chain(
    field: &VectorFieldDef,
    sigma: &[f64],
    x0: &[f64],
    t0: f64,
    tail_length: usize,
    delta_target: f64,
) -> Result<PseudoOrbit> {
    build_loop_multiplication_chain(field, sigma, x0, t0, 0, tail_length, delta_target)
}

/// The loop-multiplication chain: `n_repeat + 1` consecutive `(x0, t0)`
/// segments between constant `(sigma, 1)` tails.
pub fn build_loop_multiplication_chain(
    field: &VectorFieldDef,
    sigma: &[f64],
    x0: &[f64],
    t0: f64,
    n_repeat: usize,
    tail_length: usize,
    delta_target: f64,
) -> Result<PseudoOrbit> {
    check_seed_distances(field, sigma, x0, t0, delta_target)?;
    let side = tail_length + 1;
    let mut entries = Vec::with_capacity(2 * side + n_repeat + 1);
    for _ in 0..side {
        entries.push((sigma.to_vec(), 1.0));
    }
    for _ in 0..=n_repeat {
        entries.push((x0.to_vec(), t0));
    }
    for _ in 0..side {
        entries.push((sigma.to_vec(), 1.0));
    }
    let po = PseudoOrbit::new(entries, 1.0, JumpRule::Uniform(delta_target), false)?;
    let rep = validate(field, &po)?;
    if !rep.valid {
        return Err(Error::Precondition(format!(
            "constructed chain fails validation at jump {} ({:.3e} > {:.3e})",
            rep.first_violation.unwrap(),
            rep.jumps[rep.first_violation.unwrap()],
            rep.bounds[rep.first_violation.unwrap()]
        )));
    }
    Ok(po)
}

/// Concatenate a closed finite chain with itself `copies` times.
pub fn periodize(field: &VectorFieldDef, po: &PseudoOrbit, copies: usize) -> Result<PseudoOrbit> {
    if !po.finite {
        return Err(Error::Precondition("periodize requires a finite chain".into()));
    }
    if copies == 0 {
        return Err(Error::Precondition("copies must be >= 1".into()));
    }
    // closing jump must satisfy the rule
    let (last_x, last_t) = po.entries.last().unwrap();
    let closed = flow(field, last_x, *last_t, DEFAULT_TOL)?;
    let gap = field.distance(&closed, po.first_point());
    let bound = match &po.jump_rule {
        JumpRule::Uniform(d) => *d,
        JumpRule::Gauge(g) => g.eval(field, last_x).min(g.eval(field, &closed)),
    };
    if gap > bound {
        return Err(Error::Precondition(format!(
            "closing jump {:.3e} exceeds the rule bound {:.3e}",
            gap, bound
        )));
    }
    let mut entries = Vec::with_capacity(po.entries.len() * copies);
    for _ in 0..copies {
        entries.extend(po.entries.iter().cloned());
    }
    let out = PseudoOrbit::new(entries, po.t_min, po.jump_rule.clone(), true)?;
    let rep = validate(field, &out)?;
    if !rep.valid {
        return Err(Error::Precondition(
            "periodized chain fails validation".into(),
        ));
    }
    Ok(out)
}

/// A section return: `q` on the diamond section whose orbit exits the box
/// at time `u = t^+_q` and meets the section again at time `s` in a band
/// adjacent to its own.
#[derive(Debug, Clone, Serialize)]
pub struct ReturnTriple {
    pub q: Vec<f64>,
    pub u: f64,
    pub s: f64,
    pub band: i64,
    pub return_band: i64,
    /// Section point reached at time `s`.
    pub section_return: Vec<f64>,
    /// Boundary re-entry point of the return pass and its time.
    pub entry_point: Vec<f64>,
    pub entry_time: f64,
    /// Boundary exit point at time `u`.
    pub exit_point: Vec<f64>,
}

fn section_seeds(bx: &BoxNeighborhood, band: i64, per_band: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let (s, u) = (bx.stable_dim(), bx.unstable_dim());
    let lo = (-(band as f64 + 1.0)).exp();
    let hi = (-(band as f64)).exp();
    for k in 0..per_band {
        let rho = lo + (hi - lo) * (k as f64 + 0.5) / per_band as f64;
        // directions on the stable/unstable unit spheres
        let s_dirs: Vec<Vec<f64>> = if s == 1 {
            vec![vec![1.0], vec![-1.0]]
        } else {
            (0..4)
                .map(|a| {
                    let th = a as f64 * std::f64::consts::PI / 2.0;
                    let mut v = vec![0.0; s];
                    v[0] = th.cos();
                    v[1] = th.sin();
                    v
                })
                .collect()
        };
        let u_dirs: Vec<Vec<f64>> = if u == 1 {
            vec![vec![1.0], vec![-1.0]]
        } else {
            (0..4)
                .map(|a| {
                    let th = a as f64 * std::f64::consts::PI / 2.0;
                    let mut v = vec![0.0; u];
                    v[0] = th.cos();
                    v[1] = th.sin();
                    v
                })
                .collect()
        };
        for sd in &s_dirs {
            for ud in &u_dirs {
                let vs = nalgebra::DVector::from_iterator(s, sd.iter().map(|v| v * rho));
                let vu = nalgebra::DVector::from_iterator(u, ud.iter().map(|v| v * rho));
                out.push(bx.from_chart(&vs, &vu));
            }
        }
    }
    out
}

/// Search the three bands around `band_center` for a section return.
/// `budget` bounds the number of seed orbits followed.
pub fn find_return_point(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    band_center: i64,
    budget: usize,
) -> Result<ReturnTriple> {
    if band_center - 1 < bx.k_min {
        return Err(Error::Precondition(format!(
            "band window {}..{} dips below K = {}",
            band_center - 1,
            band_center + 1,
            bx.k_min
        )));
    }
    let outer_horizon = 60.0_f64.max(200.0 / bx.cert.lambda);
    let mut tried = 0usize;
    for band in [band_center, band_center - 1, band_center + 1] {
        for q in section_seeds(bx, band, 4) {
            if tried >= budget {
                return Err(Error::NoReturnPoint { tried });
            }
            tried += 1;
            let exit = match exit_time_forward(field, bx, &q, 80.0 / bx.cert.lambda) {
                Ok(ExitOutcome::Exit { t, point }) => (t, point),
                Ok(ExitOutcome::NoExitWithinHorizon) => continue,
                Err(_) => continue,
            };
            let (u, exit_point) = exit;
            // follow the orbit outside until it re-enters the box
            let gb = |y: &[f64]| bx.boundary_gap(y);
            let reentry = match first_event(
                field,
                &exit_point,
                outer_horizon,
                DEFAULT_TOL,
                &gb,
                EventDir::Falling,
                16,
            ) {
                Ok(Some(hit)) if hit.t > 1e-6 => hit,
                _ => continue,
            };
            // then to the diamond section inside the box
            let gd = |y: &[f64]| bx.diamond_gap(y);
            let section = match collect_events(
                field,
                &reentry.y,
                40.0 / bx.cert.lambda,
                DEFAULT_TOL,
                &gd,
                EventDir::Any,
                16,
            ) {
                Ok(hits) => hits.into_iter().find(|h| h.t > 0.0 && bx.contains(&h.y)),
                Err(_) => continue,
            };
            let Some(section_hit) = section else { continue };
            let Ok(ret_band) = band_index(bx, &section_hit.y) else { continue };
            if (ret_band.n - band_center).abs() > 1 {
                continue;
            }
            let s_total = u + reentry.t + section_hit.t;
            return Ok(ReturnTriple {
                q,
                u,
                s: s_total,
                band,
                return_band: ret_band.n,
                section_return: section_hit.y,
                entry_point: reentry.y,
                entry_time: u + reentry.t,
                exit_point,
            });
        }
    }
    Err(Error::NoReturnPoint { tried })
}

/// Track the one-dimensional invariant manifold seed to the box boundary:
/// forward along the unstable direction, backward along the stable one.
fn manifold_boundary_point(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    frame_col: nalgebra::DVector<f64>,
    sign: f64,
    forward: bool,
) -> Result<(Vec<f64>, f64)> {
    let eta = bx.r / 100.0;
    let seed: Vec<f64> = bx
        .sigma
        .location
        .iter()
        .zip(frame_col.iter())
        .map(|(c, v)| c + sign * eta * v)
        .collect();
    let horizon = 80.0 / bx.cert.lambda;
    let out = if forward {
        exit_time_forward(field, bx, &seed, horizon)?
    } else {
        crate::localmodel::exit_time_backward(field, bx, &seed, horizon)?
    };
    match out {
        ExitOutcome::Exit { t, point } => Ok((point, t)),
        ExitOutcome::NoExitWithinHorizon => Err(Error::Precondition(
            "manifold seed did not reach the box boundary".into(),
        )),
    }
}

/// Sampled infimum of the gauge over the box boundary.
pub fn boundary_gauge_infimum(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    gauge: &GaugeFunction,
) -> f64 {
    let (s, u) = (bx.stable_dim(), bx.unstable_dim());
    let mut d0 = f64::INFINITY;
    let mut probe = |vs: nalgebra::DVector<f64>, vu: nalgebra::DVector<f64>| {
        let p = bx.from_chart(&vs, &vu);
        d0 = d0.min(gauge.eval(field, &p));
    };
    for k in 0..16 {
        let f = -1.0 + 2.0 * (k as f64 + 0.5) / 16.0;
        // stable faces |v^s| = r
        let mut vs = nalgebra::DVector::zeros(s);
        vs[0] = bx.r;
        let mut vu = nalgebra::DVector::zeros(u);
        vu[0] = f * bx.r;
        probe(vs.clone(), vu.clone());
        vs[0] = -bx.r;
        probe(vs, vu);
        // unstable faces |v^u| = r
        let mut vs = nalgebra::DVector::zeros(s);
        vs[0] = f * bx.r;
        let mut vu = nalgebra::DVector::zeros(u);
        vu[0] = bx.r;
        probe(vs.clone(), vu.clone());
        vu[0] = -bx.r;
        probe(vs, vu);
    }
    d0
}

/// Build the all-regular gauge chain: a backward tail of unit slices
/// descending into the singularity along the unstable manifold, the
/// return segment of a section return point, and a forward tail of unit
/// slices along the stable manifold. Jumps happen only near the boundary,
/// where the gauge is bounded below by its boundary infimum.
pub fn build_rescaled_chain(
    field: &VectorFieldDef,
    bx: &BoxNeighborhood,
    gauge: &GaugeFunction,
    budget: usize,
    tail_length: usize,
) -> Result<PseudoOrbit> {
    if tail_length == 0 {
        return Err(Error::Precondition("tail_length must be >= 1".into()));
    }
    // a return point in some admissible band window
    let mut triple = None;
    let mut tried_total = 0usize;
    for nc in (bx.k_min + 1)..(bx.k_min + 5) {
        match find_return_point(field, bx, nc, budget.saturating_sub(tried_total)) {
            Ok(t) => {
                triple = Some(t);
                break;
            }
            Err(Error::NoReturnPoint { tried }) => tried_total += tried,
            Err(e) => return Err(e),
        }
    }
    let Some(triple) = triple else {
        return Err(Error::NoReturnPoint { tried: tried_total });
    };

    // unstable-branch boundary point on the side the orbit exits
    let u_sign = {
        let c = bx.chart(&triple.exit_point);
        if c.vu[0] >= 0.0 {
            1.0
        } else {
            -1.0
        }
    };
    let (x0_prime, _) = manifold_boundary_point(
        field,
        bx,
        bx.unstable_frame().column(0).into_owned(),
        u_sign,
        true,
    )?;
    // stable-branch boundary point on the side the orbit re-enters
    let entry_chart = bx.chart(&triple.entry_point);
    let s_dir = {
        let n = entry_chart.vs.norm();
        if n == 0.0 {
            bx.stable_frame().column(0).into_owned()
        } else {
            bx.stable_frame() * (entry_chart.vs / n)
        }
    };
    let (x2, _) = manifold_boundary_point(field, bx, s_dir, 1.0, false)?;

    let middle_duration = triple.entry_time - triple.u;
    if middle_duration < 1.0 {
        return Err(Error::Precondition(format!(
            "outer return lasts {:.3} < 1, violating the T = 1 rule",
            middle_duration
        )));
    }

    let mut entries: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in (1..=tail_length).rev() {
        entries.push((flow(field, &x0_prime, -(k as f64), DEFAULT_TOL)?, 1.0));
    }
    entries.push((triple.exit_point.clone(), middle_duration));
    for k in 0..tail_length {
        entries.push((flow(field, &x2, k as f64, DEFAULT_TOL)?, 1.0));
    }
    let po = PseudoOrbit::new(entries, 1.0, JumpRule::Gauge(gauge.clone()), false)?;
    let rep = validate(field, &po)?;
    if !rep.valid {
        let i = rep.first_violation.unwrap();
        let d0 = boundary_gauge_infimum(field, bx, gauge);
        return Err(Error::GaugeTooSmall { required: rep.jumps[i], available: d0 });
    }
    // the construction must never glue a regular point to a singularity
    debug_assert!(po
        .entries
        .iter()
        .all(|(x, _)| norm(&field.eval(x).unwrap_or_default()) > 1e-12));
    Ok(po)
}
