//! Adaptive Dormand-Prince 5(4) integration with dense output and event
//! detection.
//!
//! The controller keeps the local error per unit time below `tol`; the
//! free 4th-order interpolant provides dense output inside each accepted
//! step, which both trajectory sampling and event refinement use. Under
//! the unit-sphere constraint the state is renormalized after every
//! accepted step.

use crate::field::{Constraint, VectorFieldDef};
use crate::vecutil::all_finite;
use crate::{Error, Result};

/// Default integrator tolerance: two orders below the smallest geometric
/// tolerance used by the experiments.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default trajectory sampling step.
pub const DEFAULT_DT_OUT: f64 = 0.01;

const MAX_STEPS: usize = 50_000_000;
const H_MAX: f64 = 5.0;

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// embedded error coefficients (order 5 minus order 4)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// dense-output coefficients
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Sampled trajectory arc.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Integrator error bound used to produce the samples.
    pub tolerance: f64,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>, tolerance: f64) -> Result<Self> {
        if times.len() != points.len() || times.is_empty() {
            return Err(Error::Empty("trajectory must have matching, nonempty samples".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Precondition(format!(
                    "trajectory times not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for p in &points {
            if !all_finite(p) {
                return Err(Error::NonFinite { context: "trajectory sample".into() });
            }
        }
        Ok(Trajectory { times, points, tolerance })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One-step-at-a-time integrator with dense output over the last accepted
/// step.
pub struct Stepper<'a> {
    field: &'a VectorFieldDef,
    tol: f64,
    dir: f64,
    pub t: f64,
    pub y: Vec<f64>,
    pub t_prev: f64,
    h: f64,
    k: [Vec<f64>; 7],
    rcont: [Vec<f64>; 5],
    fsal: bool,
    steps: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(field: &'a VectorFieldDef, y0: &[f64], dir: f64, tol: f64) -> Result<Self> {
        if tol <= 0.0 {
            return Err(Error::Precondition("tol must be positive".into()));
        }
        if y0.len() != field.dimension() {
            return Err(Error::Dimension { expected: field.dimension(), got: y0.len() });
        }
        if !all_finite(y0) {
            return Err(Error::NonFinite { context: "initial state".into() });
        }
        let n = y0.len();
        let y = field.project_point(y0);
        let mut st = Stepper {
            field,
            tol,
            dir: dir.signum(),
            t: 0.0,
            y,
            t_prev: 0.0,
            h: 0.0,
            k: std::array::from_fn(|_| vec![0.0; n]),
            rcont: std::array::from_fn(|_| vec![0.0; n]),
            fsal: false,
            steps: 0,
        };
        // initial step size from the local velocity scale
        let mut f0 = vec![0.0; n];
        if !st.field.eval_into(&st.y, &mut f0) {
            return Err(Error::NonFinite { context: "field at initial state".into() });
        }
        let ynorm: f64 = 1.0 + st.y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let fnorm: f64 = 1.0 + f0.iter().map(|v| v.abs()).fold(0.0, f64::max);
        st.h = (0.01 * ynorm / fnorm).clamp(1e-8, 0.1);
        st.k[0] = f0;
        st.fsal = true;
        Ok(st)
    }

    /// Take one accepted step (at most `h_cap` long when given). Returns the
    /// signed step actually taken; dense output over it becomes available.
    pub fn advance(&mut self, h_cap: Option<f64>) -> Result<f64> {
        let n = self.y.len();
        let mut err_buf = vec![0.0; n];
        let mut ytmp = vec![0.0; n];
        loop {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let mut h = self.h.min(H_MAX);
            if let Some(cap) = h_cap {
                h = h.min(cap);
            }
            if h < 1e-14 * (1.0 + self.t.abs()) {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let hs = self.dir * h;

            if !self.fsal && !self.field.eval_into(&self.y, &mut self.k[0]) {
                return Err(Error::NonFinite { context: format!("field at t = {}", self.t) });
            }
            macro_rules! stage {
                ($dst:expr, $($c:expr => $i:expr),+) => {{
                    for j in 0..n {
                        let mut acc = self.y[j];
                        $(acc += hs * $c * self.k[$i][j];)+
                        ytmp[j] = acc;
                    }
                    let (pre, post) = self.k.split_at_mut($dst);
                    let _ = pre;
                    if !self.field.eval_into(&ytmp, &mut post[0]) {
                        // treat as a rejected step: shrink and retry
                        self.h = h * 0.2;
                        self.fsal = false;
                        continue;
                    }
                }};
            }
            stage!(1, A21 => 0);
            stage!(2, A31 => 0, A32 => 1);
            stage!(3, A41 => 0, A42 => 1, A43 => 2);
            stage!(4, A51 => 0, A52 => 1, A53 => 2, A54 => 3);
            stage!(5, A61 => 0, A62 => 1, A63 => 2, A64 => 3, A65 => 4);
            // 5th-order solution
            let mut y1 = vec![0.0; n];
            for j in 0..n {
                y1[j] = self.y[j]
                    + hs * (B1 * self.k[0][j]
                        + B3 * self.k[2][j]
                        + B4 * self.k[3][j]
                        + B5 * self.k[4][j]
                        + B6 * self.k[5][j]);
            }
            let (pre, post) = self.k.split_at_mut(6);
            let _ = pre;
            if !self.field.eval_into(&y1, &mut post[0]) || !all_finite(&y1) {
                self.h = h * 0.2;
                self.fsal = false;
                continue;
            }
            // error per unit time
            let mut err = 0.0_f64;
            for j in 0..n {
                err_buf[j] = E1 * self.k[0][j]
                    + E3 * self.k[2][j]
                    + E4 * self.k[3][j]
                    + E5 * self.k[4][j]
                    + E6 * self.k[5][j]
                    + E7 * self.k[6][j];
                let sc = 1.0 + self.y[j].abs().max(y1[j].abs());
                err = err.max((err_buf[j] / sc).abs());
            }
            if err <= self.tol {
                // accept: build dense coefficients
                for j in 0..n {
                    let ydiff = y1[j] - self.y[j];
                    let bspl = hs * self.k[0][j] - ydiff;
                    self.rcont[0][j] = self.y[j];
                    self.rcont[1][j] = ydiff;
                    self.rcont[2][j] = bspl;
                    self.rcont[3][j] = ydiff - hs * self.k[6][j] - bspl;
                    self.rcont[4][j] = hs
                        * (D1 * self.k[0][j]
                            + D3 * self.k[2][j]
                            + D4 * self.k[3][j]
                            + D5 * self.k[4][j]
                            + D6 * self.k[5][j]
                            + D7 * self.k[6][j]);
                }
                self.t_prev = self.t;
                self.t += hs;
                if self.field.constraint() == Constraint::UnitSphere {
                    let nrm: f64 = y1.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if nrm > 0.0 {
                        for v in y1.iter_mut() {
                            *v /= nrm;
                        }
                    }
                }
                self.y = y1;
                self.k.swap(0, 6); // FSAL
                self.fsal = true;
                let grow = if err == 0.0 { 5.0 } else { (self.tol / err).powf(0.2) * 0.9 };
                self.h = (h * grow.clamp(0.2, 5.0)).min(H_MAX);
                return Ok(hs);
            }
            // reject
            self.h = h * ((self.tol / err).powf(0.2) * 0.9).clamp(0.1, 0.9);
            self.fsal = true; // k[0] still holds f(t, y)
        }
    }

    /// Dense-output evaluation at `t` inside the last accepted step.
    pub fn dense_into(&self, t: f64, out: &mut [f64]) {
        let span = self.t - self.t_prev;
        let theta = if span == 0.0 { 0.0 } else { (t - self.t_prev) / span };
        let th1 = 1.0 - theta;
        for j in 0..out.len() {
            out[j] = self.rcont[0][j]
                + theta
                    * (self.rcont[1][j]
                        + th1
                            * (self.rcont[2][j]
                                + theta * (self.rcont[3][j] + th1 * self.rcont[4][j])));
        }
    }

    pub fn dense(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y.len()];
        self.dense_into(t, &mut out);
        out
    }
}

/// Flow the point `x` for a signed duration `t`.
pub fn flow(field: &VectorFieldDef, x: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
    if t == 0.0 {
        if x.len() != field.dimension() {
            return Err(Error::Dimension { expected: field.dimension(), got: x.len() });
        }
        return Ok(x.to_vec());
    }
    let dir = t.signum();
    let mut st = Stepper::new(field, x, dir, tol)?;
    let target = t.abs();
    loop {
        let remaining = target - st.t.abs();
        if remaining <= 1e-14 * (1.0 + target) {
            return Ok(st.y.clone());
        }
        st.advance(Some(remaining))?;
    }
}

/// Dense-sampled trajectory over `[0, t_end]` at output step `dt_out`.
/// The final sample lands exactly on `t_end`.
pub fn flow_trajectory(
    field: &VectorFieldDef,
    x: &[f64],
    t_end: f64,
    dt_out: f64,
    tol: f64,
) -> Result<Trajectory> {
    if t_end <= 0.0 || dt_out <= 0.0 {
        return Err(Error::Precondition("t_end and dt_out must be positive".into()));
    }
    let mut st = Stepper::new(field, x, 1.0, tol)?;
    let mut times = vec![0.0];
    let mut points = vec![st.y.clone()];
    let mut next = dt_out;
    loop {
        let remaining = t_end - st.t;
        if remaining <= 1e-14 * (1.0 + t_end) {
            break;
        }
        st.advance(Some(remaining))?;
        while next <= st.t + 1e-14 * (1.0 + st.t) && next < t_end - 1e-12 * (1.0 + t_end) {
            times.push(next);
            points.push(field.project_point(&st.dense(next)));
            next += dt_out;
        }
        if (st.t - t_end).abs() <= 1e-14 * (1.0 + t_end) {
            times.push(t_end);
            points.push(st.y.clone());
            break;
        }
    }
    Trajectory::new(times, points, tol)
}

/// Sample the orbit of `x` at the given sorted times, which may include
/// negative values (the backward arc is integrated separately).
pub fn sample_at(field: &VectorFieldDef, x: &[f64], times: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
    for w in times.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Precondition("sample times must be sorted".into()));
        }
    }
    let mut out = vec![Vec::new(); times.len()];
    let split = times.partition_point(|&t| t < 0.0);
    // backward part, walked in decreasing |t|
    if split > 0 {
        let mut st = Stepper::new(field, x, -1.0, tol)?;
        for idx in (0..split).rev() {
            let target = times[idx];
            while st.t > target + 1e-14 * (1.0 + target.abs()) {
                st.advance(Some(st.t - target))?;
            }
            out[idx] = if st.t == 0.0 {
                st.y.clone()
            } else {
                field.project_point(&st.dense(target.max(st.t)))
            };
        }
    }
    if split < times.len() {
        let mut st = Stepper::new(field, x, 1.0, tol)?;
        for idx in split..times.len() {
            let target = times[idx];
            while st.t < target - 1e-14 * (1.0 + target) {
                st.advance(Some(target - st.t))?;
            }
            out[idx] = if st.t == 0.0 {
                st.y.clone()
            } else {
                field.project_point(&st.dense(target.min(st.t)))
            };
        }
    }
    Ok(out)
}

/// Scalar event function of the state.
pub type EventFn<'f> = &'f dyn Fn(&[f64]) -> f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventDir {
    Any,
    /// g passes from negative to positive.
    Rising,
    /// g passes from positive to negative.
    Falling,
}

#[derive(Debug, Clone)]
pub struct EventHit {
    /// Signed time of the crossing.
    pub t: f64,
    pub y: Vec<f64>,
    pub rising: bool,
    /// |dg/dt| at the event fell below the grazing threshold.
    pub grazing: bool,
}

const GRAZE_DGDT: f64 = 1e-8;

fn refine_crossing(
    st: &Stepper,
    g: EventFn,
    mut ta: f64,
    mut ga: f64,
    mut tb: f64,
) -> EventHit {
    // bisection on the dense interpolant
    for _ in 0..80 {
        if (tb - ta).abs() <= 1e-14 * (1.0 + ta.abs()) {
            break;
        }
        let tm = 0.5 * (ta + tb);
        let gm = g(&st.dense(tm));
        if gm == 0.0 {
            ta = tm;
            break;
        }
        if (gm > 0.0) == (ga > 0.0) {
            ta = tm;
            ga = gm;
        } else {
            tb = tm;
        }
    }
    let t_star = 0.5 * (ta + tb);
    let y = st.dense(t_star);
    let dtp = 1e-7 * (1.0 + t_star.abs());
    let span = (st.t - st.t_prev).abs();
    let dg = if span > 2.0 * dtp {
        (g(&st.dense(t_star + dtp.copysign(st.t - st.t_prev)))
            - g(&st.dense(t_star - dtp.copysign(st.t - st.t_prev))))
            / (2.0 * dtp)
    } else {
        f64::INFINITY
    };
    EventHit { t: t_star, y, rising: ga < 0.0, grazing: dg.abs() < GRAZE_DGDT }
}

/// Collect every crossing of `g` along the orbit of `x` over the signed
/// window `[0, horizon]`. Each accepted integrator step is scanned at
/// `subdiv` interior points of the dense interpolant. Grazing contacts
/// (two refined crossings closer than `1e-6` in time, or |dg/dt| below
/// threshold) are merged into a single flagged hit.
pub fn collect_events(
    field: &VectorFieldDef,
    x: &[f64],
    horizon: f64,
    tol: f64,
    g: EventFn,
    dir: EventDir,
    subdiv: usize,
) -> Result<Vec<EventHit>> {
    if horizon == 0.0 {
        return Ok(Vec::new());
    }
    let sweep = horizon.signum();
    let mut st = Stepper::new(field, x, sweep, tol)?;
    let mut hits: Vec<EventHit> = Vec::new();
    let mut g_prev = g(&st.y);
    let target = horizon.abs();
    while st.t.abs() < target - 1e-14 * (1.0 + target) {
        let remaining = target - st.t.abs();
        st.advance(Some(remaining))?;
        let (t0, t1) = (st.t_prev, st.t);
        let mut ta = t0;
        let mut ga = g_prev;
        for i in 1..=subdiv {
            let tb = t0 + (t1 - t0) * (i as f64 / subdiv as f64);
            let gb = if i == subdiv { g(&st.y) } else { g(&st.dense(tb)) };
            if ga != 0.0 && gb != 0.0 && (ga > 0.0) != (gb > 0.0) {
                let hit = refine_crossing(&st, g, ta, ga, tb);
                // merge a re-touch into the previous hit as a graze
                if let Some(last) = hits.last_mut() {
                    if (hit.t - last.t).abs() < 1e-6 && (hit.rising != last.rising) {
                        last.grazing = true;
                        ta = tb;
                        ga = gb;
                        continue;
                    }
                }
                hits.push(hit);
            }
            ta = tb;
            ga = gb;
        }
        g_prev = g(&st.y);
    }
    hits.retain(|h| match dir {
        EventDir::Any => true,
        EventDir::Rising => h.rising || h.grazing,
        EventDir::Falling => !h.rising || h.grazing,
    });
    Ok(hits)
}

/// First crossing of `g` in the signed window `[0, horizon]`, or `None`.
pub fn first_event(
    field: &VectorFieldDef,
    x: &[f64],
    horizon: f64,
    tol: f64,
    g: EventFn,
    dir: EventDir,
    subdiv: usize,
) -> Result<Option<EventHit>> {
    if horizon == 0.0 {
        return Ok(None);
    }
    let sweep = horizon.signum();
    let mut st = Stepper::new(field, x, sweep, tol)?;
    let mut g_prev = g(&st.y);
    let target = horizon.abs();
    while st.t.abs() < target - 1e-14 * (1.0 + target) {
        let remaining = target - st.t.abs();
        st.advance(Some(remaining))?;
        let (t0, t1) = (st.t_prev, st.t);
        let mut ta = t0;
        let mut ga = g_prev;
        for i in 1..=subdiv {
            let tb = t0 + (t1 - t0) * (i as f64 / subdiv as f64);
            let gb = if i == subdiv { g(&st.y) } else { g(&st.dense(tb)) };
            if ga != 0.0 && gb != 0.0 && (ga > 0.0) != (gb > 0.0) {
                let hit = refine_crossing(&st, g, ta, ga, tb);
                let keep = match dir {
                    EventDir::Any => true,
                    EventDir::Rising => hit.rising || hit.grazing,
                    EventDir::Falling => !hit.rising || hit.grazing,
                };
                if keep {
                    return Ok(Some(hit));
                }
            }
            ta = tb;
            ga = gb;
        }
        g_prev = g(&st.y);
    }
    Ok(None)
}
