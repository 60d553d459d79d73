//! Grid approximation of chain-recurrence classes: a directed graph over
//! grid boxes with edges along sampled finite orbit segments, whose
//! nontrivial strongly connected components approximate the
//! chain-recurrent classes at the grid resolution.

use std::collections::HashMap;

use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::Serialize;

use crate::field::VectorFieldDef;
use crate::flow::{Stepper, DEFAULT_TOL};
use crate::pseudo::GaugeFunction;
use crate::{Error, Result};

/// Edge tolerance rule: the uniform rule inflates boxes by a fixed
/// sub-grid slack, the gauge rule by the gauge at the sample position
/// (capped by the same slack so near-singular jumps must shrink).
#[derive(Debug, Clone)]
pub enum EdgeRule {
    Uniform,
    Gauge(GaugeFunction),
}

#[derive(Debug, Clone)]
pub struct ChainRecParams {
    pub box_size: f64,
    /// Minimum connection time T (edges use t in [t_min, t_max]).
    pub t_min: f64,
    pub t_max: f64,
    pub rule: EdgeRule,
}

impl Default for ChainRecParams {
    fn default() -> Self {
        ChainRecParams { box_size: 0.05, t_min: 1.0, t_max: 10.0, rule: EdgeRule::Uniform }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainRecResult {
    pub dims: Vec<usize>,
    pub lows: Vec<f64>,
    pub box_size: f64,
    /// Chain-recurrent classes as sorted lists of flat box ids.
    pub classes: Vec<Vec<usize>>,
    /// Boxes whose samples all integrated but which sit in no class.
    pub transient: Vec<usize>,
    /// Boxes containing a refined singularity.
    pub singular_boxes: Vec<usize>,
    /// Boxes excluded because a sample failed to integrate.
    pub failed: Vec<usize>,
}

impl ChainRecResult {
    pub fn flat_id(&self, coords: &[usize]) -> usize {
        let mut id = 0;
        for (d, &c) in coords.iter().enumerate().rev() {
            id = id * self.dims[d] + c;
        }
        id
    }

    pub fn box_of_point(&self, p: &[f64]) -> Option<usize> {
        let mut coords = Vec::with_capacity(p.len());
        for (d, &v) in p.iter().enumerate() {
            let c = ((v - self.lows[d]) / self.box_size).floor();
            if c < 0.0 || c >= self.dims[d] as f64 {
                return None;
            }
            coords.push(c as usize);
        }
        Some(self.flat_id(&coords))
    }

    pub fn class_of_box(&self, id: usize) -> Option<usize> {
        self.classes.iter().position(|c| c.binary_search(&id).is_ok())
    }

    pub fn center(&self, id: usize) -> Vec<f64> {
        let mut rem = id;
        let mut out = Vec::with_capacity(self.dims.len());
        for (d, &n) in self.dims.iter().enumerate() {
            let c = rem % n;
            rem /= n;
            out.push(self.lows[d] + (c as f64 + 0.5) * self.box_size);
        }
        out
    }
}

fn flat(coords: &[usize], dims: &[usize]) -> usize {
    let mut id = 0;
    for (d, &c) in coords.iter().enumerate().rev() {
        id = id * dims[d] + c;
    }
    id
}

/// Partition grid boxes over `region` into chain-recurrent classes and
/// transient boxes. Every box is represented by its center plus one
/// off-center sample per axis direction; each sample's orbit yields edges
/// to every box it visits (inflated by the edge tolerance) at times in
/// `[t_min, t_max]`. Classes are the nontrivial strongly connected
/// components; singular boxes self-connect.
pub fn chain_recurrence_classes(
    field: &VectorFieldDef,
    region: &[(f64, f64)],
    params: &ChainRecParams,
    singularities: &[Vec<f64>],
) -> Result<ChainRecResult> {
    let n = field.dimension();
    if region.len() != n {
        return Err(Error::Dimension { expected: n, got: region.len() });
    }
    if params.box_size <= 0.0 || params.t_min < 1.0 || params.t_max <= params.t_min {
        return Err(Error::Precondition(
            "need box_size > 0 and 1 <= t_min < t_max".into(),
        ));
    }
    let h = params.box_size;
    let dims: Vec<usize> =
        region.iter().map(|&(lo, hi)| ((hi - lo) / h).ceil().max(1.0) as usize).collect();
    let lows: Vec<f64> = region.iter().map(|&(lo, _)| lo).collect();
    let total: usize = dims.iter().product();

    let slack = h / 10.0;
    let dt_out = (h / 2.0).min(0.05);

    // deterministic per-box sample offsets: center and +/- 0.3 h per axis
    let offsets: Vec<Vec<f64>> = {
        let mut o = vec![vec![0.0; n]];
        for d in 0..n {
            for s in [-0.3, 0.3] {
                let mut v = vec![0.0; n];
                v[d] = s * h;
                o.push(v);
            }
        }
        o
    };

    let box_of = |p: &[f64]| -> Option<Vec<usize>> {
        let mut coords = Vec::with_capacity(n);
        for d in 0..n {
            let c = ((p[d] - lows[d]) / h).floor();
            if c < 0.0 || c >= dims[d] as f64 {
                return None;
            }
            coords.push(c as usize);
        }
        Some(coords)
    };

    // per-box work: integrate samples, emit (from, to) edges
    let results: Vec<(usize, std::result::Result<Vec<usize>, ()>)> = (0..total)
        .into_par_iter()
        .map(|id| {
            let mut rem = id;
            let mut center = Vec::with_capacity(n);
            for (d, &nd) in dims.iter().enumerate() {
                let c = rem % nd;
                rem /= nd;
                center.push(lows[d] + (c as f64 + 0.5) * h);
            }
            // guard zone: samples are followed until they leave it; their
            // out-of-region future is irrelevant to the box graph
            let guard: Vec<(f64, f64)> = region
                .iter()
                .map(|&(lo, hi)| {
                    let m = 0.5 * (hi - lo) + h;
                    (lo - m, hi + m)
                })
                .collect();
            let mut targets: Vec<usize> = Vec::new();
            for off in &offsets {
                let x0: Vec<f64> = center.iter().zip(off).map(|(c, o)| c + o).collect();
                let x0 = field.project_point(&x0);
                let tol_edge = match &params.rule {
                    EdgeRule::Uniform => slack,
                    EdgeRule::Gauge(g) => g.eval(field, &x0).min(slack),
                };
                let mut samples: Vec<(f64, Vec<f64>)> = Vec::new();
                let mut stepper = match Stepper::new(field, &x0, 1.0, DEFAULT_TOL) {
                    Ok(st) => st,
                    Err(_) => return (id, Err(())),
                };
                let mut next = dt_out;
                'sample: loop {
                    let in_guard = stepper
                        .y
                        .iter()
                        .zip(&guard)
                        .all(|(v, &(lo, hi))| *v >= lo && *v <= hi);
                    if !in_guard || stepper.t >= params.t_max {
                        break;
                    }
                    let remaining = params.t_max - stepper.t;
                    if stepper.advance(Some(remaining)).is_err() {
                        return (id, Err(()));
                    }
                    while next <= stepper.t {
                        samples.push((next, field.project_point(&stepper.dense(next))));
                        next += dt_out;
                        if next > params.t_max {
                            break 'sample;
                        }
                    }
                }
                for (t, p) in &samples {
                    if *t < params.t_min {
                        continue;
                    }
                    // every box whose inflated region contains p
                    let Some(base) = box_of(p) else { continue };
                    let mut stack = vec![(0usize, Vec::with_capacity(n))];
                    while let Some((d, partial)) = stack.pop() {
                        if d == n {
                            targets.push(flat(&partial, &dims));
                            continue;
                        }
                        for delta in -1i64..=1 {
                            let c = base[d] as i64 + delta;
                            if c < 0 || c >= dims[d] as i64 {
                                continue;
                            }
                            let center_d = lows[d] + (c as f64 + 0.5) * h;
                            if (p[d] - center_d).abs() <= h / 2.0 + tol_edge {
                                let mut next = partial.clone();
                                next.push(c as usize);
                                stack.push((d + 1, next));
                            }
                        }
                    }
                }
            }
            targets.sort_unstable();
            targets.dedup();
            (id, Ok(targets))
        })
        .collect();

    let mut failed = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (id, r) in results {
        match r {
            Ok(targets) => {
                for t in targets {
                    edges.push((id, t));
                }
            }
            Err(()) => failed.push(id),
        }
    }
    let failed_set: std::collections::HashSet<usize> = failed.iter().cloned().collect();

    // singular boxes self-connect
    let mut singular_boxes: Vec<usize> = Vec::new();
    for s in singularities {
        if let Some(coords) = box_of(s) {
            let id = flat(&coords, &dims);
            singular_boxes.push(id);
            if !failed_set.contains(&id) {
                edges.push((id, id));
            }
        }
    }
    singular_boxes.sort_unstable();
    singular_boxes.dedup();

    // graph over non-failed boxes
    let mut graph: DiGraph<usize, ()> = DiGraph::new();
    let mut node_of: HashMap<usize, NodeIndex> = HashMap::new();
    let mut touched: Vec<usize> = edges
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .filter(|id| !failed_set.contains(id))
        .collect();
    touched.sort_unstable();
    touched.dedup();
    for &id in &touched {
        node_of.insert(id, graph.add_node(id));
    }
    let mut self_loop: std::collections::HashSet<usize> = std::collections::HashSet::new();
    for &(a, b) in &edges {
        if failed_set.contains(&a) || failed_set.contains(&b) {
            continue;
        }
        if a == b {
            self_loop.insert(a);
        }
        graph.add_edge(node_of[&a], node_of[&b], ());
    }

    let singular_set: std::collections::HashSet<usize> =
        singular_boxes.iter().cloned().collect();
    let sccs = petgraph::algo::tarjan_scc(&graph);
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut classed: std::collections::HashSet<usize> = std::collections::HashSet::new();
    for comp in sccs {
        let ids: Vec<usize> = comp.iter().map(|&ix| graph[ix]).collect();
        // a singleton is a class only when it carries a singularity and
        // self-connects; bare self-loops from grid slack are transient
        let nontrivial = ids.len() >= 2
            || (ids.len() == 1 && singular_set.contains(&ids[0]) && self_loop.contains(&ids[0]));
        if nontrivial {
            let mut ids = ids;
            ids.sort_unstable();
            classed.extend(ids.iter().cloned());
            classes.push(ids);
        }
    }
    classes.sort_by_key(|c| c[0]);
    let transient: Vec<usize> =
        touched.into_iter().filter(|id| !classed.contains(id)).collect();

    Ok(ChainRecResult {
        dims,
        lows,
        box_size: h,
        classes,
        transient,
        singular_boxes,
        failed,
    })
}
