//! Tiny vector helpers shared by the numerical modules. States are plain
//! `Vec<f64>`/`&[f64]`; nalgebra is reserved for the linear algebra.

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Great-circle distance between two points near the unit sphere; inputs
/// are renormalized first.
pub fn great_circle_dist(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return dist(a, b);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    dot.clamp(-1.0, 1.0).acos()
}

/// Distance from `p` to the segment [a, b].
pub fn point_segment_dist(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let den: f64 = ab.iter().map(|x| x * x).sum();
    if den == 0.0 {
        return dist(p, a);
    }
    let t = (ab.iter().zip(&ap).map(|(x, y)| x * y).sum::<f64>() / den).clamp(0.0, 1.0);
    let proj: Vec<f64> = a.iter().zip(&ab).map(|(x, d)| x + t * d).collect();
    dist(p, &proj)
}

/// One-sided Hausdorff distance from polyline `a` to polyline `b`
/// (max over vertices of `a` of the distance to the nearest segment of `b`).
pub fn directed_hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for p in a {
        let mut best = f64::INFINITY;
        if b.len() == 1 {
            best = dist(p, &b[0]);
        }
        for w in b.windows(2) {
            let d = point_segment_dist(p, &w[0], &w[1]);
            if d < best {
                best = d;
            }
        }
        if best > worst {
            worst = best;
        }
    }
    worst
}

/// Symmetric Hausdorff distance between two polylines.
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}
