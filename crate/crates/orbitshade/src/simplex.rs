//! Derivative-free Nelder-Mead descent used to refine shadow-search
//! candidates. Deterministic: no restarts, fixed coefficients.

/// Minimize `f` from `x0` with an initial simplex of size `scale`.
/// Evaluations are drawn from `budget` (one unit each); the search stops
/// when the budget or `max_iters` runs out, or the simplex collapses.
/// Returns the best point and value seen.
pub fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    scale: f64,
    max_iters: usize,
    budget: &mut usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let eval = |x: &[f64], budget: &mut usize| -> f64 {
        if *budget == 0 {
            return f64::INFINITY;
        }
        *budget -= 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, budget);
    simplex.push((x0.to_vec(), v0));
    for d in 0..n {
        let mut x = x0.to_vec();
        x[d] += scale;
        let v = eval(&x, budget);
        simplex.push((x, v));
    }
    let mut best = simplex[0].clone();
    let mut stale = 0usize;

    for _ in 0..max_iters {
        if *budget == 0 {
            break;
        }
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if simplex[0].1 < best.1 - 1e-10 * (1.0 + best.1.abs()) {
            best = simplex[0].clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > 25 {
                break;
            }
        }
        if simplex[0].1 < best.1 {
            best = simplex[0].clone();
        }
        // simplex diameter collapse
        let spread: f64 = simplex
            .iter()
            .skip(1)
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread < 1e-14 * (1.0 + scale) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflected: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let fr = eval(&reflected, budget);
        if fr < simplex[0].1 {
            let expanded: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(c, w)| c + gamma * (c - w))
                .collect();
            let fe = eval(&expanded, budget);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let contracted: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + rho * (w - c))
            .collect();
        let fc = eval(&contracted, budget);
        if fc < worst.1 {
            simplex[n] = (contracted, fc);
            continue;
        }
        // shrink toward the best vertex
        let anchor = simplex[0].0.clone();
        for k in 1..=n {
            let x: Vec<f64> = anchor
                .iter()
                .zip(&simplex[k].0)
                .map(|(a, b)| a + sigma * (b - a))
                .collect();
            let v = eval(&x, budget);
            simplex[k] = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    if simplex[0].1 < best.1 {
        best = simplex[0].clone();
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let f = |x: &[f64]| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2);
        let mut budget = 4000;
        let (x, v) = nelder_mead(&f, &[0.0, 0.0], 0.5, 400, &mut budget);
        assert!(v < 1e-12, "v = {}", v);
        assert!((x[0] - 1.5).abs() < 1e-6 && (x[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn sharp_valley_converges_to_tiny_values() {
        // |x| * big + |y|: minimum at 0 with a steep side, similar to the
        // head-pinning landscapes of the shadow search
        let f = |x: &[f64]| 1e6 * x[0].abs() + x[1].abs();
        let mut budget = 6000;
        let (_, v) = nelder_mead(&f, &[0.3, 0.2], 0.2, 600, &mut budget);
        assert!(v < 1e-4, "v = {}", v);
    }

    #[test]
    fn respects_budget() {
        let f = |_: &[f64]| 0.0;
        let mut budget = 7;
        let _ = nelder_mead(&f, &[0.0; 3], 1.0, 100, &mut budget);
        assert_eq!(budget, 0);
    }
}
