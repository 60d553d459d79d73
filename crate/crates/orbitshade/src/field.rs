//! Vector-field definitions: builtin catalog and parsed expression systems,
//! evaluation, Jacobians, and the optional unit-sphere constraint.

use nalgebra::DMatrix;

use crate::expr::{parse_system, Expr, ParsedSystem};
use crate::vecutil::{all_finite, dist, great_circle_dist, norm};
use crate::{Error, Result};

/// Manifold constraint applied to a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    /// Plain Euclidean chart.
    None,
    /// Field is projected onto the tangent space of the unit sphere and
    /// trajectories are renormalized after every accepted step.
    UnitSphere,
}

#[derive(Debug, Clone)]
pub enum Builtin {
    /// `x' = lu*x, y' = -ls*y`
    LinearSaddle2d { lu: f64, ls: f64 },
    /// `x' = lu*x, y' = -ls1*y, z' = -ls2*z`
    LinearSaddle3d { lu: f64, ls1: f64, ls2: f64 },
    /// `x' = y, y' = x - x^2`; saddle at the origin with a single
    /// homoclinic loop on the x > 0 side.
    DuffingSaddle,
    /// `x' = y, y' = x - x^3`; saddle at the origin whose two unstable
    /// branches both return (double loop), giving section returns in
    /// every band on both sides.
    SaddleWithReturn,
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    /// Gradient-like flow on the embedded unit sphere: north-pole source,
    /// south-pole sink, every regular orbit runs pole to pole.
    SphereMorseSmale,
}

#[derive(Debug, Clone)]
enum Kind {
    Builtin(Builtin),
    Parsed {
        system: ParsedSystem,
        jac: Vec<Vec<Expr>>,
    },
}

/// A vector field over an n-dimensional coordinate chart.
#[derive(Debug, Clone)]
pub struct VectorFieldDef {
    dimension: usize,
    kind: Kind,
    constraint: Constraint,
}

pub const CATALOG: &[&str] = &[
    "linear-saddle-2d",
    "linear-saddle-3d",
    "duffing-saddle",
    "saddle-with-return",
    "lorenz",
    "sphere-morse-smale",
];

impl VectorFieldDef {
    /// Look up a builtin field by catalog id, overriding default parameters
    /// with the given `(name, value)` pairs.
    pub fn builtin(id: &str, params: &[(&str, f64)]) -> Result<Self> {
        let get = |name: &str, default: f64| -> f64 {
            params
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .unwrap_or(default)
        };
        let known: &[&str] = match id {
            "linear-saddle-2d" => &["lu", "ls"],
            "linear-saddle-3d" => &["lu", "ls1", "ls2"],
            "lorenz" => &["sigma", "rho", "beta"],
            "duffing-saddle" | "saddle-with-return" | "sphere-morse-smale" => &[],
            _ => {
                return Err(Error::Precondition(format!(
                    "unknown builtin field `{}` (catalog: {})",
                    id,
                    CATALOG.join(", ")
                )))
            }
        };
        for (name, _) in params {
            if !known.contains(name) {
                return Err(Error::Precondition(format!(
                    "field `{}` has no parameter `{}`",
                    id, name
                )));
            }
        }
        let (kind, dimension, constraint) = match id {
            "linear-saddle-2d" => (
                Builtin::LinearSaddle2d { lu: get("lu", 1.0), ls: get("ls", 1.0) },
                2,
                Constraint::None,
            ),
            "linear-saddle-3d" => (
                Builtin::LinearSaddle3d {
                    lu: get("lu", 1.0),
                    ls1: get("ls1", 1.0),
                    ls2: get("ls2", 2.0),
                },
                3,
                Constraint::None,
            ),
            "duffing-saddle" => (Builtin::DuffingSaddle, 2, Constraint::None),
            "saddle-with-return" => (Builtin::SaddleWithReturn, 2, Constraint::None),
            "lorenz" => (
                Builtin::Lorenz {
                    sigma: get("sigma", 10.0),
                    rho: get("rho", 28.0),
                    beta: get("beta", 8.0 / 3.0),
                },
                3,
                Constraint::None,
            ),
            "sphere-morse-smale" => (Builtin::SphereMorseSmale, 3, Constraint::UnitSphere),
            _ => unreachable!(),
        };
        Ok(VectorFieldDef { dimension, kind: Kind::Builtin(kind), constraint })
    }

    /// Parse a field from equation text (see [`crate::expr::parse_system`]).
    pub fn parse(source: &str) -> Result<Self> {
        let system = parse_system(source)?;
        let n = system.coords.len();
        let jac = system
            .equations
            .iter()
            .map(|eq| (0..n).map(|i| eq.diff(i).fold()).collect())
            .collect();
        Ok(VectorFieldDef {
            dimension: n,
            kind: Kind::Parsed { system, jac },
            constraint: Constraint::None,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn constraint(&self) -> Constraint {
        self.constraint
    }

    /// Intrinsic dimension of the phase space (chart dimension, minus one
    /// under the sphere constraint).
    pub fn intrinsic_dimension(&self) -> usize {
        match self.constraint {
            Constraint::None => self.dimension,
            Constraint::UnitSphere => self.dimension - 1,
        }
    }

    pub fn pretty(&self) -> String {
        match &self.kind {
            Kind::Builtin(b) => format!("{:?}", b),
            Kind::Parsed { system, .. } => system.pretty(),
        }
    }

    /// Source text for a parsed field (round-trips through [`Self::parse`]).
    pub fn source(&self) -> Option<String> {
        match &self.kind {
            Kind::Parsed { system, .. } => Some(system.pretty()),
            Kind::Builtin(_) => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(Error::Dimension { expected: self.dimension, got: x.len() });
        }
        Ok(())
    }

    /// Raw right-hand side without the constraint projection.
    fn eval_raw_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Builtin(b) => match b {
                Builtin::LinearSaddle2d { lu, ls } => {
                    out[0] = lu * x[0];
                    out[1] = -ls * x[1];
                }
                Builtin::LinearSaddle3d { lu, ls1, ls2 } => {
                    out[0] = lu * x[0];
                    out[1] = -ls1 * x[1];
                    out[2] = -ls2 * x[2];
                }
                Builtin::DuffingSaddle => {
                    out[0] = x[1];
                    out[1] = x[0] - x[0] * x[0];
                }
                Builtin::SaddleWithReturn => {
                    out[0] = x[1];
                    out[1] = x[0] - x[0] * x[0] * x[0];
                }
                Builtin::Lorenz { sigma, rho, beta } => {
                    out[0] = sigma * (x[1] - x[0]);
                    out[1] = x[0] * (rho - x[2]) - x[1];
                    out[2] = x[0] * x[1] - beta * x[2];
                }
                Builtin::SphereMorseSmale => {
                    let z = x[2];
                    out[0] = z * x[0];
                    out[1] = z * x[1];
                    out[2] = z * x[2] - 1.0;
                }
            },
            Kind::Parsed { system, .. } => {
                for (o, eq) in out.iter_mut().zip(&system.equations) {
                    *o = eq.eval(x);
                }
            }
        }
    }

    /// Evaluate the field into `out`, applying the constraint projection.
    /// Returns false if the result is non-finite. This is the integrator
    /// hot path; no allocation.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.eval_raw_into(x, out);
        if let Constraint::UnitSphere = self.constraint {
            let n2: f64 = x.iter().map(|v| v * v).sum();
            if n2 > 0.0 {
                let dot: f64 = x.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                let c = dot / n2;
                for (o, xi) in out.iter_mut().zip(x) {
                    *o -= c * xi;
                }
            }
        }
        all_finite(out)
    }

    /// Evaluate the field at a point.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.dimension];
        if !self.eval_into(x, &mut out) {
            return Err(Error::NonFinite { context: format!("field evaluation at {:?}", x) });
        }
        Ok(out)
    }

    /// Jacobian of the (projected) field: analytic for builtins, symbolic
    /// for parsed systems, with the constraint projection differentiated in
    /// closed form.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let n = self.dimension;
        let raw = match &self.kind {
            Kind::Builtin(b) => {
                let mut j = DMatrix::zeros(n, n);
                match b {
                    Builtin::LinearSaddle2d { lu, ls } => {
                        j[(0, 0)] = *lu;
                        j[(1, 1)] = -ls;
                    }
                    Builtin::LinearSaddle3d { lu, ls1, ls2 } => {
                        j[(0, 0)] = *lu;
                        j[(1, 1)] = -ls1;
                        j[(2, 2)] = -ls2;
                    }
                    Builtin::DuffingSaddle => {
                        j[(0, 1)] = 1.0;
                        j[(1, 0)] = 1.0 - 2.0 * x[0];
                    }
                    Builtin::SaddleWithReturn => {
                        j[(0, 1)] = 1.0;
                        j[(1, 0)] = 1.0 - 3.0 * x[0] * x[0];
                    }
                    Builtin::Lorenz { sigma, rho, beta } => {
                        j[(0, 0)] = -sigma;
                        j[(0, 1)] = *sigma;
                        j[(1, 0)] = rho - x[2];
                        j[(1, 1)] = -1.0;
                        j[(1, 2)] = -x[0];
                        j[(2, 0)] = x[1];
                        j[(2, 1)] = x[0];
                        j[(2, 2)] = -beta;
                    }
                    Builtin::SphereMorseSmale => {
                        j[(0, 0)] = x[2];
                        j[(0, 2)] = x[0];
                        j[(1, 1)] = x[2];
                        j[(1, 2)] = x[1];
                        j[(2, 2)] = 2.0 * x[2];
                    }
                }
                j
            }
            Kind::Parsed { jac, .. } => {
                let mut j = DMatrix::zeros(n, n);
                for (r, row) in jac.iter().enumerate() {
                    for (c, e) in row.iter().enumerate() {
                        j[(r, c)] = e.eval(x);
                    }
                }
                j
            }
        };
        let j = match self.constraint {
            Constraint::None => raw,
            Constraint::UnitSphere => {
                // f = v - (x.v/|x|^2) x  =>
                // Jf = P Jv - [x v^T + (x.v) I]/|x|^2 + 2 (x.v) x x^T / |x|^4
                let mut v = vec![0.0; n];
                self.eval_raw_into(x, &mut v);
                let n2: f64 = x.iter().map(|a| a * a).sum();
                let xv: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
                let xcol = DMatrix::from_column_slice(n, 1, x);
                let vcol = DMatrix::from_column_slice(n, 1, &v);
                let p = DMatrix::identity(n, n) - &xcol * xcol.transpose() / n2;
                p * raw - (&xcol * vcol.transpose() + DMatrix::identity(n, n) * xv) / n2
                    + (&xcol * xcol.transpose()) * (2.0 * xv / (n2 * n2))
            }
        };
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: format!("jacobian at {:?}", x) });
        }
        Ok(j)
    }

    /// Central finite-difference Jacobian of the projected field, with step
    /// `h = max(1e-6, 1e-6 |x|)`. Independent of the analytic route.
    pub fn jacobian_fd(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let n = self.dimension;
        let h = 1e-6_f64.max(1e-6 * norm(x));
        let mut j = DMatrix::zeros(n, n);
        for c in 0..n {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[c] += h;
            dn[c] -= h;
            let (fu, fd) = (self.eval(&up)?, self.eval(&dn)?);
            for r in 0..n {
                j[(r, c)] = (fu[r] - fd[r]) / (2.0 * h);
            }
        }
        Ok(j)
    }

    /// Metric of the chart: Euclidean, or great-circle on the unit sphere.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.constraint {
            Constraint::None => dist(a, b),
            Constraint::UnitSphere => great_circle_dist(a, b),
        }
    }

    /// Project a point onto the constraint manifold (identity when
    /// unconstrained).
    pub fn project_point(&self, x: &[f64]) -> Vec<f64> {
        match self.constraint {
            Constraint::None => x.to_vec(),
            Constraint::UnitSphere => {
                let n = norm(x);
                if n == 0.0 {
                    x.to_vec()
                } else {
                    x.iter().map(|v| v / n).collect()
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duffing_values() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        assert_eq!(f.eval(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let v = f.eval(&[1.5, 0.0]).unwrap();
        assert_eq!(v[0], 0.0);
        assert!((v[1] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn lorenz_origin_is_singular() {
        let f = VectorFieldDef::builtin("lorenz", &[]).unwrap();
        assert_eq!(f.eval(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn parsed_matches_builtin_duffing() {
        let b = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let p = VectorFieldDef::parse("x' = y; y' = x - x^2").unwrap();
        for pt in [[0.3, -0.8], [1.2, 0.4], [-0.5, 2.0]] {
            assert_eq!(b.eval(&pt).unwrap(), p.eval(&pt).unwrap());
        }
    }

    #[test]
    fn duffing_jacobian_examples() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let j = f.jacobian(&[0.0, 0.0]).unwrap();
        assert_eq!(
            (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]),
            (0.0, 1.0, 1.0, 0.0)
        );
        let j = f.jacobian(&[1.0, 0.0]).unwrap();
        assert_eq!(
            (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(1, 1)]),
            (0.0, 1.0, -1.0, 0.0)
        );
    }

    #[test]
    fn linear_field_constant_jacobian() {
        let f = VectorFieldDef::builtin("linear-saddle-2d", &[]).unwrap();
        for pt in [[0.0, 0.0], [5.0, -3.0], [0.1, 0.2]] {
            let j = f.jacobian(&pt).unwrap();
            assert_eq!((j[(0, 0)], j[(1, 1)]), (1.0, -1.0));
            assert_eq!((j[(0, 1)], j[(1, 0)]), (0.0, 0.0));
        }
    }

    #[test]
    fn jacobian_routes_agree_on_catalog() {
        let mut lcg = 0x2545f4914f6cdd1d_u64;
        let mut uniform = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((lcg >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for id in CATALOG {
            let f = VectorFieldDef::builtin(id, &[]).unwrap();
            for _ in 0..50 {
                let mut x: Vec<f64> = (0..f.dimension()).map(|_| uniform() * 2.0).collect();
                if f.constraint() == Constraint::UnitSphere {
                    x = f.project_point(&x);
                    if !all_finite(&x) || norm(&x) == 0.0 {
                        continue;
                    }
                }
                let ja = f.jacobian(&x).unwrap();
                let jf = f.jacobian_fd(&x).unwrap();
                let scale = ja.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
                let err = (&ja - &jf).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                assert!(err <= 1e-5 * scale, "{}: err {} scale {}", id, err, scale);
            }
        }
    }

    #[test]
    fn sphere_field_is_tangential() {
        let f = VectorFieldDef::builtin("sphere-morse-smale", &[]).unwrap();
        let pts = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.6, 0.48, 0.64]];
        for p in pts {
            let p = f.project_point(&p);
            let v = f.eval(&p).unwrap();
            let dot: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert!(dot.abs() <= 1e-12, "radial component {}", dot);
        }
        // poles are the only singularities
        assert!(norm(&f.eval(&[0.0, 0.0, 1.0]).unwrap()) < 1e-15);
        assert!(norm(&f.eval(&[0.0, 0.0, -1.0]).unwrap()) < 1e-15);
    }

    #[test]
    fn unknown_builtin_and_parameter() {
        assert!(VectorFieldDef::builtin("nope", &[]).is_err());
        assert!(VectorFieldDef::builtin("duffing-saddle", &[("mass", 1.0)]).is_err());
    }

    #[test]
    fn division_by_zero_reports_non_finite() {
        let f = VectorFieldDef::parse("x' = 1/x").unwrap();
        assert!(matches!(f.eval(&[0.0]), Err(Error::NonFinite { .. })));
    }
}
