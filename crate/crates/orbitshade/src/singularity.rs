//! Singularity location, hyperbolicity certificates, stable/unstable
//! indices and attachedness evidence.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::field::{Constraint, VectorFieldDef};
use crate::linalg::{cond2, eigen_decompose, real_invariant_frame};
use crate::vecutil::{dist, norm};
use crate::{Error, Result};

/// Residual bound a refined singularity must satisfy.
pub const RESIDUAL_LIMIT: f64 = 1e-10;
/// |Re(eigenvalue)| below this means the certificate is non-hyperbolic.
pub const HYPERBOLICITY_TOL: f64 = 1e-8;
/// Regular points must have |X(x)| above this.
pub const REGULARITY_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct Singularity {
    pub location: Vec<f64>,
    pub residual: f64,
}

/// Hyperbolic splitting data at a singularity. For sphere-constrained
/// fields the spectrum is taken on the tangent plane, so `dim` is the
/// intrinsic dimension (`stable_index + unstable_index == dim` always).
#[derive(Debug, Clone)]
pub struct HyperbolicityCertificate {
    pub eigenvalues: Vec<Complex64>,
    pub stable_index: usize,
    pub unstable_index: usize,
    /// Spectral gap per unit time: min |Re eigenvalue|.
    pub lambda: f64,
    /// Conditioning bound of the eigenbasis.
    pub growth_c: f64,
    /// Orthonormal basis of E^s as columns, in ambient coordinates.
    pub stable_frame: DMatrix<f64>,
    pub unstable_frame: DMatrix<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct NonHyperbolicReport {
    pub eigenvalues: Vec<Complex64>,
    pub min_abs_re: f64,
}

/// Outcome of classification: non-hyperbolic spectra are certified
/// results, not failures.
#[derive(Debug, Clone)]
pub enum Classification {
    Hyperbolic(HyperbolicityCertificate),
    NonHyperbolic(NonHyperbolicReport),
}

impl Classification {
    pub fn hyperbolic(&self) -> Result<&HyperbolicityCertificate> {
        match self {
            Classification::Hyperbolic(c) => Ok(c),
            Classification::NonHyperbolic(r) => {
                Err(Error::NotHyperbolic { min_re: r.min_abs_re })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Category {
    Sink,
    Source,
    Saddle,
}

/// Solve J dx = -f with an SVD pseudo-inverse; tolerant of the radial
/// degeneracy of sphere-projected fields.
fn newton_step(j: &DMatrix<f64>, f: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return None;
    }
    svd.solve(&(-f), 1e-10 * smax).ok()
}

/// Locate singularities by Newton refinement from a seed grid over the
/// axis-aligned `region`. Seeds that diverge are dropped; roots may lie
/// outside the region (the region only places seeds). Duplicates within
/// 1e-6 are merged.
pub fn find_singularities(
    field: &VectorFieldDef,
    region: &[(f64, f64)],
    grid_density: usize,
) -> Result<Vec<Singularity>> {
    let n = field.dimension();
    if region.len() != n {
        return Err(Error::Dimension { expected: n, got: region.len() });
    }
    if grid_density < 2 {
        return Err(Error::Precondition("grid_density must be >= 2".into()));
    }
    for &(lo, hi) in region {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Precondition("region must be a bounded box".into()));
        }
    }
    let mut roots: Vec<Singularity> = Vec::new();
    let total = grid_density.pow(n as u32);
    for flat in 0..total {
        let mut idx = flat;
        let mut seed = vec![0.0; n];
        for d in 0..n {
            let i = idx % grid_density;
            idx /= grid_density;
            let (lo, hi) = region[d];
            seed[d] = lo + (hi - lo) * (i as f64 + 0.5) / grid_density as f64;
        }
        let mut x = field.project_point(&seed);
        let mut ok = false;
        for _ in 0..60 {
            let fx = match field.eval(&x) {
                Ok(v) => v,
                Err(_) => break,
            };
            let r = norm(&fx);
            if r <= RESIDUAL_LIMIT * 1e-2 {
                ok = true;
                break;
            }
            let j = match field.jacobian(&x) {
                Ok(j) => j,
                Err(_) => break,
            };
            let dx = match newton_step(&j, &DVector::from_column_slice(&fx)) {
                Some(d) => d,
                None => break,
            };
            let step = dx.norm();
            let cap = 1.0;
            let scale = if step > cap { cap / step } else { 1.0 };
            for (xi, di) in x.iter_mut().zip(dx.iter()) {
                *xi += di * scale;
            }
            x = field.project_point(&x);
            if !x.iter().all(|v| v.is_finite()) || norm(&x) > 1e6 {
                break;
            }
        }
        if !ok {
            continue;
        }
        let residual = norm(&field.eval(&x)?);
        if residual > RESIDUAL_LIMIT {
            continue;
        }
        if let Some(existing) = roots.iter_mut().find(|s| dist(&s.location, &x) <= 1e-6) {
            if residual < existing.residual {
                existing.location = x;
                existing.residual = residual;
            }
            continue;
        }
        roots.push(Singularity { location: x, residual });
    }
    roots.sort_by(|a, b| {
        a.location
            .iter()
            .zip(&b.location)
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(roots)
}

/// Orthonormal basis of the tangent plane at a point of the unit sphere.
fn tangent_basis(x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let xhat = DVector::from_column_slice(x).normalize();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        let mut v = &e - &xhat * xhat.dot(&e);
        for c in &cols {
            v -= c * c.dot(&v);
        }
        let nv = v.norm();
        if nv > 1e-8 {
            cols.push(v / nv);
        }
        if cols.len() == n - 1 {
            break;
        }
    }
    DMatrix::from_columns(&cols)
}

/// Eigen-decompose the Jacobian at a refined singularity and certify (or
/// refute) hyperbolicity.
pub fn classify_singularity(
    field: &VectorFieldDef,
    sing: &Singularity,
) -> Result<Classification> {
    if sing.residual > RESIDUAL_LIMIT {
        return Err(Error::Residual { residual: sing.residual, limit: RESIDUAL_LIMIT });
    }
    let j_full = field.jacobian(&sing.location)?;
    // restrict to the tangent plane under the sphere constraint
    let (a, back): (DMatrix<f64>, Option<DMatrix<f64>>) = match field.constraint() {
        Constraint::None => (j_full, None),
        Constraint::UnitSphere => {
            let t = tangent_basis(&sing.location);
            (t.transpose() * &j_full * &t, Some(t))
        }
    };
    let dim = a.nrows();
    let eig = eigen_decompose(&a)?;
    let min_abs_re = eig.values.iter().map(|v| v.re.abs()).fold(f64::INFINITY, f64::min);
    if min_abs_re <= HYPERBOLICITY_TOL {
        return Ok(Classification::NonHyperbolic(NonHyperbolicReport {
            eigenvalues: eig.values,
            min_abs_re,
        }));
    }
    let stable_index = eig.values.iter().filter(|v| v.re < 0.0).count();
    let unstable_index = dim - stable_index;
    let growth_c = cond2(&eig.vectors);
    let mut stable_frame = real_invariant_frame(&eig, |v| v.re < 0.0);
    let mut unstable_frame = real_invariant_frame(&eig, |v| v.re > 0.0);
    if let Some(t) = back {
        stable_frame = &t * stable_frame;
        unstable_frame = &t * unstable_frame;
    }
    Ok(Classification::Hyperbolic(HyperbolicityCertificate {
        eigenvalues: eig.values,
        stable_index,
        unstable_index,
        lambda: min_abs_re,
        growth_c,
        stable_frame,
        unstable_frame,
        dim,
    }))
}

/// Sink/source/saddle category plus the index-one predicate.
pub fn index_category(cert: &HyperbolicityCertificate) -> (Category, bool) {
    let cat = if cert.unstable_index == 0 {
        Category::Sink
    } else if cert.stable_index == 0 {
        Category::Source
    } else {
        Category::Saddle
    };
    let index_one = cert.stable_index == 1 || cert.unstable_index == 1;
    (cat, index_one)
}

#[derive(Debug, Clone, Serialize)]
pub struct AttachedReport {
    pub attached: bool,
    /// One witness (radius, point) per satisfied radius.
    pub witnesses: Vec<(f64, Vec<f64>)>,
    /// First radius with no witness, if any.
    pub failed_radius: Option<f64>,
}

/// Sample-based attachedness evidence: for every radius there must be a
/// regular sample point within that distance of the singularity.
pub fn is_attached(
    field: &VectorFieldDef,
    sigma: &Singularity,
    invariant_sample: &[Vec<f64>],
    radii: &[f64],
) -> Result<AttachedReport> {
    if invariant_sample.is_empty() {
        return Err(Error::Empty("invariant_sample".into()));
    }
    for w in radii.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::Precondition("radii must be strictly decreasing".into()));
        }
    }
    if radii.last().is_none_or(|r| *r <= 0.0) {
        return Err(Error::Precondition("radii must stay positive".into()));
    }
    let mut witnesses = Vec::new();
    for &r in radii {
        let mut found = None;
        for x in invariant_sample {
            let d = field.distance(x, &sigma.location);
            if d > 0.0 && d <= r && norm(&field.eval(x)?) > REGULARITY_THRESHOLD {
                found = Some(x.clone());
                break;
            }
        }
        match found {
            Some(x) => witnesses.push((r, x)),
            None => {
                return Ok(AttachedReport { attached: false, witnesses, failed_radius: Some(r) })
            }
        }
    }
    Ok(AttachedReport { attached: true, witnesses, failed_radius: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::VectorFieldDef;
    use crate::flow::{flow_trajectory, DEFAULT_TOL};
    use crate::linalg::expm;

    #[test]
    fn duffing_roots() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let roots = find_singularities(&f, &[(-2.0, 2.0), (-2.0, 2.0)], 8).unwrap();
        assert_eq!(roots.len(), 2);
        assert!(dist(&roots[0].location, &[0.0, 0.0]) < 1e-9);
        assert!(dist(&roots[1].location, &[1.0, 0.0]) < 1e-9);
        for r in &roots {
            assert!(r.residual <= RESIDUAL_LIMIT);
        }
    }

    #[test]
    fn lorenz_equilibria_closed_form() {
        let f = VectorFieldDef::builtin("lorenz", &[]).unwrap();
        let roots =
            find_singularities(&f, &[(-20.0, 20.0), (-20.0, 20.0), (-20.0, 20.0)], 5).unwrap();
        assert_eq!(roots.len(), 3);
        let w = 72.0f64.sqrt();
        let expect = [vec![-w, -w, 27.0], vec![0.0, 0.0, 0.0], vec![w, w, 27.0]];
        for (r, e) in roots.iter().zip(expect.iter()) {
            assert!(dist(&r.location, e) < 1e-7, "{:?} vs {:?}", r.location, e);
        }
    }

    #[test]
    fn linear_saddle_single_root() {
        let f = VectorFieldDef::builtin("linear-saddle-2d", &[]).unwrap();
        let roots = find_singularities(&f, &[(-1.0, 1.0), (-1.0, 1.0)], 4).unwrap();
        assert_eq!(roots.len(), 1);
        assert!(norm(&roots[0].location) < 1e-10);
    }

    #[test]
    fn duffing_origin_certificate() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let s = Singularity { location: vec![0.0, 0.0], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        assert_eq!((cert.stable_index, cert.unstable_index), (1, 1));
        assert!((cert.lambda - 1.0).abs() < 1e-12);
        let mut res: Vec<f64> = cert.eigenvalues.iter().map(|v| v.re).collect();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((res[0] + 1.0).abs() < 1e-12 && (res[1] - 1.0).abs() < 1e-12);
        let (cat, one) = index_category(&cert);
        assert_eq!(cat, Category::Saddle);
        assert!(one);
    }

    #[test]
    fn duffing_center_is_non_hyperbolic() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let s = Singularity { location: vec![1.0, 0.0], residual: 0.0 };
        match classify_singularity(&f, &s).unwrap() {
            Classification::NonHyperbolic(r) => {
                // eigenvalues +/- i
                assert!(r.min_abs_re < 1e-10);
                assert!(r.eigenvalues.iter().all(|v| (v.im.abs() - 1.0).abs() < 1e-9));
            }
            Classification::Hyperbolic(_) => panic!("center certified hyperbolic"),
        }
    }

    #[test]
    fn lorenz_origin_spectrum_and_index() {
        let f = VectorFieldDef::builtin("lorenz", &[]).unwrap();
        let s = Singularity { location: vec![0.0, 0.0, 0.0], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        // block roots: mu^2 + 11 mu - 270 = 0 and -8/3
        let disc = (121.0_f64 + 4.0 * 270.0).sqrt();
        let mut expect = vec![(-11.0 - disc) / 2.0, -8.0 / 3.0, (-11.0 + disc) / 2.0];
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got: Vec<f64> = cert.eigenvalues.iter().map(|v| v.re).collect();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-9, "{} vs {}", g, e);
        }
        assert_eq!(cert.unstable_index, 1);
        let (cat, one) = index_category(&cert);
        assert_eq!(cat, Category::Saddle);
        assert!(one);
    }

    #[test]
    fn planar_sink_classification() {
        let f = VectorFieldDef::parse("x' = -x; y' = -y").unwrap();
        let s = Singularity { location: vec![0.0, 0.0], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        assert_eq!((cert.stable_index, cert.unstable_index), (2, 0));
        let (cat, one) = index_category(&cert);
        assert_eq!(cat, Category::Sink);
        assert!(!one);
    }

    #[test]
    fn sphere_poles_classify_on_tangent_plane() {
        let f = VectorFieldDef::builtin("sphere-morse-smale", &[]).unwrap();
        let south = Singularity { location: vec![0.0, 0.0, -1.0], residual: 0.0 };
        let cert = classify_singularity(&f, &south).unwrap().hyperbolic().unwrap().clone();
        assert_eq!(cert.dim, 2);
        assert_eq!((cert.stable_index, cert.unstable_index), (2, 0));
        assert_eq!(index_category(&cert).0, Category::Sink);
        let north = Singularity { location: vec![0.0, 0.0, 1.0], residual: 0.0 };
        let cert = classify_singularity(&f, &north).unwrap().hyperbolic().unwrap().clone();
        assert_eq!((cert.stable_index, cert.unstable_index), (0, 2));
        assert_eq!(index_category(&cert).0, Category::Source);
    }

    #[test]
    fn frames_span_invariant_subspaces() {
        let f = VectorFieldDef::builtin("lorenz", &[]).unwrap();
        let s = Singularity { location: vec![0.0, 0.0, 0.0], residual: 0.0 };
        let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
        let a = f.jacobian(&s.location).unwrap();
        for q in [&cert.stable_frame, &cert.unstable_frame] {
            if q.ncols() == 0 {
                continue;
            }
            let restricted = q.transpose() * &a * q;
            let leak = (&a * q - q * restricted).norm();
            assert!(leak <= 1e-8, "invariance leak {}", leak);
        }
    }

    #[test]
    fn linearized_contraction_bound() {
        // ||DX_t restricted to E^s|| <= C e^{-lambda t}: exponentiate the
        // generator restricted to the frame (the restriction is what the
        // bound is about; the full e^{At} applied to near-stable vectors is
        // swamped by the unstable spectrum in floating point).
        let mut lcg = 77_u64;
        let mut unif = move || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (lcg >> 11) as f64 / (1u64 << 53) as f64
        };
        for id in ["duffing-saddle", "lorenz", "linear-saddle-3d"] {
            let f = VectorFieldDef::builtin(id, &[]).unwrap();
            let s = Singularity { location: vec![0.0; f.dimension()], residual: 0.0 };
            let cert = classify_singularity(&f, &s).unwrap().hyperbolic().unwrap().clone();
            let a = f.jacobian(&s.location).unwrap();
            let ms = cert.stable_frame.transpose() * &a * &cert.stable_frame;
            let mu = cert.unstable_frame.transpose() * &a * &cert.unstable_frame;
            for _ in 0..50 {
                let t = unif() * 5.0;
                if cert.stable_index > 0 {
                    let w = DVector::from_iterator(
                        cert.stable_index,
                        (0..cert.stable_index).map(|_| unif() - 0.5),
                    );
                    let moved = expm(&(&ms * t)) * &w;
                    let bound = cert.growth_c * (-cert.lambda * t).exp() * w.norm();
                    assert!(
                        moved.norm() <= bound * (1.0 + 1e-9),
                        "{}: {} > {}",
                        id,
                        moved.norm(),
                        bound
                    );
                }
                if cert.unstable_index > 0 {
                    let w = DVector::from_iterator(
                        cert.unstable_index,
                        (0..cert.unstable_index).map(|_| unif() - 0.5),
                    );
                    let moved = expm(&(&mu * (-t))) * &w;
                    let bound = cert.growth_c * (-cert.lambda * t).exp() * w.norm();
                    assert!(
                        moved.norm() <= bound * (1.0 + 1e-9),
                        "{}: {} > {}",
                        id,
                        moved.norm(),
                        bound
                    );
                }
            }
        }
    }

    #[test]
    fn classification_invariant_under_rotation() {
        // conjugate the Duffing field by a fixed rotation and compare
        let theta: f64 = 0.7253;
        let (c, s) = (theta.cos(), theta.sin());
        // X_rot(x) = R X(R^T x) with X(u,v) = (v, u - u^2)
        let u = format!("(-({s})*x + ({c})*y)", s = s, c = c);
        let w = format!("(({c})*x + ({s})*y) - (({c})*x + ({s})*y)^2", c = c, s = s);
        let src = format!(
            "x' = ({c})*({u}) - ({s})*({w}); y' = ({s})*({u}) + ({c})*({w})",
            c = c,
            s = s,
            u = u,
            w = w
        );
        let rot = VectorFieldDef::parse(&src).unwrap();
        let roots = find_singularities(&rot, &[(-2.0, 2.0), (-2.0, 2.0)], 8).unwrap();
        let origin = roots.iter().find(|r| norm(&r.location) < 1e-8).expect("origin root");
        let cert = classify_singularity(&rot, origin).unwrap().hyperbolic().unwrap().clone();
        let base = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let base_cert = classify_singularity(
            &base,
            &Singularity { location: vec![0.0, 0.0], residual: 0.0 },
        )
        .unwrap()
        .hyperbolic()
        .unwrap()
        .clone();
        assert_eq!(cert.stable_index, base_cert.stable_index);
        assert_eq!(cert.unstable_index, base_cert.unstable_index);
        assert!((cert.lambda - base_cert.lambda).abs() <= 1e-9);
    }

    #[test]
    fn root_stability_under_parameter_perturbation() {
        let f0 = VectorFieldDef::builtin("lorenz", &[]).unwrap();
        let f1 = VectorFieldDef::builtin("lorenz", &[("rho", 28.0 + 1e-6)]).unwrap();
        let region = [(-20.0, 20.0), (-20.0, 20.0), (-20.0, 20.0)];
        let r0 = find_singularities(&f0, &region, 5).unwrap();
        let r1 = find_singularities(&f1, &region, 5).unwrap();
        assert_eq!(r0.len(), r1.len());
        for (a, b) in r0.iter().zip(&r1) {
            assert!(dist(&a.location, &b.location) <= 1e-5);
        }
    }

    #[test]
    fn attachedness_on_duffing_loop_and_outside() {
        let f = VectorFieldDef::builtin("duffing-saddle", &[]).unwrap();
        let sigma = Singularity { location: vec![0.0, 0.0], residual: 0.0 };
        // points marching along the homoclinic loop toward the origin:
        // x(t) = 1.5 sech^2(t/2), y = x'
        let loop_pts: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let t = -10.0 + i as f64 * 0.05;
                let sech = 1.0 / (t / 2.0).cosh();
                let x = 1.5 * sech * sech;
                let y = -1.5 * sech * sech * (t / 2.0).tanh();
                vec![x, y]
            })
            .collect();
        let rep = is_attached(&f, &sigma, &loop_pts, &[0.5, 0.1, 0.02]).unwrap();
        assert!(rep.attached);
        assert_eq!(rep.witnesses.len(), 3);

        let far: Vec<Vec<f64>> = vec![vec![1.0, 1.0], vec![0.8, -0.6]];
        let rep = is_attached(&f, &sigma, &far, &[0.1]).unwrap();
        assert!(!rep.attached);
        assert_eq!(rep.failed_radius, Some(0.1));
    }

    #[test]
    fn attachedness_near_sphere_sink() {
        let f = VectorFieldDef::builtin("sphere-morse-smale", &[]).unwrap();
        let sink = Singularity { location: vec![0.0, 0.0, -1.0], residual: 0.0 };
        let tr =
            flow_trajectory(&f, &f.project_point(&[0.5, 0.1, -0.85]), 30.0, 0.05, DEFAULT_TOL)
                .unwrap();
        let rep = is_attached(&f, &sink, &tr.points, &[0.5, 0.1, 0.02]).unwrap();
        assert!(rep.attached, "failed at {:?}", rep.failed_radius);
    }
}
