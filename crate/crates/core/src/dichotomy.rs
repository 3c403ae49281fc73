//! Exponential dichotomies through hyperbolicity of time-1 operators.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evofam::{omega_1, refine_to_tolerance, EvolutionFamilyApprox, PerturbationFamily};
use crate::linop::{matrix_norm, resolvent_matrix, spectrum_of, Operator, EIGEN_MAX_ITER};
use crate::metrics::{ANormContext, MuGrid};
use crate::semigroup::{expm_matrix, GrowthBound};

/// Eigenvalues with `| |lambda| - 1 | <= UNIT_CIRCLE_TOL` count as central.
pub const UNIT_CIRCLE_TOL: f64 = 1e-9;
/// Projector norms or eigenbasis conditions above this mark the report unreliable.
pub const DEFECTIVE_COND: f64 = 1e8;
/// Powers used when fitting `Mdich`.
pub const DECAY_POWERS: i32 = 20;

const CLUSTER_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DichotomyReport {
    pub hyperbolic: bool,
    /// `min |log |lambda||` over the spectrum.
    pub spectral_gap: f64,
    pub stable_rank: usize,
    /// Spectral projector onto the stable subspace.
    #[serde(skip)]
    pub projector: Operator,
    pub alpha: f64,
    pub mdich: f64,
    /// Condition of the eigenbasis used to build the projector.
    pub basis_cond: f64,
    /// Set when the spectrum is numerically defective; the projector may be inaccurate.
    pub defective: bool,
    #[serde(skip)]
    pub eigenvalues: Vec<Complex64>,
}

type CMat = DMatrix<Complex64>;

fn complexify(m: &DMatrix<f64>) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Orthonormal basis of the `k` least singular directions of `m`, plus the
/// singular values in ascending order.
fn least_singular(m: &CMat, k: usize) -> Result<(CMat, Vec<f64>)> {
    let n = m.nrows();
    let svd =
        nalgebra::SVD::try_new(m.clone(), false, true, f64::EPSILON, EIGEN_MAX_ITER).ok_or(Error::EigenFailure {
            max_iter: EIGEN_MAX_ITER,
        })?;
    let v_t = svd.v_t.ok_or(Error::EigenFailure {
        max_iter: EIGEN_MAX_ITER,
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let mut basis = CMat::zeros(n, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        for r in 0..n {
            basis[(r, c)] = v_t[(i, r)].conj();
        }
    }
    Ok((basis, order.iter().map(|&i| svd.singular_values[i]).collect()))
}

/// Groups eigenvalues lying within a relative distance of each other.
fn clusters(eigs: &[Complex64]) -> Vec<Vec<Complex64>> {
    let mut groups: Vec<Vec<Complex64>> = Vec::new();
    for &z in eigs {
        let close = |w: &Complex64| (z - w).norm() <= CLUSTER_TOL * z.norm().max(w.norm()).max(1.0);
        match groups.iter_mut().find(|g| g.iter().any(close)) {
            Some(g) => g.push(z),
            None => groups.push(vec![z]),
        }
    }
    groups
}

struct Splitting {
    stable: CMat,
    unstable: CMat,
    basis_cond: f64,
    defective: bool,
}

/// Spectral projectors onto the generalized eigenspaces for `|lambda| < 1`
/// and `|lambda| > 1`.
fn split(t: &DMatrix<f64>, eigs: &[Complex64]) -> Result<Splitting> {
    let n = t.nrows();
    let tc = complexify(t);
    let scale = matrix_norm(t, crate::NormKind::Induced2).max(1.0);
    let mut cols: Vec<nalgebra::DVector<Complex64>> = Vec::with_capacity(n);
    let mut tags = Vec::with_capacity(n);
    let mut defective = false;
    for group in clusters(eigs) {
        let m = group.len();
        let centre = group.iter().sum::<Complex64>() / m as f64;
        let mut shifted = tc.clone();
        for i in 0..n {
            shifted[(i, i)] -= centre;
        }
        let (_, sv) = least_singular(&shifted, m)?;
        let geometric = sv.iter().filter(|&&s| s <= 1e-7 * scale).count();
        if geometric < m {
            defective = true;
        }
        let mut power = shifted.clone();
        for _ in 1..m {
            power = &power * &shifted;
        }
        let (basis, _) = least_singular(&power, m)?;
        let modulus = centre.norm();
        let tag = if modulus < 1.0 - UNIT_CIRCLE_TOL {
            -1
        } else if modulus > 1.0 + UNIT_CIRCLE_TOL {
            1
        } else {
            0
        };
        for c in 0..m {
            cols.push(basis.column(c).into_owned());
            tags.push(tag);
        }
    }
    let v = CMat::from_columns(&cols);
    let lu = v.clone().lu();
    let v_inv = lu
        .try_inverse()
        .ok_or(Error::DefectiveSpectrum { cond: f64::INFINITY })?;
    let norm1 = |m: &CMat| {
        (0..m.ncols())
            .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let basis_cond = norm1(&v) * norm1(&v_inv);
    if !basis_cond.is_finite() || basis_cond > DEFECTIVE_COND {
        defective = true;
    }
    let select = |want: i32| {
        let mut d = CMat::zeros(n, n);
        for (i, &tag) in tags.iter().enumerate() {
            if tag == want {
                d[(i, i)] = Complex64::new(1.0, 0.0);
            }
        }
        &v * d * &v_inv
    };
    Ok(Splitting {
        stable: select(-1),
        unstable: select(1),
        basis_cond,
        defective,
    })
}

fn real_part(m: &CMat) -> DMatrix<f64> {
    m.map(|z| z.re)
}

/// Hyperbolicity of a time-1 operator, its stable projector and decay constants.
pub fn check_hyperbolic(t1: &Operator) -> Result<DichotomyReport> {
    let t = t1.entries();
    let n = t.nrows();
    let inv = match resolvent_matrix(t, 0.0) {
        Ok((r, _)) => -r,
        Err(Error::SingularResolvent { cond, .. }) => return Err(Error::NotInvertible { cond }),
        Err(e) => return Err(e),
    };
    let eigs = spectrum_of(t)?.eigenvalues;
    let gap = eigs.iter().map(|z| z.norm().ln().abs()).fold(f64::INFINITY, f64::min);
    let hyperbolic = eigs.iter().all(|z| (z.norm() - 1.0).abs() > UNIT_CIRCLE_TOL);
    let stable_rank = eigs.iter().filter(|z| z.norm() < 1.0 - UNIT_CIRCLE_TOL).count();

    let sp = split(t, &eigs)?;
    let ident = DMatrix::<f64>::identity(n, n);
    let p = if hyperbolic {
        (real_part(&sp.stable) + &ident - real_part(&sp.unstable)) * 0.5
    } else {
        real_part(&sp.stable)
    };
    let q = real_part(&sp.unstable);
    let kind = t1.norm_kind();
    let defective = sp.defective || matrix_norm(&p, kind) > DEFECTIVE_COND;

    let alpha = gap;
    let mut mdich: f64 = 0.0;
    let mut fwd = p.clone();
    let mut bwd = q;
    for k in 0..=DECAY_POWERS {
        let w = (alpha * k as f64).exp();
        mdich = mdich.max(matrix_norm(&fwd, kind) * w).max(matrix_norm(&bwd, kind) * w);
        fwd = t * fwd;
        bwd = &inv * bwd;
    }
    Ok(DichotomyReport {
        hyperbolic,
        spectral_gap: gap,
        stable_rank,
        projector: Operator::from_matrix_unchecked(p, kind),
        alpha,
        mdich,
        basis_cond: sp.basis_cond,
        defective,
        eigenvalues: eigs,
    })
}

/// Like [`check_hyperbolic`] but refuses numerically defective spectra.
pub fn check_hyperbolic_strict(t1: &Operator) -> Result<DichotomyReport> {
    let rep = check_hyperbolic(t1)?;
    if rep.defective {
        return Err(Error::DefectiveSpectrum { cond: rep.basis_cond });
    }
    Ok(rep)
}

/// Dichotomy of the semigroup `e^{tA}` via its time-1 map.
pub fn autonomous_dichotomy(a: &Operator) -> Result<DichotomyReport> {
    let t1 = expm_matrix(a.entries())?;
    check_hyperbolic(&Operator::from_matrix_unchecked(t1, a.norm_kind()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProximityReport {
    /// `max_t ||U(t, t-1) - e^A||`.
    pub sup_diff: f64,
    /// `e^{4 omega_1} omega_1`.
    pub bound: f64,
    pub omega1: f64,
    /// `sup_diff` measured after rescaling by `e^{-omega0}` (the frame in
    /// which the base semigroup is a contraction when `M = 1`).
    pub normalized_sup_diff: f64,
    pub per_t: Vec<(f64, f64)>,
}

/// Compares the time-1 maps of `u` with `e^A` at each sample time.
pub fn perturbation_proximity(u: &EvolutionFamilyApprox, gb: &GrowthBound, ts: &[f64]) -> Result<ProximityReport> {
    let a = u.generator();
    let ctx = ANormContext::new(a, gb, MuGrid::default())?;
    let omega1 = omega_1(u.family(), &ctx);
    let ea = expm_matrix(a.entries())?;
    let mut per_t = Vec::with_capacity(ts.len());
    let mut sup: f64 = 0.0;
    for &t in ts {
        let ut = u.evaluate(t, t - 1.0)?;
        let d = matrix_norm(&(ut.entries() - &ea), a.norm_kind());
        sup = sup.max(d);
        per_t.push((t, d));
    }
    Ok(ProximityReport {
        sup_diff: sup,
        bound: (4.0 * omega1).exp() * omega1,
        omega1,
        normalized_sup_diff: sup * (-gb.omega0).exp(),
        per_t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub t: f64,
    pub hyperbolic: bool,
    pub spectral_gap: f64,
    pub stable_rank: usize,
    /// `||U(t, t-1) - e^A||` at this sample.
    pub sup_diff: f64,
    pub bound_e4w1w1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsSummary {
    pub eps: f64,
    pub persisted: bool,
    /// `alpha / 2 - e^{4 eps} eps`; may be negative.
    pub gap_floor: f64,
    pub min_gap: f64,
    pub refine_delta: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub base: DichotomyReport,
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<EpsSummary>,
}

pub const SWEEP_LEVEL_CAP: u32 = 18;

/// Roughness sweep: for each `eps` the family `eps * shape` (shape rescaled
/// to unit sup `||.||_A`) is refined and the time-1 maps are tested for
/// hyperbolicity at every sample time.
pub fn roughness_sweep(
    a: &Operator,
    shape: &PerturbationFamily,
    gb: &GrowthBound,
    eps_list: &[f64],
    ts: &[f64],
) -> Result<SweepResult> {
    shape.check_compatible(a)?;
    let base = autonomous_dichotomy(a)?;
    if !base.hyperbolic {
        return Err(Error::PreconditionViolated(
            "base semigroup has no exponential dichotomy".into(),
        ));
    }
    let (lo, hi) = shape.interval();
    if ts.iter().any(|&t| t - 1.0 < lo || t > hi) {
        return Err(Error::OutOfInterval {
            t: ts.iter().copied().fold(f64::NAN, f64::max),
            s: lo,
            a: lo,
            b: hi,
        });
    }
    let ctx = ANormContext::new(a, gb, MuGrid::default())?;
    let w = omega_1(shape, &ctx);
    let unit = if w > 0.0 { shape.scaled(1.0 / w) } else { shape.clone() };
    let ea = expm_matrix(a.entries())?;

    let mut rows = Vec::with_capacity(eps_list.len() * ts.len());
    let mut summaries = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let fam = unit.scaled(eps);
        let bound = (4.0 * eps.abs()).exp() * eps.abs();
        let gap_floor = base.alpha / 2.0 - bound;
        let tol = (eps.abs() / 100.0).clamp(1e-12, 1e-4);
        let refined = refine_to_tolerance(a, &fam, gb, tol, SWEEP_LEVEL_CAP);
        let r = match refined {
            Ok(r) => r,
            Err(e) => {
                // keep one row per (eps, t) so the table shape does not depend on failures
                rows.extend(ts.iter().map(|&t| SweepRow {
                    eps,
                    t,
                    hyperbolic: false,
                    spectral_gap: f64::NAN,
                    stable_rank: 0,
                    sup_diff: f64::NAN,
                    bound_e4w1w1: bound,
                }));
                summaries.push(EpsSummary {
                    eps,
                    persisted: false,
                    gap_floor,
                    min_gap: f64::NAN,
                    refine_delta: f64::NAN,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut persisted = true;
        let mut min_gap = f64::INFINITY;
        let mut error = None;
        for &t in ts {
            let ut = r.approx.evaluate(t, t - 1.0)?;
            let diff = matrix_norm(&(ut.entries() - &ea), a.norm_kind());
            match check_hyperbolic(&ut) {
                Ok(rep) => {
                    persisted &= rep.hyperbolic && rep.spectral_gap >= gap_floor;
                    min_gap = min_gap.min(rep.spectral_gap);
                    rows.push(SweepRow {
                        eps,
                        t,
                        hyperbolic: rep.hyperbolic,
                        spectral_gap: rep.spectral_gap,
                        stable_rank: rep.stable_rank,
                        sup_diff: diff,
                        bound_e4w1w1: bound,
                    });
                }
                Err(e) if e.is_numerical() => {
                    persisted = false;
                    error.get_or_insert_with(|| e.to_string());
                    rows.push(SweepRow {
                        eps,
                        t,
                        hyperbolic: false,
                        spectral_gap: f64::NAN,
                        stable_rank: 0,
                        sup_diff: diff,
                        bound_e4w1w1: bound,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        summaries.push(EpsSummary {
            eps,
            persisted,
            gap_floor,
            min_gap,
            refine_delta: r.achieved_delta,
            error,
        });
    }
    Ok(SweepResult { base, rows, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::NormKind;
    use crate::semigroup::{expm, fit_growth_bound};

    const K2: NormKind = NormKind::Induced2;

    fn op(rows: &[&[f64]]) -> Operator {
        Operator::from_rows(rows, K2).unwrap()
    }

    fn assert_projector_invariants(t: &Operator, rep: &DichotomyReport) {
        let p = &rep.projector;
        let p2 = p.try_mul(p).unwrap();
        assert!(p2.try_sub(p).unwrap().norm() < 1e-9, "P^2 != P");
        let tr: f64 = (0..p.dim()).map(|i| p.get(i, i)).sum();
        assert_eq!(tr.round() as usize, rep.stable_rank);
        let comm = t.try_mul(p).unwrap().try_sub(&p.try_mul(t).unwrap()).unwrap().norm();
        assert!(comm <= 1e-8 * t.norm() * p.norm().max(1.0));
    }

    #[test]
    fn saddle_time_one_map() {
        let t = op(&[&[(-1f64).exp(), 0.0], &[0.0, 1f64.exp()]]);
        let rep = check_hyperbolic(&t).unwrap();
        assert!(rep.hyperbolic);
        assert_eq!(rep.stable_rank, 1);
        assert!(
            rep.projector
                .try_sub(&Operator::diag(&[1.0, 0.0], K2).unwrap())
                .unwrap()
                .norm()
                < 1e-12
        );
        assert!((rep.alpha - 1.0).abs() < 1e-12);
        assert!((rep.mdich - 1.0).abs() < 1e-9);
        assert!(!rep.defective);
        assert_projector_invariants(&t, &rep);
    }

    #[test]
    fn non_hyperbolic_maps() {
        let rot = expm(&op(&[&[0.0, -1.0], &[1.0, 0.0]]), 1.0).unwrap();
        assert!(!check_hyperbolic(&rot).unwrap().hyperbolic);
        assert!(
            !check_hyperbolic(&Operator::diag(&[1.0, 0.5], K2).unwrap())
                .unwrap()
                .hyperbolic
        );
        let shear = autonomous_dichotomy(&op(&[&[0.0, 1.0], &[0.0, 0.0]])).unwrap();
        assert!(!shear.hyperbolic);
        assert!(shear.defective);
        assert!(matches!(
            check_hyperbolic_strict(&expm(&op(&[&[0.0, 1.0], &[0.0, 0.0]]), 1.0).unwrap()),
            Err(Error::DefectiveSpectrum { .. })
        ));
    }

    #[test]
    fn autonomous_examples() {
        let rep = autonomous_dichotomy(&Operator::diag(&[-1.0, 1.0], K2).unwrap()).unwrap();
        assert!(rep.hyperbolic && (rep.alpha - 1.0).abs() < 1e-12);
        let rep = autonomous_dichotomy(&Operator::diag(&[-1.0, -2.0], K2).unwrap()).unwrap();
        assert!(rep.hyperbolic);
        assert_eq!(rep.stable_rank, 2);
        assert!(rep.projector.try_sub(&Operator::identity(2, K2)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn singular_map_rejected() {
        let t = Operator::diag(&[0.0, 2.0], K2).unwrap();
        assert!(matches!(check_hyperbolic(&t), Err(Error::NotInvertible { .. })));
    }

    #[test]
    fn non_normal_and_complex_spectra() {
        // oblique splitting: stable direction (1,0), unstable (1,1)
        let t = op(&[&[0.5, 1.5], &[0.0, 2.0]]);
        let rep = check_hyperbolic(&t).unwrap();
        assert!(rep.hyperbolic);
        let expected = op(&[&[1.0, -1.0], &[0.0, 0.0]]);
        assert!(rep.projector.try_sub(&expected).unwrap().norm() < 1e-12);
        assert_projector_invariants(&t, &rep);

        // complex pair inside the disc plus a real unstable eigenvalue
        let a = op(&[&[-0.5, 2.0, 0.3], &[-2.0, -0.5, 0.1], &[0.0, 0.0, 0.7]]);
        let t = expm(&a, 1.0).unwrap();
        let rep = check_hyperbolic(&t).unwrap();
        assert!(rep.hyperbolic);
        assert_eq!(rep.stable_rank, 2);
        assert!((rep.alpha - 0.5).abs() < 1e-9);
        assert_projector_invariants(&t, &rep);
    }

    #[test]
    fn repeated_semisimple_eigenvalue() {
        let t = Operator::diag(&[0.3, 0.3, 3.0], K2).unwrap();
        let rep = check_hyperbolic(&t).unwrap();
        assert!(!rep.defective);
        assert_eq!(rep.stable_rank, 2);
        assert_projector_invariants(&t, &rep);
    }

    #[test]
    fn decay_constants_bound_powers() {
        let t = op(&[&[0.4, 3.0, 0.0], &[0.0, 0.6, 1.0], &[0.0, 0.0, 1.8]]);
        let rep = check_hyperbolic(&t).unwrap();
        let inv = t.entries().clone().try_inverse().unwrap();
        let n = t.dim();
        let q = DMatrix::identity(n, n) - rep.projector.entries();
        let mut fwd = rep.projector.entries().clone();
        let mut bwd = q;
        for k in 0..=DECAY_POWERS {
            let cap = rep.mdich * (-rep.alpha * k as f64).exp() * (1.0 + 1e-6);
            assert!(matrix_norm(&fwd, K2) <= cap);
            assert!(matrix_norm(&bwd, K2) <= cap);
            fwd = t.entries() * fwd;
            bwd = &inv * bwd;
        }
    }

    #[test]
    fn proximity_for_zero_perturbation() {
        let a = Operator::diag(&[-1.0, 1.0], K2).unwrap();
        let gb = fit_growth_bound(&a, 4.0, 0.0, 32).unwrap();
        let zero = PerturbationFamily::constant(Operator::zeros(2, K2), (0.0, 4.0)).unwrap();
        let u = crate::evofam::euler_polygon(&a, &zero, 4).unwrap();
        let rep = perturbation_proximity(&u, &gb, &[1.0, 2.5, 4.0]).unwrap();
        assert!(rep.sup_diff < 1e-14);
        assert_eq!(rep.bound, 0.0);
        assert!(perturbation_proximity(&u, &gb, &[0.5]).is_err());
    }

    #[test]
    fn sweep_rows_and_small_eps() {
        let a = Operator::diag(&[-1.0, 1.0], K2).unwrap();
        let gb = fit_growth_bound(&a, 4.0, 0.0, 32).unwrap();
        let shape = PerturbationFamily::sinusoid(op(&[&[0.0, 1.0], &[1.0, 0.0]]), 1.0, 0.0, (0.0, 4.0)).unwrap();
        let ts = [1.0, 2.0, 3.0, 4.0];
        let res = roughness_sweep(&a, &shape, &gb, &[0.0, 1e-2], &ts).unwrap();
        assert_eq!(res.rows.len(), 8);
        assert!(res.summaries.iter().all(|s| s.persisted));
        for row in res.rows.iter().filter(|r| r.eps == 0.0) {
            assert!((row.spectral_gap - 1.0).abs() < 1e-12);
            assert_eq!(row.stable_rank, 1);
        }
        let big = roughness_sweep(&a, &shape, &gb, &[5.0], &ts).unwrap();
        assert_eq!(big.summaries.len(), 1);
    }
}
