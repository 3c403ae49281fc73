//! Semigroup machinery: matrix exponential, Yosida approximation and
//! growth-bound certificates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{self, matrix_norm, NormKind, Operator};
use crate::metrics;

/// Multiplicative slack applied to mathematically tight inequalities.
pub const BOUND_SLACK: f64 = 1e-6;

// Scaling-and-squaring thresholds for Pade degrees 3, 5, 7, 9, 13.
const THETA: [(usize, f64); 5] = [
    (3, 1.495_585_217_958_292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504_178_996_162_932e-1),
    (9, 2.097_847_961_257_068),
    (13, 5.371_920_351_148_152),
];

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `e^{tA}`.
pub fn expm(a: &Operator, t: f64) -> Result<Operator> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::PreconditionViolated(format!(
            "expm requires finite t >= 0, got {t}"
        )));
    }
    let m = expm_matrix(&(a.entries() * t))?;
    Ok(Operator::from_matrix_unchecked(m, a.norm_kind()))
}

/// Matrix exponential by scaling and squaring with a degree-adaptive
/// diagonal Pade approximant.
pub fn expm_matrix(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 1 {
        let v = a[(0, 0)].exp();
        return if v.is_finite() {
            Ok(DMatrix::from_element(1, 1, v))
        } else {
            Err(Error::Overflow { squarings: 0 })
        };
    }
    let norm = matrix_norm(a, NormKind::Induced1);
    if !norm.is_finite() {
        return Err(Error::Overflow { squarings: u32::MAX });
    }
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }

    for &(deg, theta) in &THETA[..4] {
        if norm <= theta {
            return pade(a, deg);
        }
    }
    let theta13 = THETA[4].1;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil() as i64
    } else {
        0
    };
    if s > 1000 {
        return Err(Error::Overflow { squarings: s as u32 });
    }
    let scaled = a * 2f64.powi(-(s as i32));
    let mut x = pade(&scaled, 13)?;
    for _ in 0..s {
        x = &x * &x;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { squarings: s as u32 });
    }
    Ok(x)
}

fn pade(a: &DMatrix<f64>, deg: usize) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let (u, v) = if deg == 13 {
        let b = &PADE13;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let w1 = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
        let w = &a6 * w1 + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1];
        let z1 = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
        let v = &a6 * z1 + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
        (a * w, v)
    } else {
        let b: &[f64] = match deg {
            3 => &PADE3,
            5 => &PADE5,
            7 => &PADE7,
            _ => &PADE9,
        };
        // odd coefficients go with U, even with V; powers of A^2 shared
        let mut pow = ident.clone();
        let mut w = &ident * b[1];
        let mut v = &ident * b[0];
        for k in 1..=deg / 2 {
            pow = &pow * &a2;
            w += &pow * b[2 * k + 1];
            v += &pow * b[2 * k];
        }
        (a * w, v)
    };
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).ok_or(Error::Overflow { squarings: 0 })
}

/// Yosida approximation `A_lambda = lambda^2 R(lambda, A) - lambda I`.
pub fn yosida_approx(a: &Operator, lambda: f64) -> Result<Operator> {
    let r = linop::resolvent(a, lambda)?;
    Ok(r.scale(lambda * lambda).shifted(-lambda))
}

/// Growth-bound certificate `||e^{tA}|| <= M e^{omega0 t}` on `[0, verified_horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub m: f64,
    pub omega0: f64,
    pub verified_horizon: f64,
    pub margin: f64,
}

impl GrowthBound {
    /// A bound supplied by the caller rather than fitted. Not re-verified.
    pub fn given(m: f64, omega0: f64) -> Result<Self> {
        if !(m >= 1.0) || !omega0.is_finite() {
            return Err(Error::PreconditionViolated(format!(
                "growth bound needs M >= 1 and finite omega0, got ({m}, {omega0})"
            )));
        }
        Ok(Self {
            m,
            omega0,
            verified_horizon: f64::INFINITY,
            margin: 0.0,
        })
    }

    pub fn bound_at(&self, t: f64) -> f64 {
        self.m * (self.omega0 * t).exp()
    }

    /// Largest observed `||e^{tA}|| / (M e^{omega0 t})` over `ts`.
    pub fn worst_ratio(&self, a: &Operator, ts: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &t in ts {
            let e = expm(a, t)?;
            worst = worst.max(e.norm() / self.bound_at(t));
        }
        Ok(worst)
    }
}

/// Fits `(M, omega0)` with `omega0 = abscissa(A) + margin`.
///
/// `M` is the maximum of `||e^{tA}|| e^{-omega0 t}` over a uniform grid, then
/// over a grid twice as fine, polished by golden-section search around the
/// best sample, clamped below at 1 and inflated by `1 + 1e-6`.
pub fn fit_growth_bound(a: &Operator, horizon: f64, margin: f64, grid_points: usize) -> Result<GrowthBound> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::PreconditionViolated(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if grid_points < 16 {
        return Err(Error::PreconditionViolated(format!(
            "need at least 16 grid points, got {grid_points}"
        )));
    }
    if !(margin >= 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "margin must be nonnegative, got {margin}"
        )));
    }
    let omega0 = linop::spectrum(a)?.spectral_abscissa + margin;
    let weighted = |t: f64| -> Result<f64> { Ok(expm(a, t)?.norm() * (-omega0 * t).exp()) };

    let fine = 2 * grid_points;
    let dt = horizon / (fine - 1) as f64;
    let mut best = (0.0_f64, 0usize);
    for i in 0..fine {
        let v = weighted(i as f64 * dt)?;
        if v > best.0 {
            best = (v, i);
        }
    }
    let mut m = best.0;
    if best.1 > 0 {
        let lo = (best.1 - 1) as f64 * dt;
        let hi = ((best.1 + 1).min(fine - 1)) as f64 * dt;
        m = m.max(golden_max(&weighted, lo, hi, 60)?);
    }
    Ok(GrowthBound {
        m: m.max(1.0) * (1.0 + BOUND_SLACK),
        omega0,
        verified_horizon: horizon,
        margin,
    })
}

fn golden_max(f: &dyn Fn(f64) -> Result<f64>, mut lo: f64, mut hi: f64, iters: usize) -> Result<f64> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    let mut best = f1.max(f2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        }
        best = best.max(f1).max(f2);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffBoundReport {
    /// Yosida distance between the two generators.
    pub yosida_distance: f64,
    /// Largest observed/bound ratio over the t-grid.
    pub max_ratio: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Checks `||e^{tG} - e^{tH}|| <= t M^2 e^{4 omega t} d_Y(G, H)` on a grid of
/// `[0, tmax]`.
///
/// The estimate is stated for positive growth constants, so `omega < 0` is
/// rejected. Sampled growth of both semigroups must respect `(M, omega)`.
pub fn semigroup_diff_bound_check(
    g: &Operator,
    h: &Operator,
    m: f64,
    omega: f64,
    tmax: f64,
) -> Result<DiffBoundReport> {
    if omega < 0.0 {
        return Err(Error::PreconditionViolated(format!(
            "semigroup difference estimate needs omega >= 0, got {omega}"
        )));
    }
    if !(tmax > 0.0) || !(m >= 1.0) {
        return Err(Error::PreconditionViolated("need tmax > 0 and M >= 1".into()));
    }
    let samples = 101;
    let ts: Vec<f64> = (0..samples).map(|i| tmax * i as f64 / (samples - 1) as f64).collect();
    let gb = GrowthBound {
        m,
        omega0: omega,
        verified_horizon: tmax,
        margin: 0.0,
    };
    for (name, op) in [("G", g), ("H", h)] {
        let worst = gb.worst_ratio(op, &ts)?;
        if worst > 1.0 + BOUND_SLACK {
            return Err(Error::PreconditionViolated(format!(
                "growth bound (M={m}, omega={omega}) fails for {name}: ratio {worst}"
            )));
        }
    }
    let floor = linop::spectrum(g)?
        .spectral_abscissa
        .max(linop::spectrum(h)?.spectral_abscissa)
        .max(omega);
    let dy = metrics::yosida_distance(g, h, &metrics::default_lambdas(floor))?.value;

    let mut max_ratio: f64 = 0.0;
    for &t in &ts {
        let observed = expm(g, t)?.try_sub(&expm(h, t)?)?.norm();
        let bound = t * m * m * (4.0 * omega * t).exp() * dy;
        let ratio = if observed == 0.0 {
            0.0
        } else if bound == 0.0 {
            f64::INFINITY
        } else {
            observed / bound
        };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(DiffBoundReport {
        yosida_distance: dy,
        max_ratio,
        pass: max_ratio <= 1.0 + BOUND_SLACK,
        samples,
    })
}

/// `||e^{t A_lambda} - e^{tA}||` for each `lambda`.
pub fn yosida_semigroup_limit(a: &Operator, t: f64, lambdas: &[f64]) -> Result<Vec<f64>> {
    if lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::PreconditionViolated(
            "lambdas must be strictly increasing".into(),
        ));
    }
    let target = expm(a, t)?;
    lambdas
        .iter()
        .map(|&l| {
            let al = yosida_approx(a, l)?;
            Ok(expm(&al, t)?.try_sub(&target)?.norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const K2: NormKind = NormKind::Induced2;

    fn diag(v: &[f64]) -> Operator {
        Operator::diag(v, K2).unwrap()
    }

    #[test]
    fn expm_examples() {
        let a = Operator::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5]], K2).unwrap();
        assert_eq!(expm(&a, 0.0).unwrap(), Operator::identity(2, K2));

        let e = expm(&diag(&[1.0, -1.0]), 1.0).unwrap();
        assert!((e.get(0, 0) - 1f64.exp()).abs() < 1e-14);
        assert!((e.get(1, 1) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(e.get(0, 1), 0.0);

        let n = Operator::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]], K2).unwrap();
        let e = expm(&n, 2.0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!((e.entries() - expect).amax() < 1e-14);
    }

    #[test]
    fn expm_across_pade_degrees() {
        // rotation generator: closed form cos/sin at every scale
        for &t in &[1e-3, 0.1, 0.5, 1.5, 4.0, 40.0] {
            let r = Operator::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]], K2).unwrap();
            let e = expm(&r, t).unwrap();
            assert!((e.get(0, 0) - t.cos()).abs() < 1e-13 * (1.0 + t));
            assert!((e.get(1, 0) - t.sin()).abs() < 1e-13 * (1.0 + t));
        }
    }

    #[test]
    fn expm_overflow_is_reported() {
        let a = diag(&[1e300, 1.0]);
        assert!(matches!(expm(&a, 10.0), Err(Error::Overflow { .. })));
        assert!(expm(&a, -1.0).is_err());
    }

    #[test]
    fn yosida_examples() {
        let z = yosida_approx(&Operator::zeros(2, K2), 5.0).unwrap();
        assert!(z.entries().amax() < 1e-14);
        let y = yosida_approx(&diag(&[-1.0]), 9.0).unwrap();
        assert!((y.get(0, 0) + 0.9).abs() < 1e-13);
        let a = diag(&[-1.0, -2.0]);
        let y = yosida_approx(&a, 1e6).unwrap();
        assert!(y.try_sub(&a).unwrap().norm() <= 3e-5);
    }

    #[test]
    fn growth_bound_examples() {
        let gb = fit_growth_bound(&diag(&[-1.0, -2.0]), 5.0, 0.0, 64).unwrap();
        assert!((gb.m - 1.0).abs() < 1e-5 && gb.omega0 == -1.0);
        let gb = fit_growth_bound(&Operator::zeros(2, K2), 5.0, 0.0, 64).unwrap();
        assert!((gb.m - 1.0).abs() < 1e-5 && gb.omega0 == 0.0);

        // e^{-0.1 t} ||[[1, 10t], [0, 1]]||_2 peaks near t = 10 at about 100/e
        let a = Operator::from_rows(&[&[-1.0, 10.0], &[0.0, -1.0]], K2).unwrap();
        let gb = fit_growth_bound(&a, 30.0, 0.1, 128).unwrap();
        let oracle = (0..30_001)
            .map(|i| {
                let t = i as f64 * 1e-3;
                let s = 10.0 * t;
                // largest singular value of [[1, s], [0, 1]]
                let sv = (s + (s * s + 4.0).sqrt()) / 2.0;
                sv * (-0.1 * t).exp()
            })
            .fold(0.0, f64::max);
        assert!(gb.m > 2.0);
        assert!(gb.m >= oracle && gb.m <= oracle * (1.0 + 1e-5), "{} vs {oracle}", gb.m);
    }

    #[test]
    fn growth_bound_rejects_bad_input() {
        let a = diag(&[-1.0]);
        assert!(fit_growth_bound(&a, 0.0, 0.0, 32).is_err());
        assert!(fit_growth_bound(&a, 1.0, 0.0, 8).is_err());
    }

    #[test]
    fn diff_bound_examples() {
        let g = diag(&[-1.0]);
        let r = semigroup_diff_bound_check(&g, &g, 1.0, 0.5, 2.0).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert!(r.pass);

        let h = diag(&[-1.5]);
        let r = semigroup_diff_bound_check(&g, &h, 1.0, 0.0, 2.0).unwrap();
        // scalar oracle: max_t (e^{-t} - e^{-1.5 t}) / (0.5 t) on the grid
        let oracle = (1..=100)
            .map(|i| {
                let t = 2.0 * i as f64 / 100.0;
                ((-t).exp() - (-1.5 * t).exp()) / (0.5 * t)
            })
            .fold(0.0, f64::max);
        assert!((r.max_ratio - oracle).abs() < 1e-6, "{} vs {oracle}", r.max_ratio);
        assert!(r.pass);
        assert!((r.yosida_distance - 0.5).abs() < 1e-6);
    }

    #[test]
    fn diff_bound_needs_nonnegative_omega() {
        // With omega = -1 the estimate genuinely fails (e^{-4t} decays faster
        // than the difference), so the hypothesis omega >= 0 is enforced.
        let g = diag(&[-1.0]);
        let h = diag(&[-1.5]);
        assert!(matches!(
            semigroup_diff_bound_check(&g, &h, 1.0, -1.0, 2.0),
            Err(Error::PreconditionViolated(_))
        ));
        let t: f64 = 2.0;
        assert!((-t).exp() - (-1.5 * t).exp() > 0.5 * t * (-4.0 * t).exp());
    }

    #[test]
    fn diff_bound_checks_growth_precondition() {
        let g = diag(&[1.0]);
        let h = diag(&[0.5]);
        assert!(matches!(
            semigroup_diff_bound_check(&g, &h, 1.0, 0.2, 1.0),
            Err(Error::PreconditionViolated(_))
        ));
    }

    #[test]
    fn yosida_limit_examples() {
        let z = yosida_semigroup_limit(&Operator::zeros(2, K2), 1.0, &[10.0, 100.0]).unwrap();
        assert!(z.iter().all(|&v| v < 1e-13));

        let a = diag(&[-1.0, -3.0]);
        let lams = [10.0, 1e2, 1e3, 1e4];
        let errs = yosida_semigroup_limit(&a, 1.0, &lams).unwrap();
        // scalar oracle
        for (e, &l) in errs.iter().zip(&lams) {
            let o = [-1.0f64, -3.0]
                .iter()
                .map(|&x| ((l * x / (l - x)).exp() - x.exp()).abs())
                .fold(0.0, f64::max);
            assert!((e - o).abs() < 1e-10 + 1e-6 * o);
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]));
        assert!(errs[3] <= 1e-3);

        let rot = Operator::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]], K2).unwrap();
        let e = yosida_semigroup_limit(&rot, 1.0, &[1e2, 1e4]).unwrap();
        assert!(e[1] < e[0]);
    }
}
