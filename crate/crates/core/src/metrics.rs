//! Perturbation norm `||C||_A`, Yosida distance, and the (A1)/(A2) checks.
//!
//! `||C||_A = (1/M) sup_{mu > omega0} (mu - omega0) ||C R(mu, A)||`. In finite
//! dimension `mu C R(mu, A) -> C`, so the supremum is taken over a geometric
//! grid together with the exact tail value `||C|| / M`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evofam::PerturbationFamily;
use crate::linop::{self, matrix_norm, NormKind, Operator};
use crate::semigroup::{self, GrowthBound, BOUND_SLACK};

/// Largest lambda used for Yosida tails; beyond it cancellation eats the digits.
pub const LAMBDA_CEILING: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuGrid {
    /// First grid point is `omega0 + mu_min_offset`.
    pub mu_min_offset: f64,
    /// Last grid point is `omega0 + mu_max_offset`.
    pub mu_max_offset: f64,
    pub per_decade: usize,
}

impl Default for MuGrid {
    fn default() -> Self {
        Self {
            mu_min_offset: 1e-3,
            mu_max_offset: 1e8,
            per_decade: 20,
        }
    }
}

impl MuGrid {
    pub fn points(&self, omega0: f64) -> Vec<f64> {
        geometric_offsets(self.mu_min_offset, self.mu_max_offset, self.per_decade)
            .into_iter()
            .map(|d| omega0 + d)
            .collect()
    }
}

/// Geometric sequence from `lo` to `hi` inclusive with `per_decade` steps per decade.
pub fn geometric_offsets(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let steps = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=steps)
        .map(|i| {
            if i == steps {
                hi
            } else {
                lo * 10f64.powf(decades * i as f64 / steps as f64)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ANormResult {
    pub value: f64,
    /// Grid point attaining the supremum, `+inf` when the tail `||C||/M` wins.
    pub argmax_mu: f64,
    pub grid: MuGrid,
    /// Grid points dropped because the resolvent was singular there.
    pub skipped: Vec<f64>,
}

struct MuSample {
    mu: f64,
    weight: f64,
    resolvent: DMatrix<f64>,
    // (mu - omega0) ||R(mu, A)||: bounds every grid term by ||C|| * gain
    gain: f64,
}

/// Precomputed resolvents of `A` on a mu-grid, for repeated `||.||_A` queries.
pub struct ANormContext {
    gb: GrowthBound,
    grid: MuGrid,
    norm_kind: NormKind,
    dim: usize,
    samples: Vec<MuSample>,
    skipped: Vec<f64>,
}

impl ANormContext {
    pub fn new(a: &Operator, gb: &GrowthBound, grid: MuGrid) -> Result<Self> {
        if !(grid.mu_min_offset > 0.0) || grid.mu_max_offset <= grid.mu_min_offset || grid.per_decade == 0 {
            return Err(Error::PreconditionViolated(format!("bad mu grid {grid:?}")));
        }
        let mus = grid.points(gb.omega0);
        let total = mus.len();
        let mut samples = Vec::with_capacity(total);
        let mut skipped = Vec::new();
        for mu in mus {
            match linop::resolvent_matrix(a.entries(), mu) {
                Ok((r, _)) => {
                    let weight = mu - gb.omega0;
                    let gain = weight * matrix_norm(&r, a.norm_kind());
                    samples.push(MuSample {
                        mu,
                        weight,
                        resolvent: r,
                        gain,
                    });
                }
                Err(Error::SingularResolvent { .. }) => skipped.push(mu),
                Err(e) => return Err(e),
            }
        }
        if skipped.len() * 10 > total {
            return Err(Error::TooManySkipped {
                skipped: skipped.len(),
                total,
            });
        }
        Ok(Self {
            gb: *gb,
            grid,
            norm_kind: a.norm_kind(),
            dim: a.dim(),
            samples,
            skipped,
        })
    }

    pub fn growth_bound(&self) -> &GrowthBound {
        &self.gb
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn value(&self, c: &DMatrix<f64>) -> f64 {
        self.evaluate(c).0
    }

    /// `(value, argmax_mu)`. Grid points whose a-priori bound
    /// `||C|| (mu - omega0) ||R||` cannot beat the running maximum are skipped.
    pub fn evaluate(&self, c: &DMatrix<f64>) -> (f64, f64) {
        let m = self.gb.m;
        let cn = matrix_norm(c, self.norm_kind);
        let mut best = cn / m;
        let mut arg = f64::INFINITY;
        if cn == 0.0 {
            return (0.0, arg);
        }
        for s in &self.samples {
            if cn * s.gain / m <= best * (1.0 + 1e-12) {
                continue;
            }
            let v = s.weight * matrix_norm(&(c * &s.resolvent), self.norm_kind) / m;
            if v > best {
                best = v;
                arg = s.mu;
            }
        }
        (best, arg)
    }

    pub fn result(&self, c: &Operator) -> Result<ANormResult> {
        if c.dim() != self.dim {
            return Err(Error::DimMismatch {
                left: c.dim(),
                right: self.dim,
            });
        }
        if c.norm_kind() != self.norm_kind {
            return Err(Error::NormMismatch {
                left: c.norm_kind(),
                right: self.norm_kind,
            });
        }
        let (value, argmax_mu) = self.evaluate(c.entries());
        Ok(ANormResult {
            value,
            argmax_mu,
            grid: self.grid,
            skipped: self.skipped.clone(),
        })
    }
}

pub fn a_norm(c: &Operator, a: &Operator, gb: &GrowthBound, grid: MuGrid) -> Result<ANormResult> {
    ANormContext::new(a, gb, grid)?.result(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YosidaDistance {
    pub value: f64,
    /// max - min of `lambda^2 ||R(lambda,A) - R(lambda,B)||` over the last three lambdas.
    pub spread: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Geometric lambda grid from just above `floor` up to [`LAMBDA_CEILING`].
pub fn default_lambdas(floor: f64) -> Vec<f64> {
    let start = (10.0 * floor.abs()).max(10.0) + floor.max(0.0);
    geometric_offsets(start, LAMBDA_CEILING, 4)
}

/// Tail estimate of `limsup lambda^2 ||R(lambda, A) - R(lambda, B)||`.
///
/// The difference of resolvents is formed as `R(lambda,A) (A - B) R(lambda,B)`,
/// which avoids cancellation at large lambda.
pub fn yosida_distance(a: &Operator, b: &Operator, lambdas: &[f64]) -> Result<YosidaDistance> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.norm_kind() != b.norm_kind() {
        return Err(Error::NormMismatch {
            left: a.norm_kind(),
            right: b.norm_kind(),
        });
    }
    if lambdas.len() < 3 || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::PreconditionViolated(
            "need at least 3 strictly increasing lambdas".into(),
        ));
    }
    if lambdas[lambdas.len() - 1] > LAMBDA_CEILING {
        return Err(Error::PreconditionViolated(format!(
            "lambda exceeds ceiling {LAMBDA_CEILING:e}"
        )));
    }
    let diff = a.entries() - b.entries();
    let kind = a.norm_kind();
    let mut samples = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let (ra, _) = linop::resolvent_matrix(a.entries(), l)?;
        let (rb, _) = linop::resolvent_matrix(b.entries(), l)?;
        let f = l * l * matrix_norm(&(ra * &diff * rb), kind);
        samples.push((l, f));
    }
    let tail = &samples[samples.len() - 3..];
    let value = tail[2].1;
    let hi = tail.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let spread = hi - lo;
    if spread > 1e-3 * value + 1e-9 {
        return Err(Error::TailNotSettled { value, spread });
    }
    Ok(YosidaDistance { value, spread, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationReport {
    pub a_norm: f64,
    /// Largest `||e^{t(A+C)}|| / (M e^{(omega0 + M^2 ||C||_A) t})` on the grid.
    pub max_ratio: f64,
    pub pass: bool,
}

/// Checks `||e^{t(A+C)}|| <= M e^{(omega0 + M^2 ||C||_A) t}` on `[0, tmax]`.
pub fn check_generation_bound(a: &Operator, c: &Operator, gb: &GrowthBound, tmax: f64) -> Result<GenerationReport> {
    let an = a_norm(c, a, gb, MuGrid::default())?.value;
    let sum = a.try_add(c)?;
    let rate = gb.omega0 + gb.m * gb.m * an;
    let steps = 200;
    let mut max_ratio: f64 = 0.0;
    for i in 0..=steps {
        let t = tmax * i as f64 / steps as f64;
        let observed = semigroup::expm(&sum, t)?.norm();
        max_ratio = max_ratio.max(observed / (gb.m * (rate * t).exp()));
    }
    Ok(GenerationReport {
        a_norm: an,
        max_ratio,
        pass: max_ratio <= 1.0 + BOUND_SLACK,
    })
}

/// Finite-difference step used for t-derivatives on `[a, b]`.
pub fn fd_step(a: f64, b: f64) -> f64 {
    (1e-8 * (b - a)).max(1e-5)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// `(h, Omega(h))` with `h` decreasing.
    pub a1_modulus: Vec<(f64, f64)>,
    /// `(mu, sup_t ||d/dt [B(t) R(mu, A)]||)` with `mu` increasing.
    pub a2_derivative_sup: Vec<(f64, f64)>,
    pub a1_pass: bool,
    pub a2_pass: bool,
}

/// Sampled `Omega(h) = sup_{|t-s| <= h} ||B(t) - B(s)||_A`.
///
/// Start points are spaced at most `h/2` apart so that no jump of `B` can
/// fall between consecutive samples.
pub fn sampled_modulus(b: &PerturbationFamily, ctx: &ANormContext, h: f64, min_points: usize) -> f64 {
    let (a, bb) = b.interval();
    let h = h.min(bb - a);
    let span = bb - a - h;
    let count = min_points.max((2.0 * (bb - a) / h).ceil() as usize + 1);
    let mut best: f64 = 0.0;
    for i in 0..count {
        let t = if count == 1 {
            a
        } else {
            a + span * i as f64 / (count - 1) as f64
        };
        let d = b.eval_matrix(t + h) - b.eval_matrix(t);
        best = best.max(ctx.value(&d));
    }
    best
}

pub fn check_assumptions(
    b: &PerturbationFamily,
    a: &Operator,
    gb: &GrowthBound,
    t_samples: usize,
    a2_mus: &[f64],
) -> Result<AssumptionReport> {
    if t_samples < 32 {
        return Err(Error::PreconditionViolated(format!(
            "need t_samples >= 32, got {t_samples}"
        )));
    }
    b.check_compatible(a)?;
    let ctx = ANormContext::new(a, gb, MuGrid::default())?;
    let (lo, hi) = b.interval();
    let a1_modulus = modulus_profile(hi - lo, |h| sampled_modulus(b, &ctx, h, t_samples));

    let hfd = fd_step(lo, hi);
    let ts = fd_times(lo, hi, t_samples);
    let mut a2_derivative_sup = Vec::with_capacity(a2_mus.len());
    for &mu in a2_mus {
        let (r, _) = linop::resolvent_matrix(a.entries(), mu)?;
        let mut sup: f64 = 0.0;
        for &t in &ts {
            let db = (b.eval_matrix(t + hfd) - b.eval_matrix(t - hfd)) / (2.0 * hfd);
            sup = sup.max(matrix_norm(&(db * &r), a.norm_kind()));
        }
        a2_derivative_sup.push((mu, sup));
    }
    Ok(assemble_assumptions(a1_modulus, a2_derivative_sup))
}

/// Assumption check for `B(t) = f(t) B0`, given `||B0||_A` and the values
/// `||B0 R(mu, A)||` at the (a2) sample points.
///
/// Homogeneity of both norms reduces every matrix evaluation to a scalar one,
/// which keeps large discretized generators tractable.
pub fn check_assumptions_separable(
    profile: &dyn Fn(f64) -> f64,
    interval: (f64, f64),
    b0_a_norm: f64,
    b0_resolvent_norms: &[(f64, f64)],
    t_samples: usize,
) -> Result<AssumptionReport> {
    if t_samples < 32 {
        return Err(Error::PreconditionViolated(format!(
            "need t_samples >= 32, got {t_samples}"
        )));
    }
    let (lo, hi) = interval;
    let len = hi - lo;
    let a1_modulus = modulus_profile(len, |h| {
        let h = h.min(len);
        let count = t_samples.max((2.0 * len / h).ceil() as usize + 1);
        let mut best: f64 = 0.0;
        for i in 0..count {
            let t = lo + (len - h) * i as f64 / (count - 1) as f64;
            best = best.max((profile(t + h) - profile(t)).abs());
        }
        best * b0_a_norm
    });
    let hfd = fd_step(lo, hi);
    let dsup = fd_times(lo, hi, t_samples)
        .iter()
        .map(|&t| ((profile(t + hfd) - profile(t - hfd)) / (2.0 * hfd)).abs())
        .fold(0.0, f64::max);
    let a2 = b0_resolvent_norms.iter().map(|&(mu, n)| (mu, dsup * n)).collect();
    Ok(assemble_assumptions(a1_modulus, a2))
}

fn fd_times(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let hfd = fd_step(lo, hi);
    (0..n)
        .map(|i| lo + hfd + (hi - lo - 2.0 * hfd) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `Omega(h)` for `h` from the interval length down to a hundredth of it in
/// quarter-decade steps, made monotone in `h`.
fn modulus_profile(len: f64, omega: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let hs: Vec<f64> = (0..=8).map(|k| len * 10f64.powf(-(k as f64) / 4.0)).collect();
    let mut raw: Vec<f64> = hs.iter().map(|&h| omega(h)).collect();
    // pairs closer than h also count toward Omega(h)
    for k in (0..raw.len() - 1).rev() {
        raw[k] = raw[k].max(raw[k + 1]);
    }
    hs.into_iter().zip(raw).collect()
}

fn assemble_assumptions(a1_modulus: Vec<(f64, f64)>, a2_derivative_sup: Vec<(f64, f64)>) -> AssumptionReport {
    let first = a1_modulus[0].1;
    let last = a1_modulus[a1_modulus.len() - 1].1;
    let a1_pass = last <= first / 4.0 + 1e-12;
    let a2_pass = if a2_derivative_sup.is_empty() {
        false
    } else {
        let mut vals: Vec<f64> = a2_derivative_sup.iter().map(|p| p.1).collect();
        let last = vals[vals.len() - 1];
        vals.sort_by(f64::total_cmp);
        let median = vals[vals.len() / 2];
        last.is_finite() && last <= 2.0 * median + 1e-300
    };
    AssumptionReport {
        a1_modulus,
        a2_derivative_sup,
        a1_pass,
        a2_pass,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// `(mu, sup_t ||d/dt R(mu, A + B(t))||)`.
    pub points: Vec<(f64, f64)>,
    /// Largest relative residual of `R(mu, A+B) = R(mu, A) [I - B R(mu, A)]^{-1}`.
    pub identity_residual: f64,
    /// Least-squares log-log slope of the sup against mu; `None` if any value is zero.
    pub slope: Option<f64>,
}

/// Decay of `d/dt R(mu, A + B(t))` in mu, by central differences in t.
pub fn resolvent_derivative_decay(
    b: &PerturbationFamily,
    a: &Operator,
    _gb: &GrowthBound,
    mus: &[f64],
) -> Result<DecayReport> {
    b.check_compatible(a)?;
    let (lo, hi) = b.interval();
    let hfd = fd_step(lo, hi);
    let nt = 65;
    let ts: Vec<f64> = (0..nt)
        .map(|i| lo + hfd + (hi - lo - 2.0 * hfd) * i as f64 / (nt - 1) as f64)
        .collect();
    let kind = a.norm_kind();
    let n = a.dim();
    let ident = DMatrix::<f64>::identity(n, n);
    let mut points = Vec::with_capacity(mus.len());
    let mut identity_residual: f64 = 0.0;
    for &mu in mus {
        let (ra, _) = linop::resolvent_matrix(a.entries(), mu)?;
        let perturbed = |t: f64| linop::resolvent_matrix(&(a.entries() + b.eval_matrix(t)), mu).map(|r| r.0);
        let mut sup: f64 = 0.0;
        for &t in &ts {
            let d = (perturbed(t + hfd)? - perturbed(t - hfd)?) / (2.0 * hfd);
            sup = sup.max(matrix_norm(&d, kind));

            let direct = perturbed(t)?;
            let inner = &ident - b.eval_matrix(t) * &ra;
            let inv = inner.lu().try_inverse().ok_or(Error::SingularResolvent {
                mu,
                cond: f64::INFINITY,
            })?;
            let factored = &ra * inv;
            let scale = matrix_norm(&direct, kind).max(f64::MIN_POSITIVE);
            identity_residual = identity_residual.max(matrix_norm(&(direct - factored), kind) / scale);
        }
        points.push((mu, sup));
    }
    let slope = loglog_slope(&points);
    Ok(DecayReport {
        points,
        identity_residual,
        slope,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|p| !(p.0 > 0.0) || !(p.1 > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}
