//! Euler-polygon evolution families for `u' = (A + B(t)) u`.
//!
//! On the dyadic partition `t_j = a + j (b - a) / 2^n` the generator is frozen
//! at the left node of each cell and the cell is propagated by the frozen
//! semigroup. Products are composed with later cells on the left.

use std::borrow::Cow;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linop::{matrix_norm, NormKind, Operator};
use crate::metrics::{ANormContext, MuGrid};
use crate::semigroup::{expm_matrix, GrowthBound};

/// Largest partition level accepted by [`euler_polygon`].
pub const MAX_LEVEL: u32 = 24;

type EvalFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Constant(DMatrix<f64>),
    Sinusoid {
        matrix: DMatrix<f64>,
        freq: f64,
        phase: f64,
    },
    /// Linear interpolation between node matrices, constant beyond the ends.
    Piecewise {
        nodes: Vec<f64>,
        matrices: Vec<DMatrix<f64>>,
    },
    Custom(EvalFn),
}

/// `t -> B(t)` on `[a, b]`, all values of one dimension and norm kind.
#[derive(Clone)]
pub struct PerturbationFamily {
    interval: (f64, f64),
    dim: usize,
    norm_kind: NormKind,
    scale: f64,
    shape: Shape,
    modulus_cache: Option<Vec<(f64, f64)>>,
}

impl fmt::Debug for PerturbationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.shape {
            Shape::Constant(_) => "constant",
            Shape::Sinusoid { .. } => "sinusoid",
            Shape::Piecewise { .. } => "piecewise",
            Shape::Custom(_) => "custom",
        };
        f.debug_struct("PerturbationFamily")
            .field("kind", &kind)
            .field("interval", &self.interval)
            .field("dim", &self.dim)
            .field("scale", &self.scale)
            .finish()
    }
}

fn check_interval(interval: (f64, f64)) -> Result<()> {
    let (a, b) = interval;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::PreconditionViolated(format!("bad interval [{a}, {b}]")));
    }
    Ok(())
}

impl PerturbationFamily {
    fn build(shape: Shape, dim: usize, norm_kind: NormKind, interval: (f64, f64)) -> Result<Self> {
        check_interval(interval)?;
        Ok(Self {
            interval,
            dim,
            norm_kind,
            scale: 1.0,
            shape,
            modulus_cache: None,
        })
    }

    pub fn constant(b0: Operator, interval: (f64, f64)) -> Result<Self> {
        let (dim, kind) = (b0.dim(), b0.norm_kind());
        Self::build(Shape::Constant(b0.into_entries()), dim, kind, interval)
    }

    /// `B(t) = sin(freq t + phase) B0`.
    pub fn sinusoid(b0: Operator, freq: f64, phase: f64, interval: (f64, f64)) -> Result<Self> {
        if !freq.is_finite() || !phase.is_finite() {
            return Err(Error::PreconditionViolated(
                "sinusoid needs finite freq and phase".into(),
            ));
        }
        let (dim, kind) = (b0.dim(), b0.norm_kind());
        Self::build(
            Shape::Sinusoid {
                matrix: b0.into_entries(),
                freq,
                phase,
            },
            dim,
            kind,
            interval,
        )
    }

    pub fn piecewise(nodes: Vec<f64>, matrices: Vec<Operator>, interval: (f64, f64)) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != matrices.len() {
            return Err(Error::Config(format!(
                "piecewise family needs matching node/matrix lists ({} vs {})",
                nodes.len(),
                matrices.len()
            )));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("piecewise nodes must be strictly increasing".into()));
        }
        let dim = matrices[0].dim();
        let kind = matrices[0].norm_kind();
        for m in &matrices {
            if m.dim() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: m.dim(),
                });
            }
            if m.norm_kind() != kind {
                return Err(Error::NormMismatch {
                    left: kind,
                    right: m.norm_kind(),
                });
            }
        }
        let matrices = matrices.into_iter().map(Operator::into_entries).collect();
        Self::build(Shape::Piecewise { nodes, matrices }, dim, kind, interval)
    }

    /// Parses a table with one row per time: `t, b00, b01, ..., b(k-1)(k-1)`
    /// in row-major order. Lines starting with `#` and a non-numeric header
    /// line are skipped.
    pub fn tabulated(text: &str, norm_kind: NormKind, interval: (f64, f64)) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut mats = Vec::new();
        let mut dim = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if nodes.is_empty() && mats.is_empty() && lineno == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", lineno + 1))),
            };
            let k = ((values.len().saturating_sub(1)) as f64).sqrt().round() as usize;
            if k == 0 || k * k + 1 != values.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected 1 + k^2 columns, got {}",
                    lineno + 1,
                    values.len()
                )));
            }
            if *dim.get_or_insert(k) != k {
                return Err(Error::Parse(format!("line {}: dimension changes", lineno + 1)));
            }
            nodes.push(values[0]);
            mats.push(Operator::new(DMatrix::from_row_slice(k, k, &values[1..]), norm_kind)?);
        }
        if nodes.is_empty() {
            return Err(Error::Parse("tabulated family has no rows".into()));
        }
        Self::piecewise(nodes, mats, interval)
    }

    pub fn custom<F>(dim: usize, norm_kind: NormKind, interval: (f64, f64), f: F) -> Result<Self>
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let probe = f(interval.0);
        if probe.nrows() != dim || probe.ncols() != dim {
            return Err(Error::DimMismatch {
                left: dim,
                right: probe.nrows(),
            });
        }
        Self::build(Shape::Custom(Arc::new(f)), dim, norm_kind, interval)
    }

    pub fn from_spec(spec: &FamilySpec, norm_kind: NormKind, interval: (f64, f64), base_dir: &Path) -> Result<Self> {
        let op = |rows: &Vec<Vec<f64>>| -> Result<Operator> {
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            Operator::from_rows(&refs, norm_kind)
        };
        match spec {
            FamilySpec::Constant { matrix } => Self::constant(op(matrix)?, interval),
            FamilySpec::Sinusoid { matrix, freq, phase } => Self::sinusoid(op(matrix)?, *freq, *phase, interval),
            FamilySpec::Piecewise { nodes, matrices } => {
                let mats = matrices.iter().map(op).collect::<Result<Vec<_>>>()?;
                Self::piecewise(nodes.clone(), mats, interval)
            }
            FamilySpec::Tabulated { path } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let text = std::fs::read_to_string(&full).map_err(|e| Error::Io(format!("{}: {e}", full.display())))?;
                Self::tabulated(&text, norm_kind, interval)
            }
        }
    }

    /// `eps * B(t)`.
    pub fn scaled(&self, eps: f64) -> Self {
        let mut out = self.clone();
        out.scale *= eps;
        out.modulus_cache = self
            .modulus_cache
            .as_ref()
            .map(|c| c.iter().map(|&(h, w)| (h, w * eps.abs())).collect());
        out
    }

    /// Same family viewed on a sub-interval (or any other interval).
    pub fn on_interval(&self, interval: (f64, f64)) -> Result<Self> {
        check_interval(interval)?;
        let mut out = self.clone();
        out.interval = interval;
        out.modulus_cache = None;
        Ok(out)
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.shape, Shape::Constant(_)) || self.scale == 0.0
    }

    pub fn eval_matrix(&self, t: f64) -> DMatrix<f64> {
        let raw = match &self.shape {
            Shape::Constant(m) => m.clone(),
            Shape::Sinusoid { matrix, freq, phase } => matrix * (freq * t + phase).sin(),
            Shape::Piecewise { nodes, matrices } => interpolate(nodes, matrices, t),
            Shape::Custom(f) => f(t),
        };
        if self.scale == 1.0 {
            raw
        } else {
            raw * self.scale
        }
    }

    pub fn eval(&self, t: f64) -> Operator {
        Operator::from_matrix_unchecked(self.eval_matrix(t), self.norm_kind)
    }

    pub fn check_compatible(&self, a: &Operator) -> Result<()> {
        if a.dim() != self.dim {
            return Err(Error::DimMismatch {
                left: a.dim(),
                right: self.dim,
            });
        }
        if a.norm_kind() != self.norm_kind {
            return Err(Error::NormMismatch {
                left: a.norm_kind(),
                right: self.norm_kind,
            });
        }
        Ok(())
    }

    pub fn modulus_cache(&self) -> Option<&[(f64, f64)]> {
        self.modulus_cache.as_deref()
    }

    /// Fills the cache with `(h_n, Omega_n)` for levels `0..=max_level`.
    pub fn with_modulus_cache(mut self, ctx: &ANormContext, max_level: u32, seed: u64) -> Self {
        let (a, b) = self.interval;
        let mut cache: Vec<(f64, f64)> = (0..=max_level)
            .map(|n| ((b - a) / 2f64.powi(n as i32), omega_n(&self, ctx, n, seed)))
            .collect();
        // a pair admissible at a finer mesh is admissible at every coarser one
        for k in (0..cache.len().saturating_sub(1)).rev() {
            cache[k].1 = cache[k].1.max(cache[k + 1].1);
        }
        self.modulus_cache = Some(cache);
        self
    }
}

fn interpolate(nodes: &[f64], mats: &[DMatrix<f64>], t: f64) -> DMatrix<f64> {
    if t <= nodes[0] {
        return mats[0].clone();
    }
    let last = nodes.len() - 1;
    if t >= nodes[last] {
        return mats[last].clone();
    }
    let i = nodes.partition_point(|&x| x <= t) - 1;
    let w = (t - nodes[i]) / (nodes[i + 1] - nodes[i]);
    &mats[i] * (1.0 - w) + &mats[i + 1] * w
}

/// Configuration form of a perturbation family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FamilySpec {
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    Sinusoid {
        matrix: Vec<Vec<f64>>,
        #[serde(default = "one")]
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    Piecewise {
        nodes: Vec<f64>,
        matrices: Vec<Vec<Vec<f64>>>,
    },
    Tabulated {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

/// Sampled `Omega_n = sup_{|t-s| <= 2^-n (b-a)} ||B(t) - B(s)||_A`.
///
/// Uses every adjacent node pair of level `n` plus `4 * 2^min(n, 10)` random
/// pairs drawn from a generator seeded by `seed` and `n`.
pub fn omega_n(b: &PerturbationFamily, ctx: &ANormContext, n: u32, seed: u64) -> f64 {
    if b.is_constant() {
        return 0.0;
    }
    let (lo, hi) = b.interval();
    let cells = 1u64 << n;
    let h = (hi - lo) / cells as f64;
    let mut best: f64 = 0.0;
    let mut prev = b.eval_matrix(lo);
    for j in 1..=cells {
        let next = b.eval_matrix(lo + (hi - lo) * (j as f64 / cells as f64));
        best = best.max(ctx.value(&(&next - &prev)));
        prev = next;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(n as u64 + 1)));
    let draws = 4usize << n.min(10);
    for _ in 0..draws {
        let t = lo + (hi - lo - h) * rng.random::<f64>();
        let s = t + h * rng.random::<f64>();
        best = best.max(ctx.value(&(b.eval_matrix(s) - b.eval_matrix(t))));
    }
    best
}

/// Sampled `omega_1 = sup_t ||B(t)||_A` over 257 uniform points.
pub fn omega_1(b: &PerturbationFamily, ctx: &ANormContext) -> f64 {
    let (lo, hi) = b.interval();
    (0..=256)
        .map(|i| ctx.value(&b.eval_matrix(lo + (hi - lo) * i as f64 / 256.0)))
        .fold(0.0, f64::max)
}

/// Dyadic partition of `[a, b]` at level `n`; nodes are addressed by integer index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DyadicPartition {
    pub level: u32,
    pub a: f64,
    pub b: f64,
}

impl DyadicPartition {
    pub fn new(level: u32, a: f64, b: f64) -> Result<Self> {
        check_interval((a, b))?;
        if level > MAX_LEVEL {
            return Err(Error::PreconditionViolated(format!(
                "level {level} exceeds {MAX_LEVEL}"
            )));
        }
        Ok(Self { level, a, b })
    }

    pub fn cells(&self) -> usize {
        1usize << self.level
    }

    pub fn width(&self) -> f64 {
        (self.b - self.a) / self.cells() as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.cells() {
            self.b
        } else {
            self.a + (self.b - self.a) * (j as f64 / self.cells() as f64)
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.cells()).map(|j| self.node(j)).collect()
    }

    /// Position of `t` in units of cells, snapped onto a node when within 1e-12.
    fn position(&self, t: f64) -> f64 {
        let p = (t - self.a) / (self.b - self.a) * self.cells() as f64;
        let r = p.round();
        if (p - r).abs() < 1e-12 {
            r
        } else {
            p
        }
    }
}

/// Matrix entries kept in the per-level cell cache before falling back to
/// recomputing cell propagators on demand (128 MiB of `f64`).
pub const CACHE_BUDGET: usize = 1 << 24;

/// Level-`n` Euler-polygon evolution family with cached full-cell propagators.
#[derive(Clone)]
pub struct EvolutionFamilyApprox {
    generator: Operator,
    family: PerturbationFamily,
    partition: DyadicPartition,
    cells: Option<Vec<DMatrix<f64>>>,
    full: DMatrix<f64>,
}

impl fmt::Debug for EvolutionFamilyApprox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EvolutionFamilyApprox")
            .field("level", &self.partition.level)
            .field("interval", &(self.partition.a, self.partition.b))
            .field("dim", &self.generator.dim())
            .finish()
    }
}

pub fn euler_polygon(a: &Operator, b: &PerturbationFamily, n: u32) -> Result<EvolutionFamilyApprox> {
    b.check_compatible(a)?;
    let (lo, hi) = b.interval();
    let partition = DyadicPartition::new(n, lo, hi)?;
    let dt = partition.width();
    let d = a.dim();
    let keep = partition.cells().saturating_mul(d * d) <= CACHE_BUDGET;
    let mut cells = Vec::with_capacity(if keep { partition.cells() } else { 0 });
    let mut full = DMatrix::<f64>::identity(d, d);
    for j in 0..partition.cells() {
        let e = expm_matrix(&((a.entries() + b.eval_matrix(partition.node(j))) * dt))?;
        full = &e * full;
        if keep {
            cells.push(e);
        }
    }
    Ok(EvolutionFamilyApprox {
        generator: a.clone(),
        family: b.clone(),
        partition,
        cells: keep.then_some(cells),
        full,
    })
}

impl EvolutionFamilyApprox {
    pub fn level(&self) -> u32 {
        self.partition.level
    }

    pub fn partition(&self) -> &DyadicPartition {
        &self.partition
    }

    pub fn family(&self) -> &PerturbationFamily {
        &self.family
    }

    pub fn generator(&self) -> &Operator {
        &self.generator
    }

    fn frozen(&self, j: usize) -> DMatrix<f64> {
        self.generator.entries() + self.family.eval_matrix(self.partition.node(j))
    }

    fn wrap(&self, m: DMatrix<f64>) -> Operator {
        Operator::from_matrix_unchecked(m, self.generator.norm_kind())
    }

    /// `e^{dt (A + B(t_j))}` for cell `j`, from the cache when present.
    pub fn cell_propagator(&self, j: usize) -> Result<Cow<'_, DMatrix<f64>>> {
        match &self.cells {
            Some(c) => Ok(Cow::Borrowed(&c[j])),
            None => Ok(Cow::Owned(expm_matrix(&(self.frozen(j) * self.partition.width()))?)),
        }
    }

    /// `U_n(t_k, t_j)` for node indices `j <= k`.
    pub fn evaluate_nodes(&self, k: usize, j: usize) -> Result<Operator> {
        let p = &self.partition;
        if j > k || k > p.cells() {
            return Err(Error::OutOfInterval {
                t: p.node(k.min(p.cells())),
                s: p.node(j.min(p.cells())),
                a: p.a,
                b: p.b,
            });
        }
        if j == 0 && k == p.cells() {
            return Ok(self.wrap(self.full.clone()));
        }
        let n = self.generator.dim();
        let mut acc = DMatrix::<f64>::identity(n, n);
        for c in j..k {
            acc = self.cell_propagator(c)?.as_ref() * acc;
        }
        Ok(self.wrap(acc))
    }

    /// `U_n(t, s)` for `a <= s <= t <= b`.
    pub fn evaluate(&self, t: f64, s: f64) -> Result<Operator> {
        let p = &self.partition;
        let slack = 1e-12 * (p.b - p.a);
        if !(s >= p.a - slack && t <= p.b + slack && s <= t) {
            return Err(Error::OutOfInterval { t, s, a: p.a, b: p.b });
        }
        let n = self.generator.dim();
        if t == s {
            return Ok(self.wrap(DMatrix::identity(n, n)));
        }
        let last = p.cells() - 1;
        let ps = p.position(s).clamp(0.0, p.cells() as f64);
        let pt = p.position(t).clamp(0.0, p.cells() as f64);
        // s in [t_l, t_{l+1}), t in (t_k, t_{k+1}]
        let l = (ps.floor() as usize).min(last);
        let k = ((pt.ceil() as usize).max(1) - 1).max(l);
        let s_on_node = ps == l as f64;
        let t_on_node = pt == (k + 1) as f64;

        if k == l {
            if s_on_node && t_on_node {
                return Ok(self.wrap(self.cell_propagator(l)?.into_owned()));
            }
            return Ok(self.wrap(expm_matrix(&(self.frozen(l) * (t - s)))?));
        }
        let right = if s_on_node {
            self.cell_propagator(l)?.into_owned()
        } else {
            expm_matrix(&(self.frozen(l) * (p.node(l + 1) - s)))?
        };
        let mut acc = right;
        for c in l + 1..k {
            acc = self.cell_propagator(c)?.as_ref() * acc;
        }
        let left = if t_on_node {
            self.cell_propagator(k)?.into_owned()
        } else {
            expm_matrix(&(self.frozen(k) * (t - p.node(k))))?
        };
        Ok(self.wrap(left * acc))
    }

    /// `U_n(b, a)`.
    pub fn full(&self) -> Operator {
        self.wrap(self.full.clone())
    }

    pub fn is_cached(&self) -> bool {
        self.cells.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: u32,
    /// `||U_{n+1}(b,a) - U_n(b,a)||`.
    pub delta: f64,
    pub omega_n: f64,
    /// `(b - a) e^{4 omega_1} Omega_n`.
    pub cauchy_bound: f64,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    /// Finest approximant computed.
    pub approx: EvolutionFamilyApprox,
    pub achieved_delta: f64,
    /// Level at which the successive differences started meeting the tolerance.
    pub n_final: u32,
    pub omega1: f64,
    pub levels: Vec<LevelRecord>,
}

/// Seed for the random pairs behind each `Omega_n` estimate.
pub const MODULUS_SEED: u64 = 0x00C0_FFEE;

/// Refines the dyadic level until successive approximants of `U(b, a)` differ
/// by at most `tol`, recording the Cauchy estimate at each level.
///
/// `Omega_n` comes from the family's modulus cache where it covers level `n`
/// and is sampled otherwise.
pub fn refine_to_tolerance(
    a: &Operator,
    b: &PerturbationFamily,
    gb: &GrowthBound,
    tol: f64,
    n_max: u32,
) -> Result<Refinement> {
    b.check_compatible(a)?;
    let ctx = ANormContext::new(a, gb, MuGrid::default())?;
    let omega1 = omega_1(b, &ctx);
    let cache = b.modulus_cache().map(<[_]>::to_vec);
    refine_with_moduli(
        a,
        b,
        tol,
        n_max,
        omega1,
        &mut |n| match cache.as_ref().and_then(|c| c.get(n as usize)) {
            Some(&(_, om)) => om,
            None => omega_n(b, &ctx, n, MODULUS_SEED),
        },
    )
}

/// [`refine_to_tolerance`] with `omega_1` and the moduli supplied by the
/// caller, for generators too large for the dense `||.||_A` machinery.
pub fn refine_with_moduli(
    a: &Operator,
    b: &PerturbationFamily,
    tol: f64,
    n_max: u32,
    omega1: f64,
    omega_at: &mut dyn FnMut(u32) -> f64,
) -> Result<Refinement> {
    if !(tol >= 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "tolerance must be nonnegative, got {tol}"
        )));
    }
    if n_max >= MAX_LEVEL {
        return Err(Error::PreconditionViolated(format!("n_max must be below {MAX_LEVEL}")));
    }
    b.check_compatible(a)?;
    let (lo, hi) = b.interval();
    let growth = (4.0 * omega1).exp();

    // A coarse partition can put every left node where B happens to agree
    // (sin t at 0 and pi), so a non-constant family must meet the tolerance
    // at two consecutive levels.
    let confirm = !b.is_constant();
    let mut coarse = euler_polygon(a, b, 0)?;
    let mut levels = Vec::new();
    let mut best = f64::INFINITY;
    let mut pending: Option<(u32, f64)> = None;
    for n in 0..=n_max {
        let fine = euler_polygon(a, b, n + 1)?;
        let delta = matrix_norm(&(fine.full().entries() - coarse.full().entries()), a.norm_kind());
        let om = omega_at(n);
        levels.push(LevelRecord {
            level: n,
            delta,
            omega_n: om,
            cauchy_bound: (hi - lo) * growth * om,
        });
        best = best.min(delta);
        if delta <= tol {
            match pending {
                Some((first, _)) => {
                    return Ok(Refinement {
                        approx: fine,
                        achieved_delta: delta,
                        n_final: first,
                        omega1,
                        levels,
                    })
                }
                None if !confirm => {
                    return Ok(Refinement {
                        approx: fine,
                        achieved_delta: delta,
                        n_final: n,
                        omega1,
                        levels,
                    })
                }
                None => pending = Some((n, delta)),
            }
        } else {
            pending = None;
        }
        coarse = fine;
    }
    Err(Error::ToleranceNotReached {
        level: n_max,
        best_delta: best,
    })
}

/// `||prod a_j - prod b_j||` against `N delta K^{N-1}`.
///
/// Products are taken with the highest index on the left. `K` is the largest
/// factor norm clamped below at 1; `delta = max_j ||a_j - b_j||`.
pub fn product_difference_bound(a_list: &[Operator], b_list: &[Operator]) -> Result<(f64, f64)> {
    if a_list.len() != b_list.len() {
        return Err(Error::DimMismatch {
            left: a_list.len(),
            right: b_list.len(),
        });
    }
    if a_list.is_empty() {
        return Err(Error::PreconditionViolated("need at least one factor".into()));
    }
    let first = &a_list[0];
    let mut prod_a = Operator::identity(first.dim(), first.norm_kind());
    let mut prod_b = prod_a.clone();
    let mut k: f64 = 1.0;
    let mut delta: f64 = 0.0;
    for (x, y) in a_list.iter().zip(b_list) {
        prod_a = x.try_mul(&prod_a)?;
        prod_b = y.try_mul(&prod_b)?;
        k = k.max(x.norm()).max(y.norm());
        delta = delta.max(x.try_sub(y)?.norm());
    }
    let n = a_list.len();
    let lhs = prod_a.try_sub(&prod_b)?.norm();
    let rhs = n as f64 * delta * k.powi(n as i32 - 1);
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeReport {
    /// `(h, ||(U(s+h,s) - I)/h - (A + B(s))||)`.
    pub forward: Vec<(f64, f64)>,
    /// `(h, ||(U(t,s) - U(t,s+h))/h - U(t,s)(A + B(s))||)` with `t = b`.
    pub backward: Vec<(f64, f64)>,
    /// `||A + B(s)||`.
    pub generator_norm: f64,
    /// Least-squares `C` in `residual ~ C h` for the forward sequence.
    pub fitted_c: f64,
    pub forward_monotone: bool,
    pub backward_monotone: bool,
}

/// Short-time levels used to stand in for the limit family on `[s, s + h]`
/// and on `[s + h, b]`.
pub const SHORT_LEVEL: u32 = 10;
pub const FAR_LEVEL: u32 = 8;

/// Finite-difference check of `d+/dt U(t,s)|_{t=s} = A + B(s)` and of the
/// matching derivative in `s`.
pub fn verify_generator_derivative(
    a: &Operator,
    b: &PerturbationFamily,
    s: f64,
    hs: &[f64],
) -> Result<DerivativeReport> {
    b.check_compatible(a)?;
    let (lo, hi) = b.interval();
    if hs.is_empty() || hs.iter().any(|&h| !(h > 0.0)) || hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::PreconditionViolated(
            "hs must be positive and strictly decreasing".into(),
        ));
    }
    if s < lo || s + hs[0] >= hi {
        return Err(Error::OutOfInterval {
            t: s + hs[0],
            s,
            a: lo,
            b: hi,
        });
    }
    let kind = a.norm_kind();
    let gen_s = a.entries() + b.eval_matrix(s);
    let n = a.dim();
    let ident = DMatrix::<f64>::identity(n, n);
    let mut forward = Vec::with_capacity(hs.len());
    let mut backward = Vec::with_capacity(hs.len());
    for &h in hs {
        let short = euler_polygon(a, &b.on_interval((s, s + h))?, SHORT_LEVEL)?.full();
        let short = short.entries();
        let fwd = (short - &ident) / h - &gen_s;
        forward.push((h, matrix_norm(&fwd, kind)));

        let far = euler_polygon(a, &b.on_interval((s + h, hi))?, FAR_LEVEL)?.full();
        let u_ts = far.entries() * short;
        let bwd = (&u_ts - far.entries()) / h - &u_ts * &gen_s;
        backward.push((h, matrix_norm(&bwd, kind)));
    }
    let sxy: f64 = forward.iter().map(|(h, r)| h * r).sum();
    let sxx: f64 = forward.iter().map(|(h, _)| h * h).sum();
    let decreasing = |v: &[(f64, f64)]| v.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(DerivativeReport {
        forward_monotone: decreasing(&forward),
        backward_monotone: decreasing(&backward),
        forward,
        backward,
        generator_norm: matrix_norm(&gen_s, kind),
        fitted_c: sxy / sxx,
    })
}

/// Classical fourth-order Runge-Kutta solve of `M' = (A + B(tau)) M`,
/// `M(s) = I` on `[s, t]` with `rk_steps` uniform steps.
pub fn oracle_solve(a: &Operator, b: &PerturbationFamily, t: f64, s: f64, rk_steps: usize) -> Result<Operator> {
    b.check_compatible(a)?;
    if rk_steps < 64 {
        return Err(Error::PreconditionViolated(format!(
            "rk_steps must be >= 64, got {rk_steps}"
        )));
    }
    if t < s {
        return Err(Error::OutOfInterval {
            t,
            s,
            a: b.interval().0,
            b: b.interval().1,
        });
    }
    let n = a.dim();
    let h = (t - s) / rk_steps as f64;
    let gen = |tau: f64| a.entries() + b.eval_matrix(tau);
    let mut m = DMatrix::<f64>::identity(n, n);
    for i in 0..rk_steps {
        let tau = s + h * i as f64;
        let g0 = Factor::new(gen(tau));
        let gm = Factor::new(gen(tau + 0.5 * h));
        let g1 = Factor::new(gen(tau + h));
        let k1 = g0.apply(&m);
        let k2 = gm.apply(&(&m + &k1 * (0.5 * h)));
        let k3 = gm.apply(&(&m + &k2 * (0.5 * h)));
        let k4 = g1.apply(&(&m + &k3 * h));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(Operator::from_matrix_unchecked(m, a.norm_kind()))
}

/// Left factor in a product, stored by nonzeros when that is much cheaper.
enum Factor {
    Dense(DMatrix<f64>),
    Sparse {
        n: usize,
        entries: Vec<(usize, usize, f64)>,
    },
}

impl Factor {
    fn new(g: DMatrix<f64>) -> Self {
        let n = g.nrows();
        let entries: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|k| (0..n).map(move |i| (i, k)))
            .filter_map(|(i, k)| {
                let v = g[(i, k)];
                (v != 0.0).then_some((i, k, v))
            })
            .collect();
        if entries.len() * 4 < n * n {
            Factor::Sparse { n, entries }
        } else {
            Factor::Dense(g)
        }
    }

    fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Factor::Dense(g) => g * m,
            Factor::Sparse { n, entries } => {
                let mut out = DMatrix::<f64>::zeros(*n, m.ncols());
                for c in 0..m.ncols() {
                    let src = m.column(c);
                    let mut dst = out.column_mut(c);
                    for &(i, k, v) in entries {
                        dst[i] += v * src[k];
                    }
                }
                out
            }
        }
    }
}
