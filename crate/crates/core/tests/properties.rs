//! Property tests over random small operators and families.

use nalgebra::DMatrix;
use proptest::prelude::*;

use nonauto_core::dichotomy::check_hyperbolic;
use nonauto_core::evofam::{euler_polygon, product_difference_bound, DyadicPartition, PerturbationFamily};
use nonauto_core::linop::{format_matrix, parse_matrix, resolvent};
use nonauto_core::metrics::{a_norm, MuGrid};
use nonauto_core::semigroup::{expm, GrowthBound};
use nonauto_core::{NormKind, Operator};

const K: NormKind = NormKind::Induced2;

fn op(m: DMatrix<f64>) -> Operator {
    Operator::new(m, K).unwrap()
}

fn square(n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, n * n).prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

/// Dissipative matrices `S - Y Y^T - I` (skew S), so `||e^{tA}|| <= 1`.
fn dissipative(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (square(n, 1.0), square(n, 1.0)).prop_map(move |(x, y)| {
        let skew = (&x - x.transpose()) * 0.5;
        skew - &y * y.transpose() * 0.5 - DMatrix::identity(n, n)
    })
}

fn small_grid() -> MuGrid {
    MuGrid {
        mu_min_offset: 1e-2,
        mu_max_offset: 1e6,
        per_decade: 6,
    }
}

fn dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matrix_text_round_trips(m in square(3, 1e3)) {
        let a = op(m);
        let back = parse_matrix(&format_matrix(&a), K).unwrap();
        prop_assert_eq!(a, back);
    }

    #[test]
    fn exponential_group_property(m in square(3, 1.0), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let a = op(m);
        let lhs = expm(&a, s + t).unwrap();
        let rhs = expm(&a, s).unwrap().try_mul(&expm(&a, t).unwrap()).unwrap();
        prop_assert!(dist(lhs.entries(), rhs.entries()) < 1e-10);
    }

    #[test]
    fn resolvent_identity(m in dissipative(3), mu in 0.1..10.0f64, nu in 0.1..10.0f64) {
        let a = op(m);
        let rm = resolvent(&a, mu).unwrap();
        let rn = resolvent(&a, nu).unwrap();
        let lhs = rm.entries() - rn.entries();
        let rhs = (rm.entries() * rn.entries()) * (nu - mu);
        prop_assert!(dist(&lhs, &rhs) < 1e-10);
    }

    #[test]
    fn a_norm_is_a_seminorm_below_the_operator_norm(
        m in dissipative(3), c in square(3, 1.0), d in square(3, 1.0), k in -3.0..3.0f64,
    ) {
        let a = op(m);
        let gb = GrowthBound::given(1.0, 0.0).unwrap();
        let nc = a_norm(&op(c.clone()), &a, &gb, small_grid()).unwrap().value;
        let nd = a_norm(&op(d.clone()), &a, &gb, small_grid()).unwrap().value;
        let nk = a_norm(&op(&c * k), &a, &gb, small_grid()).unwrap().value;
        let ns = a_norm(&op(&c + &d), &a, &gb, small_grid()).unwrap().value;
        prop_assert!((nk - k.abs() * nc).abs() <= 1e-9 * (1.0 + nc));
        prop_assert!(ns <= nc + nd + 1e-9);
        let opn = op(c).norm();
        prop_assert!(nc <= opn * (1.0 + 1e-9));
        prop_assert!(nc >= opn * (1.0 - 1e-9));
    }

    #[test]
    fn product_difference_never_exceeds_bound(
        xs in prop::collection::vec(square(2, 0.8), 1..12),
        noise in prop::collection::vec(square(2, 0.05), 12),
    ) {
        let a: Vec<Operator> = xs.iter().cloned().map(op).collect();
        let b: Vec<Operator> = xs.iter().zip(&noise).map(|(x, e)| op(x + e)).collect();
        let (lhs, rhs) = product_difference_bound(&a, &b).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn propagator_cocycle_and_identity(
        m in dissipative(2),
        b0 in square(2, 0.5),
        b1 in square(2, 0.5),
        level in 2u32..7,
        picks in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
    ) {
        let a = op(m);
        let fam = PerturbationFamily::piecewise(vec![0.0, 1.0], vec![op(b0), op(b1)], (0.0, 1.0)).unwrap();
        let u = euler_polygon(&a, &fam, level).unwrap();
        let cells = u.partition().cells();
        let mut idx = [picks.0, picks.1, picks.2].map(|p| (p * cells as f64).floor() as usize);
        idx.sort_unstable();
        let [j, r, k] = idx;
        let whole = u.evaluate_nodes(k, j).unwrap();
        let split = u.evaluate_nodes(k, r).unwrap().try_mul(&u.evaluate_nodes(r, j).unwrap()).unwrap();
        prop_assert!(dist(whole.entries(), split.entries()) < 1e-12);
        let id = u.evaluate_nodes(j, j).unwrap();
        prop_assert!(dist(id.entries(), &DMatrix::identity(2, 2)) == 0.0);
    }

    #[test]
    fn dyadic_nodes_are_exact_and_increasing(level in 0u32..12, a in -5.0..5.0f64, w in 0.1..10.0f64) {
        let p = DyadicPartition::new(level, a, a + w).unwrap();
        let nodes = p.nodes();
        prop_assert_eq!(nodes.len(), p.cells() + 1);
        prop_assert_eq!(nodes[0], a);
        prop_assert_eq!(*nodes.last().unwrap(), a + w);
        prop_assert!(nodes.windows(2).all(|x| x[1] > x[0]));
    }

    #[test]
    fn stable_projector_is_an_invariant_idempotent(
        basis in square(3, 1.0),
        stable in prop::collection::vec(0.1..0.8f64, 3),
        unstable in prop::collection::vec(1.3..3.0f64, 3),
        rank in 0usize..=3,
    ) {
        let perturbed = &basis + DMatrix::identity(3, 3) * 3.0;
        let inv = perturbed.clone().try_inverse();
        prop_assume!(inv.is_some());
        let inv = inv.unwrap();
        let diag: Vec<f64> = (0..3).map(|i| if i < rank { stable[i] } else { unstable[i] }).collect();
        let t = &perturbed * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)) * &inv;
        let rep = check_hyperbolic(&op(t.clone())).unwrap();
        prop_assert!(rep.hyperbolic);
        prop_assert_eq!(rep.stable_rank, rank);
        let p = rep.projector.entries();
        let scale = 1.0 + p.amax();
        prop_assert!(dist(&(p * p), p) < 1e-8 * scale * scale);
        prop_assert!(dist(&(p * &t), &(&t * p)) < 1e-8 * scale * (1.0 + t.amax()));
    }
}
