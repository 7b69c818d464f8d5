//! Numeric potential-structure checks for general games given by evaluators.
//!
//! The stage costs g^i form a potential structure when the combined gradient
//! field F_k = [dg1/dx; dg^i/du^i blocks; dg^i/dv^i blocks] has a symmetric
//! Jacobian on each stage domain. Cross-function blocks reduce to three
//! pairwise conditions (mixed u-partials transpose-match, x-gradients agree,
//! mixed v-partials transpose-match) plus vanishing u-v cross partials from
//! the separable stage structure. All derivatives here are estimated by
//! central differences on the cost evaluators alone, so the check is an
//! oracle independent of any analytic gradient the game may carry.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::CoreError;
use crate::game::NonlinearGame;

/// Step for mixed second differences in `check_symmetry`.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Step for first differences (x-gradient comparisons, field fallback).
pub const FIRST_ORDER_STEP: f64 = 1e-6;
/// Default asymmetry threshold; dominated by O(step^2) truncation noise.
pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-4;

/// One sample in a stage domain: (x, u, v) for k < K, u empty at k = K.
#[derive(Debug, Clone)]
pub struct StagePoint {
    pub k: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryCondition {
    /// Mixed second partials in (u^i, u^j) must transpose-match across i, j.
    Ux,
    /// All players share the same x-gradient.
    Px,
    /// Mixed second partials in (v^i, v^j) must transpose-match.
    Vv,
    /// Cross u-v second partials vanish between distinct players.
    Sep,
}

impl std::fmt::Display for SymmetryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SymmetryCondition::Ux => "ux",
            SymmetryCondition::Px => "px",
            SymmetryCondition::Vv => "vv",
            SymmetryCondition::Sep => "sep",
        };
        f.write_str(s)
    }
}

/// A condition exceeded the tolerance at one sample. Player indices are
/// 1-based as displayed; deviation is +inf when an evaluator returned a
/// non-finite value at a probe point.
#[derive(Debug, Clone, Serialize)]
pub struct SymmetryViolation {
    pub condition: SymmetryCondition,
    pub stage: usize,
    pub players: (usize, usize),
    pub sample: usize,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub holds: bool,
    /// Violations above tolerance, worst first.
    pub worst: Vec<SymmetryViolation>,
    /// Largest deviation seen anywhere, including below-tolerance ones.
    pub worst_deviation: f64,
    pub tol: f64,
    pub fd_step: f64,
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    U,
    V,
}

fn eval_shifted(
    game: &NonlinearGame,
    i: usize,
    p: &StagePoint,
    shifts: &[(Axis, usize, f64)],
) -> f64 {
    let mut x = p.x.clone();
    let mut u = p.u.clone();
    let mut v = p.v.clone();
    for &(ax, idx, dz) in shifts {
        match ax {
            Axis::X => x[idx] += dz,
            Axis::U => u[idx] += dz,
            Axis::V => v[idx] += dz,
        }
    }
    game.cost(i, p.k, &x, &u, &v)
}

fn d1(game: &NonlinearGame, i: usize, p: &StagePoint, ax: Axis, idx: usize, h: f64) -> f64 {
    let fp = eval_shifted(game, i, p, &[(ax, idx, h)]);
    let fm = eval_shifted(game, i, p, &[(ax, idx, -h)]);
    (fp - fm) / (2.0 * h)
}

#[allow(clippy::too_many_arguments)]
fn d2(
    game: &NonlinearGame,
    i: usize,
    p: &StagePoint,
    ax_a: Axis,
    a: usize,
    ax_b: Axis,
    b: usize,
    h: f64,
) -> f64 {
    let pp = eval_shifted(game, i, p, &[(ax_a, a, h), (ax_b, b, h)]);
    let pm = eval_shifted(game, i, p, &[(ax_a, a, h), (ax_b, b, -h)]);
    let mp = eval_shifted(game, i, p, &[(ax_a, a, -h), (ax_b, b, h)]);
    let mm = eval_shifted(game, i, p, &[(ax_a, a, -h), (ax_b, b, -h)]);
    (pp - pm - mp + mm) / (4.0 * h * h)
}

/// Estimate the symmetry conditions at every sample point. Evaluator
/// failures (non-finite cost at a probe point) mark the affected condition
/// with an infinite deviation instead of aborting the whole check.
pub fn check_symmetry(
    game: &NonlinearGame,
    sample_points: &[StagePoint],
    fd_step: f64,
    tol: f64,
) -> Result<SymmetryReport, CoreError> {
    if fd_step <= 0.0 || tol <= 0.0 {
        return Err(CoreError::InvalidData(
            "fd_step and tol must be positive".to_string(),
        ));
    }
    let d = &game.dims;
    let kk = d.horizon;
    for (idx, p) in sample_points.iter().enumerate() {
        if p.k > kk {
            return Err(CoreError::StageOutOfRange { k: p.k, max: kk });
        }
        let mu = if p.k < kk { d.m_total() } else { 0 };
        if p.x.len() != d.n || p.u.len() != mu || p.v.len() != d.s_total() {
            return Err(CoreError::DimensionMismatch(format!(
                "sample {idx} has wrong block sizes for stage {}",
                p.k
            )));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        cond: SymmetryCondition,
        stage: usize,
        pair: (usize, usize),
        sample: usize,
        dev: f64,
        tol: f64,
        violations: &mut Vec<SymmetryViolation>,
        worst: &mut f64,
    ) {
        let dev = if dev.is_finite() { dev } else { f64::INFINITY };
        *worst = worst.max(dev);
        if dev > tol {
            violations.push(SymmetryViolation {
                condition: cond,
                stage,
                players: (pair.0 + 1, pair.1 + 1),
                sample,
                deviation: dev,
            });
        }
    }

    // f64::max drops NaN, so evaluator failures need explicit handling.
    fn acc(dev: &mut f64, t: f64) {
        if t.is_finite() {
            *dev = dev.max(t);
        } else {
            *dev = f64::INFINITY;
        }
    }

    let mut violations = Vec::new();
    let mut worst_dev = 0.0f64;

    for (idx, p) in sample_points.iter().enumerate() {
        for i in 0..d.players {
            for j in (i + 1)..d.players {
                if p.k < kk {
                    let (uoi, uoj) = (d.u_offset(i), d.u_offset(j));
                    let mut dev = 0.0f64;
                    for a in 0..d.m[i] {
                        for b in 0..d.m[j] {
                            let lhs = d2(game, i, p, Axis::U, uoi + a, Axis::U, uoj + b, fd_step);
                            let rhs = d2(game, j, p, Axis::U, uoj + b, Axis::U, uoi + a, fd_step);
                            acc(&mut dev, (lhs - rhs).abs());
                        }
                    }
                    record(SymmetryCondition::Ux, p.k, (i, j), idx, dev, tol, &mut violations, &mut worst_dev);
                }

                let mut dev = 0.0f64;
                for c in 0..d.n {
                    let lhs = d1(game, i, p, Axis::X, c, FIRST_ORDER_STEP);
                    let rhs = d1(game, j, p, Axis::X, c, FIRST_ORDER_STEP);
                    acc(&mut dev, (lhs - rhs).abs());
                }
                record(SymmetryCondition::Px, p.k, (i, j), idx, dev, tol, &mut violations, &mut worst_dev);

                let (voi, voj) = (d.v_offset(i), d.v_offset(j));
                let mut dev = 0.0f64;
                for a in 0..d.s[i] {
                    for b in 0..d.s[j] {
                        let lhs = d2(game, i, p, Axis::V, voi + a, Axis::V, voj + b, fd_step);
                        let rhs = d2(game, j, p, Axis::V, voj + b, Axis::V, voi + a, fd_step);
                        acc(&mut dev, (lhs - rhs).abs());
                    }
                }
                record(SymmetryCondition::Vv, p.k, (i, j), idx, dev, tol, &mut violations, &mut worst_dev);
            }

            // Separable structure: no u^i x v^j curvature toward other players.
            if p.k < kk {
                for j in 0..d.players {
                    if j == i {
                        continue;
                    }
                    let (uoi, voj) = (d.u_offset(i), d.v_offset(j));
                    let mut dev = 0.0f64;
                    for a in 0..d.m[i] {
                        for b in 0..d.s[j] {
                            let val = d2(game, i, p, Axis::U, uoi + a, Axis::V, voj + b, fd_step);
                            acc(&mut dev, val.abs());
                        }
                    }
                    record(SymmetryCondition::Sep, p.k, (i, j), idx, dev, tol, &mut violations, &mut worst_dev);
                }
            }
        }
    }

    violations.sort_by(|a, b| b.deviation.partial_cmp(&a.deviation).unwrap());
    Ok(SymmetryReport {
        holds: violations.is_empty(),
        worst: violations,
        worst_deviation: worst_dev,
        tol,
        fd_step,
    })
}

/// Gradient field of the stage at a concatenated point (x, u, v), or (x, v)
/// at the terminal stage: [dg1/dx; dg^1/du^1; ..; dg^N/du^N; dg^1/dv^1; ..].
/// Uses the game's analytic gradients when present, central differences on
/// the costs otherwise.
pub fn build_field(
    game: &NonlinearGame,
    k: usize,
    point: &DVector<f64>,
) -> Result<DVector<f64>, CoreError> {
    let d = &game.dims;
    let kk = d.horizon;
    if k > kk {
        return Err(CoreError::StageOutOfRange { k, max: kk });
    }
    let m = if k < kk { d.m_total() } else { 0 };
    let (n, s) = (d.n, d.s_total());
    if point.len() != n + m + s {
        return Err(CoreError::DimensionMismatch(format!(
            "field point has length {}, stage {k} needs {}",
            point.len(),
            n + m + s
        )));
    }
    let p = StagePoint {
        k,
        x: point.rows(0, n).into_owned(),
        u: point.rows(n, m).into_owned(),
        v: point.rows(n + m, s).into_owned(),
    };

    let mut f = DVector::zeros(n + m + s);
    if let Some(grads) = &game.gradients {
        for i in 0..d.players {
            let gi = grads(i, k, &p.x, &p.u, &p.v);
            if i == 0 {
                f.rows_mut(0, n).copy_from(&gi.x);
            }
            if k < kk {
                f.rows_mut(n + d.u_offset(i), d.m[i]).copy_from(&gi.u_own);
            }
            f.rows_mut(n + m + d.v_offset(i), d.s[i]).copy_from(&gi.v_own);
        }
    } else {
        let h = FIRST_ORDER_STEP;
        for c in 0..n {
            f[c] = d1(game, 0, &p, Axis::X, c, h);
        }
        for i in 0..d.players {
            if k < kk {
                for a in 0..d.m[i] {
                    let idx = d.u_offset(i) + a;
                    f[n + idx] = d1(game, i, &p, Axis::U, idx, h);
                }
            }
            for a in 0..d.s[i] {
                let idx = d.v_offset(i) + a;
                f[n + m + idx] = d1(game, i, &p, Axis::V, idx, h);
            }
        }
    }

    for (blk, lo, len) in [("x", 0, n), ("u", n, m), ("v", n + m, s)] {
        if !f.rows(lo, len).iter().all(|x| x.is_finite()) {
            return Err(CoreError::NonFinite(format!(
                "{blk} gradient block of the stage-{k} field"
            )));
        }
    }
    Ok(f)
}

/// Straight-line path from a base point with a Simpson panel count.
#[derive(Debug, Clone)]
pub struct PathSpec {
    pub base: DVector<f64>,
    pub quadrature_nodes: usize,
}

/// Potential value at `point` by composite Simpson integration of the field
/// along the straight line from `path.base`. Only meaningful when the
/// symmetry conditions hold; otherwise the value depends on the path.
pub fn integrate_potential(
    game: &NonlinearGame,
    k: usize,
    point: &DVector<f64>,
    path: &PathSpec,
) -> Result<f64, CoreError> {
    if path.quadrature_nodes < 2 {
        return Err(CoreError::InvalidData(
            "quadrature needs at least 2 panels".to_string(),
        ));
    }
    if path.base.len() != point.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "path base has length {}, point has length {}",
            path.base.len(),
            point.len()
        )));
    }
    let dir = point - &path.base;
    let panels = path.quadrature_nodes;
    let h = 1.0 / (2 * panels) as f64;
    let integrand = |z: f64| -> Result<f64, CoreError> {
        let at = &path.base + z * &dir;
        Ok(build_field(game, k, &at)?.dot(&dir))
    };
    let mut total = integrand(0.0)? + integrand(1.0)?;
    for node in 1..(2 * panels) {
        let weight = if node % 2 == 1 { 4.0 } else { 2.0 };
        total += weight * integrand(node as f64 * h)?;
    }
    Ok(total * h / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{Dims, NonlinearGame};
    use crate::potential::{build_ocp, potential_value};
    use crate::random::{random_potential_game, random_vector, GameCaps};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two scalar-control players, no state use unless the closure says so.
    fn two_player_shell(stage: crate::game::StageCostFn) -> NonlinearGame {
        let dims = Dims {
            n: 1,
            players: 2,
            horizon: 1,
            m: vec![1, 1],
            s: vec![1, 1],
            l: 0,
        };
        NonlinearGame {
            dims,
            x0: DVector::zeros(1),
            dynamics: Box::new(|_, x, _| x.clone()),
            constraints: Box::new(|_, _, _| DVector::zeros(0)),
            stage_cost: stage,
            terminal_cost: Box::new(|_, _, _| 0.0),
            gradients: None,
        }
    }

    fn sample_origin(k: usize, m: usize) -> StagePoint {
        StagePoint {
            k,
            x: DVector::zeros(1),
            u: DVector::zeros(m),
            v: DVector::zeros(2),
        }
    }

    #[test]
    fn mismatched_cross_curvature_is_flagged() {
        let g = two_player_shell(Box::new(|i, _, _, u, _| {
            if i == 0 {
                u[0] * u[1]
            } else {
                2.0 * u[0] * u[1]
            }
        }));
        let rep = check_symmetry(&g, &[sample_origin(0, 2)], DEFAULT_FD_STEP, 1e-4).unwrap();
        assert!(!rep.holds);
        let v = &rep.worst[0];
        assert_eq!(v.condition, SymmetryCondition::Ux);
        assert_eq!(v.players, (1, 2));
        assert!((v.deviation - 1.0).abs() < 1e-3, "deviation {}", v.deviation);
    }

    #[test]
    fn identical_costs_hold() {
        let g = two_player_shell(Box::new(|_, _, x, u, v| {
            u[0] * u[1] + x[0] * (v[0] + 2.0 * v[1]) + v[0] * v[1]
        }));
        let rep = check_symmetry(&g, &[sample_origin(0, 2)], DEFAULT_FD_STEP, 1e-4).unwrap();
        assert!(rep.holds, "worst {:?}", rep.worst.first());
    }

    #[test]
    fn gradient_mismatch_in_x_is_flagged() {
        let g = two_player_shell(Box::new(|i, _, x, _, _| {
            if i == 0 {
                x[0]
            } else {
                2.0 * x[0]
            }
        }));
        let rep = check_symmetry(&g, &[sample_origin(0, 2)], DEFAULT_FD_STEP, 1e-4).unwrap();
        assert!(!rep.holds);
        assert_eq!(rep.worst[0].condition, SymmetryCondition::Px);
    }

    #[test]
    fn cross_u_v_coupling_is_flagged_as_sep() {
        let g = two_player_shell(Box::new(|i, _, _, u, v| {
            if i == 0 {
                u[0] * v[1]
            } else {
                0.0
            }
        }));
        let rep = check_symmetry(&g, &[sample_origin(0, 2)], DEFAULT_FD_STEP, 1e-4).unwrap();
        assert!(!rep.holds);
        let v = &rep.worst[0];
        assert_eq!(v.condition, SymmetryCondition::Sep);
        assert_eq!(v.players, (1, 2));
    }

    #[test]
    fn evaluator_failure_flags_sample_without_aborting() {
        let g = two_player_shell(Box::new(|i, _, _, u, _| {
            if i == 0 && u[0] > 0.0 {
                f64::NAN
            } else {
                u[0] * u[1]
            }
        }));
        let rep = check_symmetry(&g, &[sample_origin(0, 2)], DEFAULT_FD_STEP, 1e-4).unwrap();
        assert!(!rep.holds);
        assert!(rep.worst.iter().any(|v| v.deviation.is_infinite()));
    }

    #[test]
    fn wrapped_lq_potential_games_hold_and_perturbed_ones_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let caps = GameCaps {
            n: 3,
            players: 3,
            horizon: 3,
            m: 2,
            s: 2,
            l: 2,
        };
        for round in 0..6 {
            let mut g = random_potential_game(&mut rng, &caps);
            let d = g.dims.clone();
            let perturb = round % 2 == 1;
            if perturb && d.players >= 2 {
                // Break one cross-R condition by a unilateral bump.
                g.r[0][0][(d.u_offset(0), d.u_offset(1))] += 0.3;
                g.r[0][0][(d.u_offset(1), d.u_offset(0))] += 0.3;
            }
            let nl = g.to_nonlinear();
            let mut points = Vec::new();
            for _ in 0..4 {
                let k = rng.random_range(0..=d.horizon);
                let m = if k < d.horizon { d.m_total() } else { 0 };
                points.push(StagePoint {
                    k,
                    x: random_vector(&mut rng, d.n, 0.5),
                    u: random_vector(&mut rng, m, 0.5),
                    v: random_vector(&mut rng, d.s_total(), 0.5),
                });
            }
            // Make sure stage 0 is represented when we perturbed it.
            points.push(StagePoint {
                k: 0,
                x: random_vector(&mut rng, d.n, 0.5),
                u: random_vector(&mut rng, d.m_total(), 0.5),
                v: random_vector(&mut rng, d.s_total(), 0.5),
            });
            let rep = check_symmetry(&nl, &points, DEFAULT_FD_STEP, 1e-4).unwrap();
            if perturb && d.players >= 2 {
                assert!(!rep.holds, "round {round}: perturbation not detected");
                assert!(rep.worst.iter().any(|v| v.condition == SymmetryCondition::Ux));
            } else {
                assert!(rep.holds, "round {round}: worst {:?}", rep.worst.first());
            }
        }
    }

    #[test]
    fn field_matches_hand_gradient() {
        let dims = Dims {
            n: 1,
            players: 1,
            horizon: 1,
            m: vec![1],
            s: vec![1],
            l: 0,
        };
        let g = NonlinearGame {
            dims,
            x0: DVector::zeros(1),
            dynamics: Box::new(|_, x, _| x.clone()),
            constraints: Box::new(|_, _, _| DVector::zeros(0)),
            stage_cost: Box::new(|_, _, x, u, _| 0.5 * x[0] * x[0] + x[0] * u[0]),
            terminal_cost: Box::new(|_, _, _| 0.0),
            gradients: None,
        };
        let f = build_field(&g, 0, &DVector::from_vec(vec![1.0, 1.0, 0.0])).unwrap();
        assert!((f[0] - 2.0).abs() < 1e-8);
        assert!((f[1] - 1.0).abs() < 1e-8);
        assert!(f[2].abs() < 1e-8);

        let zero = NonlinearGame {
            dims: g.dims.clone(),
            x0: DVector::zeros(1),
            dynamics: Box::new(|_, x, _| x.clone()),
            constraints: Box::new(|_, _, _| DVector::zeros(0)),
            stage_cost: Box::new(|_, _, _, _, _| 0.0),
            terminal_cost: Box::new(|_, _, _| 0.0),
            gradients: None,
        };
        let f = build_field(&zero, 0, &DVector::zeros(3)).unwrap();
        assert_eq!(f, DVector::zeros(3));
    }

    #[test]
    fn lq_field_at_origin_is_the_linear_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_potential_game(&mut rng, &GameCaps::default());
        let d = g.dims.clone();
        let nl = g.to_nonlinear();
        for k in [0usize, d.horizon] {
            let m = if k < d.horizon { d.m_total() } else { 0 };
            let f = build_field(&nl, k, &DVector::zeros(d.n + m + d.s_total())).unwrap();
            for c in 0..d.n {
                assert!((f[c] - g.p[k][0][c]).abs() < 1e-10);
            }
            for a in 0..m {
                assert!(f[d.n + a].abs() < 1e-10);
            }
            for i in 0..d.players {
                for a in 0..d.s[i] {
                    let idx = d.v_offset(i) + a;
                    let expect = g.d_lin[k][i][idx];
                    assert!((f[d.n + m + idx] - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn fd_field_agrees_with_analytic_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = random_potential_game(&mut rng, &GameCaps::default());
        let d = g.dims.clone();
        let nl = g.to_nonlinear();
        let mut nl_fd = g.to_nonlinear();
        nl_fd.gradients = None;
        for k in [0usize, d.horizon] {
            let m = if k < d.horizon { d.m_total() } else { 0 };
            let point = random_vector(&mut rng, d.n + m + d.s_total(), 0.7);
            let fa = build_field(&nl, k, &point).unwrap();
            let ff = build_field(&nl_fd, k, &point).unwrap();
            assert!((fa - ff).amax() < 1e-6);
        }
    }

    #[test]
    fn line_integral_of_identity_field() {
        let dims = Dims {
            n: 1,
            players: 1,
            horizon: 0,
            m: vec![0],
            s: vec![0],
            l: 0,
        };
        let g = NonlinearGame {
            dims,
            x0: DVector::zeros(1),
            dynamics: Box::new(|_, x, _| x.clone()),
            constraints: Box::new(|_, _, _| DVector::zeros(0)),
            stage_cost: Box::new(|_, _, _, _, _| 0.0),
            terminal_cost: Box::new(|_, x, _| 0.5 * x[0] * x[0]),
            gradients: None,
        };
        let path = PathSpec {
            base: DVector::zeros(1),
            quadrature_nodes: 4,
        };
        let val = integrate_potential(&g, 0, &DVector::from_element(1, 2.0), &path).unwrap();
        assert!((val - 2.0).abs() < 1e-9, "got {val}");
    }

    #[test]
    fn quadrature_error_shrinks_at_fourth_order() {
        let dims = Dims {
            n: 1,
            players: 1,
            horizon: 0,
            m: vec![0],
            s: vec![0],
            l: 0,
        };
        let g = NonlinearGame {
            dims,
            x0: DVector::zeros(1),
            dynamics: Box::new(|_, x, _| x.clone()),
            constraints: Box::new(|_, _, _| DVector::zeros(0)),
            stage_cost: Box::new(|_, _, _, _, _| 0.0),
            terminal_cost: Box::new(|_, x, _| x[0].powi(5) / 5.0),
            gradients: None,
        };
        let target = DVector::from_element(1, 1.0);
        let exact = 0.2;
        let err = |panels: usize| {
            let path = PathSpec {
                base: DVector::zeros(1),
                quadrature_nodes: panels,
            };
            // FD error in the field is ~1e-13 here, far below quadrature error.
            (integrate_potential(&g, 0, &target, &path).unwrap() - exact).abs()
        };
        let (e2, e4) = (err(2), err(4));
        assert!(e2 > 1e-6, "coarse error suspiciously small: {e2:.3e}");
        assert!(e2 / e4 >= 8.0, "ratio {:.2}", e2 / e4);
    }

    #[test]
    fn lq_line_integral_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let g = random_potential_game(&mut rng, &GameCaps::default());
            let d = g.dims.clone();
            let ocp = build_ocp(&g).unwrap();
            let nl = g.to_nonlinear();
            for k in [0usize, d.horizon] {
                let m = if k < d.horizon { d.m_total() } else { 0 };
                let point = random_vector(&mut rng, d.n + m + d.s_total(), 0.8);
                let path = PathSpec {
                    base: DVector::zeros(d.n + m + d.s_total()),
                    quadrature_nodes: 2,
                };
                let val = integrate_potential(&nl, k, &point, &path).unwrap();
                let x = point.rows(0, d.n).into_owned();
                let u = point.rows(d.n, m).into_owned();
                let v = point.rows(d.n + m, d.s_total()).into_owned();
                let closed = if k < d.horizon {
                    potential_value(&ocp, k, &x, Some(&u), &v).unwrap()
                } else {
                    potential_value(&ocp, k, &x, None, &v).unwrap()
                };
                assert!((val - closed).abs() < 1e-7, "stage {k}: {val} vs {closed}");
            }
        }
    }

    #[test]
    fn potential_differences_are_base_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = random_potential_game(&mut rng, &GameCaps::default());
        let d = g.dims.clone();
        let nl = g.to_nonlinear();
        let dim = d.n + d.m_total() + d.s_total();
        let t1 = random_vector(&mut rng, dim, 0.8);
        let t2 = random_vector(&mut rng, dim, 0.8);
        let from = |base: DVector<f64>| PathSpec {
            base,
            quadrature_nodes: 3,
        };
        let p1 = from(random_vector(&mut rng, dim, 0.5));
        let p2 = from(random_vector(&mut rng, dim, 0.5));
        let diff_a = integrate_potential(&nl, 0, &t1, &p1).unwrap()
            - integrate_potential(&nl, 0, &t2, &p1).unwrap();
        let diff_b = integrate_potential(&nl, 0, &t1, &p2).unwrap()
            - integrate_potential(&nl, 0, &t2, &p2).unwrap();
        assert!((diff_a - diff_b).abs() < 1e-7, "{diff_a} vs {diff_b}");
    }

    #[test]
    fn single_player_games_always_hold() {
        let dims = Dims {
            n: 2,
            players: 1,
            horizon: 2,
            m: vec![2],
            s: vec![1],
            l: 0,
        };
        let g = NonlinearGame {
            dims,
            x0: DVector::zeros(2),
            dynamics: Box::new(|_, x, _| x.clone()),
            constraints: Box::new(|_, _, _| DVector::zeros(0)),
            stage_cost: Box::new(|_, _, x, u, v| {
                (x[0] * u[1]).sin() + u[0] * u[0] * x[1] + v[0].exp()
            }),
            terminal_cost: Box::new(|_, x, v| x[0] * x[1] * v[0]),
            gradients: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts = Vec::new();
        for k in 0..=2usize {
            let m = if k < 2 { 2 } else { 0 };
            pts.push(StagePoint {
                k,
                x: random_vector(&mut rng, 2, 0.5),
                u: random_vector(&mut rng, m, 0.5),
                v: random_vector(&mut rng, 1, 0.5),
            });
        }
        let rep = check_symmetry(&g, &pts, DEFAULT_FD_STEP, 1e-4).unwrap();
        assert!(rep.holds);
    }
}
