//! Stacked linear complementarity problem over the stage variables.
//!
//! Each stage k = 1..K contributes the block
//!
//!   [ D_k  -N_k' ] [v_k ]   [ L_k' ]       [ d_k ]
//!   [ N_k    0   ] [mu_k] + [ M_k  ] x_k + [ r_k ],
//!
//! and substituting the affine state maps x = Phi0 x_0 + Phi1 p + Phi2 y turns
//! the stationarity and complementarity conditions into one LCP
//! 0 <= y  perp  My + q >= 0 with M = Mtilde + Qtilde Phi2.
//!
//! Solved with Lemke's method (unit covering vector, lexicographic ratio test
//! for anti-cycling). A brute-force enumeration over complementary index sets
//! serves as an oracle for small problems. The stage-0 pair (v_0, mu_0)
//! decouples from the future because x_0 is fixed, so it is solved from the
//! standalone stage-0 LCP.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::CoreError;
use crate::game::{Dims, LqGame};
use crate::linalg;
use crate::potential::OcpData;
use crate::tpbvp::AffineMaps;

/// Default complementarity/feasibility tolerance.
pub const LCP_TOL: f64 = 1e-9;
/// Enumeration is exponential; refuse above this dimension.
pub const ENUM_CAP: usize = 20;
/// A pivot element below this magnitude counts as numerically singular.
const SINGULAR_PIVOT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LcpStatus {
    Solved,
    RayTermination,
    MaxPivots,
    /// A stage subproblem (currently only stage 0) has no solution.
    InfeasibleStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarKind {
    V,
    Mu,
}

/// Tag describing which stage variable an LCP index belongs to. Player is the
/// 0-based owner for v entries, None for constraint rows.
#[derive(Debug, Clone, Serialize)]
pub struct LcpLabel {
    pub stage: usize,
    pub kind: VarKind,
    pub player: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LcpProblem {
    pub m: DMatrix<f64>,
    pub q: DVector<f64>,
    pub labels: Option<Vec<LcpLabel>>,
}

#[derive(Debug, Clone)]
pub struct LcpSolution {
    pub z: DVector<f64>,
    /// w = Mz + q, recomputed from the returned z.
    pub w: DVector<f64>,
    pub status: LcpStatus,
    pub pivots: usize,
    pub diagnostic: Option<String>,
}

impl LcpSolution {
    pub fn solved(&self) -> bool {
        self.status == LcpStatus::Solved
    }
}

/// Per-stage blocks of the stacked LCP, stages 1..K on the block diagonal.
pub struct StageBlocks {
    /// K(s+l) x K(s+l).
    pub mtilde: DMatrix<f64>,
    /// K(s+l) x Kn map applied to the stacked states.
    pub qtilde: DMatrix<f64>,
    /// K(s+l) constant offsets (d_k; r_k).
    pub stilde: DVector<f64>,
}

pub fn assemble_stage_blocks(ocp: &OcpData, game: &LqGame) -> StageBlocks {
    let d = &game.dims;
    let kk = d.horizon;
    let (n, s, lc) = (d.n, d.s_total(), d.l);
    let blk = s + lc;
    let mut mtilde = DMatrix::zeros(kk * blk, kk * blk);
    let mut qtilde = DMatrix::zeros(kk * blk, kk * n);
    let mut stilde = DVector::zeros(kk * blk);
    for k in 1..=kk {
        let off = (k - 1) * blk;
        linalg::set_block(&mut mtilde, off, off, &ocp.d[k]);
        linalg::set_block(&mut mtilde, off, off + s, &(-game.n_con[k].transpose()));
        linalg::set_block(&mut mtilde, off + s, off, &game.n_con[k]);
        linalg::set_block(&mut qtilde, off, (k - 1) * n, &ocp.l[k].transpose());
        linalg::set_block(&mut qtilde, off + s, (k - 1) * n, &game.m_con[k]);
        stilde.rows_mut(off, s).copy_from(&ocp.d_lin[k]);
        stilde.rows_mut(off + s, lc).copy_from(&game.r_con[k]);
    }
    StageBlocks {
        mtilde,
        qtilde,
        stilde,
    }
}

pub fn assemble_lcp(
    blocks: &StageBlocks,
    maps: &AffineMaps,
    ocp: &OcpData,
    game: &LqGame,
) -> LcpProblem {
    let d = &game.dims;
    let kk = d.horizon;
    let n = d.n;
    let mut p_stack = DVector::zeros(kk * n);
    for tau in 1..=kk {
        p_stack.rows_mut((tau - 1) * n, n).copy_from(&ocp.p[tau]);
    }
    let m = &blocks.mtilde + &blocks.qtilde * &maps.phi2;
    let q = &blocks.qtilde * (&maps.phi0 * &game.x0 + &maps.phi1 * p_stack) + &blocks.stilde;

    let mut labels = Vec::with_capacity(kk * (d.s_total() + d.l));
    for k in 1..=kk {
        for i in 0..d.players {
            for _ in 0..d.s[i] {
                labels.push(LcpLabel {
                    stage: k,
                    kind: VarKind::V,
                    player: Some(i),
                });
            }
        }
        for _ in 0..d.l {
            labels.push(LcpLabel {
                stage: k,
                kind: VarKind::Mu,
                player: None,
            });
        }
    }
    LcpProblem {
        m,
        q,
        labels: Some(labels),
    }
}

/// Lexicographic comparison of the ratio vectors (rhs, w-columns)/pivot for
/// rows i and j of the tableau. Returns true when row i is strictly smaller.
fn lex_less(tab: &DMatrix<f64>, d: usize, i: usize, j: usize, c: usize) -> bool {
    let (pi, pj) = (tab[(i, c)], tab[(j, c)]);
    let rhs = 2 * d + 1;
    let (a, b) = (tab[(i, rhs)] / pi, tab[(j, rhs)] / pj);
    if a != b {
        return a < b;
    }
    for col in 0..d {
        let (a, b) = (tab[(i, col)] / pi, tab[(j, col)] / pj);
        if a != b {
            return a < b;
        }
    }
    false
}

/// Plain lexicographic order on (rhs, w-columns), no pivot scaling.
fn lex_row_less(tab: &DMatrix<f64>, d: usize, i: usize, j: usize) -> bool {
    let rhs = 2 * d + 1;
    if tab[(i, rhs)] != tab[(j, rhs)] {
        return tab[(i, rhs)] < tab[(j, rhs)];
    }
    for col in 0..d {
        if tab[(i, col)] != tab[(j, col)] {
            return tab[(i, col)] < tab[(j, col)];
        }
    }
    false
}

fn pivot(tab: &mut DMatrix<f64>, basis: &mut [usize], r: usize, c: usize) {
    let piv = tab[(r, c)];
    let ncols = tab.ncols();
    for col in 0..ncols {
        tab[(r, col)] /= piv;
    }
    for i in 0..tab.nrows() {
        if i == r {
            continue;
        }
        let f = tab[(i, c)];
        if f != 0.0 {
            for col in 0..ncols {
                tab[(i, col)] -= f * tab[(r, col)];
            }
        }
    }
    basis[r] = c;
}

fn extract(
    problem: &LcpProblem,
    tab: &DMatrix<f64>,
    basis: &[usize],
    status: LcpStatus,
    pivots: usize,
    tol: f64,
    diagnostic: Option<String>,
) -> LcpSolution {
    let d = problem.q.len();
    let mut z = DVector::zeros(d);
    for (r, &b) in basis.iter().enumerate() {
        if b >= d && b < 2 * d {
            z[b - d] = tab[(r, 2 * d + 1)];
        }
    }
    // Tiny negative entries are roundoff from the pivoting; clamp them.
    for x in z.iter_mut() {
        if *x < 0.0 && *x >= -tol {
            *x = 0.0;
        }
    }
    let w = &problem.m * &z + &problem.q;
    let mut status = status;
    let mut diagnostic = diagnostic;
    if status == LcpStatus::Solved {
        let zmin = z.iter().cloned().fold(0.0f64, f64::min);
        let wmin = w.iter().cloned().fold(0.0f64, f64::min);
        let comp = z.dot(&w).abs();
        let comp_bound = tol * (1.0 + z.norm() * w.norm());
        if zmin < -tol || wmin < -tol || comp > comp_bound {
            status = LcpStatus::RayTermination;
            diagnostic = Some(format!(
                "candidate basis failed the residual check (z_min {zmin:.3e}, w_min {wmin:.3e}, z'w {comp:.3e})"
            ));
        }
    }
    LcpSolution {
        z,
        w,
        status,
        pivots,
        diagnostic,
    }
}

/// Lemke's complementary pivoting with a unit covering vector. The ratio test
/// is lexicographic over [rhs | w-columns], which rules out cycling.
pub fn lemke_solve(problem: &LcpProblem, max_pivots: usize, tol: f64) -> LcpSolution {
    let d = problem.q.len();
    assert_eq!(problem.m.shape(), (d, d), "LCP matrix/vector size mismatch");
    if d == 0 || problem.q.iter().all(|&x| x >= 0.0) {
        return LcpSolution {
            z: DVector::zeros(d),
            w: problem.q.clone(),
            status: LcpStatus::Solved,
            pivots: 0,
            diagnostic: None,
        };
    }

    // Columns: [w_0..w_d | z_0..z_d | z0 | rhs].
    let mut tab = DMatrix::zeros(d, 2 * d + 2);
    for i in 0..d {
        tab[(i, i)] = 1.0;
        for j in 0..d {
            tab[(i, d + j)] = -problem.m[(i, j)];
        }
        tab[(i, 2 * d)] = -1.0;
        tab[(i, 2 * d + 1)] = problem.q[i];
    }
    let mut basis: Vec<usize> = (0..d).collect();

    // First pivot: drive z0 in; the lex-smallest (most negative rhs) row
    // leaves. Every z0 coefficient is -1, so no scaling is needed here.
    let mut r = 0;
    for i in 1..d {
        if lex_row_less(&tab, d, i, r) {
            r = i;
        }
    }
    let mut entering = 2 * d;
    let mut pivots = 0usize;
    loop {
        if entering == 2 * d {
            // Initial pivot (coefficient -1 in every row, no ratio test).
        } else {
            let mut leave: Option<usize> = None;
            for i in 0..d {
                if tab[(i, entering)] > 0.0 {
                    leave = Some(match leave {
                        None => i,
                        Some(r0) => {
                            if lex_less(&tab, d, i, r0, entering) {
                                i
                            } else {
                                r0
                            }
                        }
                    });
                }
            }
            r = match leave {
                Some(r) => r,
                None => {
                    return extract(
                        problem,
                        &tab,
                        &basis,
                        LcpStatus::RayTermination,
                        pivots,
                        tol,
                        Some(format!(
                            "unbounded ray while increasing variable column {entering}"
                        )),
                    )
                }
            };
            if tab[(r, entering)] < SINGULAR_PIVOT {
                return extract(
                    problem,
                    &tab,
                    &basis,
                    LcpStatus::RayTermination,
                    pivots,
                    tol,
                    Some(format!(
                        "numerically singular pivot {:.3e} at row {r}",
                        tab[(r, entering)]
                    )),
                );
            }
        }

        let leaving = basis[r];
        pivot(&mut tab, &mut basis, r, entering);
        pivots += 1;
        if leaving == 2 * d {
            return extract(problem, &tab, &basis, LcpStatus::Solved, pivots, tol, None);
        }
        entering = if leaving < d { d + leaving } else { leaving - d };
        if pivots >= max_pivots {
            return extract(
                problem,
                &tab,
                &basis,
                LcpStatus::MaxPivots,
                pivots,
                tol,
                Some(format!("pivot budget {max_pivots} exhausted")),
            );
        }
    }
}

/// Enumerate all complementary solutions by solving the square subsystem for
/// every candidate active set. Exponential in d; capped at ENUM_CAP.
pub fn enumerate_solve(problem: &LcpProblem) -> Result<Vec<LcpSolution>, CoreError> {
    let d = problem.q.len();
    if d > ENUM_CAP {
        return Err(CoreError::EnumerationTooLarge { d, cap: ENUM_CAP });
    }
    let scale = 1.0 + linalg::max_abs(&problem.m) + linalg::max_abs_vec(&problem.q);
    let mut found: Vec<LcpSolution> = Vec::new();
    for mask in 0u32..(1u32 << d) {
        let active: Vec<usize> = (0..d).filter(|&i| mask & (1 << i) != 0).collect();
        let na = active.len();
        let mut z = DVector::zeros(d);
        if na > 0 {
            let mut sub = DMatrix::zeros(na, na);
            let mut rhs = DVector::zeros(na);
            for (a, &ia) in active.iter().enumerate() {
                rhs[a] = -problem.q[ia];
                for (b, &ib) in active.iter().enumerate() {
                    sub[(a, b)] = problem.m[(ia, ib)];
                }
            }
            let lu = sub.clone().lu();
            let zb = match lu.solve(&rhs) {
                Some(zb) => zb,
                None => continue,
            };
            // Guard against garbage from a nearly singular subsystem.
            if linalg::max_abs_vec(&(&sub * &zb - &rhs)) > 1e-8 * scale {
                continue;
            }
            for (a, &ia) in active.iter().enumerate() {
                z[ia] = zb[a];
            }
        }
        if z.iter().any(|&x| x < -LCP_TOL) {
            continue;
        }
        let w = &problem.m * &z + &problem.q;
        if w.iter().any(|&x| x < -LCP_TOL) {
            continue;
        }
        if z.dot(&w).abs() > LCP_TOL * (1.0 + z.norm() * w.norm()) {
            continue;
        }
        let dup = found
            .iter()
            .any(|s| linalg::max_abs_diff_vec(&s.z, &z) <= 1e-9 * (1.0 + linalg::max_abs_vec(&z)));
        if !dup {
            found.push(LcpSolution {
                z,
                w,
                status: LcpStatus::Solved,
                pivots: 0,
                diagnostic: None,
            });
        }
    }
    Ok(found)
}

/// Build and solve the standalone stage-0 LCP in (v_0, mu_0). The stage-0
/// variables do not influence later states, but they enter beta_0 and the
/// stage-0 costate, so they are needed to complete the trajectory.
pub fn solve_stage0(
    ocp: &OcpData,
    game: &LqGame,
    x0: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), CoreError> {
    let d = &game.dims;
    let (s, lc) = (d.s_total(), d.l);
    let mut m0 = DMatrix::zeros(s + lc, s + lc);
    linalg::set_block(&mut m0, 0, 0, &ocp.d[0]);
    linalg::set_block(&mut m0, 0, s, &(-game.n_con[0].transpose()));
    linalg::set_block(&mut m0, s, 0, &game.n_con[0]);
    let mut q0 = DVector::zeros(s + lc);
    q0.rows_mut(0, s)
        .copy_from(&(ocp.l[0].transpose() * x0 + &ocp.d_lin[0]));
    q0.rows_mut(s, lc)
        .copy_from(&(&game.m_con[0] * x0 + &game.r_con[0]));
    let problem = LcpProblem {
        m: m0,
        q: q0,
        labels: None,
    };
    let sol = lemke_solve(&problem, default_max_pivots(s + lc), LCP_TOL);
    if !sol.solved() {
        return Err(CoreError::LcpFailed {
            status: LcpStatus::InfeasibleStage,
            diagnostic: Some(format!(
                "stage-0 LCP terminated with {:?}{}",
                sol.status,
                sol.diagnostic
                    .map(|x| format!(" ({x})"))
                    .unwrap_or_default()
            )),
        });
    }
    Ok((
        sol.z.rows(0, s).into_owned(),
        sol.z.rows(s, lc).into_owned(),
    ))
}

/// Pivot budget scaled to the problem size.
pub fn default_max_pivots(d: usize) -> usize {
    500 + 50 * d
}

/// Split a stacked stage solution y into per-stage v_k and mu_k for k = 1..K.
pub fn split_solution(dims: &Dims, y: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let (s, lc) = (dims.s_total(), dims.l);
    let mut v = Vec::with_capacity(dims.horizon);
    let mut mu = Vec::with_capacity(dims.horizon);
    for k in 0..dims.horizon {
        let off = k * (s + lc);
        v.push(y.rows(off, s).into_owned());
        mu.push(y.rows(off + s, lc).into_owned());
    }
    (v, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_pd_lcp;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn problem(m: DMatrix<f64>, q: DVector<f64>) -> LcpProblem {
        LcpProblem { m, q, labels: None }
    }

    #[test]
    fn trivial_when_q_nonnegative() {
        let p = problem(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]));
        let sol = lemke_solve(&p, 100, LCP_TOL);
        assert!(sol.solved());
        assert_eq!(sol.pivots, 0);
        assert_eq!(sol.z, DVector::zeros(2));
        assert_eq!(sol.w, p.q);
    }

    #[test]
    fn identity_lcp_flips_negative_entries() {
        let p = problem(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -2.0]));
        let sol = lemke_solve(&p, 100, LCP_TOL);
        assert!(sol.solved());
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
        assert!((sol.z[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ray_termination_reported() {
        let p = problem(
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, -1.0),
        );
        let sol = lemke_solve(&p, 100, LCP_TOL);
        assert_eq!(sol.status, LcpStatus::RayTermination);
        assert!(sol.diagnostic.is_some());
    }

    #[test]
    fn enumerate_finds_unique_solution() {
        let p = problem(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, 1.0]));
        let sols = enumerate_solve(&p).unwrap();
        assert_eq!(sols.len(), 1);
        assert!((sols[0].z[0] - 1.0).abs() < 1e-12);
        assert_eq!(sols[0].z[1], 0.0);
    }

    #[test]
    fn enumerate_includes_zero_for_skew_example() {
        let p = problem(
            DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        );
        let sols = enumerate_solve(&p).unwrap();
        assert!(sols
            .iter()
            .any(|s| linalg::max_abs_vec(&s.z) == 0.0));
    }

    #[test]
    fn enumerate_rejects_large_problems() {
        let d = ENUM_CAP + 1;
        let p = problem(DMatrix::identity(d, d), DVector::zeros(d));
        assert!(matches!(
            enumerate_solve(&p),
            Err(CoreError::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn lemke_matches_enumeration_on_pd_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let d = rng.random_range(1..=8);
            let p = random_pd_lcp(&mut rng, d);
            let sol = lemke_solve(&p, default_max_pivots(d), LCP_TOL);
            assert!(sol.solved(), "Lemke failed on a PD instance: {:?}", sol.status);
            let sols = enumerate_solve(&p).unwrap();
            assert_eq!(sols.len(), 1, "PD LCP must have a unique solution");
            assert!(
                linalg::max_abs_diff_vec(&sol.z, &sols[0].z) <= 1e-9,
                "solutions differ by {:.3e}",
                linalg::max_abs_diff_vec(&sol.z, &sols[0].z)
            );
        }
    }

    #[test]
    fn permutation_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pd_lcp(&mut rng, 5);
        let sol = lemke_solve(&p, 1000, LCP_TOL);
        // Reverse the index order.
        let d = 5;
        let mut pm = DMatrix::zeros(d, d);
        let mut pq = DVector::zeros(d);
        for i in 0..d {
            pq[i] = p.q[d - 1 - i];
            for j in 0..d {
                pm[(i, j)] = p.m[(d - 1 - i, d - 1 - j)];
            }
        }
        let sol_p = lemke_solve(&problem(pm, pq), 1000, LCP_TOL);
        for i in 0..d {
            assert!((sol.z[i] - sol_p.z[d - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn pivot_budget_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_pd_lcp(&mut rng, 6);
        let sol = lemke_solve(&p, 1, LCP_TOL);
        assert!(matches!(
            sol.status,
            LcpStatus::MaxPivots | LcpStatus::Solved
        ));
        if sol.status == LcpStatus::MaxPivots {
            assert_eq!(sol.pivots, 1);
        }
    }
}
