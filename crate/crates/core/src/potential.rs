//! Exact-potential structure of the LQ game.
//!
//! The game is an open-loop potential game when, for every pair of players
//! i != j, the cross blocks of the control costs agree ([R_k^i]_ij = [R_k^j]_ij
//! for k < K), the state costs coincide (Q_k^i = Q_k^j, p_k^i = p_k^j,
//! L_k^i = L_k^j), and the v-cost cross blocks agree ([D_k^i]_ij = [D_k^j]_ij).
//! Under these conditions pooling row blocks,
//!
//!   Q_k := Q_k^1, p_k := p_k^1, L_k := L_k^1,
//!   [R_k]_i* := [R_k^i]_i*, [D_k]_i* := [D_k^i]_i*, [d_k]_i := [d_k^i]_i,
//!
//! yields a single optimal control problem whose stagewise value P_k is an
//! exact potential: a unilateral deviation changes J^i exactly as much as it
//! changes the summed potential.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::CoreError;
use crate::game::LqGame;
use crate::linalg;

/// Relative tolerance for the pairwise condition checks.
pub const DEFAULT_CONDITION_TOL: f64 = 1e-10;
/// Absolute floor below which deviations never count as violations.
pub const CONDITION_ABS_FLOOR: f64 = 1e-12;

/// Which pairwise condition a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PotentialCondition {
    #[serde(rename = "Ri-Rj")]
    RBlock,
    #[serde(rename = "Qi-Qj")]
    QMatch,
    #[serde(rename = "pi-pj")]
    PMatch,
    #[serde(rename = "Li-Lj")]
    LMatch,
    #[serde(rename = "Di-Dj")]
    DBlock,
}

impl std::fmt::Display for PotentialCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PotentialCondition::RBlock => "Ri-Rj",
            PotentialCondition::QMatch => "Qi-Qj",
            PotentialCondition::PMatch => "pi-pj",
            PotentialCondition::LMatch => "Li-Lj",
            PotentialCondition::DBlock => "Di-Dj",
        };
        f.write_str(s)
    }
}

/// One violated condition. Player indices are 1-based, as displayed.
#[derive(Debug, Clone, Serialize)]
pub struct PotentialViolation {
    pub condition: PotentialCondition,
    pub stage: usize,
    pub players: (usize, usize),
    /// Max-abs deviation between the two sides of the condition.
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PotentialReport {
    pub is_potential: bool,
    pub violations: Vec<PotentialViolation>,
    /// Largest deviation seen across all checks, including passing ones.
    pub worst_deviation: f64,
    pub tol_rel: f64,
}

/// Check the pairwise potential conditions at relative tolerance `tol_rel`
/// (absolute floor 1e-12). Ordered pairs i < j suffice because the cost
/// matrices are symmetric, which `validate` enforces separately.
pub fn check_conditions(game: &LqGame, tol_rel: f64) -> PotentialReport {
    let d = &game.dims;
    let kk = d.horizon;
    let mut violations = Vec::new();
    let mut worst = 0.0f64;

    let record = |cond: PotentialCondition,
                      stage: usize,
                      i: usize,
                      j: usize,
                      dev: f64,
                      scale: f64,
                      violations: &mut Vec<PotentialViolation>,
                      worst: &mut f64| {
        *worst = worst.max(dev);
        if dev > CONDITION_ABS_FLOOR.max(tol_rel * scale) {
            violations.push(PotentialViolation {
                condition: cond,
                stage,
                players: (i + 1, j + 1),
                deviation: dev,
            });
        }
    };

    for i in 0..d.players {
        for j in (i + 1)..d.players {
            for k in 0..kk {
                let ri = &game.r[k][i];
                let rj = &game.r[k][j];
                let bi = ri.view((d.u_offset(i), d.u_offset(j)), (d.m[i], d.m[j]));
                let bj = rj.view((d.u_offset(i), d.u_offset(j)), (d.m[i], d.m[j]));
                let dev = (bi - bj).amax();
                let scale = linalg::max_abs(ri).max(linalg::max_abs(rj));
                record(PotentialCondition::RBlock, k, i, j, dev, scale, &mut violations, &mut worst);
            }
            for k in 0..=kk {
                let dev = linalg::max_abs_diff(&game.q[k][i], &game.q[k][j]);
                let scale = linalg::max_abs(&game.q[k][i]).max(linalg::max_abs(&game.q[k][j]));
                record(PotentialCondition::QMatch, k, i, j, dev, scale, &mut violations, &mut worst);

                let dev = linalg::max_abs_diff_vec(&game.p[k][i], &game.p[k][j]);
                let scale = linalg::max_abs_vec(&game.p[k][i]).max(linalg::max_abs_vec(&game.p[k][j]));
                record(PotentialCondition::PMatch, k, i, j, dev, scale, &mut violations, &mut worst);

                let dev = linalg::max_abs_diff(&game.l[k][i], &game.l[k][j]);
                let scale = linalg::max_abs(&game.l[k][i]).max(linalg::max_abs(&game.l[k][j]));
                record(PotentialCondition::LMatch, k, i, j, dev, scale, &mut violations, &mut worst);

                let di = &game.d[k][i];
                let dj = &game.d[k][j];
                let bi = di.view((d.v_offset(i), d.v_offset(j)), (d.s[i], d.s[j]));
                let bj = dj.view((d.v_offset(i), d.v_offset(j)), (d.s[i], d.s[j]));
                let dev = (bi - bj).amax();
                let scale = linalg::max_abs(di).max(linalg::max_abs(dj));
                record(PotentialCondition::DBlock, k, i, j, dev, scale, &mut violations, &mut worst);
            }
        }
    }

    PotentialReport {
        is_potential: violations.is_empty(),
        violations,
        worst_deviation: worst,
        tol_rel,
    }
}

/// Pooled optimal control problem data (one entry per stage; R only for k < K).
#[derive(Debug, Clone, PartialEq)]
pub struct OcpData {
    pub q: Vec<DMatrix<f64>>,
    pub p: Vec<DVector<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
    pub d_lin: Vec<DVector<f64>>,
    pub l: Vec<DMatrix<f64>>,
}

/// Pool the player costs into the potential OCP. Fails if the game is not
/// potential at the default tolerance. The assembled R_k and D_k inherit
/// symmetry from the conditions; any residual asymmetry beyond 1e-10 relative
/// is treated as an internal inconsistency rather than repaired.
pub fn build_ocp(game: &LqGame) -> Result<OcpData, CoreError> {
    let report = check_conditions(game, DEFAULT_CONDITION_TOL);
    if !report.is_potential {
        return Err(CoreError::NotPotential {
            violations: report.violations.len(),
            worst: report.worst_deviation,
        });
    }
    let d = &game.dims;
    let kk = d.horizon;
    let (m, s) = (d.m_total(), d.s_total());

    let mut r_pool = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut rk = DMatrix::zeros(m, m);
        for i in 0..d.players {
            let off = d.u_offset(i);
            rk.view_mut((off, 0), (d.m[i], m))
                .copy_from(&game.r[k][i].view((off, 0), (d.m[i], m)));
        }
        let dev = linalg::sym_deviation(&rk);
        let scale = linalg::max_abs(&rk).max(f64::MIN_POSITIVE);
        if dev > 1e-10 * scale {
            return Err(CoreError::InvalidData(format!(
                "pooled R asymmetric at k={k} (deviation {dev:.3e})"
            )));
        }
        r_pool.push(linalg::symmetrized(&rk));
    }

    let mut d_pool = Vec::with_capacity(kk + 1);
    let mut d_lin_pool = Vec::with_capacity(kk + 1);
    for k in 0..=kk {
        let mut dk = DMatrix::zeros(s, s);
        let mut dl = DVector::zeros(s);
        for i in 0..d.players {
            let off = d.v_offset(i);
            dk.view_mut((off, 0), (d.s[i], s))
                .copy_from(&game.d[k][i].view((off, 0), (d.s[i], s)));
            dl.rows_mut(off, d.s[i])
                .copy_from(&game.d_lin[k][i].rows(off, d.s[i]));
        }
        let dev = linalg::sym_deviation(&dk);
        let scale = linalg::max_abs(&dk).max(f64::MIN_POSITIVE);
        if dev > 1e-10 * scale {
            return Err(CoreError::InvalidData(format!(
                "pooled D asymmetric at k={k} (deviation {dev:.3e})"
            )));
        }
        d_pool.push(linalg::symmetrized(&dk));
        d_lin_pool.push(dl);
    }

    Ok(OcpData {
        q: game.q.iter().map(|qs| qs[0].clone()).collect(),
        p: game.p.iter().map(|ps| ps[0].clone()).collect(),
        r: r_pool,
        d: d_pool,
        d_lin: d_lin_pool,
        l: game.l.iter().map(|ls| ls[0].clone()).collect(),
    })
}

/// Stagewise potential P_k(x, u, v); pass `u = None` at the terminal stage.
pub fn potential_value(
    ocp: &OcpData,
    k: usize,
    x: &DVector<f64>,
    u: Option<&DVector<f64>>,
    v: &DVector<f64>,
) -> Result<f64, CoreError> {
    let kk = ocp.q.len() - 1;
    if k > kk {
        return Err(CoreError::StageOutOfRange { k, max: kk });
    }
    let mut val = 0.5 * (x.transpose() * &ocp.q[k] * x)[(0, 0)] + ocp.p[k].dot(x);
    match u {
        Some(u) if k < kk => val += 0.5 * (u.transpose() * &ocp.r[k] * u)[(0, 0)],
        Some(_) => {
            return Err(CoreError::InvalidData(
                "u supplied at the terminal stage".to_string(),
            ))
        }
        None if k < kk => {
            return Err(CoreError::InvalidData(format!(
                "u required at stage k={k} < K"
            )))
        }
        None => {}
    }
    val += 0.5 * (v.transpose() * &ocp.d[k] * v)[(0, 0)]
        + ocp.d_lin[k].dot(v)
        + (x.transpose() * &ocp.l[k] * v)[(0, 0)];
    Ok(val)
}

/// Total potential along a trajectory: sum of P_k over all stages.
pub fn total_potential(
    ocp: &OcpData,
    x: &[DVector<f64>],
    u: &[DVector<f64>],
    v: &[DVector<f64>],
) -> Result<f64, CoreError> {
    let kk = ocp.q.len() - 1;
    if x.len() != kk + 1 || u.len() != kk || v.len() != kk + 1 {
        return Err(CoreError::DimensionMismatch(format!(
            "trajectory lengths (x {}, u {}, v {}) do not match horizon {}",
            x.len(),
            u.len(),
            v.len(),
            kk
        )));
    }
    let mut total = 0.0;
    for k in 0..kk {
        total += potential_value(ocp, k, &x[k], Some(&u[k]), &v[k])?;
    }
    total += potential_value(ocp, kk, &x[kk], None, &v[kk])?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{simulate, Dims};
    use crate::random::{random_potential_game, random_vector, GameCaps};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two players, scalar controls, K=1; R data from the worked example.
    fn pair_game() -> LqGame {
        let dims = Dims {
            n: 1,
            players: 2,
            horizon: 1,
            m: vec![1, 1],
            s: vec![1, 1],
            l: 1,
        };
        let q = DMatrix::from_element(1, 1, 1.0);
        let r1 = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let r2 = DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 4.0]);
        let dmat = DMatrix::identity(2, 2);
        LqGame {
            dims,
            a: vec![DMatrix::from_element(1, 1, 1.0)],
            b: vec![vec![DMatrix::from_element(1, 1, 1.0); 2]],
            q: vec![vec![q.clone(); 2], vec![q.clone(); 2]],
            p: vec![vec![DVector::zeros(1); 2], vec![DVector::zeros(1); 2]],
            r: vec![vec![r1, r2]],
            d: vec![vec![dmat.clone(); 2], vec![dmat.clone(); 2]],
            d_lin: vec![vec![DVector::zeros(2); 2], vec![DVector::zeros(2); 2]],
            l: vec![vec![DMatrix::zeros(1, 2); 2], vec![DMatrix::zeros(1, 2); 2]],
            m_con: vec![DMatrix::zeros(1, 1); 2],
            n_con: vec![DMatrix::zeros(1, 2); 2],
            r_con: vec![DVector::from_element(1, 1.0); 2],
            x0: DVector::from_element(1, 1.0),
        }
    }

    #[test]
    fn worked_example_is_potential_and_pools() {
        let g = pair_game();
        let rep = check_conditions(&g, DEFAULT_CONDITION_TOL);
        assert!(rep.is_potential, "violations: {:?}", rep.violations);
        let ocp = build_ocp(&g).unwrap();
        // Row 1 from R^1, row 2 from R^2.
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 4.0]);
        assert_eq!(ocp.r[0], want);
    }

    #[test]
    fn cross_block_mismatch_reported() {
        let mut g = pair_game();
        g.r[0][0][(0, 1)] = 2.0;
        g.r[0][0][(1, 0)] = 2.0;
        let rep = check_conditions(&g, DEFAULT_CONDITION_TOL);
        assert!(!rep.is_potential);
        let v = &rep.violations[0];
        assert_eq!(v.condition, PotentialCondition::RBlock);
        assert_eq!(v.stage, 0);
        assert_eq!(v.players, (1, 2));
        assert!((v.deviation - 1.0).abs() < 1e-15);
        assert!(build_ocp(&g).is_err());
    }

    #[test]
    fn potential_value_scalar_example() {
        let ocp = OcpData {
            q: vec![DMatrix::from_element(1, 1, 2.0); 2],
            p: vec![DVector::from_element(1, 1.0); 2],
            r: vec![DMatrix::from_element(1, 1, 1.0)],
            d: vec![DMatrix::from_element(1, 1, 1.0); 2],
            d_lin: vec![DVector::from_element(1, 1.0); 2],
            l: vec![DMatrix::from_element(1, 1, 1.0); 2],
        };
        let one = DVector::from_element(1, 1.0);
        // 1/2*2 + 1 + 1/2 + 1/2 + 1 + 1 = 5
        let val = potential_value(&ocp, 0, &one, Some(&one), &one).unwrap();
        assert!((val - 5.0).abs() < 1e-15);
        // Terminal stage drops the control term.
        let val_t = potential_value(&ocp, 1, &one, None, &one).unwrap();
        assert!((val_t - 4.5).abs() < 1e-15);
        assert!(potential_value(&ocp, 2, &one, None, &one).is_err());
        assert!(potential_value(&ocp, 1, &one, Some(&one), &one).is_err());
    }

    // Unilateral deviations must change J^i and the summed potential equally.
    #[test]
    fn unilateral_deviation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..60 {
            let g = random_potential_game(&mut rng, &GameCaps::default());
            let ocp = build_ocp(&g).unwrap();
            let d = &g.dims;
            let kk = d.horizon;
            let u: Vec<DVector<f64>> =
                (0..kk).map(|_| random_vector(&mut rng, d.m_total(), 1.0)).collect();
            let v: Vec<DVector<f64>> =
                (0..=kk).map(|_| random_vector(&mut rng, d.s_total(), 1.0)).collect();
            let base = simulate(&g, &u, &v).unwrap();
            let pot_base = total_potential(&ocp, &base.x, &u, &v).unwrap();

            for i in 0..d.players {
                let mut u2 = u.clone();
                let mut v2 = v.clone();
                for k in 0..kk {
                    let delta = random_vector(&mut rng, d.m[i], 1.0);
                    u2[k].rows_mut(d.u_offset(i), d.m[i]).add_assign(&delta);
                }
                for k in 0..=kk {
                    let delta = random_vector(&mut rng, d.s[i], 1.0);
                    v2[k].rows_mut(d.v_offset(i), d.s[i]).add_assign(&delta);
                }
                let dev = simulate(&g, &u2, &v2).unwrap();
                let pot_dev = total_potential(&ocp, &dev.x, &u2, &v2).unwrap();
                let dj = dev.costs[i] - base.costs[i];
                let dp = pot_dev - pot_base;
                assert!(
                    (dj - dp).abs() <= 1e-9 * (1.0 + dj.abs()),
                    "trial {trial}, player {}: dJ={dj} dP={dp}",
                    i + 1
                );
            }
        }
    }

    use std::ops::AddAssign;
}
