//! End-to-end solve: validate, check the potential conditions, pool the
//! single optimal control problem, run the backward sweep, solve the stage
//! complementarity problems, recover the trajectory, then attach the
//! certificate battery (KKT residuals, condensed Hessian definiteness,
//! per-player best responses).
//!
//! Hard structural failures (invalid data, missing potential structure,
//! singular backward factors, unsolved LCP) surface as errors. Certificate
//! failures do not: the output carries the evidence and `certified` is false.

use serde::Serialize;

use nalgebra::DVector;

use crate::error::CoreError;
use crate::game::{simulate, EquilibriumTrajectory, LqGame, ValidationReport};
use crate::lcp::{self, LcpLabel, LcpStatus};
use crate::linalg::Definiteness;
use crate::potential::{self, build_ocp, check_conditions, total_potential, OcpData, PotentialReport};
use crate::tpbvp;
use crate::verify::{self, BestResponseReport, KktReport};

#[derive(Debug, Clone, Serialize)]
pub struct SolveOptions {
    /// Relative tolerance for the potential condition check.
    pub potential_tol: f64,
    /// Complementarity tolerance passed to the LCP solver.
    pub lcp_tol: f64,
    /// Pivot budget; None picks a dimension-based default.
    pub max_pivots: Option<usize>,
    /// KKT residuals must stay below this times the problem scale.
    pub kkt_tol: f64,
    /// Best-response gaps may undershoot zero by this much (scaled by cost
    /// magnitude) before the certificate fails.
    pub br_gap_tol: f64,
    /// Random feasible perturbations per player in the best-response check.
    pub br_trials: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            potential_tol: potential::DEFAULT_CONDITION_TOL,
            lcp_tol: lcp::LCP_TOL,
            max_pivots: None,
            kkt_tol: 1e-7,
            br_gap_tol: 1e-6,
            br_trials: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub validation: ValidationReport,
    pub potential: PotentialReport,
    pub trajectory: EquilibriumTrajectory,
    /// Per-player costs along the trajectory.
    pub costs: Vec<f64>,
    /// Pooled objective value at the trajectory.
    pub potential_total: f64,
    pub lcp_status: LcpStatus,
    pub lcp_pivots: usize,
    pub lcp_dim: usize,
    /// Solution of the aggregated complementarity system over stages 1..K,
    /// with w = Mz + q and one label per index. Stage 0 lives in the
    /// trajectory's v[0] and mu[0].
    pub lcp_z: DVector<f64>,
    pub lcp_w: DVector<f64>,
    pub lcp_labels: Vec<LcpLabel>,
    pub kkt: KktReport,
    pub kkt_pass: bool,
    pub feasible: bool,
    pub min_margin: f64,
    pub sufficiency_complete: bool,
    pub hessian_pd: bool,
    pub hessian_min_pivot: f64,
    pub hessian_definiteness: Definiteness,
    pub best_response: Vec<BestResponseReport>,
    pub br_pass: bool,
    /// All certificates green: KKT, feasibility, Hessian, best responses.
    pub certified: bool,
}

/// Certificates for an externally supplied trajectory, for example one read
/// back from disk. Same battery as `solve_game`, minus the solve itself.
#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub validation: ValidationReport,
    pub potential: PotentialReport,
    pub costs: Vec<f64>,
    pub potential_total: f64,
    pub kkt: KktReport,
    pub kkt_pass: bool,
    pub feasible: bool,
    pub min_margin: f64,
    pub sufficiency_complete: bool,
    pub hessian_pd: bool,
    pub hessian_min_pivot: f64,
    pub hessian_definiteness: Definiteness,
    pub best_response: Vec<BestResponseReport>,
    pub br_pass: bool,
    pub certified: bool,
}

struct CertBundle {
    costs: Vec<f64>,
    potential_total: f64,
    kkt: KktReport,
    kkt_pass: bool,
    feasible: bool,
    min_margin: f64,
    sufficiency_complete: bool,
    hessian_pd: bool,
    hessian_min_pivot: f64,
    hessian_definiteness: Definiteness,
    best_response: Vec<BestResponseReport>,
    br_pass: bool,
    certified: bool,
}

/// Certificate battery on a symmetrized game. Dimension mismatches between
/// the trajectory and the game surface as errors from the residual checks.
fn certify(
    game: &LqGame,
    ocp: &OcpData,
    trajectory: &EquilibriumTrajectory,
    opts: &SolveOptions,
) -> Result<CertBundle, CoreError> {
    let sim = simulate(game, &trajectory.u, &trajectory.v)?;
    let costs = sim.costs.clone();
    let min_margin = sim.margins.iter().cloned().fold(f64::INFINITY, f64::min);
    let feasible = sim.feasible.iter().all(|&f| f);
    let potential_total = total_potential(ocp, &trajectory.x, &trajectory.u, &trajectory.v)?;

    let kkt = verify::kkt_residuals(ocp, game, trajectory)?;
    let kkt_pass = kkt.passes(opts.kkt_tol);

    let suff = verify::sufficiency_pass(ocp, game, &trajectory.v, &trajectory.mu)?;
    let (hessian_pd, hessian_min_pivot, hessian_definiteness) = if suff.complete {
        let h = verify::build_hessian(ocp, game, &suff)?;
        (h.pd, h.min_pivot, h.definiteness)
    } else {
        (false, f64::NAN, Definiteness::Indefinite)
    };

    let mut best_response = Vec::with_capacity(game.dims.players);
    let mut br_pass = true;
    for i in 0..game.dims.players {
        let rep = verify::best_response_check(game, trajectory, i, opts.br_trials, opts.seed)?;
        let allowance = opts.br_gap_tol * (1.0 + rep.traj_cost.abs());
        br_pass &= rep.gap >= -allowance && rep.sampled_gap >= -allowance;
        best_response.push(rep);
    }

    let certified = kkt_pass && feasible && hessian_pd && br_pass;
    Ok(CertBundle {
        costs,
        potential_total,
        kkt,
        kkt_pass,
        feasible,
        min_margin,
        sufficiency_complete: suff.complete,
        hessian_pd,
        hessian_min_pivot,
        hessian_definiteness,
        best_response,
        br_pass,
        certified,
    })
}

fn validate_and_pool(
    game: &LqGame,
    opts: &SolveOptions,
) -> Result<(ValidationReport, PotentialReport, LqGame, OcpData), CoreError> {
    let validation = game.validate();
    if !validation.is_valid() {
        return Err(CoreError::InvalidData(validation.errors.join("; ")));
    }
    let game = game.clone().symmetrized();
    let potential_report = check_conditions(&game, opts.potential_tol);
    if !potential_report.is_potential {
        return Err(CoreError::NotPotential {
            violations: potential_report.violations.len(),
            worst: potential_report.worst_deviation,
        });
    }
    let ocp = build_ocp(&game)?;
    Ok((validation, potential_report, game, ocp))
}

pub fn solve_game(game: &LqGame, opts: &SolveOptions) -> Result<PipelineOutput, CoreError> {
    let (validation, potential_report, game, ocp) = validate_and_pool(game, opts)?;

    let pass = tpbvp::backward_pass(&ocp, &game)?;
    let maps = tpbvp::assemble_affine_maps(&pass, &ocp, &game);
    let blocks = lcp::assemble_stage_blocks(&ocp, &game);
    let problem = lcp::assemble_lcp(&blocks, &maps, &ocp, &game);
    let lcp_dim = problem.q.len();
    let budget = opts.max_pivots.unwrap_or_else(|| lcp::default_max_pivots(lcp_dim));
    let sol = lcp::lemke_solve(&problem, budget, opts.lcp_tol);
    if !sol.solved() {
        return Err(CoreError::LcpFailed {
            status: sol.status,
            diagnostic: sol.diagnostic.clone(),
        });
    }
    let (v0, mu0) = lcp::solve_stage0(&ocp, &game, &game.x0)?;
    let trajectory = tpbvp::recover_trajectory(&pass, &ocp, &game, &sol.z, &v0, &mu0)?;

    let c = certify(&game, &ocp, &trajectory, opts)?;
    Ok(PipelineOutput {
        validation,
        potential: potential_report,
        trajectory,
        costs: c.costs,
        potential_total: c.potential_total,
        lcp_status: sol.status,
        lcp_pivots: sol.pivots,
        lcp_dim,
        lcp_z: sol.z,
        lcp_w: sol.w,
        lcp_labels: problem.labels.unwrap_or_default(),
        kkt: c.kkt,
        kkt_pass: c.kkt_pass,
        feasible: c.feasible,
        min_margin: c.min_margin,
        sufficiency_complete: c.sufficiency_complete,
        hessian_pd: c.hessian_pd,
        hessian_min_pivot: c.hessian_min_pivot,
        hessian_definiteness: c.hessian_definiteness,
        best_response: c.best_response,
        br_pass: c.br_pass,
        certified: c.certified,
    })
}

pub fn verify_trajectory(
    game: &LqGame,
    trajectory: &EquilibriumTrajectory,
    opts: &SolveOptions,
) -> Result<VerifyOutput, CoreError> {
    let (validation, potential_report, game, ocp) = validate_and_pool(game, opts)?;
    let c = certify(&game, &ocp, trajectory, opts)?;
    Ok(VerifyOutput {
        validation,
        potential: potential_report,
        costs: c.costs,
        potential_total: c.potential_total,
        kkt: c.kkt,
        kkt_pass: c.kkt_pass,
        feasible: c.feasible,
        min_margin: c.min_margin,
        sufficiency_complete: c.sufficiency_complete,
        hessian_pd: c.hessian_pd,
        hessian_min_pivot: c.hessian_min_pivot,
        hessian_definiteness: c.hessian_definiteness,
        best_response: c.best_response,
        br_pass: c.br_pass,
        certified: c.certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Dims;
    use crate::random::{random_potential_game, GameCaps};
    use crate::smartgrid;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_unconstrained() -> LqGame {
        let dims = Dims {
            n: 1,
            players: 1,
            horizon: 1,
            m: vec![1],
            s: vec![1],
            l: 1,
        };
        let one = DMatrix::from_element(1, 1, 1.0);
        LqGame {
            dims,
            a: vec![one.clone()],
            b: vec![vec![one.clone()]],
            q: vec![vec![one.clone()], vec![one.clone()]],
            p: vec![vec![DVector::zeros(1)], vec![DVector::zeros(1)]],
            r: vec![vec![one.clone()]],
            d: vec![vec![one.clone()], vec![one.clone()]],
            d_lin: vec![vec![DVector::zeros(1)], vec![DVector::zeros(1)]],
            l: vec![vec![DMatrix::zeros(1, 1)], vec![DMatrix::zeros(1, 1)]],
            m_con: vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
            n_con: vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
            r_con: vec![DVector::from_element(1, 1.0), DVector::from_element(1, 1.0)],
            x0: DVector::from_element(1, 1.0),
        }
    }

    #[test]
    fn scalar_solution_is_certified() {
        let out = solve_game(&scalar_unconstrained(), &SolveOptions::default()).unwrap();
        assert!((out.trajectory.u[0][0] + 0.5).abs() < 1e-12);
        assert!((out.trajectory.x[1][0] - 0.5).abs() < 1e-12);
        assert_eq!(out.trajectory.v[0], DVector::zeros(1));
        assert_eq!(out.trajectory.v[1], DVector::zeros(1));
        assert!(out.kkt_pass, "kkt {:?}", out.kkt);
        assert!(out.hessian_pd);
        assert!(out.feasible);
        assert!(out.br_pass, "{:?}", out.best_response);
        assert!(out.certified);
        // J = (1 + 1/4 + 1/4) / 2.
        assert!((out.costs[0] - 0.75).abs() < 1e-12);
        assert!((out.potential_total - 0.75).abs() < 1e-12);
    }

    // Capacity-style bound: v wants to reach 1 (d_lin = -1, D = I) but the
    // constraint 0.5 - v >= 0 caps it, leaving mu = 0.5 at every stage.
    #[test]
    fn binding_constraint_multipliers() {
        let mut g = scalar_unconstrained();
        for k in 0..=1 {
            g.d_lin[k][0] = DVector::from_element(1, -1.0);
            g.n_con[k] = DMatrix::from_element(1, 1, -1.0);
            g.r_con[k] = DVector::from_element(1, 0.5);
        }
        let out = solve_game(&g, &SolveOptions::default()).unwrap();
        for k in 0..=1 {
            assert!((out.trajectory.v[k][0] - 0.5).abs() < 1e-10, "stage {k}");
            assert!((out.trajectory.mu[k][0] - 0.5).abs() < 1e-10, "stage {k}");
        }
        assert!(out.certified, "kkt {:?} br {:?}", out.kkt, out.best_response);
        // The x-side is unchanged: no L coupling, so u stays the scalar LQR.
        assert!((out.trajectory.u[0][0] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn random_potential_games_solve_and_certify() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let caps = GameCaps {
            n: 3,
            players: 3,
            horizon: 4,
            m: 2,
            s: 2,
            l: 2,
        };
        let mut solved = 0;
        let mut certified = 0;
        for round in 0..30 {
            let mut g = random_potential_game(&mut rng, &caps);
            let d = g.dims.clone();
            // Keep every stage feasible: nonnegative constraint gains plus a
            // generous offset mean v = 0 is feasible and stays so.
            for k in 0..=d.horizon {
                g.m_con[k] *= 0.3;
                g.n_con[k] = g.n_con[k].map(|x| x.abs());
                g.r_con[k] = g.r_con[k].map(|x| x.abs() + 2.0);
                for i in 0..d.players {
                    g.l[k][i] *= 0.25;
                }
            }
            match solve_game(&g, &SolveOptions::default()) {
                Ok(out) => {
                    solved += 1;
                    assert!(out.kkt_pass, "round {round}: kkt {:?}", out.kkt);
                    assert!(out.feasible, "round {round}");
                    if out.hessian_pd {
                        certified += 1;
                        assert!(out.br_pass, "round {round}: {:?}", out.best_response);
                        assert!(out.certified);
                    }
                }
                Err(CoreError::LcpFailed { .. }) => {}
                Err(e) => panic!("round {round}: unexpected failure {e}"),
            }
        }
        assert!(solved >= 20, "only {solved} of 30 solved");
        assert!(certified >= 15, "only {certified} of 30 certified");
    }

    #[test]
    fn smartgrid_default_certifies() {
        let g = smartgrid::to_nzdg(&smartgrid::default_scenario()).unwrap();
        let out = solve_game(&g, &SolveOptions::default()).unwrap();
        assert_eq!(out.lcp_status, LcpStatus::Solved);
        assert_eq!(out.lcp_dim, 60);
        assert!(out.feasible, "min margin {}", out.min_margin);
        assert!(out.kkt_pass, "kkt {:?}", out.kkt);
        assert!(out.hessian_pd);
        assert!(out.br_pass, "{:?}", out.best_response);
        assert!(out.certified);
        // Batteries stay within their capacities.
        for k in 0..=12 {
            let v = &out.trajectory.v[k];
            assert!(v[0] <= 11.2 + 1e-9 && v[1] <= 12.2 + 1e-9, "stage {k}");
        }
    }

    #[test]
    fn verify_matches_solve_certificates() {
        let g = smartgrid::to_nzdg(&smartgrid::default_scenario()).unwrap();
        let out = solve_game(&g, &SolveOptions::default()).unwrap();
        let ver = verify_trajectory(&g, &out.trajectory, &SolveOptions::default()).unwrap();
        assert!(ver.certified);
        assert_eq!(ver.kkt.max_residual(), out.kkt.max_residual());
        assert_eq!(ver.costs, out.costs);
        assert_eq!(ver.min_margin, out.min_margin);
    }

    #[test]
    fn deterministic_across_runs() {
        let g = smartgrid::to_nzdg(&smartgrid::default_scenario()).unwrap();
        let a = solve_game(&g, &SolveOptions::default()).unwrap();
        let b = solve_game(&g, &SolveOptions::default()).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.lcp_pivots, b.lcp_pivots);
        assert_eq!(a.costs, b.costs);
    }
}
