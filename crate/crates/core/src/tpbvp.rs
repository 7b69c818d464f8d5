//! Reduction of the pooled problem's two-point boundary value system to affine
//! maps in the constraint variables.
//!
//! With S_k = B_k R_k^-1 B_k' and H_K = Q_K the backward factors are
//!
//!   Gamma_k = I + S_k H_{k+1},
//!   H_k = Q_k + A_k' H_{k+1} Gamma_k^-1 A_k,
//!
//! and the costate offset obeys beta_K = p_K + L_K v_K - M_K' mu_K,
//!
//!   beta_k = p_k + L_k v_k - M_k' mu_k + G_{k+1} beta_{k+1},
//!   G_{k+1} = A_k' - A_k' H_{k+1} Gamma_k^-1 S_k.
//!
//! Unrolling beta and the closed-loop dynamics x_{k+1} = Abar_k x_k +
//! Bbar_k beta_{k+1} (Abar = Gamma^-1 A, Bbar = -Gamma^-1 S) expresses the
//! stacked states x_1..x_K affinely in x_0, the cost offsets p_1..p_K, and the
//! stacked stage variables y = (v_k, mu_k)_{k=1..K}:
//!
//!   x_stack = Phi0 x_0 + Phi1 p_stack + Phi2 y,
//!
//! with transition products psi(k,tau) = G_{k+1} ... G_tau and
//! phi(rho,k) = Abar_{k-1} ... Abar_rho.

use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::CoreError;
use crate::game::{EquilibriumTrajectory, LqGame};
use crate::linalg;
use crate::potential::OcpData;

/// Minimum acceptable reciprocal condition estimate for each Gamma factor.
pub const GAMMA_RCOND_MIN: f64 = 1e-12;

/// Backward factor sequences. Index k holds the stage-k quantity except for
/// `g`, where `g[k]` is G_{k+1} (defined for k = 0..K-1).
pub struct BackwardPass {
    /// H_k, k = 0..K.
    pub h: Vec<DMatrix<f64>>,
    /// Gamma_k = I + S_k H_{k+1}, k = 0..K-1.
    pub gamma: Vec<DMatrix<f64>>,
    /// S_k = B_k R_k^-1 B_k', k = 0..K-1.
    pub s: Vec<DMatrix<f64>>,
    /// Abar_k = Gamma_k^-1 A_k.
    pub abar: Vec<DMatrix<f64>>,
    /// Bbar_k = -Gamma_k^-1 S_k.
    pub bbar: Vec<DMatrix<f64>>,
    /// g[k] = G_{k+1}.
    pub g: Vec<DMatrix<f64>>,
    b_joint: Vec<DMatrix<f64>>,
    r_chol: Vec<nalgebra::linalg::Cholesky<f64, Dyn>>,
}

impl BackwardPass {
    pub fn horizon(&self) -> usize {
        self.gamma.len()
    }

    /// Stacked control matrix [B_k^1 ... B_k^N].
    pub fn b_joint(&self, k: usize) -> &DMatrix<f64> {
        &self.b_joint[k]
    }

    /// R_k^-1 rhs via the stored Cholesky factor.
    pub fn solve_r(&self, k: usize, rhs: &DVector<f64>) -> DVector<f64> {
        self.r_chol[k].solve(rhs)
    }
}

/// Run the backward recursions. Fails if some pooled R_k is not positive
/// definite or a Gamma factor is numerically singular.
pub fn backward_pass(ocp: &OcpData, game: &LqGame) -> Result<BackwardPass, CoreError> {
    let kk = game.dims.horizon;
    let n = game.dims.n;

    let mut b_joint = Vec::with_capacity(kk);
    let mut r_chol = Vec::with_capacity(kk);
    let mut s = Vec::with_capacity(kk);
    for k in 0..kk {
        let bj = game.b_joint(k);
        let chol = nalgebra::linalg::Cholesky::new(ocp.r[k].clone()).ok_or_else(|| {
            CoreError::NotPositiveDefinite {
                what: "pooled R".to_string(),
                place: format!("k={k}"),
            }
        })?;
        let sk = &bj * chol.solve(&bj.transpose());
        s.push(linalg::symmetrized(&sk));
        b_joint.push(bj);
        r_chol.push(chol);
    }

    let mut h = vec![DMatrix::zeros(0, 0); kk + 1];
    let mut gamma = vec![DMatrix::zeros(0, 0); kk];
    let mut abar = vec![DMatrix::zeros(0, 0); kk];
    let mut bbar = vec![DMatrix::zeros(0, 0); kk];
    let mut g = vec![DMatrix::zeros(0, 0); kk];
    h[kk] = ocp.q[kk].clone();
    for k in (0..kk).rev() {
        let gam = DMatrix::identity(n, n) + &s[k] * &h[k + 1];
        let lu = gam.clone().lu();
        let rcond = linalg::lu_rcond(&lu);
        if rcond < GAMMA_RCOND_MIN {
            return Err(CoreError::SingularGamma { stage: k, rcond });
        }
        let ab = lu.solve(&game.a[k]).ok_or(CoreError::SingularGamma { stage: k, rcond })?;
        let gis = lu.solve(&s[k]).ok_or(CoreError::SingularGamma { stage: k, rcond })?;
        // H_k = Q_k + A' H_{k+1} Gamma^-1 A; symmetrize to stop drift.
        let hk = &ocp.q[k] + game.a[k].transpose() * &h[k + 1] * &ab;
        h[k] = linalg::symmetrized(&hk);
        g[k] = game.a[k].transpose() - game.a[k].transpose() * &h[k + 1] * &gis;
        abar[k] = ab;
        bbar[k] = -gis;
        gamma[k] = gam;
    }

    Ok(BackwardPass {
        h,
        gamma,
        s,
        abar,
        bbar,
        g,
        b_joint,
        r_chol,
    })
}

/// psi(k, tau) = G_{k+1} ... G_tau for tau > k, identity for tau = k.
pub fn psi(pass: &BackwardPass, k: usize, tau: usize) -> Result<DMatrix<f64>, CoreError> {
    let kk = pass.horizon();
    if tau < k || tau > kk {
        return Err(CoreError::StageOutOfRange { k: tau, max: kk });
    }
    let n = pass.h[0].nrows();
    let mut out = DMatrix::identity(n, n);
    for j in k..tau {
        out *= &pass.g[j];
    }
    Ok(out)
}

/// phi(rho, k) = Abar_{k-1} ... Abar_rho for rho < k, identity for rho = k.
pub fn phi(pass: &BackwardPass, rho: usize, k: usize) -> Result<DMatrix<f64>, CoreError> {
    let kk = pass.horizon();
    if k < rho || k > kk {
        return Err(CoreError::StageOutOfRange { k, max: kk });
    }
    let n = pass.h[0].nrows();
    let mut out = DMatrix::identity(n, n);
    for j in rho..k {
        out = &pass.abar[j] * out;
    }
    Ok(out)
}

/// Stacked affine maps from (x_0, p_1..p_K, y) to the states x_1..x_K.
pub struct AffineMaps {
    /// K n x n.
    pub phi0: DMatrix<f64>,
    /// K n x K n.
    pub phi1: DMatrix<f64>,
    /// K n x K (s + l).
    pub phi2: DMatrix<f64>,
}

pub fn assemble_affine_maps(pass: &BackwardPass, ocp: &OcpData, game: &LqGame) -> AffineMaps {
    let kk = pass.horizon();
    let n = game.dims.n;
    let s = game.dims.s_total();
    let lc = game.dims.l;
    let y_blk = s + lc;

    // phi(rho, k) for 0 <= rho <= k <= K and psi(rho, tau) for rho <= tau <= K.
    let mut phis = vec![vec![DMatrix::identity(n, n); kk + 1]; kk + 1];
    for rho in 0..=kk {
        for k in (rho + 1)..=kk {
            phis[rho][k] = &pass.abar[k - 1] * &phis[rho][k - 1];
        }
    }
    let mut psis = vec![vec![DMatrix::identity(n, n); kk + 1]; kk + 1];
    for rho in 0..=kk {
        for tau in (rho + 1)..=kk {
            psis[rho][tau] = &psis[rho][tau - 1] * &pass.g[tau - 1];
        }
    }

    let mut phi0 = DMatrix::zeros(kk * n, n);
    let mut phi1 = DMatrix::zeros(kk * n, kk * n);
    let mut phi2 = DMatrix::zeros(kk * n, kk * y_blk);
    for k in 1..=kk {
        linalg::set_block(&mut phi0, (k - 1) * n, 0, &phis[0][k]);
        for tau in 1..=kk {
            let mut blk = DMatrix::zeros(n, n);
            for rho in 1..=k.min(tau) {
                blk += &phis[rho][k] * &pass.bbar[rho - 1] * &psis[rho][tau];
            }
            linalg::set_block(&mut phi1, (k - 1) * n, (tau - 1) * n, &blk);
            // [L_tau  -M_tau'] maps the stage-tau (v, mu) pair into the
            // costate forcing.
            let mut lm = DMatrix::zeros(n, y_blk);
            linalg::set_block(&mut lm, 0, 0, &ocp.l[tau]);
            linalg::set_block(&mut lm, 0, s, &(-game.m_con[tau].transpose()));
            linalg::set_block(&mut phi2, (k - 1) * n, (tau - 1) * y_blk, &(&blk * lm));
        }
    }
    AffineMaps { phi0, phi1, phi2 }
}

/// Costate offsets beta_0..beta_K for given multiplier sequences.
pub struct BetaSequence {
    pub beta: Vec<DVector<f64>>,
}

pub fn beta_sequence(
    pass: &BackwardPass,
    ocp: &OcpData,
    game: &LqGame,
    v: &[DVector<f64>],
    mu: &[DVector<f64>],
) -> Result<BetaSequence, CoreError> {
    let kk = pass.horizon();
    if v.len() != kk + 1 || mu.len() != kk + 1 {
        return Err(CoreError::DimensionMismatch(format!(
            "beta_sequence needs {} stages of v and mu, got {} and {}",
            kk + 1,
            v.len(),
            mu.len()
        )));
    }
    let forcing = |k: usize| -> DVector<f64> {
        &ocp.p[k] + &ocp.l[k] * &v[k] - game.m_con[k].transpose() * &mu[k]
    };
    let mut beta = vec![DVector::zeros(0); kk + 1];
    beta[kk] = forcing(kk);
    for k in (0..kk).rev() {
        beta[k] = forcing(k) + &pass.g[k] * &beta[k + 1];
    }
    Ok(BetaSequence { beta })
}

/// Rebuild the full primal and dual trajectory from the stacked stage
/// solution y = (v_k, mu_k)_{k=1..K} plus the stage-0 pair:
///
///   x_{k+1} = Abar_k x_k + Bbar_k beta_{k+1},
///   u_k = -R_k^-1 B_k' (H_{k+1} x_{k+1} + beta_{k+1}),
///   lambda_k = H_k x_k + beta_k.
pub fn recover_trajectory(
    pass: &BackwardPass,
    ocp: &OcpData,
    game: &LqGame,
    y: &DVector<f64>,
    v0: &DVector<f64>,
    mu0: &DVector<f64>,
) -> Result<EquilibriumTrajectory, CoreError> {
    let kk = pass.horizon();
    let s = game.dims.s_total();
    let lc = game.dims.l;
    if y.len() != kk * (s + lc) {
        return Err(CoreError::DimensionMismatch(format!(
            "stacked y has length {}, expected {}",
            y.len(),
            kk * (s + lc)
        )));
    }
    if v0.len() != s || mu0.len() != lc {
        return Err(CoreError::DimensionMismatch(
            "stage-0 pair has wrong dimensions".to_string(),
        ));
    }

    let mut v = Vec::with_capacity(kk + 1);
    let mut mu = Vec::with_capacity(kk + 1);
    v.push(v0.clone());
    mu.push(mu0.clone());
    for k in 1..=kk {
        let off = (k - 1) * (s + lc);
        v.push(y.rows(off, s).into_owned());
        mu.push(y.rows(off + s, lc).into_owned());
    }

    let beta = beta_sequence(pass, ocp, game, &v, &mu)?.beta;
    let mut x = Vec::with_capacity(kk + 1);
    x.push(game.x0.clone());
    let mut u = Vec::with_capacity(kk);
    for k in 0..kk {
        let xn = &pass.abar[k] * &x[k] + &pass.bbar[k] * &beta[k + 1];
        let rhs = pass.b_joint(k).transpose() * (&pass.h[k + 1] * &xn + &beta[k + 1]);
        u.push(-pass.solve_r(k, &rhs));
        x.push(xn);
    }
    let lambda = (0..=kk).map(|k| &pass.h[k] * &x[k] + &beta[k]).collect();

    Ok(EquilibriumTrajectory { x, u, v, lambda, mu })
}
