//! Seeded random instance generators. Used by the property tests and by the
//! derivative-free spot checks in `verify`; all randomness flows through the
//! caller-supplied generator so runs stay reproducible.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::game::{Dims, LqGame};
use crate::lcp::LcpProblem;

/// Upper bounds for randomly drawn game dimensions (each drawn from 1..=cap).
#[derive(Debug, Clone)]
pub struct GameCaps {
    pub n: usize,
    pub players: usize,
    pub horizon: usize,
    pub m: usize,
    pub s: usize,
    pub l: usize,
}

impl Default for GameCaps {
    fn default() -> Self {
        GameCaps {
            n: 4,
            players: 3,
            horizon: 6,
            m: 4,
            s: 4,
            l: 4,
        }
    }
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Random symmetric matrix with entries O(scale).
pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n, scale);
    (&g + g.transpose()) * 0.5
}

/// Random symmetric positive definite matrix, eigenvalues bounded away from 0.
pub fn random_pd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n, 1.0);
    g.transpose() * &g / (n as f64) + DMatrix::identity(n, n) * rng.random_range(0.3..1.0)
}

/// Random symmetric positive semidefinite matrix.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n, 1.0);
    g.transpose() * &g / (n as f64)
}

fn draw_dims<R: Rng>(rng: &mut R, caps: &GameCaps) -> Dims {
    let players = rng.random_range(1..=caps.players);
    Dims {
        n: rng.random_range(1..=caps.n),
        players,
        horizon: rng.random_range(1..=caps.horizon),
        m: (0..players).map(|_| rng.random_range(1..=caps.m)).collect(),
        s: (0..players).map(|_| rng.random_range(1..=caps.s)).collect(),
        l: rng.random_range(1..=caps.l),
    }
}

/// Symmetric perturbation supported on the indices outside `lo..lo+len`, so
/// the pooled rows and every cross block touching the owner stay untouched.
fn offblock_noise<R: Rng>(rng: &mut R, n: usize, lo: usize, len: usize, scale: f64) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    for a in 0..n {
        if a >= lo && a < lo + len {
            continue;
        }
        for b in a..n {
            if b >= lo && b < lo + len {
                continue;
            }
            let x = rng.random_range(-scale..scale);
            p[(a, b)] = x;
            p[(b, a)] = x;
        }
    }
    p
}

/// Random game satisfying the exact potential conditions: shared Q/p/L, and
/// per-player R^i/D^i that agree with a pooled symmetric matrix on the owner's
/// rows and columns while carrying arbitrary symmetric junk elsewhere. The
/// junk exercises the fact that only the pooled blocks matter.
pub fn random_potential_game<R: Rng>(rng: &mut R, caps: &GameCaps) -> LqGame {
    let dims = draw_dims(rng, caps);
    let kk = dims.horizon;
    let (n, m, s) = (dims.n, dims.m_total(), dims.s_total());

    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut r = Vec::new();
    for _ in 0..kk {
        a.push(random_matrix(rng, n, n, 0.8));
        b.push((0..dims.players).map(|i| random_matrix(rng, n, dims.m[i], 0.8)).collect());
        let pool = random_pd(rng, m);
        r.push(
            (0..dims.players)
                .map(|i| &pool + offblock_noise(rng, m, dims.u_offset(i), dims.m[i], 0.5))
                .collect(),
        );
    }

    let mut q = Vec::new();
    let mut p = Vec::new();
    let mut d = Vec::new();
    let mut d_lin = Vec::new();
    let mut l = Vec::new();
    let mut m_con = Vec::new();
    let mut n_con = Vec::new();
    let mut r_con = Vec::new();
    for _ in 0..=kk {
        let q_pool = random_psd(rng, n);
        q.push(vec![q_pool; dims.players]);
        let p_pool = random_vector(rng, n, 1.0);
        p.push(vec![p_pool; dims.players]);
        let d_pool = random_pd(rng, s);
        d.push(
            (0..dims.players)
                .map(|i| &d_pool + offblock_noise(rng, s, dims.v_offset(i), dims.s[i], 0.5))
                .collect(),
        );
        // Only the owner's subvector of d^i is pooled; the rest is free.
        let dl_pool = random_vector(rng, s, 1.0);
        d_lin.push(
            (0..dims.players)
                .map(|i| {
                    let mut v = random_vector(rng, s, 1.0);
                    v.rows_mut(dims.v_offset(i), dims.s[i])
                        .copy_from(&dl_pool.rows(dims.v_offset(i), dims.s[i]));
                    v
                })
                .collect(),
        );
        let l_pool = random_matrix(rng, n, s, 0.8);
        l.push(vec![l_pool; dims.players]);
        m_con.push(random_matrix(rng, dims.l, n, 1.0));
        n_con.push(random_matrix(rng, dims.l, s, 1.0));
        r_con.push(random_vector(rng, dims.l, 1.0));
    }

    LqGame {
        x0: random_vector(rng, n, 1.0),
        dims,
        a,
        b,
        q,
        p,
        r,
        d,
        d_lin,
        l,
        m_con,
        n_con,
        r_con,
    }
}

/// Potential game whose constraints are inert: M = 0, N = 0, r = 1 keeps every
/// stage feasible with mu* = 0, and D positive definite with d = 0, L = 0
/// forces v* = 0. The pooled problem then reduces to an unconstrained affine
/// LQ optimal control problem.
pub fn random_unconstrained_game<R: Rng>(rng: &mut R, caps: &GameCaps) -> LqGame {
    let mut g = random_potential_game(rng, caps);
    let d = g.dims.clone();
    for k in 0..=d.horizon {
        g.m_con[k] = DMatrix::zeros(d.l, d.n);
        g.n_con[k] = DMatrix::zeros(d.l, d.s_total());
        g.r_con[k] = DVector::from_element(d.l, 1.0);
        for i in 0..d.players {
            g.l[k][i] = DMatrix::zeros(d.n, d.s_total());
            g.d_lin[k][i] = DVector::zeros(d.s_total());
        }
    }
    g
}

/// LCP with symmetric positive definite matrix, so the solution is unique.
pub fn random_pd_lcp<R: Rng>(rng: &mut R, d: usize) -> LcpProblem {
    LcpProblem {
        m: random_pd(rng, d),
        q: random_vector(rng, d, 1.0),
        labels: None,
    }
}
