//! Game data model.
//!
//! The LQ game has dynamics x_{k+1} = A_k x_k + sum_i B_k^i u_k^i over stages
//! k = 0..K-1 and per-player cost
//!
//!   J^i = 1/2 x_K' Q_K^i x_K + p_K^i' x_K
//!       + sum_{k<K} (1/2 x_k' Q_k^i x_k + p_k^i' x_k + 1/2 u_k' R_k^i u_k)
//!       + sum_{k<=K} (1/2 v_k' D_k^i v_k + d_k^i' v_k + x_k' L_k^i v_k)
//!
//! where u_k stacks all players' controls and v_k stacks the constrained
//! decision variables, subject to the shared constraints
//! M_k x_k + N_k v_k + r_k >= 0 and v_k >= 0 at every stage k = 0..K.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::CoreError;
use crate::linalg;

/// Dimension bundle for a game. Stages run 0..=K with controls u_k defined for
/// k < K and constrained variables v_k for k <= K.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims {
    /// State dimension n.
    pub n: usize,
    /// Number of players N.
    pub players: usize,
    /// Horizon K.
    pub horizon: usize,
    /// Control dimension m_i per player.
    pub m: Vec<usize>,
    /// Constrained-variable dimension s_i per player.
    pub s: Vec<usize>,
    /// Number of coupled constraint rows per stage.
    pub l: usize,
}

impl Dims {
    pub fn m_total(&self) -> usize {
        self.m.iter().sum()
    }

    pub fn s_total(&self) -> usize {
        self.s.iter().sum()
    }

    /// Offset of player i's block inside a stacked control vector.
    pub fn u_offset(&self, i: usize) -> usize {
        self.m[..i].iter().sum()
    }

    /// Offset of player i's block inside a stacked v vector.
    pub fn v_offset(&self, i: usize) -> usize {
        self.s[..i].iter().sum()
    }

    pub fn check(&self) -> Result<(), CoreError> {
        let mut problems = Vec::new();
        if self.n == 0 {
            problems.push("n must be >= 1".to_string());
        }
        if self.players == 0 {
            problems.push("player count must be >= 1".to_string());
        }
        if self.horizon == 0 {
            problems.push("horizon K must be >= 1".to_string());
        }
        if self.l == 0 {
            problems.push("constraint row count l must be >= 1".to_string());
        }
        if self.m.len() != self.players {
            problems.push(format!(
                "m has {} entries, expected one per player ({})",
                self.m.len(),
                self.players
            ));
        }
        if self.s.len() != self.players {
            problems.push(format!(
                "s has {} entries, expected one per player ({})",
                self.s.len(),
                self.players
            ));
        }
        for (i, &mi) in self.m.iter().enumerate() {
            if mi == 0 {
                problems.push(format!("m must be >= 1 for every player, got 0 at i={}", i + 1));
            }
        }
        for (i, &si) in self.s.iter().enumerate() {
            if si == 0 {
                problems.push(format!("s must be >= 1 for every player, got 0 at i={}", i + 1));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CoreError::InvalidData(problems.join("; ")))
        }
    }
}

/// Linear-quadratic constrained game data. Outer Vec index is the stage k,
/// inner Vec (where present) the player i. Cost matrices Q, R, D are expected
/// symmetric; `validate` enforces this.
#[derive(Debug, Clone, PartialEq)]
pub struct LqGame {
    pub dims: Dims,
    /// A_k, k = 0..K-1, n x n.
    pub a: Vec<DMatrix<f64>>,
    /// B_k^i, k = 0..K-1, n x m_i.
    pub b: Vec<Vec<DMatrix<f64>>>,
    /// Q_k^i, k = 0..K, n x n.
    pub q: Vec<Vec<DMatrix<f64>>>,
    /// p_k^i, k = 0..K, length n.
    pub p: Vec<Vec<DVector<f64>>>,
    /// R_k^i, k = 0..K-1, m x m over the joint control stack.
    pub r: Vec<Vec<DMatrix<f64>>>,
    /// D_k^i, k = 0..K, s x s over the joint v stack.
    pub d: Vec<Vec<DMatrix<f64>>>,
    /// d_k^i, k = 0..K, length s.
    pub d_lin: Vec<Vec<DVector<f64>>>,
    /// L_k^i, k = 0..K, n x s state-v coupling.
    pub l: Vec<Vec<DMatrix<f64>>>,
    /// M_k, k = 0..K, l x n.
    pub m_con: Vec<DMatrix<f64>>,
    /// N_k, k = 0..K, l x s.
    pub n_con: Vec<DMatrix<f64>>,
    /// r_k, k = 0..K, length l.
    pub r_con: Vec<DVector<f64>>,
    pub x0: DVector<f64>,
}

/// Outcome of `validate`. Errors make the game unusable; warnings record
/// asymmetries small enough (relative 1e-12) to repair by averaging.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Relative threshold below which asymmetry is repaired silently.
pub const SYM_REPAIR_REL_TOL: f64 = 1e-12;

impl LqGame {
    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    /// Joint control matrix [B_k^1 ... B_k^N], n x m.
    pub fn b_joint(&self, k: usize) -> DMatrix<f64> {
        let n = self.dims.n;
        let m = self.dims.m_total();
        let mut out = DMatrix::zeros(n, m);
        let mut c = 0;
        for i in 0..self.dims.players {
            linalg::set_block(&mut out, 0, c, &self.b[k][i]);
            c += self.dims.m[i];
        }
        out
    }

    /// Structural and numeric validation: array lengths, matrix shapes,
    /// finiteness, symmetry of Q/R/D, and positive definiteness of each
    /// player's own control-cost block [R_k^i]_ii.
    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport::default();
        if let Err(e) = self.dims.check() {
            rep.errors.push(e.to_string());
            return rep;
        }
        let d = &self.dims;
        let (kk, nn, np) = (d.horizon, d.n, d.players);
        let (m, s, lc) = (d.m_total(), d.s_total(), d.l);

        let mut len_ok = true;
        let mut check_len = |name: &str, got: usize, want: usize, ok: &mut bool| {
            if got != want {
                rep.errors
                    .push(format!("{name} has {got} stages, expected {want}"));
                *ok = false;
            }
        };
        check_len("A", self.a.len(), kk, &mut len_ok);
        check_len("B", self.b.len(), kk, &mut len_ok);
        check_len("Q", self.q.len(), kk + 1, &mut len_ok);
        check_len("p", self.p.len(), kk + 1, &mut len_ok);
        check_len("R", self.r.len(), kk, &mut len_ok);
        check_len("D", self.d.len(), kk + 1, &mut len_ok);
        check_len("d", self.d_lin.len(), kk + 1, &mut len_ok);
        check_len("L", self.l.len(), kk + 1, &mut len_ok);
        check_len("M", self.m_con.len(), kk + 1, &mut len_ok);
        check_len("N", self.n_con.len(), kk + 1, &mut len_ok);
        check_len("r", self.r_con.len(), kk + 1, &mut len_ok);
        for (name, per_stage) in [
            ("B", self.b.iter().map(|v| v.len()).collect::<Vec<_>>()),
            ("Q", self.q.iter().map(|v| v.len()).collect()),
            ("p", self.p.iter().map(|v| v.len()).collect()),
            ("R", self.r.iter().map(|v| v.len()).collect()),
            ("D", self.d.iter().map(|v| v.len()).collect()),
            ("d", self.d_lin.iter().map(|v| v.len()).collect()),
            ("L", self.l.iter().map(|v| v.len()).collect()),
        ] {
            for (k, &cnt) in per_stage.iter().enumerate() {
                if cnt != np {
                    rep.errors
                        .push(format!("{name} at k={k} has {cnt} players, expected {np}"));
                    len_ok = false;
                }
            }
        }
        if self.x0.len() != nn {
            rep.errors
                .push(format!("x0 has length {}, expected {}", self.x0.len(), nn));
            len_ok = false;
        }
        if !len_ok {
            return rep;
        }

        fn shape(errors: &mut Vec<String>, name: String, got: (usize, usize), want: (usize, usize)) {
            if got != want {
                errors.push(format!(
                    "{name} has shape {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                ));
            }
        }
        for k in 0..kk {
            shape(&mut rep.errors, format!("A at k={k}"), self.a[k].shape(), (nn, nn));
            for i in 0..np {
                shape(
                    &mut rep.errors,
                    format!("B at k={k}, i={}", i + 1),
                    self.b[k][i].shape(),
                    (nn, d.m[i]),
                );
                shape(&mut rep.errors, format!("R at k={k}, i={}", i + 1), self.r[k][i].shape(), (m, m));
            }
        }
        for k in 0..=kk {
            shape(&mut rep.errors, format!("M at k={k}"), self.m_con[k].shape(), (lc, nn));
            shape(&mut rep.errors, format!("N at k={k}"), self.n_con[k].shape(), (lc, s));
            if self.r_con[k].len() != lc {
                rep.errors.push(format!(
                    "r at k={k} has length {}, expected {}",
                    self.r_con[k].len(),
                    lc
                ));
            }
            for i in 0..np {
                shape(&mut rep.errors, format!("Q at k={k}, i={}", i + 1), self.q[k][i].shape(), (nn, nn));
                shape(&mut rep.errors, format!("D at k={k}, i={}", i + 1), self.d[k][i].shape(), (s, s));
                shape(&mut rep.errors, format!("L at k={k}, i={}", i + 1), self.l[k][i].shape(), (nn, s));
                if self.p[k][i].len() != nn {
                    rep.errors.push(format!(
                        "p at k={k}, i={} has length {}, expected {}",
                        i + 1,
                        self.p[k][i].len(),
                        nn
                    ));
                }
                if self.d_lin[k][i].len() != s {
                    rep.errors.push(format!(
                        "d at k={k}, i={} has length {}, expected {}",
                        i + 1,
                        self.d_lin[k][i].len(),
                        s
                    ));
                }
            }
        }
        if !rep.errors.is_empty() {
            return rep;
        }

        // Finiteness before any numeric test.
        for (k, mat) in self.a.iter().enumerate() {
            if !linalg::all_finite(mat) {
                rep.errors.push(format!("A at k={k} has non-finite entries"));
            }
        }
        if !linalg::all_finite_vec(&self.x0) {
            rep.errors.push("x0 has non-finite entries".to_string());
        }

        // Symmetry of the quadratic cost blocks.
        let mut sym = |name: String, mat: &DMatrix<f64>| {
            let dev = linalg::sym_deviation(mat);
            let scale = linalg::max_abs(mat).max(f64::MIN_POSITIVE);
            if dev > SYM_REPAIR_REL_TOL * scale {
                rep.errors
                    .push(format!("{name} asymmetric (max deviation {dev:.3e})"));
            } else if dev > 0.0 {
                rep.warnings
                    .push(format!("{name} repaired by symmetrization (deviation {dev:.3e})"));
            }
        };
        for k in 0..=kk {
            for i in 0..np {
                sym(format!("Q at k={k}, i={}", i + 1), &self.q[k][i]);
                sym(format!("D at k={k}, i={}", i + 1), &self.d[k][i]);
                if k < kk {
                    sym(format!("R at k={k}, i={}", i + 1), &self.r[k][i]);
                }
            }
        }

        // Each player's own control-cost block must be positive definite; the
        // blocks touching other players' controls may be anything symmetric.
        for k in 0..kk {
            for i in 0..np {
                let off = d.u_offset(i);
                let blk = self.r[k][i].view((off, off), (d.m[i], d.m[i])).into_owned();
                let f = linalg::sym_definiteness(&linalg::symmetrized(&blk), 1e-12);
                if f.definiteness != linalg::Definiteness::PositiveDefinite {
                    rep.errors
                        .push(format!("R not positive definite at k={k}, i={}", i + 1));
                }
            }
        }
        rep
    }

    /// Replace Q, R, D by their symmetric parts. Meant to run after a passing
    /// `validate`, where any surviving asymmetry is below 1e-12 relative.
    pub fn symmetrized(mut self) -> Self {
        for stage in self.q.iter_mut().chain(self.d.iter_mut()).chain(self.r.iter_mut()) {
            for mat in stage.iter_mut() {
                if linalg::sym_deviation(mat) > 0.0 {
                    *mat = linalg::symmetrized(mat);
                }
            }
        }
        self
    }

    /// Wrap the LQ data as a general callback game. Gradients are supplied
    /// analytically, so the nonlinear checks run at full precision on LQ input.
    pub fn to_nonlinear(&self) -> NonlinearGame {
        let g = self.clone();
        let dyn_g = g.clone();
        let con_g = g.clone();
        let stage_g = g.clone();
        let term_g = g.clone();
        NonlinearGame {
            dims: g.dims.clone(),
            x0: g.x0.clone(),
            dynamics: Box::new(move |k, x, u| &dyn_g.a[k] * x + dyn_g.b_joint(k) * u),
            constraints: Box::new(move |k, x, v| {
                &con_g.m_con[k] * x + &con_g.n_con[k] * v + &con_g.r_con[k]
            }),
            stage_cost: Box::new(move |i, k, x, u, v| {
                stage_cost_lq(&stage_g, i, k, x, Some(u), v)
            }),
            terminal_cost: Box::new(move |i, x, v| {
                let kk = term_g.dims.horizon;
                stage_cost_lq(&term_g, i, kk, x, None, v)
            }),
            gradients: Some(Box::new(move |i, k, x, u, v| {
                let d = &g.dims;
                let kk = d.horizon;
                let (uo, mi) = (d.u_offset(i), d.m[i]);
                let (vo, si) = (d.v_offset(i), d.s[i]);
                let gx = &g.q[k][i] * x + &g.p[k][i] + &g.l[k][i] * v;
                let gu = if k < kk {
                    (&g.r[k][i] * u).rows(uo, mi).into_owned()
                } else {
                    DVector::zeros(0)
                };
                let gv_full = &g.d[k][i] * v + &g.d_lin[k][i] + g.l[k][i].transpose() * x;
                PlayerGradient {
                    x: gx,
                    u_own: gu,
                    v_own: gv_full.rows(vo, si).into_owned(),
                }
            })),
        }
    }
}

fn stage_cost_lq(
    g: &LqGame,
    i: usize,
    k: usize,
    x: &DVector<f64>,
    u: Option<&DVector<f64>>,
    v: &DVector<f64>,
) -> f64 {
    let mut c = 0.5 * (x.transpose() * &g.q[k][i] * x)[(0, 0)] + g.p[k][i].dot(x);
    if let Some(u) = u {
        c += 0.5 * (u.transpose() * &g.r[k][i] * u)[(0, 0)];
    }
    c += 0.5 * (v.transpose() * &g.d[k][i] * v)[(0, 0)]
        + g.d_lin[k][i].dot(v)
        + (x.transpose() * &g.l[k][i] * v)[(0, 0)];
    c
}

/// Simulation output: states, per-player costs, and per-stage feasibility of
/// the coupled constraints together with the v >= 0 bounds.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub x: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
    pub feasible: Vec<bool>,
    /// Smallest constraint margin per stage (negative means violated).
    pub margins: Vec<f64>,
}

/// Feasibility slack below which a constraint counts as violated.
pub const FEAS_TOL: f64 = 1e-9;

/// Roll the dynamics forward under the given controls and accumulate each
/// player's cost. `u` must hold K stacked controls, `v` K+1 stacked vectors.
pub fn simulate(game: &LqGame, u: &[DVector<f64>], v: &[DVector<f64>]) -> Result<SimResult, CoreError> {
    let d = &game.dims;
    let kk = d.horizon;
    if u.len() != kk {
        return Err(CoreError::DimensionMismatch(format!(
            "u has {} stages, expected {}",
            u.len(),
            kk
        )));
    }
    if v.len() != kk + 1 {
        return Err(CoreError::DimensionMismatch(format!(
            "v has {} stages, expected {}",
            v.len(),
            kk + 1
        )));
    }
    for (k, uk) in u.iter().enumerate() {
        if uk.len() != d.m_total() {
            return Err(CoreError::DimensionMismatch(format!(
                "u at k={k} has length {}, expected {}",
                uk.len(),
                d.m_total()
            )));
        }
    }
    for (k, vk) in v.iter().enumerate() {
        if vk.len() != d.s_total() {
            return Err(CoreError::DimensionMismatch(format!(
                "v at k={k} has length {}, expected {}",
                vk.len(),
                d.s_total()
            )));
        }
    }

    let mut x = Vec::with_capacity(kk + 1);
    x.push(game.x0.clone());
    for k in 0..kk {
        let next = &game.a[k] * &x[k] + game.b_joint(k) * &u[k];
        x.push(next);
    }

    let mut costs = vec![0.0; d.players];
    for i in 0..d.players {
        for k in 0..kk {
            costs[i] += stage_cost_lq(game, i, k, &x[k], Some(&u[k]), &v[k]);
        }
        costs[i] += stage_cost_lq(game, i, kk, &x[kk], None, &v[kk]);
    }

    let mut feasible = Vec::with_capacity(kk + 1);
    let mut margins = Vec::with_capacity(kk + 1);
    for k in 0..=kk {
        let h = &game.m_con[k] * &x[k] + &game.n_con[k] * &v[k] + &game.r_con[k];
        let mut margin = h.iter().cloned().fold(f64::INFINITY, f64::min);
        margin = margin.min(v[k].iter().cloned().fold(f64::INFINITY, f64::min));
        margins.push(margin);
        feasible.push(margin >= -FEAS_TOL);
    }

    Ok(SimResult {
        x,
        costs,
        feasible,
        margins,
    })
}

/// Open-loop equilibrium candidate with its multipliers. `lambda` are the
/// costate vectors of the pooled problem, `mu` the constraint multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumTrajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub mu: Vec<DVector<f64>>,
}

impl EquilibriumTrajectory {
    /// Player i's control block at stage k.
    pub fn u_player(&self, dims: &Dims, i: usize, k: usize) -> DVector<f64> {
        self.u[k].rows(dims.u_offset(i), dims.m[i]).into_owned()
    }

    /// Player i's v block at stage k.
    pub fn v_player(&self, dims: &Dims, i: usize, k: usize) -> DVector<f64> {
        self.v[k].rows(dims.v_offset(i), dims.s[i]).into_owned()
    }
}

pub struct PlayerGradient {
    pub x: DVector<f64>,
    /// Gradient with respect to the player's own control block; empty at the
    /// terminal stage.
    pub u_own: DVector<f64>,
    pub v_own: DVector<f64>,
}

pub type DynamicsFn = Box<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ConstraintFn = Box<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type StageCostFn =
    Box<dyn Fn(usize, usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type TerminalCostFn = Box<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type GradientFn = Box<
    dyn Fn(usize, usize, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> PlayerGradient
        + Send
        + Sync,
>;

/// General nonlinear game over the same stage structure, given by evaluators.
/// `stage_cost(i, k, x, u, v)` covers k < K; the terminal cost takes (i, x, v).
/// Evaluators signal failure by returning non-finite values. When `gradients`
/// is absent the symmetry and field routines fall back to central differences.
pub struct NonlinearGame {
    pub dims: Dims,
    pub x0: DVector<f64>,
    pub dynamics: DynamicsFn,
    pub constraints: ConstraintFn,
    pub stage_cost: StageCostFn,
    pub terminal_cost: TerminalCostFn,
    pub gradients: Option<GradientFn>,
}

impl NonlinearGame {
    /// Cost of player i at stage k, dispatching to the terminal evaluator at K.
    pub fn cost(&self, i: usize, k: usize, x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        if k < self.dims.horizon {
            (self.stage_cost)(i, k, x, u, v)
        } else {
            (self.terminal_cost)(i, x, v)
        }
    }
}
