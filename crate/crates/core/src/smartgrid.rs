//! Smart grid with prosumer battery storage, expressed as a constrained LQ
//! game. Grid resources X_k evolve under user consumption I_k^i; each user
//! also picks a battery level K_k^i per stage, limited by capacity and by the
//! total grid resources less a headroom. Costs: unsatisfied demand against
//! the target P^i X_k, resource unbalance between consecutive periods,
//! quadratic storage cost, minus per-user and common storage incentives, plus
//! a terminal salvage term.
//!
//! The standard form doubles the state, x_k = [X_k; X_{k-1}], substitutes
//! u_k^i = P^i X_k - I_k^i so the demand cost becomes a pure control
//! quadratic, and puts the battery levels in v_k. The construction satisfies
//! the potential conditions for any valid parameter set because the cost
//! pieces coupling players (unbalance, common incentive) are shared verbatim.

use nalgebra::{DMatrix, DVector};

use crate::error::CoreError;
use crate::game::{Dims, EquilibriumTrajectory, LqGame};

/// Scenario parameters. Stage-indexed fields run over the dynamic stages
/// (length K) or over all stages including the terminal one (length K+1),
/// as noted per field.
#[derive(Debug, Clone, PartialEq)]
pub struct SmartGridScenario {
    /// Resource count S.
    pub resources: usize,
    /// User count N.
    pub users: usize,
    /// Horizon K.
    pub horizon: usize,
    /// Activities per user, length N.
    pub activities: Vec<usize>,
    /// Autonomous resource dynamics, K entries of S x S.
    pub atilde: Vec<DMatrix<f64>>,
    /// Consumption weights, K x N entries of S x m_i.
    pub btilde: Vec<Vec<DMatrix<f64>>>,
    /// Demand matrices, K x N entries of m_i x S.
    pub demand: Vec<Vec<DMatrix<f64>>>,
    /// Unbalance weights q_k > 0, K+1 entries; the last is the salvage weight.
    pub q: Vec<f64>,
    /// Demand cost weights r_k^i > 0, K x N.
    pub rcost: Vec<Vec<f64>>,
    /// Battery storage cost b_k^i > 0, (K+1) x N.
    pub bcost: Vec<Vec<f64>>,
    /// Per-user storage incentive a_k^i, (K+1) x N.
    pub aincent: Vec<Vec<f64>>,
    /// Common storage incentive, K+1 entries of S x N.
    pub ltilde: Vec<DMatrix<f64>>,
    /// Storage headroom eps_k > 0, K+1 entries.
    pub eps: Vec<f64>,
    /// Battery capacities, length N.
    pub kmax: Vec<f64>,
    /// Initial resources, length S.
    pub x0: DVector<f64>,
    /// Resources one period before the start, length S.
    pub xminus1: DVector<f64>,
}

impl SmartGridScenario {
    pub fn validate(&self) -> Result<(), CoreError> {
        let (s, n, kk) = (self.resources, self.users, self.horizon);
        if s == 0 || n == 0 || kk == 0 {
            return Err(CoreError::InvalidData(
                "resources, users and horizon must be positive".to_string(),
            ));
        }
        if self.activities.len() != n || self.activities.contains(&0) {
            return Err(CoreError::InvalidData(
                "activities must list a positive count per user".to_string(),
            ));
        }
        let stage_len = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(CoreError::InvalidData(format!(
                    "{name} has {got} stage entries, expected {want}"
                )))
            }
        };
        stage_len("atilde", self.atilde.len(), kk)?;
        stage_len("btilde", self.btilde.len(), kk)?;
        stage_len("demand", self.demand.len(), kk)?;
        stage_len("q", self.q.len(), kk + 1)?;
        stage_len("rcost", self.rcost.len(), kk)?;
        stage_len("bcost", self.bcost.len(), kk + 1)?;
        stage_len("aincent", self.aincent.len(), kk + 1)?;
        stage_len("ltilde", self.ltilde.len(), kk + 1)?;
        stage_len("eps", self.eps.len(), kk + 1)?;
        for k in 0..kk {
            if self.atilde[k].shape() != (s, s) {
                return Err(CoreError::InvalidData(format!("atilde[{k}] is not {s}x{s}")));
            }
            if self.btilde[k].len() != n || self.demand[k].len() != n {
                return Err(CoreError::InvalidData(format!(
                    "btilde[{k}] or demand[{k}] does not cover every user"
                )));
            }
            for i in 0..n {
                let mi = self.activities[i];
                if self.btilde[k][i].shape() != (s, mi) {
                    return Err(CoreError::InvalidData(format!(
                        "btilde[{k}][{}] is not {s}x{mi}",
                        i + 1
                    )));
                }
                if self.demand[k][i].shape() != (mi, s) {
                    return Err(CoreError::InvalidData(format!(
                        "demand[{k}][{}] is not {mi}x{s}",
                        i + 1
                    )));
                }
            }
            if self.rcost[k].len() != n {
                return Err(CoreError::InvalidData(format!("rcost[{k}] does not cover every user")));
            }
        }
        for k in 0..=kk {
            if self.bcost[k].len() != n || self.aincent[k].len() != n {
                return Err(CoreError::InvalidData(format!(
                    "bcost[{k}] or aincent[{k}] does not cover every user"
                )));
            }
            if self.ltilde[k].shape() != (s, n) {
                return Err(CoreError::InvalidData(format!("ltilde[{k}] is not {s}x{n}")));
            }
        }
        if self.kmax.len() != n {
            return Err(CoreError::InvalidData("kmax must have one entry per user".to_string()));
        }
        if self.x0.len() != s || self.xminus1.len() != s {
            return Err(CoreError::InvalidData(
                "x0 and xminus1 must have one entry per resource".to_string(),
            ));
        }
        if self.q.iter().any(|&q| q <= 0.0) {
            return Err(CoreError::InvalidData("q must be positive at every stage".to_string()));
        }
        if self.rcost.iter().flatten().any(|&r| r <= 0.0) {
            return Err(CoreError::InvalidData("rcost must be positive".to_string()));
        }
        if self.bcost.iter().flatten().any(|&b| b <= 0.0) {
            return Err(CoreError::InvalidData("bcost must be positive".to_string()));
        }
        if self.eps.iter().any(|&e| e <= 0.0) {
            return Err(CoreError::InvalidData("eps must be positive".to_string()));
        }
        if self.kmax.iter().any(|&c| c <= 0.0) {
            return Err(CoreError::InvalidData("kmax must be positive".to_string()));
        }
        Ok(())
    }

    fn u_offset(&self, i: usize) -> usize {
        self.activities[..i].iter().sum()
    }
}

/// Transform the scenario into the standard constrained game. State doubles
/// to [X_k; X_{k-1}] (n = 2S), v stacks one battery level per user, and the
/// coupled constraint rows are total-storage headroom plus per-user capacity
/// (l = N + 1).
pub fn to_nzdg(sc: &SmartGridScenario) -> Result<LqGame, CoreError> {
    sc.validate()?;
    let (s, n_users, kk) = (sc.resources, sc.users, sc.horizon);
    let n = 2 * s;
    let dims = Dims {
        n,
        players: n_users,
        horizon: kk,
        m: sc.activities.clone(),
        s: vec![1; n_users],
        l: n_users + 1,
    };
    let m_total = dims.m_total();

    let mut a = Vec::with_capacity(kk);
    let mut b = Vec::with_capacity(kk);
    let mut r = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut top_left = sc.atilde[k].clone();
        for i in 0..n_users {
            top_left += &sc.btilde[k][i] * &sc.demand[k][i];
        }
        let mut ak = DMatrix::zeros(n, n);
        ak.view_mut((0, 0), (s, s)).copy_from(&top_left);
        ak.view_mut((s, 0), (s, s)).copy_from(&DMatrix::identity(s, s));
        a.push(ak);

        let mut bk = Vec::with_capacity(n_users);
        let mut rk = Vec::with_capacity(n_users);
        for i in 0..n_users {
            let mi = sc.activities[i];
            let mut bi = DMatrix::zeros(n, mi);
            bi.view_mut((0, 0), (s, mi)).copy_from(&(-&sc.btilde[k][i]));
            bk.push(bi);

            let mut ri = DMatrix::zeros(m_total, m_total);
            let off = sc.u_offset(i);
            for d in 0..mi {
                ri[(off + d, off + d)] = sc.rcost[k][i];
            }
            rk.push(ri);
        }
        b.push(bk);
        r.push(rk);
    }

    let mut q = Vec::with_capacity(kk + 1);
    let mut p = Vec::with_capacity(kk + 1);
    let mut d = Vec::with_capacity(kk + 1);
    let mut d_lin = Vec::with_capacity(kk + 1);
    let mut l = Vec::with_capacity(kk + 1);
    let mut m_con = Vec::with_capacity(kk + 1);
    let mut n_con = Vec::with_capacity(kk + 1);
    let mut r_con = Vec::with_capacity(kk + 1);
    for k in 0..=kk {
        let mut qk = DMatrix::zeros(n, n);
        for c in 0..s {
            qk[(c, c)] = sc.q[k];
            if k < kk {
                // Unbalance couples X_k with X_{k-1}; the salvage stage only
                // weighs X_K itself.
                qk[(s + c, s + c)] = sc.q[k];
                qk[(c, s + c)] = -sc.q[k];
                qk[(s + c, c)] = -sc.q[k];
            }
        }
        q.push(vec![qk; n_users]);
        p.push(vec![DVector::zeros(n); n_users]);

        let mut dk = Vec::with_capacity(n_users);
        let mut dlk = Vec::with_capacity(n_users);
        for i in 0..n_users {
            let mut di = DMatrix::zeros(n_users, n_users);
            di[(i, i)] = sc.bcost[k][i];
            dk.push(di);
            let mut dli = DVector::zeros(n_users);
            dli[i] = -sc.aincent[k][i];
            dlk.push(dli);
        }
        d.push(dk);
        d_lin.push(dlk);

        // Incentives reduce the cost, so the common term enters negated.
        let mut lk = DMatrix::zeros(n, n_users);
        lk.view_mut((0, 0), (s, n_users)).copy_from(&(-&sc.ltilde[k]));
        l.push(vec![lk; n_users]);

        let mut mk = DMatrix::zeros(n_users + 1, n);
        for c in 0..s {
            mk[(0, c)] = 1.0;
        }
        m_con.push(mk);

        let mut nk = DMatrix::zeros(n_users + 1, n_users);
        for i in 0..n_users {
            nk[(0, i)] = -1.0;
            nk[(1 + i, i)] = -1.0;
        }
        n_con.push(nk);

        let mut rk = DVector::zeros(n_users + 1);
        rk[0] = -sc.eps[k];
        for i in 0..n_users {
            rk[1 + i] = sc.kmax[i];
        }
        r_con.push(rk);
    }

    let mut x0 = DVector::zeros(n);
    x0.rows_mut(0, s).copy_from(&sc.x0);
    x0.rows_mut(s, s).copy_from(&sc.xminus1);

    Ok(LqGame {
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
        x0,
    })
}

/// The worked two-user, three-resource instance: twelve two-hour periods,
/// identical demand profiles, user 2 with the larger storage incentive and
/// battery.
pub fn default_scenario() -> SmartGridScenario {
    let s = 3;
    let n = 2;
    let kk = 12;
    let btilde = DMatrix::from_row_slice(3, 2, &[0.75, 0.0, 0.0, 0.375, 0.0, 0.75]);
    let demand = DMatrix::from_element(2, 3, 0.375);
    let ltilde = DMatrix::from_element(3, 2, 0.5);

    let mut q = vec![1.0; kk + 1];
    q[kk] = 2.5;

    SmartGridScenario {
        resources: s,
        users: n,
        horizon: kk,
        activities: vec![2, 2],
        atilde: vec![DMatrix::identity(s, s); kk],
        btilde: vec![vec![btilde; n]; kk],
        demand: vec![vec![demand; n]; kk],
        q,
        rcost: vec![vec![0.7, 0.7]; kk],
        bcost: vec![vec![1.6, 1.6]; kk + 1],
        aincent: vec![vec![3.4, 4.0]; kk + 1],
        ltilde: vec![ltilde; kk + 1],
        eps: vec![3.5; kk + 1],
        kmax: vec![11.2, 12.2],
        x0: DVector::from_element(s, 4.0),
        xminus1: DVector::zeros(s),
    }
}

/// Trajectory read back in scenario terms, with the per-player cost
/// decomposition. Totals reproduce the game costs exactly (the transformation
/// is an identity on costs), which `extract_report` relies on as a
/// double-entry check in the tests.
#[derive(Debug, Clone)]
pub struct SmartGridReport {
    /// Grid resources X_k, stages 0..=K.
    pub resources: Vec<DVector<f64>>,
    /// Consumption (positive) or contribution (negative) I_k^i, [stage][user].
    pub consumption: Vec<Vec<DVector<f64>>>,
    /// Battery levels K_k^i, [stage][user].
    pub storage: Vec<Vec<f64>>,
    /// Per-user cost totals over the horizon.
    pub unsatisfied_demand: Vec<f64>,
    pub unbalance: Vec<f64>,
    pub storage_cost: Vec<f64>,
    pub incentive: Vec<f64>,
    pub salvage: Vec<f64>,
    /// salvage + demand + unbalance + storage - incentive, per user.
    pub total: Vec<f64>,
    /// Total-storage headroom margin per stage; nonnegative when feasible.
    pub storage_margin: Vec<f64>,
}

pub fn extract_report(
    traj: &EquilibriumTrajectory,
    sc: &SmartGridScenario,
) -> Result<SmartGridReport, CoreError> {
    sc.validate()?;
    let (s, n_users, kk) = (sc.resources, sc.users, sc.horizon);
    if traj.x.len() != kk + 1 || traj.u.len() != kk || traj.v.len() != kk + 1 {
        return Err(CoreError::DimensionMismatch(
            "trajectory stage counts do not match the scenario horizon".to_string(),
        ));
    }
    if traj.x[0].len() != 2 * s {
        return Err(CoreError::DimensionMismatch(
            "trajectory state is not the doubled resource vector".to_string(),
        ));
    }

    let resources: Vec<DVector<f64>> =
        traj.x.iter().map(|x| x.rows(0, s).into_owned()).collect();

    let mut consumption = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut per_user = Vec::with_capacity(n_users);
        for i in 0..n_users {
            let u_own = traj
                .u[k]
                .rows(sc.u_offset(i), sc.activities[i])
                .into_owned();
            per_user.push(&sc.demand[k][i] * &resources[k] - u_own);
        }
        consumption.push(per_user);
    }

    let storage: Vec<Vec<f64>> = traj
        .v
        .iter()
        .map(|v| (0..n_users).map(|i| v[i]).collect())
        .collect();

    let mut unsatisfied = vec![0.0; n_users];
    let mut unbalance = vec![0.0; n_users];
    let mut storage_cost = vec![0.0; n_users];
    let mut incentive = vec![0.0; n_users];
    let mut salvage = vec![0.0; n_users];
    for k in 0..kk {
        let prev = traj.x[k].rows(s, s);
        let diff = &resources[k] - prev;
        let ur = 0.5 * sc.q[k] * diff.dot(&diff);
        for i in 0..n_users {
            let miss = &sc.demand[k][i] * &resources[k] - &consumption[k][i];
            unsatisfied[i] += 0.5 * sc.rcost[k][i] * miss.dot(&miss);
            unbalance[i] += ur;
        }
    }
    for k in 0..=kk {
        let kvec = DVector::from_iterator(n_users, storage[k].iter().cloned());
        let common = resources[k].dot(&(&sc.ltilde[k] * &kvec));
        for i in 0..n_users {
            storage_cost[i] += 0.5 * sc.bcost[k][i] * storage[k][i] * storage[k][i];
            incentive[i] += sc.aincent[k][i] * storage[k][i] + common;
        }
    }
    let xk = &resources[kk];
    for i in 0..n_users {
        salvage[i] = 0.5 * sc.q[kk] * xk.dot(xk);
    }

    let total: Vec<f64> = (0..n_users)
        .map(|i| salvage[i] + unsatisfied[i] + unbalance[i] + storage_cost[i] - incentive[i])
        .collect();

    let storage_margin: Vec<f64> = (0..=kk)
        .map(|k| resources[k].sum() - sc.eps[k] - storage[k].iter().sum::<f64>())
        .collect();

    Ok(SmartGridReport {
        resources,
        consumption,
        storage,
        unsatisfied_demand: unsatisfied,
        unbalance,
        storage_cost,
        incentive,
        salvage,
        total,
        storage_margin,
    })
}
