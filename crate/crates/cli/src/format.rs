//! On-disk document formats. Game and scenario files are TOML with a
//! `schema` version and a `kind` discriminator; matrices are row-major
//! nested float arrays. Floats round-trip bitwise through save/load.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use olpdg_core::smartgrid::SmartGridScenario;
use olpdg_core::{Dims, LqGame};

pub const SCHEMA: u32 = 1;

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn from_rows(name: &str, rows: &Rows, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    ensure!(
        rows.len() == nrows && rows.iter().all(|r| r.len() == ncols),
        "field `{name}`: expected a {nrows}x{ncols} row-major matrix"
    );
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn from_vec(name: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    ensure!(v.len() == len, "field `{name}`: expected {len} entries, found {}", v.len());
    Ok(DVector::from_row_slice(v))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DimsFile {
    pub n: usize,
    pub players: usize,
    pub horizon: usize,
    pub m: Vec<usize>,
    pub s: Vec<usize>,
    pub l: usize,
}

/// Serialized game. Stage-indexed fields are outer arrays over stages;
/// per-player fields nest players inside each stage. `dims` sits last so the
/// TOML writer emits it after the top-level arrays.
#[derive(Debug, Serialize, Deserialize)]
pub struct GameFile {
    pub schema: u32,
    pub kind: String,
    pub x0: Vec<f64>,
    pub a: Vec<Rows>,
    pub b: Vec<Vec<Rows>>,
    pub q: Vec<Vec<Rows>>,
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<Rows>>,
    pub d: Vec<Vec<Rows>>,
    pub d_lin: Vec<Vec<Vec<f64>>>,
    pub l: Vec<Vec<Rows>>,
    pub m_con: Vec<Rows>,
    pub n_con: Vec<Rows>,
    pub r_con: Vec<Vec<f64>>,
    pub dims: DimsFile,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub schema: u32,
    pub kind: String,
    pub resources: usize,
    pub users: usize,
    pub horizon: usize,
    pub activities: Vec<usize>,
    pub atilde: Vec<Rows>,
    pub btilde: Vec<Vec<Rows>>,
    pub demand: Vec<Vec<Rows>>,
    pub q: Vec<f64>,
    pub rcost: Vec<Vec<f64>>,
    pub bcost: Vec<Vec<f64>>,
    pub aincent: Vec<Vec<f64>>,
    pub ltilde: Vec<Rows>,
    pub eps: Vec<f64>,
    pub kmax: Vec<f64>,
    pub x0: Vec<f64>,
    pub xminus1: Vec<f64>,
}

pub fn game_to_file(g: &LqGame) -> GameFile {
    let per_player_mats = |field: &[Vec<DMatrix<f64>>]| -> Vec<Vec<Rows>> {
        field.iter().map(|ps| ps.iter().map(to_rows).collect()).collect()
    };
    let per_player_vecs = |field: &[Vec<DVector<f64>>]| -> Vec<Vec<Vec<f64>>> {
        field
            .iter()
            .map(|ps| ps.iter().map(|v| v.iter().cloned().collect()).collect())
            .collect()
    };
    GameFile {
        schema: SCHEMA,
        kind: "game".to_string(),
        x0: g.x0.iter().cloned().collect(),
        a: g.a.iter().map(to_rows).collect(),
        b: per_player_mats(&g.b),
        q: per_player_mats(&g.q),
        p: per_player_vecs(&g.p),
        r: per_player_mats(&g.r),
        d: per_player_mats(&g.d),
        d_lin: per_player_vecs(&g.d_lin),
        l: per_player_mats(&g.l),
        m_con: g.m_con.iter().map(to_rows).collect(),
        n_con: g.n_con.iter().map(to_rows).collect(),
        r_con: g.r_con.iter().map(|v| v.iter().cloned().collect()).collect(),
        dims: DimsFile {
            n: g.dims.n,
            players: g.dims.players,
            horizon: g.dims.horizon,
            m: g.dims.m.clone(),
            s: g.dims.s.clone(),
            l: g.dims.l,
        },
    }
}

pub fn file_to_game(f: &GameFile) -> Result<LqGame> {
    let dims = Dims {
        n: f.dims.n,
        players: f.dims.players,
        horizon: f.dims.horizon,
        m: f.dims.m.clone(),
        s: f.dims.s.clone(),
        l: f.dims.l,
    };
    let (n, s, lc, kk) = (dims.n, dims.s_total(), dims.l, dims.horizon);
    ensure!(dims.players > 0 && kk > 0, "dims must have at least one player and one stage");
    ensure!(
        dims.m.len() == dims.players && dims.s.len() == dims.players,
        "dims.m and dims.s must have one entry per player"
    );

    let stages = |name: &str, got: usize, want: usize| -> Result<()> {
        ensure!(got == want, "field `{name}`: expected {want} stage entries, found {got}");
        Ok(())
    };
    stages("a", f.a.len(), kk)?;
    stages("b", f.b.len(), kk)?;
    stages("r", f.r.len(), kk)?;
    for (name, len) in [
        ("q", f.q.len()),
        ("p", f.p.len()),
        ("d", f.d.len()),
        ("d_lin", f.d_lin.len()),
        ("l", f.l.len()),
        ("m_con", f.m_con.len()),
        ("n_con", f.n_con.len()),
        ("r_con", f.r_con.len()),
    ] {
        stages(name, len, kk + 1)?;
    }

    let players_of = |name: &str, k: usize, got: usize| -> Result<()> {
        ensure!(
            got == dims.players,
            "field `{name}[{k}]`: expected one entry per player, found {got}"
        );
        Ok(())
    };
    let m_tot = dims.m_total();

    let mut g = LqGame {
        dims: dims.clone(),
        x0: from_vec("x0", &f.x0, n)?,
        a: Vec::new(),
        b: Vec::new(),
        q: Vec::new(),
        p: Vec::new(),
        r: Vec::new(),
        d: Vec::new(),
        d_lin: Vec::new(),
        l: Vec::new(),
        m_con: Vec::new(),
        n_con: Vec::new(),
        r_con: Vec::new(),
    };
    for k in 0..kk {
        g.a.push(from_rows(&format!("a[{k}]"), &f.a[k], n, n)?);
        players_of("b", k, f.b[k].len())?;
        players_of("r", k, f.r[k].len())?;
        let mut bk = Vec::new();
        let mut rk = Vec::new();
        for i in 0..dims.players {
            bk.push(from_rows(&format!("b[{k}][{i}]"), &f.b[k][i], n, dims.m[i])?);
            rk.push(from_rows(&format!("r[{k}][{i}]"), &f.r[k][i], m_tot, m_tot)?);
        }
        g.b.push(bk);
        g.r.push(rk);
    }
    for k in 0..=kk {
        for (name, got) in [
            ("q", f.q[k].len()),
            ("p", f.p[k].len()),
            ("d", f.d[k].len()),
            ("d_lin", f.d_lin[k].len()),
            ("l", f.l[k].len()),
        ] {
            players_of(name, k, got)?;
        }
        let mut qk = Vec::new();
        let mut pk = Vec::new();
        let mut dk = Vec::new();
        let mut dlk = Vec::new();
        let mut lk = Vec::new();
        for i in 0..dims.players {
            qk.push(from_rows(&format!("q[{k}][{i}]"), &f.q[k][i], n, n)?);
            pk.push(from_vec(&format!("p[{k}][{i}]"), &f.p[k][i], n)?);
            dk.push(from_rows(&format!("d[{k}][{i}]"), &f.d[k][i], s, s)?);
            dlk.push(from_vec(&format!("d_lin[{k}][{i}]"), &f.d_lin[k][i], s)?);
            lk.push(from_rows(&format!("l[{k}][{i}]"), &f.l[k][i], n, s)?);
        }
        g.q.push(qk);
        g.p.push(pk);
        g.d.push(dk);
        g.d_lin.push(dlk);
        g.l.push(lk);
        g.m_con.push(from_rows(&format!("m_con[{k}]"), &f.m_con[k], lc, n)?);
        g.n_con.push(from_rows(&format!("n_con[{k}]"), &f.n_con[k], lc, s)?);
        g.r_con.push(from_vec(&format!("r_con[{k}]"), &f.r_con[k], lc)?);
    }

    let report = g.validate();
    if !report.is_valid() {
        bail!("game fails validation: {}", report.errors.join("; "));
    }
    Ok(g)
}

pub fn scenario_to_file(sc: &SmartGridScenario) -> ScenarioFile {
    ScenarioFile {
        schema: SCHEMA,
        kind: "smartgrid".to_string(),
        resources: sc.resources,
        users: sc.users,
        horizon: sc.horizon,
        activities: sc.activities.clone(),
        atilde: sc.atilde.iter().map(to_rows).collect(),
        btilde: sc.btilde.iter().map(|us| us.iter().map(to_rows).collect()).collect(),
        demand: sc.demand.iter().map(|us| us.iter().map(to_rows).collect()).collect(),
        q: sc.q.clone(),
        rcost: sc.rcost.clone(),
        bcost: sc.bcost.clone(),
        aincent: sc.aincent.clone(),
        ltilde: sc.ltilde.iter().map(to_rows).collect(),
        eps: sc.eps.clone(),
        kmax: sc.kmax.clone(),
        x0: sc.x0.iter().cloned().collect(),
        xminus1: sc.xminus1.iter().cloned().collect(),
    }
}

pub fn file_to_scenario(f: &ScenarioFile) -> Result<SmartGridScenario> {
    let (s, n, kk) = (f.resources, f.users, f.horizon);
    ensure!(
        f.activities.len() == n,
        "field `activities`: expected one entry per user, found {}",
        f.activities.len()
    );
    let per_user = |name: &str, k: usize, got: usize| -> Result<()> {
        ensure!(got == n, "field `{name}[{k}]`: expected one entry per user, found {got}");
        Ok(())
    };
    let stages = |name: &str, got: usize, want: usize| -> Result<()> {
        ensure!(got == want, "field `{name}`: expected {want} stage entries, found {got}");
        Ok(())
    };
    stages("atilde", f.atilde.len(), kk)?;
    stages("btilde", f.btilde.len(), kk)?;
    stages("demand", f.demand.len(), kk)?;
    stages("ltilde", f.ltilde.len(), kk + 1)?;

    let mut atilde = Vec::new();
    let mut btilde = Vec::new();
    let mut demand = Vec::new();
    for k in 0..kk {
        atilde.push(from_rows(&format!("atilde[{k}]"), &f.atilde[k], s, s)?);
        per_user("btilde", k, f.btilde[k].len())?;
        per_user("demand", k, f.demand[k].len())?;
        let mut bk = Vec::new();
        let mut pk = Vec::new();
        for i in 0..n {
            let mi = f.activities[i];
            bk.push(from_rows(&format!("btilde[{k}][{i}]"), &f.btilde[k][i], s, mi)?);
            pk.push(from_rows(&format!("demand[{k}][{i}]"), &f.demand[k][i], mi, s)?);
        }
        btilde.push(bk);
        demand.push(pk);
    }
    let mut ltilde = Vec::new();
    for k in 0..=kk {
        ltilde.push(from_rows(&format!("ltilde[{k}]"), &f.ltilde[k], s, n)?);
    }

    let sc = SmartGridScenario {
        resources: s,
        users: n,
        horizon: kk,
        activities: f.activities.clone(),
        atilde,
        btilde,
        demand,
        q: f.q.clone(),
        rcost: f.rcost.clone(),
        bcost: f.bcost.clone(),
        aincent: f.aincent.clone(),
        ltilde,
        eps: f.eps.clone(),
        kmax: f.kmax.clone(),
        x0: from_vec("x0", &f.x0, s)?,
        xminus1: from_vec("xminus1", &f.xminus1, s)?,
    };
    sc.validate().map_err(|e| anyhow::anyhow!("scenario fails validation: {e}"))?;
    Ok(sc)
}

#[derive(Debug)]
pub enum InputDoc {
    Game(LqGame),
    Scenario(SmartGridScenario),
}

#[derive(Deserialize)]
struct Probe {
    schema: Option<u32>,
    kind: Option<String>,
}

pub fn load_input(path: &Path) -> Result<InputDoc> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let probe: Probe =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let schema = probe
        .schema
        .with_context(|| format!("{}: missing field `schema`", path.display()))?;
    ensure!(schema == SCHEMA, "unsupported schema version {schema} (this build reads {SCHEMA})");
    match probe.kind.as_deref() {
        Some("game") => {
            let f: GameFile = toml::from_str(&text)
                .with_context(|| format!("parsing {} as a game file", path.display()))?;
            Ok(InputDoc::Game(file_to_game(&f)?))
        }
        Some("smartgrid") => {
            let f: ScenarioFile = toml::from_str(&text)
                .with_context(|| format!("parsing {} as a scenario file", path.display()))?;
            Ok(InputDoc::Scenario(file_to_scenario(&f)?))
        }
        Some(other) => bail!("unknown kind {other:?}; expected \"game\" or \"smartgrid\""),
        None => bail!("{}: missing field `kind`", path.display()),
    }
}

pub fn save_game(path: &Path, g: &LqGame) -> Result<()> {
    let text = toml::to_string_pretty(&game_to_file(g)).context("serializing game")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn save_scenario(path: &Path, sc: &SmartGridScenario) -> Result<()> {
    let text = toml::to_string_pretty(&scenario_to_file(sc)).context("serializing scenario")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
