//! File-format round trips: saved games and scenarios must load back to
//! bitwise-equal data, and malformed files must fail with errors that name
//! the offending field.

use olpdg_cli::format::{load_input, save_game, save_scenario, InputDoc};
use olpdg_core::random::{random_potential_game, GameCaps};
use olpdg_core::smartgrid::default_scenario;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn game_roundtrip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let caps = GameCaps::default();
    let dir = tempfile::tempdir().unwrap();
    for trial in 0..20 {
        let game = random_potential_game(&mut rng, &caps);
        let path = dir.path().join(format!("game_{trial}.toml"));
        save_game(&path, &game).unwrap();
        match load_input(&path).unwrap() {
            InputDoc::Game(loaded) => assert_eq!(loaded, game, "trial {trial}"),
            InputDoc::Scenario(_) => panic!("game file loaded as scenario"),
        }
    }
}

#[test]
fn scenario_roundtrip_is_bitwise() {
    let sc = default_scenario();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.toml");
    save_scenario(&path, &sc).unwrap();
    match load_input(&path).unwrap() {
        InputDoc::Scenario(loaded) => assert_eq!(loaded, sc),
        InputDoc::Game(_) => panic!("scenario file loaded as game"),
    }
}

#[test]
fn golden_scenario_matches_builtin_default() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/smartgrid_default.toml");
    match load_input(std::path::Path::new(path)).unwrap() {
        InputDoc::Scenario(loaded) => assert_eq!(loaded, default_scenario()),
        InputDoc::Game(_) => panic!("golden file loaded as game"),
    }
}

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let sc = default_scenario();
    save_scenario(&dir.path().join("ok.toml"), &sc).unwrap();
    let text = std::fs::read_to_string(dir.path().join("ok.toml")).unwrap();
    let broken: String = text
        .lines()
        .filter(|line| !line.starts_with("horizon"))
        .collect::<Vec<_>>()
        .join("\n");
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, broken).unwrap();
    let err = format!("{:#}", load_input(&path).unwrap_err());
    assert!(err.contains("horizon"), "error does not name the field: {err}");
}

#[test]
fn unknown_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("odd.toml");
    std::fs::write(&path, "schema = 1\nkind = \"tensor\"\n").unwrap();
    let err = format!("{:#}", load_input(&path).unwrap_err());
    assert!(err.contains("tensor"), "error does not echo the kind: {err}");
}

#[test]
fn missing_schema_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("old.toml");
    std::fs::write(&path, "kind = \"game\"\n").unwrap();
    let err = format!("{:#}", load_input(&path).unwrap_err());
    assert!(err.contains("schema"), "error does not mention schema: {err}");
}

#[test]
fn wrong_schema_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("future.toml");
    std::fs::write(&path, "schema = 7\nkind = \"game\"\n").unwrap();
    let err = format!("{:#}", load_input(&path).unwrap_err());
    assert!(err.contains("schema"), "error does not mention schema: {err}");
}
