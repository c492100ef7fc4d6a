use std::path::Path;

use sparse_prompt::config::RunConfig;

#[test]
fn shipped_desk_config_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg, RunConfig::desk(), "expected:\n{}", RunConfig::desk().to_json());
}

#[test]
fn repeat_config_differs_from_desk_only_in_repeat() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk-repeat.json");
    let cfg = RunConfig::load(&path).unwrap();
    let mut expected = RunConfig::desk();
    expected.sequence.repeat = 2;
    assert_eq!(cfg, expected);
    assert_eq!(cfg.tasks().unwrap().len(), 12);
}
