mod common;

use std::fs;

use sparse_prompt::checkpoint::{self, Checkpoint};
use sparse_prompt_core::trainer::run_sequence;

use common::small_config;

fn trained() -> Checkpoint {
    let cfg = small_config();
    let (report, state) = run_sequence(&cfg.settings().unwrap(), &cfg.tasks().unwrap(), &mut ()).unwrap();
    Checkpoint::from_run(cfg.seed, state, &report)
}

#[test]
fn save_load_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained();
    checkpoint::save(dir.path(), &ckpt).unwrap();
    let back = checkpoint::load(dir.path()).unwrap();
    // PartialEq on f64 would accept -0.0 == 0.0; compare the bytes instead
    let again = tempfile::tempdir().unwrap();
    checkpoint::save(again.path(), &back).unwrap();
    // the policy's update counter is runtime-only and not stored
    assert_eq!(back.state.policy.layers(), ckpt.state.policy.layers());
    assert_eq!(back.state.policy.negative_slope(), ckpt.state.policy.negative_slope());
    assert_eq!(back.state.dictionaries, ckpt.state.dictionaries);
    assert_eq!(back.state.stats, ckpt.state.stats);
    assert_eq!(back.state.accumulated, ckpt.state.accumulated);
    assert_eq!(back.tasks, ckpt.tasks);
    assert_eq!(back.seed, ckpt.seed);
    for entry in fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(dir.path().join(&name)).unwrap(),
            fs::read(again.path().join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn corrupted_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &trained()).unwrap();
    let p = dir.path().join("dictionary.layer1.bin");
    let mut bytes = fs::read(&p).unwrap();
    bytes[3] ^= 1;
    fs::write(&p, bytes).unwrap();
    let err = checkpoint::load(dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains("checksum"), "{err:#}");
}

#[test]
fn shape_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &trained()).unwrap();
    let mpath = dir.path().join("manifest.json");
    let mut m = checkpoint::read_manifest(dir.path()).unwrap();
    m.widths[1] += 1;
    fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
    let err = checkpoint::load(dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains("shape"), "{err:#}");
}

#[test]
fn missing_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &trained()).unwrap();
    fs::remove_file(dir.path().join("task0.mask.layer2.bin")).unwrap();
    assert!(checkpoint::load(dir.path()).is_err());
}

#[test]
fn loaded_state_reproduces_task_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let tasks = cfg.tasks().unwrap();
    let (report, state) = run_sequence(&cfg.settings().unwrap(), &tasks, &mut ()).unwrap();
    checkpoint::save(dir.path(), &Checkpoint::from_run(0, state, &report)).unwrap();
    let back = checkpoint::load(dir.path()).unwrap();
    for ((t, spec), d) in back.tasks.iter().zip(&tasks).zip(&report.final_probe_digests) {
        let out = sparse_prompt_core::trainer::probe_outputs(&back.state.policy, &t.final_masks, spec).unwrap();
        assert_eq!(sparse_prompt_core::trainer::digest(&out), *d);
    }
}
