#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use icode_mppi_cli::RunConfiguration;

/// A configuration small enough that a full bench grid finishes in seconds.
pub fn tiny_config() -> RunConfiguration {
    let text = r#"{
        "mppi": {"num_samples": 48, "horizon": 8},
        "train": {
            "hidden": [4, 4], "epochs_per_iter": 2, "n_random": 120, "batch_size": 32,
            "n_iterations": 1, "task_episodes_per_iter": 1, "task_episode_duration": 1.0,
            "random_episode_steps": 40
        },
        "path": {"n_points": 200},
        "episode_duration": 2.0,
        "bench": {"n_seeds": 2}
    }"#;
    RunConfiguration::from_json_str(text, Path::new("tiny.json")).expect("tiny config is valid")
}

/// Name to contents of every file directly inside `dir` with one of `exts`.
pub fn files_with_ext(dir: &Path, exts: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("readable dir") {
        let p = entry.expect("dir entry").path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if p.is_file() && exts.contains(&ext) {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}
