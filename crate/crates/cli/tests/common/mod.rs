#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use riskbench_core::FeatureRegistry;
use serde_json::Value;

pub const REGISTRY_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/features.toml");
pub const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

pub fn registry() -> FeatureRegistry {
    FeatureRegistry::load(REGISTRY_PATH).unwrap()
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(GOLDEN_DIR).join(name)
}

/// Compares `actual` with a checked-in golden file. With
/// `RISKBENCH_BLESS=1` the file is rewritten instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden(name);
    if std::env::var_os("RISKBENCH_BLESS").is_some() {
        std::fs::create_dir_all(GOLDEN_DIR).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{name}: {e}"))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{name} differs from golden file"))
    }
}

/// Runs the `riskbench` binary in `dir` against the sample registry.
pub fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskbench"))
        .current_dir(dir)
        .env("RISKBENCH_REGISTRY", REGISTRY_PATH)
        .env("RISKBENCH_STORE", dir.join("store"))
        .env_remove("RISKBENCH_SOURCE")
        .env_remove("RISKBENCH_SYNTH_SEED")
        .args(args)
        .output()
        .expect("riskbench binary runs")
}

/// Like [`cli`] but requires success and returns stdout.
pub fn cli_ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "riskbench {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Drops the fields of a model document that record when and how long a
/// fit ran.
pub fn without_timing(mut v: Value) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                map.remove("created_at");
                map.remove("wall_time_seconds");
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    strip(&mut v);
    v
}

pub fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}
