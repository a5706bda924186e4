//! The shipped config files parse and validate.

use std::path::PathBuf;

use macaron_sed::config::RunConfig;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

#[test]
fn default_conf_equals_builtin_defaults() {
    let cfg = RunConfig::load(config("default.conf")).unwrap();
    assert_eq!(cfg, RunConfig::default());
    cfg.validate().unwrap();
}

#[test]
fn toy_conf_is_valid_and_round_trips() {
    let cfg = RunConfig::load(config("toy.conf")).unwrap();
    cfg.validate().unwrap();
    assert!(cfg.toy.n_test > 0);
    let again = RunConfig::parse(&cfg.to_text(), &config("toy.conf")).unwrap();
    assert_eq!(again, cfg);
}
