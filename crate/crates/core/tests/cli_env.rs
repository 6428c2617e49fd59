// Separate binary: it sets a process-wide environment variable.
mod common;

use common::*;

#[test]
fn seed_env_sets_default_seed() {
    std::env::set_var(occkit::cli::SEED_ENV, "42");
    let (code, out, _) = occkit(&["--json", "affinity", "--clean", "1", "--aug", "2"]);
    assert_eq!(code, 0);
    assert_eq!(json(&out)["config"]["seed"], 42);
    let (_, out, _) = occkit(&["--json", "--seed", "3", "affinity", "--clean", "1", "--aug", "2"]);
    assert_eq!(json(&out)["config"]["seed"], 3);
}
