//! Golden tests for `--help` output and the generated half of docs/CLI.md.
//!
//! After changing flags, regenerate with `UPDATE_GOLDEN=1 cargo test -p dampen-cli --test help`.

use std::path::{Path, PathBuf};
use std::process::Command;

const SUBCOMMANDS: [&str; 8] = [
    "train",
    "importances",
    "unlearn",
    "mia",
    "sweep",
    "experiment",
    "synth",
    "inject",
];

const GENERATED_MARKER: &str = "<!-- Everything below is generated by crates/cli/tests/help.rs. -->";

fn help(sub: Option<&str>) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dampen"));
    cmd.args(sub).arg("--help").env_remove("COLUMNS");
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{sub:?} --help exited with {}", out.status);
    String::from_utf8(out.stdout).unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

fn check_golden(path: &Path, actual: &str) {
    if updating() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(path)
        .unwrap_or_else(|_| panic!("missing {}; run with UPDATE_GOLDEN=1", path.display()));
    assert_eq!(
        expected,
        actual,
        "{} is stale; run with UPDATE_GOLDEN=1",
        path.display()
    );
}

#[test]
fn top_level_help_matches_golden() {
    let text = help(None);
    for sub in SUBCOMMANDS {
        assert!(text.contains(&format!("  {sub} ")), "{sub} missing from top-level help");
    }
    check_golden(&golden_dir().join("dampen.txt"), &text);
}

#[test]
fn subcommand_help_matches_golden() {
    for sub in SUBCOMMANDS {
        check_golden(&golden_dir().join(format!("{sub}.txt")), &help(Some(sub)));
    }
}

#[test]
fn reference_page_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/CLI.md");
    let current = std::fs::read_to_string(&path).unwrap();
    let (manual, _) = current
        .split_once(GENERATED_MARKER)
        .unwrap_or_else(|| panic!("{} lacks the generated-section marker", path.display()));
    let mut page = format!(
        "{manual}{GENERATED_MARKER}\n\n## `dampen`\n\n```text\n{}```\n",
        help(None)
    );
    for sub in SUBCOMMANDS {
        page.push_str(&format!("\n## `dampen {sub}`\n\n```text\n{}```\n", help(Some(sub))));
    }
    check_golden(&path, &page);
}
