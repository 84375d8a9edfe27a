mod common;

use std::fs;

use common::fixture;
use proptest::prelude::*;
use serde_json::{json, Map, Value};
use vdesk_core::action::CommandRunner;
use vdesk_core::tools::{render_markdown, scan, ToolError, ToolLibrary};

fn args(v: Value) -> Map<String, Value> {
    v.as_object().unwrap().clone()
}

fn library() -> (tempfile::TempDir, ToolLibrary) {
    let dir = tempfile::tempdir().unwrap();
    for name in ["zipdir.sh", "echo_args.sh"] {
        fs::copy(fixture(&format!("fixtures/tools/{name}")), dir.path().join(name)).unwrap();
    }
    let lib = ToolLibrary::open(dir.path());
    (dir, lib)
}

#[test]
fn fixture_tools_scan_clean() {
    let r = scan(&fixture("fixtures/tools"));
    assert!(r.diagnostics.is_empty(), "{:?}", r.diagnostics);
    let names: Vec<_> = r.docs.iter().map(|d| d.name.as_str()).collect();
    assert_eq!(names, ["echo_args", "zipdir"]);
}

#[test]
fn doc_matches_golden() {
    let r = scan(&fixture("fixtures/tools"));
    let doc = r.docs.iter().find(|d| d.name == "echo_args").unwrap();
    let golden = fs::read_to_string(fixture("tests/golden/echo_args.md")).unwrap();
    assert_eq!(render_markdown(doc), golden);
}

#[test]
fn zipdir_packs_a_directory() {
    let (_dir, lib) = library();
    let work = tempfile::tempdir().unwrap();
    fs::create_dir(work.path().join("my docs")).unwrap();
    fs::write(work.path().join("my docs/a.txt"), "a").unwrap();
    let cmd = lib.render_command("zipdir", &args(json!({"src": "my docs"}))).unwrap();
    let out = CommandRunner::new(work.path()).run(&cmd).unwrap();
    assert!(out.success(), "{}", out.output);
    assert!(work.path().join("my docs.tar").is_file());
}

#[test]
fn argument_errors_name_the_param() {
    let (_dir, lib) = library();
    let e = lib.render_command("echo_args", &args(json!({"text": "x", "count": "many"})));
    assert!(matches!(e, Err(ToolError::ArgValidation { ref param, .. }) if param == "count"));
    let e = lib.render_command("echo_args", &args(json!({"text": "x", "colour": 1})));
    assert!(matches!(e, Err(ToolError::ArgValidation { ref param, .. }) if param == "colour"));
    let e = lib.render_command("echo_args", &args(json!({"text": "a\0b"})));
    assert!(matches!(e, Err(ToolError::ArgValidation { ref param, .. }) if param == "text"));
}

#[test]
fn metacharacters_stay_literal() {
    let (_dir, lib) = library();
    let work = tempfile::tempdir().unwrap();
    for text in ["$(touch a)", "`touch b`", "x; touch c", "' ; touch d; '", "\"$(touch e)\"", "x\ntouch f", "-n", "*"] {
        let cmd = lib.render_command("echo_args", &args(json!({"text": text}))).unwrap();
        let out = CommandRunner::new(work.path()).run(&cmd).unwrap();
        assert_eq!(out.output, format!("{text}\n1\n"), "{cmd}");
    }
    assert_eq!(fs::read_dir(work.path()).unwrap().count(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Whatever the argument holds, the tool receives it as one word and
    /// the shell runs nothing else.
    #[test]
    fn arguments_cannot_inject(text in "[^\0]{0,40}", count in any::<i32>()) {
        let (_dir, lib) = library();
        let work = tempfile::tempdir().unwrap();
        let cmd = lib
            .render_command("echo_args", &args(json!({"text": text, "count": count})))
            .unwrap();
        let out = CommandRunner::new(work.path()).run(&cmd).unwrap();
        prop_assert!(out.success());
        prop_assert_eq!(out.output, format!("{text}\n{count}\n"));
        prop_assert_eq!(fs::read_dir(work.path()).unwrap().count(), 0);
    }
}
