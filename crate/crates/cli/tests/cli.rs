use std::process::Command;

fn nodal(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nodal")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr))
}

#[test]
fn bad_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(nodal(&["realize-tree", "--tree", "[[]", "-o", out]).0, 1);
    assert_eq!(nodal(&["realize-tree", "--tree", "[]", "--dim", "2", "-o", out]).0, 1);
    assert_eq!(nodal(&["realize-tree", "--tree", "[]"]).0, 1);
    assert_eq!(nodal(&["analyze", &format!("{out}/missing.json")]).0, 1);
    assert_eq!(nodal(&["stats", "--config", "samples=many", "-o", out]).0, 1);
    // clap reports unknown subcommands itself, also with a nonzero code.
    assert_ne!(nodal(&["frobnicate"]).0, 0);
}

#[test]
fn sample_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("f.json");
    let f = field.to_str().unwrap();
    let (code, text) = nodal(&["sample", "--dim", "2", "--waves", "32", "--seed", "9", "-o", f]);
    assert_eq!(code, 0, "{text}");
    let first = std::fs::read(&field).unwrap();
    nodal(&["sample", "--dim", "2", "--waves", "32", "--seed", "9", "-o", f]);
    assert_eq!(first, std::fs::read(&field).unwrap());
    let out = dir.path().join("a");
    let (code, text) = nodal(&["analyze", f, "--box", "-6:6", "--res", "0.1", "-o", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("f.analysis.json")).unwrap()).unwrap();
    assert!(report["domains"].as_u64().unwrap() > 1);
    assert!(out.join("f.zero_set.obj").is_file());
}

#[test]
fn single_node_tree_is_realized() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = nodal(&["realize-tree", "--tree", "[]", "-o", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("PASS"));
    for f in ["report.json", "fit_report.json", "u_eps.json", "zero_set.obj", "extracted_tree.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["extracted"], "[]");
    assert_eq!(report["structure_checks_ok"], true);
}
