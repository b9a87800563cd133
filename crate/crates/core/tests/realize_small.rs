//! End-to-end realization of the smallest trees.

use nodal_core::nodal::{realize_and_verify, RealizeParams};
use nodal_core::tree::RootedTree;

fn run(tree: &str) -> nodal_core::nodal::RealizeReport {
    let t = RootedTree::parse(tree).unwrap();
    let r = realize_and_verify(&t, &RealizeParams::default()).unwrap();
    eprintln!("{}", serde_json::to_string(&r.report).unwrap());
    r.report
}

#[test]
fn single_node_and_one_child() {
    for tree in ["[]", "[[]]"] {
        let r = run(tree);
        assert!(r.passed, "{tree}: {:?}", r.failure);
        assert!(r.structure_checks_ok, "{tree}: {:?}", r.nodes);
    }
}
