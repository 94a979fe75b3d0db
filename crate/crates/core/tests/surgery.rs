//! Rewrite passes on the bundled graphs: node-level deltas, safety guards,
//! behavioral equivalence, and interface stability.

use std::collections::BTreeSet;

use portir_core::capability::{check_compatibility, Diagnostic, Profile};
use portir_core::feedgen::gen_feed_sets;
use portir_core::interp::{create_session, Boundary};
use portir_core::ir::{dims, AttrValue, DType, Graph, Node, OpKind, TensorSpec, TensorValue};
use portir_core::surgery::equivalence::{verify_equivalence, EquivalenceConfig};
use portir_core::surgery::{
    find_pass, interface_preserved, plan_repairs, registry, RewriteOutcome, SurgeryError,
};
use portir_core::toys;

fn first_diag(g: &Graph, profile: &Profile) -> Option<Diagnostic> {
    check_compatibility(g, profile).unwrap().into_iter().next()
}

/// Applies the first plan entry that accepts the node, as the build stage
/// would, and returns the pass id with the outcome.
fn apply_planned(g: &Graph, diag: &Diagnostic) -> (String, RewriteOutcome) {
    for id in plan_repairs(g, diag, &[]) {
        let pass = find_pass(&id).unwrap();
        match pass.apply(g, diag) {
            Ok(outcome) => return (id, outcome),
            Err(SurgeryError::WrongDtype { .. }) | Err(SurgeryError::SignUnsafe(_)) => continue,
            Err(other) => panic!("pass {id} failed unexpectedly: {other}"),
        }
    }
    panic!("no pass in the plan accepted {diag}");
}

fn repair_fully(mut g: Graph, profile: &Profile) -> (Graph, Vec<String>) {
    let mut applied = Vec::new();
    for _ in 0..16 {
        let Some(diag) = first_diag(&g, profile) else {
            return (g, applied);
        };
        let (id, outcome) = apply_planned(&g, &diag);
        applied.push(id);
        g = outcome.graph;
    }
    panic!("repair of {} did not converge", g.name);
}

fn node_ids(g: &Graph) -> BTreeSet<String> {
    g.nodes.iter().map(|n| n.id.clone()).collect()
}

#[test]
fn every_static_toy_repairs_clean_under_qnn_like() {
    let profile = Profile::builtin("qnn-like").unwrap();
    for name in toys::TOY_NAMES {
        let g = toys::build(name).unwrap();
        if !g.symbols().is_empty() {
            continue;
        }
        let (fixed, applied) = repair_fully(g.clone(), &profile);
        assert!(
            first_diag(&fixed, &profile).is_none(),
            "{name}: diagnostics remain after {applied:?}"
        );
        assert!(
            interface_preserved(&g, &fixed),
            "{name}: repair changed the graph interface"
        );
        let report = verify_equivalence(&g, &fixed, &EquivalenceConfig::default()).unwrap();
        assert!(
            report.passed,
            "{name}: rewritten graph diverges after {applied:?}: {:?}",
            report.failures
        );
    }
}

#[test]
fn toy_det_repair_applies_the_documented_pass_sequence() {
    let profile = Profile::builtin("qnn-like").unwrap();
    let (_, applied) = repair_fully(toys::build("toy-det").unwrap(), &profile);
    assert_eq!(applied, vec!["expand_mod_float", "eliminate_floor"]);
    let (_, applied) = repair_fully(toys::build("toy-det-int").unwrap(), &profile);
    assert_eq!(applied, vec!["expand_mod_integer"]);
}

#[test]
fn snpe_like_needs_one_pass_fewer_on_the_float_det_graph() {
    // snpe-like supports Floor, so the float Mod expansion already lands on
    // supported ops and the follow-up floor elimination never runs.
    let profile = Profile::builtin("snpe-like").unwrap();
    let (_, applied) = repair_fully(toys::build("toy-det").unwrap(), &profile);
    assert_eq!(applied, vec!["expand_mod_float"]);
}

#[test]
fn outcome_deltas_match_the_actual_graph_change() {
    let profile = Profile::builtin("qnn-like").unwrap();
    for name in toys::TOY_NAMES {
        let mut g = toys::build(name).unwrap();
        if !g.symbols().is_empty() {
            continue;
        }
        for _ in 0..16 {
            let Some(diag) = first_diag(&g, &profile) else {
                break;
            };
            let before = node_ids(&g);
            let (id, outcome) = apply_planned(&g, &diag);
            let after = node_ids(&outcome.graph);
            let removed: BTreeSet<String> = outcome.removed.iter().cloned().collect();
            let added: BTreeSet<String> = outcome.added.iter().cloned().collect();
            assert_eq!(
                removed,
                before.difference(&after).cloned().collect::<BTreeSet<_>>(),
                "{name}/{id}: removed list does not match the graph delta"
            );
            assert_eq!(
                added,
                after.difference(&before).cloned().collect::<BTreeSet<_>>(),
                "{name}/{id}: added list does not match the graph delta"
            );
            assert_eq!(after.len(), outcome.graph.nodes.len(), "{name}/{id}: duplicate ids");
            g = outcome.graph;
        }
    }
}

#[test]
fn a_pass_cannot_apply_twice_to_the_same_diagnostic() {
    let profile = Profile::builtin("qnn-like").unwrap();
    let g = toys::build("toy-det").unwrap();
    let diag = first_diag(&g, &profile).unwrap();
    let pass = find_pass("expand_mod_float").unwrap();
    let outcome = pass.apply(&g, &diag).unwrap();
    let err = pass.apply(&outcome.graph, &diag).unwrap_err();
    assert!(
        matches!(err, SurgeryError::NoSuchNode(_)),
        "re-applying to a consumed diagnostic must fail cleanly, got {err}"
    );
}

#[test]
fn float_mod_expansion_reproduces_the_reference_bit_for_bit() {
    let profile = Profile::builtin("qnn-like").unwrap();
    let g = toys::build("toy-det").unwrap();
    let diag = first_diag(&g, &profile).unwrap();
    let outcome = find_pass("expand_mod_float").unwrap().apply(&g, &diag).unwrap();
    let before = create_session(&g, Boundary::Identity).unwrap();
    let after = create_session(&outcome.graph, Boundary::Identity).unwrap();
    for feeds in gen_feed_sets(&g.inputs, 1234, 32).unwrap() {
        let x = before.run(&feeds).unwrap();
        let y = after.run(&feeds).unwrap();
        for (name, want) in &x {
            assert_eq!(
                want.to_le_bytes(),
                y[name].to_le_bytes(),
                "{name}: expansion must be bit-exact"
            );
        }
    }
}

#[test]
fn maxpool3d_decomposition_is_exact() {
    let profile = Profile::builtin("qnn-like").unwrap();
    let g = toys::build("toy-lpr").unwrap();
    let diag = first_diag(&g, &profile).unwrap();
    let outcome = find_pass("decompose_maxpool3d").unwrap().apply(&g, &diag).unwrap();
    assert!(interface_preserved(&g, &outcome.graph));
    let before = create_session(&g, Boundary::Identity).unwrap();
    let after = create_session(&outcome.graph, Boundary::Identity).unwrap();
    for feeds in gen_feed_sets(&g.inputs, 77, 16).unwrap() {
        let x = before.run(&feeds).unwrap();
        let y = after.run(&feeds).unwrap();
        for (name, want) in &x {
            assert_eq!(
                want.to_le_bytes(),
                y[name].to_le_bytes(),
                "{name}: max-of-maxes must be exact"
            );
        }
    }
}

#[test]
fn integer_mod_expansion_requires_nonnegative_operands() {
    // Same structure as the bundled integer graph, but the declared range
    // admits negative values, so the truncation-equals-floor proof fails.
    let mut g = Graph::new("negmod");
    g.inputs
        .push(TensorSpec::new("x", DType::I64, dims(&[4])).with_range(-5.0, 5.0));
    g.add_constant("k", TensorValue::i64(vec![], vec![3]));
    g.nodes.push(Node::new("m", OpKind::Mod, ["x", "k"], ["y"]));
    g.outputs.push(TensorSpec::new("y", DType::I64, dims(&[4])));

    let profile = Profile::builtin("qnn-like").unwrap();
    let diag = first_diag(&g, &profile).unwrap();
    let err = find_pass("expand_mod_integer").unwrap().apply(&g, &diag).unwrap_err();
    assert!(
        matches!(err, SurgeryError::SignUnsafe(_)),
        "negative range must refuse the rewrite, got {err}"
    );

    // Tightening the range to nonnegative makes the same rewrite legal.
    let mut ok = g.clone();
    ok.inputs[0].range = Some((0.0, 5.0));
    let diag = first_diag(&ok, &profile).unwrap();
    let outcome = find_pass("expand_mod_integer").unwrap().apply(&ok, &diag).unwrap();
    let report = verify_equivalence(&ok, &outcome.graph, &EquivalenceConfig::default()).unwrap();
    assert!(report.passed, "{:?}", report.failures);
    assert_eq!(report.max_abs, 0.0, "integer rewrite must be exact");
}

#[test]
fn float_passes_reject_integer_nodes_with_a_typed_error() {
    // Planning is dtype-blind by design; the typed refusal is what the
    // repair loop records and learns from.
    let profile = Profile::builtin("qnn-like").unwrap();
    let g = toys::build("toy-det-int").unwrap();
    let diag = first_diag(&g, &profile).unwrap();
    let float_pass = find_pass("expand_mod_float").unwrap();
    assert!(float_pass.applicable(&g, &diag));
    let err = float_pass.apply(&g, &diag).unwrap_err();
    assert!(matches!(err, SurgeryError::WrongDtype { .. }), "{err}");
}

#[test]
fn eliminate_floor_requires_provable_signs() {
    // floor(a/b) via integer division is only sound when the analysis can
    // prove a nonnegative integer-valued dividend and a positive divisor.
    let build = |range: Option<(f64, f64)>| {
        let mut g = Graph::new("floordiv");
        let mut spec = TensorSpec::new("x", DType::F32, dims(&[4]));
        spec.range = range;
        g.inputs.push(spec);
        g.add_constant("k", TensorValue::scalar_f32(4.0));
        g.nodes.push(Node::new("d", OpKind::Div, ["x", "k"], ["q"]));
        g.nodes.push(Node::new("f", OpKind::Floor, ["q"], ["y"]));
        g.outputs.push(TensorSpec::new("y", DType::F32, dims(&[4])));
        g
    };
    let profile = Profile::builtin("qnn-like").unwrap();

    let unsafe_graph = build(Some((-8.0, 8.0)));
    let diag = check_compatibility(&unsafe_graph, &profile)
        .unwrap()
        .into_iter()
        .find(|d| d.op.as_deref() == Some("Floor"))
        .unwrap();
    let err = find_pass("eliminate_floor").unwrap().apply(&unsafe_graph, &diag).unwrap_err();
    assert!(matches!(err, SurgeryError::SignUnsafe(_)), "{err}");
}

#[test]
fn einsum_lowering_stays_within_float_tolerance() {
    let profile = Profile::builtin("qnn-like").unwrap();
    let g = toys::build("toy-einsum").unwrap();
    let diag = first_diag(&g, &profile).unwrap();
    let outcome = find_pass("lower_einsum").unwrap().apply(&g, &diag).unwrap();
    assert!(interface_preserved(&g, &outcome.graph));
    assert!(
        !outcome.graph.nodes.iter().any(|n| n.op == OpKind::Einsum),
        "lowering must remove the Einsum node"
    );
    let report = verify_equivalence(&g, &outcome.graph, &EquivalenceConfig::default()).unwrap();
    assert!(report.passed, "{:?}", report.failures);
    assert!(report.max_rel <= 1e-6, "max rel {} above budget", report.max_rel);
}

#[test]
fn lowering_refuses_equations_it_cannot_prove() {
    // An equation outside the supported contraction family must be a typed
    // refusal, not a silent mis-rewrite.
    let mut g = Graph::new("odd-einsum");
    g.inputs.push(TensorSpec::new("a", DType::F32, dims(&[2, 3])));
    g.inputs.push(TensorSpec::new("b", DType::F32, dims(&[2, 3])));
    g.nodes.push(
        Node::new("e", OpKind::Einsum, ["a", "b"], ["y"])
            .with_attr("equation", AttrValue::Str("ij,ij->ij".into())),
    );
    g.outputs.push(TensorSpec::new("y", DType::F32, dims(&[2, 3])));
    let profile = Profile::builtin("qnn-like").unwrap();
    let diag = first_diag(&g, &profile).unwrap();
    match find_pass("lower_einsum").unwrap().apply(&g, &diag) {
        Err(SurgeryError::UnsupportedEquation(_)) => {}
        Ok(outcome) => {
            // If the pass does handle elementwise products, the rewrite must
            // still be equivalent; either behavior is acceptable, silence is
            // not.
            let report =
                verify_equivalence(&g, &outcome.graph, &EquivalenceConfig::default()).unwrap();
            assert!(report.passed, "{:?}", report.failures);
        }
        Err(other) => panic!("unexpected error {other}"),
    }
}

#[test]
fn interface_preservation_holds_for_every_pass_on_every_toy() {
    let qnn = Profile::builtin("qnn-like").unwrap();
    let snpe = Profile::builtin("snpe-like").unwrap();
    for profile in [&qnn, &snpe] {
        for name in toys::TOY_NAMES {
            let mut g = toys::build(name).unwrap();
            for _ in 0..16 {
                let Some(diag) = first_diag(&g, profile) else {
                    break;
                };
                // Try every registered pass on this diagnostic, not just the
                // planned one; any successful rewrite must keep the interface.
                let mut next = None;
                for pass in registry() {
                    if let Ok(outcome) = pass.apply(&g, &diag) {
                        assert!(
                            interface_preserved(&g, &outcome.graph),
                            "{name}/{}: interface broken",
                            pass.id()
                        );
                        next.get_or_insert(outcome.graph);
                    }
                }
                match next {
                    Some(graph) => g = graph,
                    None => break,
                }
            }
        }
    }
}
