//! Binding symbolic dims to concrete extents.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ir::{Dim, Graph};

#[derive(Debug, Error)]
pub enum BindError {
    #[error("binding {0} does not name a symbolic dim of this graph")]
    UnknownSymbol(String),
    #[error("binding {name}={value} is not a valid extent; extents are at least 1")]
    InvalidExtent { name: String, value: u64 },
    #[error("symbolic dims remain unbound: {}", .0.join(", "))]
    UnboundSymbol(Vec<String>),
}

/// Replaces symbolic dims named in `bindings` with static extents across the
/// declared inputs and outputs. Bindings must name symbols the graph
/// actually uses and must be positive; symbols without bindings survive.
pub fn bind_shapes(g: &Graph, bindings: &BTreeMap<String, u64>) -> Result<Graph, BindError> {
    let known = g.symbols();
    for (name, &value) in bindings {
        if !known.contains(name) {
            return Err(BindError::UnknownSymbol(name.clone()));
        }
        if value == 0 {
            return Err(BindError::InvalidExtent { name: name.clone(), value });
        }
    }
    let mut bound = g.clone();
    for spec in bound.inputs.iter_mut().chain(bound.outputs.iter_mut()) {
        for dim in &mut spec.shape {
            if let Dim::Symbolic(sym) = dim {
                if let Some(&value) = bindings.get(sym.as_str()) {
                    *dim = Dim::Static(value);
                }
            }
        }
    }
    Ok(bound)
}

/// Symbols still present after any binding.
pub fn unbound_symbols(g: &Graph) -> BTreeSet<String> {
    g.symbols()
}

/// Like [`bind_shapes`], but requires the result to be fully static.
pub fn bind_all(g: &Graph, bindings: &BTreeMap<String, u64>) -> Result<Graph, BindError> {
    let bound = bind_shapes(g, bindings)?;
    let leftover = unbound_symbols(&bound);
    if !leftover.is_empty() {
        return Err(BindError::UnboundSymbol(leftover.into_iter().collect()));
    }
    Ok(bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedgen::gen_feeds;
    use crate::interp::{create_session, Boundary};
    use crate::toys;

    fn n4() -> BTreeMap<String, u64> {
        BTreeMap::from([("N".to_string(), 4u64)])
    }

    #[test]
    fn binding_makes_a_dynamic_graph_runnable() {
        let g = toys::toy_dyn();
        assert!(create_session(&g, Boundary::Identity).is_err());
        let bound = bind_all(&g, &n4()).unwrap();
        assert!(unbound_symbols(&bound).is_empty());
        let session = create_session(&bound, Boundary::Identity).unwrap();
        let feeds = gen_feeds(&bound.inputs, 3).unwrap();
        let out = session.run(&feeds).unwrap();
        assert_eq!(out["scores"].shape, vec![4, 3]);
    }

    #[test]
    fn unknown_symbols_are_rejected() {
        let g = toys::toy_dyn();
        let bindings = BTreeMap::from([("T".to_string(), 4u64)]);
        let err = bind_shapes(&g, &bindings).unwrap_err();
        assert!(matches!(err, BindError::UnknownSymbol(_)), "{err}");
    }

    #[test]
    fn zero_extents_are_rejected() {
        let g = toys::toy_dyn();
        let bindings = BTreeMap::from([("N".to_string(), 0u64)]);
        let err = bind_shapes(&g, &bindings).unwrap_err();
        assert!(matches!(err, BindError::InvalidExtent { .. }), "{err}");
    }

    #[test]
    fn bind_all_reports_leftover_symbols() {
        let g = toys::toy_dyn();
        let err = bind_all(&g, &BTreeMap::new()).unwrap_err();
        match err {
            BindError::UnboundSymbol(syms) => assert_eq!(syms, vec!["N".to_string()]),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn partial_binding_keeps_other_symbols() {
        let mut g = toys::toy_dyn();
        // Give the output feature dim its own symbol so two symbols coexist.
        g.inputs[0].shape[1] = crate::ir::Dim::Symbolic("F".into());
        assert_eq!(g.symbols().len(), 2);
        let bound = bind_shapes(&g, &n4()).unwrap();
        assert_eq!(
            unbound_symbols(&bound).into_iter().collect::<Vec<_>>(),
            vec!["F".to_string()]
        );
    }
}
