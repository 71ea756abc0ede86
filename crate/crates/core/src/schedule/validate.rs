use std::collections::{BTreeSet, HashSet};

use crate::cin::{CinStmt, IndexVar, ParallelUnit, Params, ProvenanceGraph, Relation};

/// Group sizes a GPUGroup may take.
pub const GROUP_SIZES: [i64; 5] = [2, 4, 8, 16, 32];

/// Variables whose value can be reconstructed from the loop variables by
/// inverting the relations.
pub fn recoverable_vars(cin: &CinStmt) -> HashSet<String> {
    let mut known: HashSet<String> = cin.foralls().iter().map(|(v, _)| v.0.clone()).collect();
    loop {
        let before = known.len();
        for r in cin.relations() {
            let has = |v: &IndexVar| known.contains(v.name());
            let new: Vec<&IndexVar> = match r {
                Relation::Fuse { outer, inner, fused } if has(fused) => vec![outer, inner],
                Relation::Pos { var, pos_var, .. } if has(pos_var) => vec![var],
                Relation::Split { parent, outer, inner, .. } if has(outer) && has(inner) => vec![parent],
                Relation::Bound { parent, bounded, .. } if has(bounded) => vec![parent],
                _ => vec![],
            };
            for v in new {
                known.insert(v.0.clone());
            }
        }
        if known.len() == before {
            return known;
        }
    }
}

/// Diagnostics explaining why `cin` cannot be lowered. Empty means
/// lowerable. Symbolic sizes are accepted here; use
/// [`validate_with_params`] to check them against concrete values.
pub fn validate_schedule(cin: &CinStmt) -> Vec<String> {
    let mut diags = cin.check();

    for unit in [ParallelUnit::GPUBlock, ParallelUnit::GPUThread] {
        if cin.hardware_var(unit).is_none() {
            diags.push(format!("missing {unit:?} binding"));
        }
    }

    let graph = ProvenanceGraph::new(cin.relations());
    if let Some((var, ann)) = cin.group_annotation() {
        if let Some(g) = &ann.group {
            if g.size.is_literal() {
                match g.size.eval_literal() {
                    Ok(v) if GROUP_SIZES.contains(&v) => {}
                    Ok(v) => diags.push(format!("group size {v} outside {{2,4,8,16,32}}")),
                    Err(e) => diags.push(format!("group size: {e}")),
                }
            }
        }
        match (cin.resolve_group_var(), cin.hardware_var(ParallelUnit::GPUThread)) {
            (Some(g), Some(t)) if &g == t && graph.is_position_space(t) => {}
            (Some(g), _) => diags.push(format!("GPUGroup on '{g}' must target the position-space GPUThread loop")),
            (None, _) => diags.push(format!("GPUGroup target '{var}' is not defined")),
        }
    }

    for r in cin.relations() {
        let size = match r {
            Relation::Split { factor, .. } => factor,
            Relation::Bound { extent, .. } => extent,
            _ => continue,
        };
        if size.is_literal() {
            match size.eval_literal() {
                Ok(v) if v >= 1 => {}
                Ok(v) => diags.push(format!("size '{size}' evaluates to {v}, must be positive")),
                Err(e) => diags.push(format!("{e}")),
            }
        }
    }

    let dims: BTreeSet<String> = cin.accesses().iter().flat_map(|a| a.indices.iter().map(|v| v.0.clone())).collect();
    for (v, _) in cin.foralls() {
        let roots = graph.roots(v);
        if let Some(r) = roots.iter().find(|r| !dims.contains(*r)) {
            diags.push(format!("extent of '{v}' is not derivable (root '{r}' indexes no tensor)"));
        }
    }
    let recoverable = recoverable_vars(cin);
    for d in &dims {
        if !recoverable.contains(d) {
            diags.push(format!("index '{d}' cannot be recovered from the loop variables"));
        }
    }
    diags
}

/// [`validate_schedule`] after substituting concrete parameter values,
/// which also checks that every division in a size is exact.
pub fn validate_with_params(cin: &CinStmt, params: &Params) -> Vec<String> {
    validate_schedule(&cin.substitute(params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cin::parse_cin;

    #[test]
    fn duplicate_block_binding_is_reported() {
        let s =
            parse_cin("forall(i,forall(j,forall(k,C(i,k)+=A(i,j)*B(j,k)),GPUBlock,NoRaces),GPUBlock,NoRaces)").unwrap();
        let d = validate_schedule(&s);
        assert!(d.iter().any(|m| m.contains("duplicate hardware unit")), "{d:?}");
    }

    #[test]
    fn oversized_group_is_reported() {
        let s = parse_cin(
            "suchthat(forall(i,forall(jpos,forall(k,C(i,k)+=A(i,j)*B(j,k)),GPUThread,Atomics),GPUBlock,NoRaces),\
             pos(j,jpos,A(i,j)) and parallelize(jpos,GPUGroup,64,Atomics))",
        )
        .unwrap();
        let d = validate_schedule(&s);
        assert!(d.iter().any(|m| m.contains("group size 64")), "{d:?}");
    }

    #[test]
    fn missing_units_are_reported() {
        let d = validate_schedule(&CinStmt::spmm());
        assert!(d.iter().any(|m| m.contains("GPUBlock")));
        assert!(d.iter().any(|m| m.contains("GPUThread")));
    }
}
