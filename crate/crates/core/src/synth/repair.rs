//! Automatic fixes for two common proposal errors: parameters the node type
//! does not have, and a color/grayscale mismatch on an input.

use thiserror::Error;

use crate::graph::{
    Connection, ErrorCode, InputType, MaterialGraph, NodeDef, Registry, SignalType,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepairAction {
    DroppedParam { key: String },
    /// A converter named `node` now feeds `slot`.
    InsertedConverter { node: String, type_name: String, slot: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    /// Converter nodes to append before `node`.
    pub converters: Vec<NodeDef>,
    pub node: NodeDef,
    pub actions: Vec<RepairAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrepairable: {0}")]
pub struct Unrepairable(pub String);

fn converter(name: &str, from: SignalType, src: &Connection) -> NodeDef {
    let type_name = match from {
        SignalType::Color => "grayscale_conversion",
        // default stops give a black to white ramp
        SignalType::Grayscale => "gradient_map",
    };
    NodeDef::new(name, type_name).with_input("input", &src.src_node, &src.src_slot)
}

/// Drops unknown params and inserts conversion nodes on mistyped inputs.
/// The result is validated again; anything still failing is unrepairable.
pub fn repair(v: &NodeDef, g: &MaterialGraph, registry: &Registry) -> Result<RepairOutcome, Unrepairable> {
    let mut probe = v.clone();
    let report = g.check_candidate(&mut probe, registry);
    if report.ok {
        return Ok(RepairOutcome {
            converters: Vec::new(),
            node: probe,
            actions: Vec::new(),
        });
    }
    if let Some(e) = report
        .errors
        .iter()
        .find(|e| !matches!(e.code, ErrorCode::UnknownParam | ErrorCode::TypeMismatch))
    {
        return Err(Unrepairable(format!("{}: {}", e.code.as_str(), e.message)));
    }
    let spec = registry
        .interface(v)
        .ok_or_else(|| Unrepairable(format!("unknown type `{}`", v.type_name)))?;

    let mut node = v.clone();
    let mut actions = Vec::new();
    let unknown: Vec<String> = node
        .params
        .keys()
        .filter(|k| spec.param(k).is_none())
        .cloned()
        .collect();
    for key in unknown {
        node.params.remove(&key);
        actions.push(RepairAction::DroppedParam { key });
    }

    let src_type = |c: &Connection| g.slot_type(&c.src_node, &c.src_slot);
    let mut converters = Vec::new();
    let mut k = 0;
    for i in 0..node.connections.len() {
        let c = node.connections[i].clone();
        let Some(slot) = spec.input(&c.dst_slot) else { continue };
        let want = match &slot.ty {
            InputType::Fixed(t) => Some(*t),
            InputType::Any => None,
            InputType::SameAs(other) => node.connection(other).and_then(|o| src_type(o)),
        };
        let (Some(want), Some(have)) = (want, src_type(&c)) else { continue };
        if want == have {
            continue;
        }
        let name = format!("{}__conv{k}", node.name);
        k += 1;
        let conv = converter(&name, have, &c);
        actions.push(RepairAction::InsertedConverter {
            node: name.clone(),
            type_name: conv.type_name.clone(),
            slot: c.dst_slot.clone(),
        });
        converters.push(conv);
        node.connections[i] = Connection::new(&c.dst_slot, &name, "output");
    }

    let mut trial = g.clone();
    let mut placed = Vec::with_capacity(converters.len());
    for conv in converters {
        let mut conv = conv;
        let r = trial.check_candidate(&mut conv, registry);
        if !r.ok {
            return Err(Unrepairable(r.to_string()));
        }
        trial.nodes.push(conv.clone());
        placed.push(conv);
    }
    let r = trial.check_candidate(&mut node, registry);
    if !r.ok {
        return Err(Unrepairable(r.to_string()));
    }
    Ok(RepairOutcome {
        converters: placed,
        node,
        actions,
    })
}
