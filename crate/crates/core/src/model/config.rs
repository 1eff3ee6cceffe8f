use super::{ModelError, ModelResult, RobotSpec};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Parses and validates a robot description document.
///
/// Legs may reference a shared joint chain with `chain = "<name>"`, resolved
/// against the top-level `[chains.<name>]` tables; a leg's own `joints` list
/// takes precedence.
pub fn load_robot_spec(text: &str) -> ModelResult<RobotSpec> {
    let mut doc: Table = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    expand_chains(&mut doc)?;
    let spec: RobotSpec = Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| ModelError::Parse(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

/// Canonical document for a spec; loading it yields an equal spec.
pub fn serialize_robot_spec(spec: &RobotSpec) -> String {
    toml::to_string(spec).expect("robot spec serialises to TOML")
}

/// Hex SHA-256 of the canonical document, used to key cached workspaces.
pub fn robot_spec_digest(spec: &RobotSpec) -> String {
    hex::encode(Sha256::digest(serialize_robot_spec(spec).as_bytes()))
}

fn expand_chains(doc: &mut Table) -> ModelResult<()> {
    let chains = match doc.remove("chains") {
        None => Table::new(),
        Some(Value::Table(t)) => t,
        Some(_) => return Err(ModelError::Parse("`chains` must be a table".into())),
    };
    let Some(Value::Array(legs)) = doc.get_mut("legs") else {
        return Ok(());
    };
    for (i, leg) in legs.iter_mut().enumerate() {
        let Value::Table(leg) = leg else {
            return Err(ModelError::Parse(format!("legs[{i}] must be a table")));
        };
        let Some(chain) = leg.remove("chain") else {
            continue;
        };
        let name = chain
            .as_str()
            .ok_or_else(|| ModelError::Parse(format!("legs[{i}].chain must be a string")))?;
        let joints = chains
            .get(name)
            .and_then(|c| c.get("joints"))
            .cloned()
            .ok_or_else(|| ModelError::invalid(format!("legs[{i}].chain"), format!("unknown chain `{name}`")))?;
        leg.entry("joints").or_insert(joints);
    }
    Ok(())
}
