use super::{ModelError, ModelResult};
use serde::{Deserialize, Serialize};

/// Gait definition in integer phase units.
///
/// A leg's local phase is `(phase − offset_multiplier[leg]·phase_offset) mod period`;
/// the first `stance_phase` units of the period are stance, the rest swing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaitSpec {
    pub name: String,
    pub stance_phase: u32,
    pub swing_phase: u32,
    pub phase_offset: u32,
    pub offset_multiplier: Vec<u32>,
}

impl GaitSpec {
    pub fn period(&self) -> u32 {
        self.stance_phase + self.swing_phase
    }

    /// Duty factor β = stance / period.
    pub fn duty_factor(&self) -> f64 {
        f64::from(self.stance_phase) / f64::from(self.period())
    }

    pub fn leg_offset(&self, leg_index: usize) -> Option<u32> {
        self.offset_multiplier.get(leg_index).map(|m| m * self.phase_offset)
    }

    pub fn validate(&self) -> ModelResult<()> {
        let f = |field: &str| format!("gait `{}`.{field}", self.name);
        if self.name.trim().is_empty() {
            return Err(ModelError::invalid("gait.name", "must not be empty"));
        }
        if self.stance_phase == 0 {
            return Err(ModelError::invalid(f("stance_phase"), "must be > 0 (duty factor would be 0)"));
        }
        if self.swing_phase == 0 {
            return Err(ModelError::invalid(f("swing_phase"), "must be > 0 (duty factor would be 1)"));
        }
        if self.offset_multiplier.is_empty() {
            return Err(ModelError::invalid(f("offset_multiplier"), "must list at least one leg"));
        }
        let period = self.period();
        for (i, m) in self.offset_multiplier.iter().enumerate() {
            let offset = u64::from(*m) * u64::from(self.phase_offset);
            if offset >= u64::from(period) {
                return Err(ModelError::invalid(
                    format!("{}[{i}]", f("offset_multiplier")),
                    format!("offset {offset} must be < period {period}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct GaitDocument {
    gaits: Vec<GaitSpec>,
}

pub fn load_gait_library(text: &str) -> ModelResult<Vec<GaitSpec>> {
    let doc: GaitDocument = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let mut seen = std::collections::HashSet::new();
    for g in &doc.gaits {
        g.validate()?;
        if !seen.insert(g.name.clone()) {
            return Err(ModelError::invalid("gaits", format!("duplicate gait `{}`", g.name)));
        }
    }
    Ok(doc.gaits)
}

pub fn serialize_gait_library(gaits: &[GaitSpec]) -> String {
    toml::to_string(&GaitDocument { gaits: gaits.to_vec() }).expect("gait library serialises to TOML")
}

pub const DEFAULT_GAITS_TOML: &str = include_str!("../../configs/gaits.toml");

pub fn default_gait_library() -> Vec<GaitSpec> {
    load_gait_library(DEFAULT_GAITS_TOML).expect("bundled gait library is valid")
}
