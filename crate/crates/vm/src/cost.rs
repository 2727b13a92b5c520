use serde::{Deserialize, Serialize};

use kforge_compiler::lir::Space;

/// Cycle costs charged by the VM. Arithmetic and memory costs are charged per
/// active lane; shuffles and barriers per warp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub arithmetic: u64,
    pub local: u64,
    pub param: u64,
    pub shared: u64,
    pub global: u64,
    /// Extra cost of a generic access on top of the resolved space.
    pub generic_surcharge: u64,
    pub shuffle_per_word: u64,
    pub barrier_per_warp: u64,
    pub launch: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable {
            arithmetic: 1,
            local: 1,
            param: 2,
            shared: 4,
            global: 20,
            generic_surcharge: 20,
            shuffle_per_word: 2,
            barrier_per_warp: 10,
            launch: 100,
        }
    }
}

impl CostTable {
    pub fn from_json(s: &str) -> Result<CostTable, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost table serializes")
    }

    /// Cost of one access tagged `tag` that resolved to `resolved`.
    pub fn memory(&self, tag: Space, resolved: Space) -> u64 {
        let base = match resolved {
            Space::Local => self.local,
            Space::Param => self.param,
            Space::Shared => self.shared,
            Space::Global | Space::Generic => self.global,
        };
        if tag == Space::Generic {
            base + self.generic_surcharge
        } else {
            base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let c = CostTable { global: 33, ..CostTable::default() };
        assert_eq!(CostTable::from_json(&c.to_json()).unwrap(), c);
        assert!(CostTable::from_json("{\"global\": 1}").is_err());
    }

    #[test]
    fn generic_pays_surcharge() {
        let c = CostTable::default();
        assert_eq!(c.memory(Space::Generic, Space::Global) - c.memory(Space::Global, Space::Global), c.generic_surcharge);
        assert_eq!(c.memory(Space::Param, Space::Param), 2);
    }
}
