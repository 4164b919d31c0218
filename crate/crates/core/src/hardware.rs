//! Accelerator description: a PE array with fixed spatial unrolling and an
//! operand-aware memory hierarchy.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("memory level `{level}`: {message}")]
    Level { level: String, message: String },
    #[error("accelerator: {0}")]
    Invalid(String),
    #[error("level {level} is not on the {operand} chain")]
    NotOnChain { level: usize, operand: Operand },
}

/// Loop dimensions of a convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    K,
    C,
    OX,
    OY,
    FX,
    FY,
}

impl Dim {
    pub const ALL: [Dim; 6] = [Dim::K, Dim::C, Dim::OX, Dim::OY, Dim::FX, Dim::FY];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operand {
    W,
    I,
    O,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::W, Operand::I, Operand::O];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortDir {
    #[serde(rename = "r", alias = "read")]
    Read,
    #[serde(rename = "w", alias = "write")]
    Write,
    #[serde(rename = "rw", alias = "read-write")]
    ReadWrite,
}

impl PortDir {
    pub fn can_read(self) -> bool {
        matches!(self, PortDir::Read | PortDir::ReadWrite)
    }

    pub fn can_write(self) -> bool {
        matches!(self, PortDir::Write | PortDir::ReadWrite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub dir: PortDir,
    pub bw_bits_per_cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLevel {
    pub name: String,
    pub capacity_bits: u64,
    pub word_length_bits: u64,
    #[serde(rename = "read_energy_pJ")]
    pub read_energy_pj: f64,
    #[serde(rename = "write_energy_pJ")]
    pub write_energy_pj: f64,
    pub ports: Vec<Port>,
    pub serves: Vec<Operand>,
    #[serde(default)]
    pub offchip: bool,
    /// Free-form provenance remark carried through from config files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MemoryLevel {
    pub fn serves(&self, op: Operand) -> bool {
        self.serves.contains(&op)
    }

    /// Index of the port used for reads (first read-only port, else first read-write).
    pub fn read_port(&self) -> Option<usize> {
        self.ports
            .iter()
            .position(|p| p.dir == PortDir::Read)
            .or_else(|| self.ports.iter().position(|p| p.dir.can_read()))
    }

    pub fn write_port(&self) -> Option<usize> {
        self.ports
            .iter()
            .position(|p| p.dir == PortDir::Write)
            .or_else(|| self.ports.iter().position(|p| p.dir.can_write()))
    }

    /// Words needed to move `bits` through this level's word interface.
    pub fn words_for(&self, bits: u64) -> u64 {
        bits.div_ceil(self.word_length_bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accelerator {
    pub name: String,
    pub mac_count: u64,
    #[serde(rename = "unit_mac_energy_pJ")]
    pub unit_mac_energy_pj: f64,
    pub spatial_unrolling: Vec<(Dim, u64)>,
    /// Ordered lowest (closest to the PEs) to highest.
    pub memory_levels: Vec<MemoryLevel>,
    /// Explicit bypass wiring between non-adjacent levels, by name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub direct_paths: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Accelerator {
    pub fn validate(&self) -> Result<(), HwError> {
        if self.mac_count == 0 {
            return Err(HwError::Invalid("mac_count must be >= 1".into()));
        }
        let mut unrolled = 1u64;
        for (dim, f) in &self.spatial_unrolling {
            if *f == 0 {
                return Err(HwError::Invalid(format!("unroll factor for {dim} is 0")));
            }
            unrolled = unrolled.saturating_mul(*f);
        }
        if unrolled > self.mac_count {
            return Err(HwError::Invalid(format!(
                "spatial unrolling uses {unrolled} MACs but the array has {}",
                self.mac_count
            )));
        }
        let mut names = HashSet::new();
        for level in &self.memory_levels {
            let err = |message: &str| HwError::Level {
                level: level.name.clone(),
                message: message.to_string(),
            };
            if !names.insert(level.name.as_str()) {
                return Err(err("duplicate level name"));
            }
            if level.capacity_bits == 0 || level.word_length_bits == 0 {
                return Err(err("capacity and word length must be > 0"));
            }
            if level.ports.is_empty() || level.ports.iter().any(|p| p.bw_bits_per_cycle == 0) {
                return Err(err("needs at least one port and every bandwidth must be > 0"));
            }
            if level.read_port().is_none() || level.write_port().is_none() {
                return Err(err("needs a readable and a writable port"));
            }
            if level.serves.is_empty() {
                return Err(err("serves no operand"));
            }
            if level.read_energy_pj < 0.0 || level.write_energy_pj < 0.0 {
                return Err(err("access energies must be non-negative"));
            }
        }
        let offchip: Vec<usize> = self
            .memory_levels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.offchip)
            .map(|(i, _)| i)
            .collect();
        if offchip.len() != 1 {
            return Err(HwError::Invalid(format!(
                "expected exactly one off-chip level, found {}",
                offchip.len()
            )));
        }
        let dram = offchip[0];
        for op in Operand::ALL {
            let chain = self.operand_chain(op);
            if chain.last() != Some(&dram) {
                return Err(HwError::Invalid(format!(
                    "the {op} chain does not end at the off-chip level `{}`",
                    self.memory_levels[dram].name
                )));
            }
            if chain.len() < 2 {
                return Err(HwError::Invalid(format!(
                    "the {op} chain needs an on-chip level below the off-chip level"
                )));
            }
        }
        for (a, b) in &self.direct_paths {
            if self.level_index(a).is_none() || self.level_index(b).is_none() {
                return Err(HwError::Invalid(format!("direct path {a} -> {b} names unknown levels")));
            }
        }
        Ok(())
    }

    pub fn level_index(&self, name: &str) -> Option<usize> {
        self.memory_levels.iter().position(|l| l.name == name)
    }

    /// Level indices serving `op`, lowest to highest.
    pub fn operand_chain(&self, op: Operand) -> Vec<usize> {
        self.memory_levels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.serves(op))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn chain_levels(&self, op: Operand) -> Vec<&MemoryLevel> {
        self.operand_chain(op)
            .into_iter()
            .map(|i| &self.memory_levels[i])
            .collect()
    }

    pub fn dram(&self) -> usize {
        self.memory_levels
            .iter()
            .position(|l| l.offchip)
            .unwrap_or(self.memory_levels.len() - 1)
    }

    /// Highest on-chip level holding `op` (may be the register level).
    pub fn highest_onchip(&self, op: Operand) -> Option<usize> {
        self.operand_chain(op)
            .into_iter()
            .rev()
            .find(|&i| !self.memory_levels[i].offchip)
    }

    pub fn spatial_factor(&self, dim: Dim) -> u64 {
        self.spatial_unrolling
            .iter()
            .filter(|(d, _)| *d == dim)
            .map(|(_, f)| *f)
            .product()
    }

    pub fn onchip_capacity_bits(&self) -> u64 {
        self.memory_levels
            .iter()
            .filter(|l| !l.offchip)
            .map(|l| l.capacity_bits)
            .sum()
    }

    pub fn has_direct_path(&self, from: usize, to: usize) -> bool {
        let (a, b) = (&self.memory_levels[from].name, &self.memory_levels[to].name);
        self.direct_paths
            .iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    /// Copy of this accelerator whose per-operand chains stop at the given
    /// caps. `None` leaves that operand untouched.
    pub fn restrict_top_level(&self, caps: [Option<usize>; 3]) -> Result<Accelerator, HwError> {
        let mut out = self.clone();
        for op in Operand::ALL {
            let Some(cap) = caps[op.index()] else { continue };
            let chain = self.operand_chain(op);
            if !chain.contains(&cap) {
                return Err(HwError::NotOnChain {
                    level: cap,
                    operand: op,
                });
            }
            for &lvl in chain.iter().filter(|&&l| l > cap) {
                out.memory_levels[lvl].serves.retain(|o| *o != op);
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("accelerator serializes")
    }
}

pub fn parse_accelerator(text: &str) -> Result<Accelerator, HwError> {
    let acc: Accelerator = serde_json::from_str(text).map_err(|e| HwError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    acc.validate()?;
    Ok(acc)
}
