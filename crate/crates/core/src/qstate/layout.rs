use std::fmt;

use serde::{Deserialize, Serialize};

use super::QStateError;

/// Whether a register is held as a decohered classical value or as a quantum system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegisterKind {
    Classical,
    Quantum,
}

/// A named subsystem.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Register {
    pub name: String,
    pub dim: usize,
    pub kind: RegisterKind,
}

impl Register {
    pub fn classical(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            kind: RegisterKind::Classical,
        }
    }

    pub fn quantum(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
            kind: RegisterKind::Quantum,
        }
    }

    pub fn is_classical(&self) -> bool {
        self.kind == RegisterKind::Classical
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            RegisterKind::Classical => "c",
            RegisterKind::Quantum => "q",
        };
        write!(f, "{}[{}{}]", self.name, tag, self.dim)
    }
}

/// Ordered list of registers. The total Hilbert space is their tensor product in order.
///
/// Classical registers carry a value index; a state is block diagonal in the joint
/// classical value. The quantum part of each block is ordered by the quantum
/// registers as they appear in the layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Layout {
    registers: Vec<Register>,
}

impl Layout {
    pub fn new(registers: Vec<Register>) -> Result<Self, QStateError> {
        for (i, r) in registers.iter().enumerate() {
            if r.dim == 0 {
                return Err(QStateError::Layout(format!("register {} has dimension 0", r.name)));
            }
            if registers[..i].iter().any(|o| o.name == r.name) {
                return Err(QStateError::Layout(format!("duplicate register name {}", r.name)));
            }
        }
        Ok(Self { registers })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.registers.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.registers.iter().position(|r| r.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Register> {
        self.registers.iter().find(|r| r.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    /// Product of all register dimensions.
    pub fn dim(&self) -> usize {
        self.registers.iter().map(|r| r.dim).product()
    }

    pub fn quantum_dim(&self) -> usize {
        self.quantum().map(|r| r.dim).product()
    }

    pub fn classical_dim(&self) -> usize {
        self.classical().map(|r| r.dim).product()
    }

    pub fn quantum(&self) -> impl Iterator<Item = &Register> {
        self.registers.iter().filter(|r| !r.is_classical())
    }

    pub fn classical(&self) -> impl Iterator<Item = &Register> {
        self.registers.iter().filter(|r| r.is_classical())
    }

    pub fn quantum_dims(&self) -> Vec<usize> {
        self.quantum().map(|r| r.dim).collect()
    }

    pub fn classical_dims(&self) -> Vec<usize> {
        self.classical().map(|r| r.dim).collect()
    }

    /// Concatenation; names must stay unique.
    pub fn concat(&self, other: &Layout) -> Result<Layout, QStateError> {
        let mut regs = self.registers.clone();
        regs.extend(other.registers.iter().cloned());
        Layout::new(regs)
    }

    /// Keep only the named registers, in this layout's order.
    pub fn restrict(&self, keep: &[&str]) -> Result<Layout, QStateError> {
        for k in keep {
            if !self.contains(k) {
                return Err(QStateError::UnknownRegister((*k).to_string()));
            }
        }
        Ok(Layout {
            registers: self
                .registers
                .iter()
                .filter(|r| keep.contains(&r.name.as_str()))
                .cloned()
                .collect(),
        })
    }

    /// Same set of registers, possibly in a different order.
    pub fn same_registers(&self, other: &Layout) -> bool {
        self.len() == other.len() && self.registers.iter().all(|r| other.get(&r.name) == Some(r))
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, r) in self.registers.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

/// Row-major flattening of a multi-index.
pub fn flatten(values: &[usize], dims: &[usize]) -> usize {
    values
        .iter()
        .zip(dims)
        .fold(0usize, |acc, (&v, &d)| acc * d + v)
}

/// Inverse of [`flatten`].
pub fn unflatten(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = index % d;
        index /= d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip() {
        let dims = [3, 2, 5];
        for i in 0..30 {
            assert_eq!(flatten(&unflatten(i, &dims), &dims), i);
        }
        assert_eq!(flatten(&[], &[]), 0);
        assert!(unflatten(0, &[]).is_empty());
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = Layout::new(vec![Register::quantum("A", 2), Register::classical("A", 2)]);
        assert!(matches!(r, Err(QStateError::Layout(_))));
    }

    #[test]
    fn restrict_keeps_order() {
        let l = Layout::new(vec![
            Register::quantum("A", 2),
            Register::classical("B", 3),
            Register::quantum("C", 4),
        ])
        .unwrap();
        let r = l.restrict(&["C", "A"]).unwrap();
        assert_eq!(r.names(), vec!["A", "C"]);
        assert_eq!(l.quantum_dim(), 8);
        assert_eq!(l.classical_dim(), 3);
        assert!(matches!(l.restrict(&["Z"]), Err(QStateError::UnknownRegister(_))));
    }
}
