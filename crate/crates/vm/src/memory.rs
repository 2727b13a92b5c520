//! Address windows and device memories.

use std::collections::BTreeMap;

use kforge_compiler::lir::Space;

use crate::VmError;

const WINDOW_SHIFT: u32 = 40;
const OFFSET_MASK: u64 = (1 << WINDOW_SHIFT) - 1;

fn tag(space: Space) -> u64 {
    match space {
        Space::Generic => 0,
        Space::Global => 1,
        Space::Shared => 2,
        Space::Param => 3,
        Space::Local => 4,
    }
}

/// Address of byte `offset` of `space`. Every space occupies its own window so
/// a generic address identifies its space.
pub fn address(space: Space, offset: u64) -> u64 {
    (tag(space) << WINDOW_SHIFT) | (offset & OFFSET_MASK)
}

/// Split an address into its space and offset; `None` outside every window.
pub fn resolve(addr: u64) -> Option<(Space, u64)> {
    let space = match addr >> WINDOW_SHIFT {
        1 => Space::Global,
        2 => Space::Shared,
        3 => Space::Param,
        4 => Space::Local,
        _ => return None,
    };
    Some((space, addr & OFFSET_MASK))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Region {
    len: u64,
    live: bool,
}

/// Bump-allocated global memory. Freed regions are never reused.
#[derive(Debug, Clone)]
pub struct GlobalMemory {
    bytes: Vec<u8>,
    regions: BTreeMap<u64, Region>,
    capacity: u64,
}

const ALIGN: u64 = 16;

impl GlobalMemory {
    pub fn new(capacity: u64) -> Self {
        GlobalMemory { bytes: Vec::new(), regions: BTreeMap::new(), capacity }
    }

    /// Allocate `len` zeroed bytes and return the region's global address.
    pub fn alloc(&mut self, len: u64) -> Result<u64, VmError> {
        let start = (self.bytes.len() as u64).div_ceil(ALIGN) * ALIGN;
        let end = start + len.max(1);
        if end > self.capacity {
            return Err(VmError::OutOfMemory { requested: len, capacity: self.capacity });
        }
        self.bytes.resize(end as usize, 0);
        self.regions.insert(start, Region { len, live: true });
        Ok(address(Space::Global, start))
    }

    pub fn free(&mut self, addr: u64) -> Result<(), VmError> {
        let off = match resolve(addr) {
            Some((Space::Global, off)) => off,
            _ => return Err(VmError::InvalidFree { addr }),
        };
        match self.regions.get_mut(&off) {
            Some(r) if r.live => {
                r.live = false;
                Ok(())
            }
            Some(_) => Err(VmError::DoubleFree { addr }),
            None => Err(VmError::InvalidFree { addr }),
        }
    }

    pub fn used(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn check(&self, off: u64, len: u64) -> bool {
        match self.regions.range(..=off).next_back() {
            Some((start, r)) => r.live && off + len <= start + r.len,
            None => false,
        }
    }

    pub fn read(&self, addr: u64, len: u64) -> Result<&[u8], VmError> {
        match resolve(addr) {
            Some((Space::Global, off)) if self.check(off, len) => Ok(&self.bytes[off as usize..(off + len) as usize]),
            _ => Err(VmError::HostAccess { addr, len }),
        }
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), VmError> {
        let len = data.len() as u64;
        match resolve(addr) {
            Some((Space::Global, off)) if self.check(off, len) => {
                self.bytes[off as usize..(off + len) as usize].copy_from_slice(data);
                Ok(())
            }
            _ => Err(VmError::HostAccess { addr, len }),
        }
    }

    pub(crate) fn slice(&self, off: u64, len: u64) -> Option<&[u8]> {
        self.check(off, len).then(|| &self.bytes[off as usize..(off + len) as usize])
    }

    pub(crate) fn slice_mut(&mut self, off: u64, len: u64) -> Option<&mut [u8]> {
        if self.check(off, len) {
            Some(&mut self.bytes[off as usize..(off + len) as usize])
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_round_trip() {
        for s in [Space::Global, Space::Shared, Space::Param, Space::Local] {
            assert_eq!(resolve(address(s, 1234)), Some((s, 1234)));
        }
        assert_eq!(resolve(0), None);
    }

    #[test]
    fn regions_are_checked() {
        let mut g = GlobalMemory::new(1 << 20);
        let a = g.alloc(8).unwrap();
        let b = g.alloc(0).unwrap();
        assert_ne!(a, b);
        g.write(a, &[1; 8]).unwrap();
        assert!(g.write(a + 4, &[1; 8]).is_err());
        assert_eq!(g.read(a, 8).unwrap(), &[1; 8]);
        g.free(a).unwrap();
        assert!(matches!(g.free(a), Err(VmError::DoubleFree { .. })));
        assert!(g.read(a, 1).is_err());
        assert!(matches!(g.alloc(1 << 21), Err(VmError::OutOfMemory { .. })));
    }
}
