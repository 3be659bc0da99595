use std::collections::HashMap;

/// One endpoint of a conversation: address bytes (IPv4 mapped into the first
/// four bytes, or a MAC address for non-IP frames) and port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub addr: [u8; 16],
    pub port: u16,
}

/// Directed 5-tuple as seen on one packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FiveTuple {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub proto: u16,
}

impl FiveTuple {
    /// Direction-free key: both directions of a conversation map to the same key.
    fn key(&self) -> (Endpoint, Endpoint, u16) {
        if self.src <= self.dst {
            (self.src, self.dst, self.proto)
        } else {
            (self.dst, self.src, self.proto)
        }
    }
}

/// Dense flow numbering in first-seen order, confined to one capture.
#[derive(Clone, Debug, Default)]
pub struct FlowTable {
    map: HashMap<(Endpoint, Endpoint, u16), (u32, Endpoint)>,
    next_index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowAssignment {
    pub index: u32,
    /// `false` when the packet travels from the flow initiator.
    pub reverse: bool,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_index(&self) -> u32 {
        self.next_index
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn assign(&mut self, tuple: &FiveTuple) -> FlowAssignment {
        let next = &mut self.next_index;
        let &mut (index, initiator) = self.map.entry(tuple.key()).or_insert_with(|| {
            let idx = *next;
            *next += 1;
            (idx, tuple.src)
        });
        FlowAssignment { index, reverse: tuple.src != initiator }
    }
}

/// Existing index for a seen tuple, else the next dense index.
pub fn assign_flow(tuple: &FiveTuple, table: &mut FlowTable) -> u32 {
    table.assign(tuple).index
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(a: u8, b: u8, sp: u16, dp: u16) -> FiveTuple {
        let mut sa = [0u8; 16];
        sa[0] = a;
        let mut da = [0u8; 16];
        da[0] = b;
        FiveTuple { src: Endpoint { addr: sa, port: sp }, dst: Endpoint { addr: da, port: dp }, proto: 6 }
    }

    #[test]
    fn first_and_repeated() {
        let mut t = FlowTable::new();
        assert_eq!(assign_flow(&tuple(1, 2, 1000, 80), &mut t), 0);
        assert_eq!(assign_flow(&tuple(1, 2, 1000, 80), &mut t), 0);
        assert_eq!(t.next_index(), 1);
    }

    #[test]
    fn both_directions_share_a_flow() {
        let mut t = FlowTable::new();
        let fwd = t.assign(&tuple(1, 2, 1000, 80));
        let rev = t.assign(&tuple(2, 1, 80, 1000));
        assert_eq!(fwd.index, rev.index);
        assert!(!fwd.reverse && rev.reverse);
    }

    #[test]
    fn thousand_distinct_tuples_are_dense() {
        let mut t = FlowTable::new();
        let ids: Vec<u32> = (0..1000u16).map(|p| assign_flow(&tuple(1, 2, 1024 + p, 80), &mut t)).collect();
        assert_eq!(ids, (0..1000).collect::<Vec<_>>());
    }
}
