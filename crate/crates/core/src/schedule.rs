//! TSCH slotframe, contention-free cell assignment and the node-side link lookup.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{NetworkGraph, NodeId};

/// Slotframe dimensions: |U| timeslots, |Z| channel offsets, slot length in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slotframe {
    size: usize,
    channels: usize,
    slot_ms: f64,
}

impl Slotframe {
    pub fn new(size: usize, channels: usize, slot_ms: f64) -> Result<Self> {
        if size == 0 || channels == 0 || !(slot_ms > 0.0) || !slot_ms.is_finite() {
            return Err(Error::Constraint(format!(
                "slotframe needs |U| > 0, |Z| > 0 and |u| > 0 (got {size}, {channels}, {slot_ms} ms)"
            )));
        }
        Ok(Self {
            size,
            channels,
            slot_ms,
        })
    }

    /// 17 timeslots, 2 channel offsets, 10 ms slots.
    pub fn standard() -> Self {
        Self::new(17, 2, 10.0).unwrap()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn slot_ms(&self) -> f64 {
        self.slot_ms
    }

    pub fn slot_secs(&self) -> f64 {
        self.slot_ms / 1000.0
    }

    pub fn cell_count(&self) -> usize {
        self.size * self.channels
    }

    /// Slotframe period in seconds.
    pub fn period_secs(&self) -> f64 {
        self.size as f64 * self.slot_secs()
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.timeslot < self.size && cell.channel < self.channels
    }

    /// Channel-major flat index: `channel * size + timeslot`.
    pub fn cell_index(&self, cell: Cell) -> usize {
        cell.channel * self.size + cell.timeslot
    }

    pub fn cell_at(&self, index: usize) -> Option<Cell> {
        (index < self.cell_count()).then(|| Cell::new(index % self.size, index / self.size))
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cell_count()).map(|i| self.cell_at(i).unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub timeslot: usize,
    pub channel: usize,
}

impl Cell {
    pub fn new(timeslot: usize, channel: usize) -> Self {
        Self { timeslot, channel }
    }
}

/// A Tx entry at `src` paired with an Rx entry at `dst` in the same cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScheduledLink {
    pub src: NodeId,
    pub dst: NodeId,
    pub cell: Cell,
}

/// Why a schedule mutation was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Infeasible {
    OutOfBounds,
    SelfLink,
    CellOccupied,
    /// The node already has an entry (Tx or Rx, any channel) in that timeslot.
    NodeBusy(NodeId),
    EmptyCell,
    DestinationMismatch { found: NodeId },
}

/// Contention-free TSCH schedule. Mutating helpers return new values; the `try_*`
/// variants mutate in place.
#[derive(Debug, Clone, PartialEq)]
pub struct TschSchedule {
    frame: Slotframe,
    entries: Vec<ScheduledLink>,
}

impl TschSchedule {
    pub fn new(frame: Slotframe) -> Self {
        Self {
            frame,
            entries: Vec::new(),
        }
    }

    pub fn frame(&self) -> &Slotframe {
        &self.frame
    }

    pub fn entries(&self) -> &[ScheduledLink] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry_at(&self, cell: Cell) -> Option<&ScheduledLink> {
        self.entries.iter().find(|e| e.cell == cell)
    }

    /// True if `node` transmits or receives anywhere in `timeslot`.
    pub fn node_busy(&self, node: NodeId, timeslot: usize) -> bool {
        self.entries
            .iter()
            .any(|e| e.cell.timeslot == timeslot && (e.src == node || e.dst == node))
    }

    pub fn check_add(&self, src: NodeId, dst: NodeId, cell: Cell) -> Result<(), Infeasible> {
        if !self.frame.contains(cell) {
            return Err(Infeasible::OutOfBounds);
        }
        if src == dst {
            return Err(Infeasible::SelfLink);
        }
        if self.entry_at(cell).is_some() {
            return Err(Infeasible::CellOccupied);
        }
        for node in [src, dst] {
            if self.node_busy(node, cell.timeslot) {
                return Err(Infeasible::NodeBusy(node));
            }
        }
        Ok(())
    }

    pub fn try_add(&mut self, src: NodeId, dst: NodeId, cell: Cell) -> Result<(), Infeasible> {
        self.check_add(src, dst, cell)?;
        self.entries.push(ScheduledLink { src, dst, cell });
        Ok(())
    }

    pub fn add_link(&self, src: NodeId, dst: NodeId, cell: Cell) -> Result<Self, Infeasible> {
        let mut next = self.clone();
        next.try_add(src, dst, cell)?;
        Ok(next)
    }

    /// Validates a removal and returns the entry that would go.
    pub fn check_remove(&self, cell: Cell, expected_dst: NodeId) -> Result<ScheduledLink, Infeasible> {
        if !self.frame.contains(cell) {
            return Err(Infeasible::OutOfBounds);
        }
        let entry = *self.entry_at(cell).ok_or(Infeasible::EmptyCell)?;
        if entry.dst != expected_dst {
            return Err(Infeasible::DestinationMismatch { found: entry.dst });
        }
        Ok(entry)
    }

    pub fn try_remove(&mut self, cell: Cell, expected_dst: NodeId) -> Result<ScheduledLink, Infeasible> {
        let entry = self.check_remove(cell, expected_dst)?;
        self.entries.retain(|e| e.cell != cell);
        Ok(entry)
    }

    pub fn remove_link(&self, cell: Cell, expected_dst: NodeId) -> Result<Self, Infeasible> {
        let mut next = self.clone();
        next.try_remove(cell, expected_dst)?;
        Ok(next)
    }

    /// Appends an entry without any feasibility check. Only for building deliberately
    /// broken schedules (collision experiments).
    pub fn push_unchecked(&mut self, link: ScheduledLink) {
        self.entries.push(link);
    }

    /// Earliest Tx cell of `node` toward `dst` at or after `asn`.
    pub fn lookup_next(&self, node: NodeId, dst: NodeId, asn: u64) -> Option<Cell> {
        let size = self.frame.size as i64;
        let current = (asn % self.frame.size as u64) as i64;
        let mut best: Option<(i64, Cell)> = None;
        for e in self.entries.iter().filter(|e| e.src == node && e.dst == dst) {
            let mut diff = e.cell.timeslot as i64 - current;
            if diff < 0 {
                diff += size;
            }
            if best.map_or(true, |(min, _)| diff < min) {
                best = Some((diff, e.cell));
            }
        }
        best.map(|(_, c)| c)
    }

    /// Slots from `asn` until `cell` comes around (0 if it is the current slot).
    pub fn slots_until(&self, cell: Cell, asn: u64) -> u64 {
        let size = self.frame.size as u64;
        (cell.timeslot as u64 + size - asn % size) % size
    }

    pub fn tx_slot_count(&self, n: NodeId) -> usize {
        self.distinct_slots(|e| e.src == n)
    }

    pub fn rx_slot_count(&self, n: NodeId) -> usize {
        self.distinct_slots(|e| e.dst == n)
    }

    fn distinct_slots(&self, pred: impl Fn(&ScheduledLink) -> bool) -> usize {
        self.entries
            .iter()
            .filter(|e| pred(e))
            .map(|e| e.cell.timeslot)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn link_cell_count(&self, src: NodeId, dst: NodeId) -> usize {
        self.entries
            .iter()
            .filter(|e| e.src == src && e.dst == dst)
            .count()
    }

    /// Checks every schedule invariant; `Err` names the first violation.
    pub fn validate(&self) -> Result<()> {
        let mut rebuilt = TschSchedule::new(self.frame);
        for e in &self.entries {
            rebuilt.try_add(e.src, e.dst, e.cell).map_err(|why| {
                Error::Constraint(format!(
                    "entry {}->{} at ({}, {}) is infeasible: {why:?}",
                    e.src, e.dst, e.cell.timeslot, e.cell.channel
                ))
            })?;
        }
        Ok(())
    }

    /// Checks that every entry is a wireless link of `g`.
    pub fn validate_against(&self, g: &NetworkGraph) -> Result<()> {
        for e in &self.entries {
            if !g.has_link(e.src, e.dst) {
                return Err(Error::Startup(format!(
                    "scheduled link {}->{} is not a link of the topology",
                    e.src, e.dst
                )));
            }
        }
        Ok(())
    }

    /// Entries sorted by cell, the canonical order for dumps.
    pub fn sorted_entries(&self) -> Vec<ScheduledLink> {
        let mut v = self.entries.clone();
        v.sort_by_key(|e| (e.cell.timeslot, e.cell.channel, e.src, e.dst));
        v
    }

    pub fn to_file(&self) -> ScheduleFile {
        ScheduleFile {
            slotframe_size: self.frame.size,
            num_channels: self.frame.channels,
            slot_duration_ms: self.frame.slot_ms,
            entries: self
                .sorted_entries()
                .into_iter()
                .map(|e| ScheduleEntry {
                    src: e.src,
                    dst: e.dst,
                    u: e.cell.timeslot,
                    ch: e.cell.channel,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("schedule serializes")
    }

    /// Parses and validates a schedule dump.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScheduleFile = serde_json::from_str(text)?;
        file.into_schedule()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub src: NodeId,
    pub dst: NodeId,
    pub u: usize,
    pub ch: usize,
}

/// JSON layout of a schedule dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub slotframe_size: usize,
    pub num_channels: usize,
    pub slot_duration_ms: f64,
    pub entries: Vec<ScheduleEntry>,
}

impl ScheduleFile {
    pub fn into_schedule(self) -> Result<TschSchedule> {
        let frame = Slotframe::new(self.slotframe_size, self.num_channels, self.slot_duration_ms)?;
        let mut s = TschSchedule::new(frame);
        for e in self.entries {
            s.try_add(e.src, e.dst, Cell::new(e.u, e.ch)).map_err(|why| {
                Error::Constraint(format!(
                    "entry {}->{} at ({}, {}) rejected: {why:?}",
                    e.src, e.dst, e.u, e.ch
                ))
            })?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty() -> TschSchedule {
        TschSchedule::new(Slotframe::standard())
    }

    #[test]
    fn slotframe_rejects_zero_dimensions() {
        assert!(Slotframe::new(0, 2, 10.0).is_err());
        assert!(Slotframe::new(17, 0, 10.0).is_err());
        assert!(Slotframe::new(17, 2, 0.0).is_err());
    }

    #[test]
    fn add_into_empty_schedule() {
        let s = empty().add_link(3, 1, Cell::new(4, 0)).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn add_rejects_occupied_cell_and_busy_node() {
        let s = empty().add_link(3, 1, Cell::new(4, 0)).unwrap();
        assert_eq!(s.add_link(5, 2, Cell::new(4, 0)), Err(Infeasible::CellOccupied));
        assert_eq!(s.add_link(1, 6, Cell::new(4, 1)), Err(Infeasible::NodeBusy(1)));
        assert_eq!(s.add_link(3, 2, Cell::new(4, 1)), Err(Infeasible::NodeBusy(3)));
        assert_eq!(s.add_link(3, 3, Cell::new(5, 1)), Err(Infeasible::SelfLink));
        assert_eq!(s.add_link(3, 1, Cell::new(17, 0)), Err(Infeasible::OutOfBounds));
        assert!(s.add_link(5, 2, Cell::new(4, 1)).is_ok());
    }

    #[test]
    fn remove_requires_matching_destination() {
        let s = empty().add_link(3, 1, Cell::new(4, 0)).unwrap();
        assert!(s.remove_link(Cell::new(4, 0), 1).unwrap().is_empty());
        assert_eq!(empty().remove_link(Cell::new(4, 0), 1), Err(Infeasible::EmptyCell));
        assert_eq!(
            s.remove_link(Cell::new(4, 0), 2),
            Err(Infeasible::DestinationMismatch { found: 1 })
        );
    }

    #[test]
    fn lookup_prefers_nearest_future_slot() {
        let s = empty()
            .add_link(3, 1, Cell::new(2, 0))
            .unwrap()
            .add_link(3, 1, Cell::new(9, 1))
            .unwrap();
        // 20 mod 17 = 3: slot 9 is 6 away, slot 2 wraps to 16 away
        assert_eq!(s.lookup_next(3, 1, 20), Some(Cell::new(9, 1)));
        assert_eq!(s.lookup_next(3, 2, 20), None);
        let single = empty().add_link(3, 1, Cell::new(5, 0)).unwrap();
        assert_eq!(single.lookup_next(3, 1, 5), Some(Cell::new(5, 0)));
        assert_eq!(single.lookup_next(3, 1, 22), Some(Cell::new(5, 0)));
    }

    #[test]
    fn slot_counts() {
        let s = empty()
            .add_link(3, 1, Cell::new(4, 0))
            .unwrap()
            .add_link(3, 1, Cell::new(9, 1))
            .unwrap();
        assert_eq!(s.tx_slot_count(3), 2);
        assert_eq!(s.rx_slot_count(1), 2);
        assert_eq!(empty().tx_slot_count(3), 0);

        let mut full = empty();
        for u in 0..17 {
            let dst = if u % 2 == 0 { 1 } else { 2 };
            full.try_add(3, dst, Cell::new(u, u % 2)).unwrap();
        }
        assert_eq!(full.tx_slot_count(3), 17);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = empty()
            .add_link(3, 1, Cell::new(4, 0))
            .unwrap()
            .add_link(5, 2, Cell::new(4, 1))
            .unwrap();
        let text = s.to_json();
        let back = TschSchedule::from_json(&text).unwrap();
        assert_eq!(back.sorted_entries(), s.sorted_entries());
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn load_rejects_contention() {
        let text = r#"{"slotframe_size":17,"num_channels":2,"slot_duration_ms":10.0,
            "entries":[{"src":3,"dst":1,"u":4,"ch":0},{"src":5,"dst":2,"u":4,"ch":0}]}"#;
        assert!(matches!(TschSchedule::from_json(text), Err(Error::Constraint(_))));
    }
}
