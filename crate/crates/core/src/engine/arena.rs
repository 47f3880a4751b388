//! Bounded resident set standing in for device memory.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ArenaError;
use crate::features::ImageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArenaEvent {
    Upload,
    Evict,
}

/// One arena transition, for the occupancy time series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub step: usize,
    pub event: ArenaEvent,
    pub image: ImageId,
    pub occupancy: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaCounters {
    pub uploads: usize,
    pub evictions: usize,
    pub units_uploaded: usize,
    pub peak_occupancy: usize,
}

/// Capacity and sizes are in descriptor units.
#[derive(Debug, Clone)]
pub struct DeviceArena {
    capacity: usize,
    resident: BTreeMap<ImageId, usize>,
    occupancy: usize,
    counters: ArenaCounters,
    history: Option<Vec<OccupancySample>>,
    step: usize,
}

impl DeviceArena {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            resident: BTreeMap::new(),
            occupancy: 0,
            counters: ArenaCounters::default(),
            history: None,
            step: 0,
        }
    }

    /// Also records every transition.
    pub fn with_history(capacity: usize) -> Self {
        Self {
            history: Some(Vec::new()),
            ..Self::new(capacity)
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn counters(&self) -> ArenaCounters {
        self.counters
    }

    pub fn is_resident(&self, id: ImageId) -> bool {
        self.resident.contains_key(&id)
    }

    pub fn resident(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.resident.keys().copied()
    }

    pub fn history(&self) -> &[OccupancySample] {
        self.history.as_deref().unwrap_or(&[])
    }

    fn record(&mut self, event: ArenaEvent, image: ImageId) {
        let occupancy = self.occupancy;
        let step = self.step;
        self.step += 1;
        if let Some(h) = self.history.as_mut() {
            h.push(OccupancySample {
                step,
                event,
                image,
                occupancy,
            });
        }
    }

    /// Returns false (and changes nothing) if `id` is already resident.
    pub fn upload(&mut self, id: ImageId, size: usize) -> Result<bool, ArenaError> {
        if self.resident.contains_key(&id) {
            return Ok(false);
        }
        let free = self.capacity - self.occupancy;
        if size > free {
            return Err(ArenaError::CapacityExceeded {
                image: id,
                size,
                free,
            });
        }
        self.resident.insert(id, size);
        self.occupancy += size;
        self.counters.uploads += 1;
        self.counters.units_uploaded += size;
        self.counters.peak_occupancy = self.counters.peak_occupancy.max(self.occupancy);
        self.record(ArenaEvent::Upload, id);
        Ok(true)
    }

    pub fn evict(&mut self, id: ImageId) -> Result<(), ArenaError> {
        let size = self
            .resident
            .remove(&id)
            .ok_or(ArenaError::NotResident(id))?;
        self.occupancy -= size;
        self.counters.evictions += 1;
        self.record(ArenaEvent::Evict, id);
        Ok(())
    }

    /// Evicts everything, in id order.
    pub fn clear(&mut self) {
        let ids: Vec<ImageId> = self.resident.keys().copied().collect();
        for id in ids {
            self.evict(id).expect("resident");
        }
    }
}

/// `step,event,image,occupancy` rows with a header.
pub fn occupancy_csv(samples: &[OccupancySample]) -> String {
    let mut out = String::from("step,event,image,occupancy\n");
    for s in samples {
        let e = match s.event {
            ArenaEvent::Upload => "upload",
            ArenaEvent::Evict => "evict",
        };
        out.push_str(&format!("{},{},{},{}\n", s.step, e, s.image, s.occupancy));
    }
    out
}
