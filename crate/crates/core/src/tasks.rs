//! Task stream generation, candidate binding and lifecycle bookkeeping.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Inventory, InventoryError, SkuId};
use crate::worldmap::{CellId, GridMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Inbound,
    Outbound,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Inbound => "inbound",
            TaskKind::Outbound => "outbound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskState {
    Free,
    Allocated,
    PickedUp,
    Completed,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub sku: SkuId,
    /// Candidate pickup cells, sorted.
    pub starts: Vec<CellId>,
    /// Candidate delivery cells, sorted.
    pub dests: Vec<CellId>,
    pub state: TaskState,
    pub release_time: u64,
    /// Candidates were collapsed to a single pair and are no longer re-bound.
    pub fixed: bool,
}

impl Task {
    pub fn is_bound(&self) -> bool {
        !self.starts.is_empty() && !self.dests.is_empty()
    }

    /// Replaces the candidate sets with the live inventory view.
    ///
    /// Outbound: every cell holding the SKU to every loading endpoint.
    /// Inbound: every loading endpoint to every empty storage endpoint.
    /// Returns false, leaving the task unbound, when either set is empty.
    pub fn bind_candidates(&mut self, inv: &Inventory, map: &GridMap) -> bool {
        let (starts, dests) = match self.kind {
            TaskKind::Outbound => (inv.cells_with(self.sku), map.loading_endpoints().to_vec()),
            TaskKind::Inbound => (map.loading_endpoints().to_vec(), inv.empty_storage()),
        };
        if starts.is_empty() || dests.is_empty() {
            self.starts.clear();
            self.dests.clear();
            return false;
        }
        self.starts = starts;
        self.dests = dests;
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskEventKind {
    Released,
    Allocated,
    Freed,
    PickedUp,
    Completed,
}

impl TaskEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskEventKind::Released => "released",
            TaskEventKind::Allocated => "allocated",
            TaskEventKind::Freed => "freed",
            TaskEventKind::PickedUp => "picked_up",
            TaskEventKind::Completed => "completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskEvent {
    pub t: u64,
    pub task: TaskId,
    pub kind: TaskKind,
    pub sku: SkuId,
    pub event: TaskEventKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("unknown task {0}")]
    Unknown(TaskId),
    #[error("task {task} cannot go from {from:?} to {to:?}")]
    BadTransition {
        task: TaskId,
        from: TaskState,
        to: TaskState,
    },
    #[error("task {task} expected sku {expected:?} at pickup, found {found:?}")]
    WrongSku {
        task: TaskId,
        expected: SkuId,
        found: SkuId,
    },
    #[error(transparent)]
    Inventory(#[from] InventoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleasePolicy {
    /// New tasks per timestep.
    pub rate: usize,
    /// Maximum concurrently active (free + allocated) tasks.
    pub active_cap: usize,
    pub target_density: f64,
    /// Proportional gain of the inbound probability on the density error.
    pub gain: f64,
}

impl Default for ReleasePolicy {
    fn default() -> Self {
        Self {
            rate: 4,
            active_cap: 120,
            target_density: 0.3,
            gain: 2.0,
        }
    }
}

impl ReleasePolicy {
    /// Probability that the next released task is inbound.
    pub fn inbound_probability(&self, density: f64) -> f64 {
        (0.5 + self.gain * (self.target_density - density)).clamp(0.05, 0.95)
    }
}

/// Live tasks keyed by id; completed tasks are dropped and counted.
#[derive(Debug, Clone)]
pub struct TaskPool {
    tasks: BTreeMap<TaskId, Task>,
    next_id: u64,
    pub policy: ReleasePolicy,
    released: u64,
    completed: u64,
    completed_inbound: u64,
    completed_outbound: u64,
    events: Vec<TaskEvent>,
}

impl TaskPool {
    pub fn new(policy: ReleasePolicy) -> Self {
        Self {
            tasks: BTreeMap::new(),
            next_id: 0,
            policy,
            released: 0,
            completed: 0,
            completed_inbound: 0,
            completed_outbound: 0,
            events: Vec::new(),
        }
    }

    pub fn get(&self, id: TaskId) -> Option<&Task> {
        self.tasks.get(&id)
    }

    pub fn get_mut(&mut self, id: TaskId) -> Option<&mut Task> {
        self.tasks.get_mut(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn tasks_mut(&mut self) -> impl Iterator<Item = &mut Task> {
        self.tasks.values_mut()
    }

    pub fn active(&self) -> usize {
        self.tasks.len()
    }

    pub fn free_ids(&self) -> Vec<TaskId> {
        self.tasks
            .values()
            .filter(|t| t.state == TaskState::Free)
            .map(|t| t.id)
            .collect()
    }

    pub fn has_free(&self) -> bool {
        self.tasks.values().any(|t| t.state == TaskState::Free)
    }

    pub fn released(&self) -> u64 {
        self.released
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn completed_inbound(&self) -> u64 {
        self.completed_inbound
    }

    pub fn completed_outbound(&self) -> u64 {
        self.completed_outbound
    }

    pub fn drain_events(&mut self) -> Vec<TaskEvent> {
        std::mem::take(&mut self.events)
    }

    fn log(&mut self, t: u64, id: TaskId, event: TaskEventKind) {
        let task = &self.tasks[&id];
        self.events.push(TaskEvent {
            t,
            task: id,
            kind: task.kind,
            sku: task.sku,
            event,
        });
    }

    /// Outbound tasks that have not lifted their item yet, per SKU.
    fn pending_outbound(&self, num_skus: usize) -> Vec<usize> {
        let mut pending = vec![0; num_skus];
        for t in self.tasks.values() {
            if t.kind == TaskKind::Outbound && matches!(t.state, TaskState::Free | TaskState::Allocated) {
                pending[t.sku.0 as usize] += 1;
            }
        }
        pending
    }

    /// Releases up to `policy.rate` tasks without exceeding the active cap.
    ///
    /// The task kind is drawn with an inbound probability that rises as the
    /// stored density falls below target. Outbound SKUs are drawn among SKUs
    /// that still have an unreserved item; inbound SKUs uniformly. A kind that
    /// cannot be served falls back to the other one, and if neither can be
    /// served nothing is released.
    pub fn release_tasks(&mut self, inv: &Inventory, t: u64, rng: &mut impl Rng) -> Vec<TaskId> {
        let mut out = Vec::new();
        let num_skus = inv.num_skus();
        let mut pending = self.pending_outbound(num_skus);
        for _ in 0..self.policy.rate {
            if self.tasks.len() >= self.policy.active_cap {
                break;
            }
            let available: Vec<u32> = (0..num_skus)
                .filter(|&s| inv.count(SkuId(s as u32)) > pending[s])
                .map(|s| s as u32)
                .collect();
            let can_out = !available.is_empty();
            let can_in = num_skus > 0 && inv.occupied() < inv.storage_total();
            let p_in = self.policy.inbound_probability(inv.density());
            let draw_in = rng.gen::<f64>() < p_in;
            let kind = match (draw_in, can_in, can_out) {
                (true, true, _) | (false, true, false) => TaskKind::Inbound,
                (false, _, true) | (true, false, true) => TaskKind::Outbound,
                _ => break,
            };
            let sku = match kind {
                TaskKind::Inbound => SkuId(rng.gen_range(0..num_skus as u32)),
                TaskKind::Outbound => {
                    let s = available[rng.gen_range(0..available.len())];
                    pending[s as usize] += 1;
                    SkuId(s)
                }
            };
            let id = TaskId(self.next_id);
            self.next_id += 1;
            self.tasks.insert(
                id,
                Task {
                    id,
                    kind,
                    sku,
                    starts: Vec::new(),
                    dests: Vec::new(),
                    state: TaskState::Free,
                    release_time: t,
                    fixed: false,
                },
            );
            self.released += 1;
            self.log(t, id, TaskEventKind::Released);
            out.push(id);
        }
        out
    }

    /// Inserts a pre-built task; used by synthetic instances and tests.
    pub fn insert(&mut self, mut task: Task) -> TaskId {
        task.id = TaskId(self.next_id);
        self.next_id += 1;
        let id = task.id;
        self.tasks.insert(id, task);
        self.released += 1;
        id
    }

    fn transition(&mut self, id: TaskId, from: TaskState, to: TaskState) -> Result<&mut Task, TaskError> {
        let task = self.tasks.get_mut(&id).ok_or(TaskError::Unknown(id))?;
        if task.state != from {
            return Err(TaskError::BadTransition {
                task: id,
                from: task.state,
                to,
            });
        }
        task.state = to;
        Ok(task)
    }

    pub fn mark_allocated(&mut self, id: TaskId, t: u64) -> Result<(), TaskError> {
        self.transition(id, TaskState::Free, TaskState::Allocated)?;
        self.log(t, id, TaskEventKind::Allocated);
        Ok(())
    }

    pub fn mark_free(&mut self, id: TaskId, t: u64) -> Result<(), TaskError> {
        self.transition(id, TaskState::Allocated, TaskState::Free)?;
        self.log(t, id, TaskEventKind::Freed);
        Ok(())
    }

    /// Agent reached `start`. Outbound tasks lift the item off the shelf here.
    pub fn pick_up(&mut self, id: TaskId, start: CellId, inv: &mut Inventory, t: u64) -> Result<(), TaskError> {
        let task = self.tasks.get(&id).ok_or(TaskError::Unknown(id))?;
        if task.state != TaskState::Allocated {
            return Err(TaskError::BadTransition {
                task: id,
                from: task.state,
                to: TaskState::PickedUp,
            });
        }
        if task.kind == TaskKind::Outbound {
            let expected = task.sku;
            if let Some(found) = inv.item_at(start) {
                if found != expected {
                    return Err(TaskError::WrongSku {
                        task: id,
                        expected,
                        found,
                    });
                }
            }
            inv.remove_item(start)?;
        }
        self.transition(id, TaskState::Allocated, TaskState::PickedUp)?;
        self.log(t, id, TaskEventKind::PickedUp);
        Ok(())
    }

    /// Agent reached `dest` carrying the item. Inbound tasks shelve it here.
    pub fn complete_task(&mut self, id: TaskId, dest: CellId, inv: &mut Inventory, t: u64) -> Result<(), TaskError> {
        let task = self.tasks.get(&id).ok_or(TaskError::Unknown(id))?;
        if task.state != TaskState::PickedUp {
            return Err(TaskError::BadTransition {
                task: id,
                from: task.state,
                to: TaskState::Completed,
            });
        }
        let (kind, sku) = (task.kind, task.sku);
        if kind == TaskKind::Inbound {
            inv.place_item(dest, sku)?;
        }
        self.transition(id, TaskState::PickedUp, TaskState::Completed)?;
        self.log(t, id, TaskEventKind::Completed);
        self.tasks.remove(&id);
        self.completed += 1;
        match kind {
            TaskKind::Inbound => self.completed_inbound += 1,
            TaskKind::Outbound => self.completed_outbound += 1,
        }
        Ok(())
    }
}
