//! Lifelong many-to-many multi-agent pickup and delivery.
//!
//! A warehouse simulator in which agents continuously take inbound and
//! outbound tasks, each offering several candidate pickup and delivery cells.
//! Allocation builds (agent, task, start, destination) tuples greedily and
//! improves them with large neighbourhood search; motion is planned with
//! priority-based search over space-time A*.
//!
//! Cost arithmetic is generic over [`Scalar`]; the simulator runs on `f64`
//! through the aliases below.

pub mod allocator;
pub mod harness;
pub mod inventory;
pub mod kdtree;
pub mod lns;
pub mod mapf;
pub mod sim;
pub mod tasks;
pub mod worldmap;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point type used for allocation costs and scores.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {}

pub use inventory::{Inventory, SkuId};
pub use mapf::TimedPath;
pub use sim::{AllocatorMode, SimConfig, Simulation};
pub use tasks::{Task, TaskId, TaskKind, TaskPool, TaskState};
pub use worldmap::{Cell, CellId, DistanceOracle, GridMap, MapAsset, Vertex};

pub type Cost = f64;
pub type CostParams = allocator::CostParams<Cost>;
pub type CostMatrices = allocator::CostMatrices<Cost>;
pub type Allocation = allocator::Allocation<Cost>;
pub type Assignment = allocator::Assignment<Cost>;
pub type LnsParams = lns::LnsParams<Cost>;
