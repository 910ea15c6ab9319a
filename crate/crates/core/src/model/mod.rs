//! Domain types shared by every other module: the cell space carrying the
//! true law, partitions over it, functions on cells and weighted samples.

mod cells;
mod function;
mod join;
mod partition;
mod sample;

pub use cells::CellSpace;
pub use function::FunctionOnCells;
pub use join::{join_cells, CellJoin, DeclaredPartition};
pub use partition::{Partition, PartitionSequence};
pub use sample::{load_sample, read_sample, LoadedSample, Observation, SampleSchema, WeightedSample};

/// Default tolerance for checks that hold exactly in exact arithmetic.
pub const EXACT_TOL: f64 = 1e-12;
