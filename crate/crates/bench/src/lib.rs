//! Shared fixtures for the sweep benchmarks.

use bnpmfa::sampler::{initialize, Init};
use bnpmfa::simulate::{generate_dataset, Lattice, SimConfig, SimDataset};
use bnpmfa::{ChainState, HyperParams};

pub const Q: usize = 5;

/// Strong-signal dataset on an `m × m` lattice with `p` genes.
pub fn dataset(m: usize, p: usize) -> SimDataset {
    generate_dataset(&SimConfig {
        lattice: Lattice::Square(m),
        p,
        q: Q,
        potts_d: 2.0,
        potts_sweeps: 50,
        seed: 42,
        ..SimConfig::default()
    })
    .expect("valid simulation settings")
}

pub fn start_state(ds: &SimDataset) -> ChainState {
    initialize(&ds.x, &HyperParams::new(Q), Init::KMeans(3), 42).expect("initial state")
}
