//! Numerical nodal analysis on sampling grids: nodal domains, zero-set
//! meshes and their topology, nesting trees, and the end-to-end checks.

mod domains;
mod ensemble;
mod grid;
mod mesh;
mod verify;

pub use domains::{
    decompose, domain_nesting_tree, encloses, label_domains, nesting_tree, outer_interface, outside_of, Domains, Interface, NestingTree,
    NodalDecomposition,
};
pub use ensemble::{compact_components, ensemble_stats, wilson, Bin, ComponentStat, EnsembleParams, EnsembleStats, Histogram};
pub use grid::{nudge, sign_grid, sign_grid_with, Grid, SignGrid};
pub use mesh::{
    ambiguous_squares, extract_zero_set, marching_simplices, mesh_components, write_obj, MeshComponent, TopologyRecord,
    ZeroSet, ZeroSetMesh,
};

pub use verify::{analysis_grid, realize_and_verify, NodeCheck, RealizeParams, RealizeReport, Realization};

pub use crate::tree::{canonical_tree, trees_isomorphic};
