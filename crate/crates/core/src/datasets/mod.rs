//! Versioned analytic generators, trajectory CSVs and dataset manifests.

mod generate;
mod systems;
mod trajectory;

pub use generate::{
    generate, self_intersections, Dataset, GeneratorSpec, Manifest, Provenance, MANIFEST_FILE, MANIFEST_VERSION,
    RESIDUAL_LIMIT,
};
pub use systems::{default_system, default_systems, SystemName, CLAMP, DEFAULT_GAMMA, SYSTEM_VERSION};
pub use trajectory::{format_f64, Trajectory};
