//! The network: layer definitions, parameter naming and the assembled model.

mod blocks;
pub mod config;
mod mbt;
pub mod params;

pub use blocks::{cab_forward, cptb_forward, ppsa_forward, prm_forward, spal_forward};
pub use blocks::{CabTrace, CptbTrace, PpsaTrace, PrmTrace, SpalTrace};
pub use config::{ModelConfig, MODEL_KEYS};
pub use mbt::{infer, mbt_forward, MbtTrace};
pub use params::{init_weights, module_param_counts, param_count, param_specs, Bound, ParamTree, Scope};
