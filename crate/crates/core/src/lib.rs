pub mod agents;
pub mod episodes;
pub mod eval;
pub mod error;
pub mod goalspace;
pub mod render;
pub mod rltrain;
pub mod util;
pub mod worldgen;

pub use error::{Error, Result};
