pub mod analysis;
pub mod coherent;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod par;
pub mod params;
pub mod record;
pub mod sde;
pub mod spin;

pub use error::{Error, Result};
