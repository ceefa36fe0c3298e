pub mod design;
pub mod error;
pub mod fit;
pub mod group;
pub mod io;
pub mod linalg;
pub mod mt;
pub mod noise;
pub mod posi;
pub mod seed;
pub mod select;
pub mod shape;

pub use error::{Error, Result};
