pub mod data;
pub mod gaussian;
pub mod linalg;
pub mod mixture;
pub use nalgebra;
