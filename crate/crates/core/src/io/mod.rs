pub mod checkpoint;
pub mod mnist;
pub mod render;
