mod conv;
mod elementwise;
mod linear;
mod norm;
mod reduce;
mod sample;
pub(crate) mod shape;
mod window;
