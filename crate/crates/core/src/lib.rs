pub mod bch;
pub mod eval;
pub mod gf2m;
pub mod hashnet;
pub mod nnd;
pub mod protocol;
pub mod pipeline;
