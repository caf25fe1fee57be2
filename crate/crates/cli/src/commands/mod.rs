pub mod bench;
pub mod datagen;
pub mod eval;
pub mod search;
pub mod train;
