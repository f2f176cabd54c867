pub mod backend_adapter;
pub mod decoder;
pub mod encoding;
pub mod evalharness;
pub mod facts;
pub mod grid;
pub mod microworld;
pub mod policy;
pub mod primitives;
pub mod seed;
pub mod workspace;
