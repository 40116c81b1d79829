pub mod ads;
pub mod bridge;
pub mod bus;
pub mod dynamics;
pub mod frames;
pub mod harness;
pub mod map;
pub mod message;
pub mod scenario;
pub mod topics;
