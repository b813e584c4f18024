pub mod diffcore;
pub mod gridworld;
pub mod orggraph;
pub mod navpolicy;
pub mod tpn;
pub mod harness;
