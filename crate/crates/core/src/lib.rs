pub mod bus;
pub mod client;
pub mod config;
pub mod gateway;
pub mod host;
pub mod safety;
pub mod sim;
pub mod slots;
