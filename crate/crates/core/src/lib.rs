pub mod analytics;
pub mod bus;
pub mod hub;
pub mod interop;
pub mod knowledge;
pub mod object;
pub mod semantic;
pub mod services;
