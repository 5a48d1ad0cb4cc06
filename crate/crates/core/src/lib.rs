pub mod adaptation;
pub mod harness;
pub mod agent;
pub mod knowledge;
pub mod forecasting;
pub mod neural;
pub mod thermal;
