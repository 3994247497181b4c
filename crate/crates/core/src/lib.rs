pub mod acceptance;
pub mod attacks;
pub mod engine;
pub mod experiments;
pub mod linklayer;
pub mod messages;
pub mod metrics;
pub mod rpl;
pub mod scenarios;
pub mod secure;
pub mod time;
pub mod trace;
