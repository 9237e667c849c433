pub mod caspaxos;
pub mod check;
pub mod failover;
pub mod num;
pub mod scheduler;
pub mod store;
pub mod time;
pub mod sim;

pub type SchedulerStats32 = scheduler::SchedulerStats<f32>;
pub type SchedulerStats64 = scheduler::SchedulerStats<f64>;
pub type FailoverState = failover::FailoverManagerState<f64>;
