use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::market::VehicleId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub vehicle: VehicleId,
    pub megabits: f64,
}

/// FIFO of direct-download jobs at one RSU. `backlog` always equals the sum
/// of the remaining job sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsuQueue {
    jobs: VecDeque<Job>,
    service_rate: f64,
    backlog: f64,
}

impl RsuQueue {
    pub fn new(service_rate: f64) -> Self {
        assert!(service_rate > 0.0, "service rate must be positive");
        Self { jobs: VecDeque::new(), service_rate, backlog: 0.0 }
    }

    pub fn enqueue(&mut self, vehicle: VehicleId, megabits: f64) {
        let megabits = megabits.max(0.0);
        self.jobs.push_back(Job { vehicle, megabits });
        self.backlog += megabits;
    }

    /// Serves the queue for `dt` seconds, returning the jobs that finished.
    pub fn serve(&mut self, dt: f64) -> Vec<Job> {
        let mut budget = self.service_rate * dt.max(0.0);
        let mut done = Vec::new();
        while let Some(front) = self.jobs.front_mut() {
            if front.megabits > budget {
                front.megabits -= budget;
                break;
            }
            budget -= front.megabits;
            done.push(self.jobs.pop_front().unwrap());
        }
        self.backlog = self.jobs.iter().map(|j| j.megabits).sum();
        done
    }

    pub fn backlog_mb(&self) -> f64 {
        self.backlog
    }

    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Queueing latency `l_n` in seconds.
    pub fn estimate(&self) -> f64 {
        self.backlog / self.service_rate
    }
}
