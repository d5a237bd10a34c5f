//! Emulated V2X message channel with fixed latency and random loss.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Slack on delivery times so that `t + latency` lands on the intended step
/// despite rounding in `k·dt`.
const DELIVERY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommMessage<T> {
    pub send_t: f64,
    pub deliver_t: f64,
    pub payload: T,
}

/// FIFO channel. Every send draws one uniform sample, whether or not the
/// message is dropped, so the loss pattern depends only on the seed and the
/// number of sends.
#[derive(Debug, Clone)]
pub struct CommChannel<T> {
    latency: f64,
    drop_rate: f64,
    rng: ChaCha8Rng,
    queue: VecDeque<CommMessage<T>>,
}

impl<T: Clone> CommChannel<T> {
    pub fn new(latency: f64, drop_rate: f64, seed: u64) -> Self {
        Self {
            latency,
            drop_rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: VecDeque::new(),
        }
    }

    /// Queues `payload` for delivery at `t + latency`. Returns `false` when
    /// the message was dropped.
    pub fn send(&mut self, payload: T, t: f64) -> bool {
        let draw: f64 = self.rng.gen();
        if draw < self.drop_rate {
            return false;
        }
        self.queue.push_back(CommMessage {
            send_t: t,
            deliver_t: t + self.latency,
            payload,
        });
        true
    }

    /// Messages due by `t`, oldest first.
    pub fn poll(&mut self, t: f64) -> Vec<CommMessage<T>> {
        let mut out = Vec::new();
        while let Some(front) = self.queue.front() {
            if front.deliver_t > t + DELIVERY_SLACK {
                break;
            }
            out.extend(self.queue.pop_front());
        }
        out
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }
}
