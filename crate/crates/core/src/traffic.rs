//! Network traffic accounting for backend exchanges.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// One request/response round trip with a backend. Byte counts are measured
/// on the serialized wire payloads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub backend: String,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub latency: Duration,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendTraffic {
    pub sent: u64,
    pub received: u64,
    pub requests: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficTotals {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub request_count: u64,
    pub per_backend: BTreeMap<String, BackendTraffic>,
}

impl TrafficTotals {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }

    /// True when the global counters equal the sums over `per_backend`.
    pub fn is_consistent(&self) -> bool {
        let (sent, received, requests) = self
            .per_backend
            .values()
            .fold((0, 0, 0), |(s, r, n), b| (s + b.sent, r + b.received, n + b.requests));
        sent == self.bytes_sent && received == self.bytes_received && requests == self.request_count
    }
}

pub fn record_traffic(mut totals: TrafficTotals, exchanges: &[Exchange]) -> TrafficTotals {
    for exchange in exchanges {
        totals.bytes_sent += exchange.request_bytes;
        totals.bytes_received += exchange.response_bytes;
        totals.request_count += 1;
        let entry = totals.per_backend.entry(exchange.backend.clone()).or_default();
        entry.sent += exchange.request_bytes;
        entry.received += exchange.response_bytes;
        entry.requests += 1;
    }
    totals
}
