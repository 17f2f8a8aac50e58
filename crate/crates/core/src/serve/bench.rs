use std::net::ToSocketAddrs;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::client::{Client, ClientError};

/// When a benchmark run ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchStop {
    Count(u64),
    Duration(Duration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub obs: Vec<f64>,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Completed requests per wall-clock second.
    pub achieved_hz: f64,
    /// Client-side round-trip percentiles.
    pub p50_us: u64,
    pub p99_us: u64,
    pub count: u64,
    pub elapsed_s: f64,
    /// False when the connection failed before the stop condition.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (pct as usize * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Issues back-to-back requests with one in flight and reports the achieved rate.
pub fn bench<A: ToSocketAddrs>(
    addr: A,
    request: &BenchRequest,
    stop: BenchStop,
    timeout: Duration,
) -> Result<BenchReport, ClientError> {
    let mut client = Client::connect(addr, timeout)?;
    let mut rtts = Vec::new();
    let mut error = None;
    let start = Instant::now();
    loop {
        let more = match stop {
            BenchStop::Count(n) => (rtts.len() as u64) < n,
            BenchStop::Duration(d) => start.elapsed() < d,
        };
        if !more {
            break;
        }
        let t = Instant::now();
        match client.predict(&request.obs, &request.instruction) {
            Ok(_) => rtts.push(t.elapsed().as_micros() as u64),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let count = rtts.len() as u64;
    rtts.sort_unstable();
    Ok(BenchReport {
        achieved_hz: if elapsed > 0.0 {
            count as f64 / elapsed
        } else {
            0.0
        },
        p50_us: percentile(&rtts, 50),
        p99_us: percentile(&rtts, 99),
        count,
        elapsed_s: elapsed,
        complete: error.is_none(),
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50), 50);
        assert_eq!(percentile(&v, 99), 99);
        assert_eq!(percentile(&[7], 99), 7);
        assert_eq!(percentile(&[1, 2, 3], 50), 2);
        assert_eq!(percentile(&[], 50), 0);
    }
}
