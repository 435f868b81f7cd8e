use std::time::Instant;

use crate::error::{Error, Result};
use crate::transport::report::Record;

/// Wall time per response token, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub total_wall_time: f64,
    pub response_tokens: usize,
    pub ms_per_token: f64,
}

impl LatencyReport {
    pub fn new(total_wall_time: f64, response_tokens: usize) -> Result<Self> {
        if response_tokens == 0 {
            return Err(Error::ZeroTokens);
        }
        Ok(Self {
            total_wall_time,
            response_tokens,
            ms_per_token: 1000.0 * total_wall_time / response_tokens as f64,
        })
    }

    pub fn to_record(&self) -> Record {
        Record::new("latency")
            .field("total_wall_time_s", format!("{:.6}", self.total_wall_time))
            .field("response_tokens", self.response_tokens)
            .field("ms_per_token", format!("{:.6}", self.ms_per_token))
    }
}

/// Times `run`, which returns the number of response tokens it produced.
/// Callers do their handshake before calling this.
pub fn latency_probe(run: impl FnOnce() -> Result<usize>) -> Result<LatencyReport> {
    let start = Instant::now();
    let tokens = run()?;
    LatencyReport::new(start.elapsed().as_secs_f64(), tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn injected_delay_per_round() {
        let report = latency_probe(|| {
            for _ in 0..5 {
                std::thread::sleep(Duration::from_millis(10));
            }
            Ok(20)
        })
        .unwrap();
        assert!(
            (2.0..=4.0).contains(&report.ms_per_token),
            "{}",
            report.ms_per_token
        );
    }

    #[test]
    fn zero_tokens_rejected() {
        assert!(matches!(latency_probe(|| Ok(0)), Err(Error::ZeroTokens)));
    }

    #[test]
    fn derived_field() {
        let r = LatencyReport::new(0.5, 250).unwrap();
        assert_eq!(r.ms_per_token, 2.0);
    }
}
