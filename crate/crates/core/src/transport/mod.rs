//! Wire encoding, framed channels and cost accounting.

mod channel;
mod latency;
mod ledger;
mod report;
pub mod wire;

pub use channel::{
    in_process_pair, ChannelKind, Connection, Side, FRAME_CAP, FRAME_HEADER_LEN, PREAMBLE,
};
pub use latency::{latency_probe, LatencyReport};
pub use ledger::{ByteCounts, Category, CostLedger, Direction, LedgerReport};
pub use report::Record;
