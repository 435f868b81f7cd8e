//! Byte and token accounting per connection.
//!
//! Every frame is charged, header included, to one category and one
//! direction:
//!
//! - `data`: `StartSession`, `ServerGenerate` (they carry the prompt)
//! - `model`: `UploadAdapter`
//! - `inference`: `DraftBatch`, `Commit`, `CommitSequence`, `GenerationResult`
//! - `control`: connection preamble, `Hello`, `HelloAck`, `ProtocolError`;
//!   reported separately and excluded from the three cost categories

use crate::protocol::Message;
use crate::transport::report::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Control,
    DataTransfer,
    ModelTransfer,
    Inference,
}

impl Category {
    pub fn of(msg: &Message) -> Self {
        match msg {
            Message::Hello { .. } | Message::HelloAck { .. } | Message::ProtocolError { .. } => {
                Category::Control
            }
            Message::StartSession { .. } | Message::ServerGenerate { .. } => Category::DataTransfer,
            Message::UploadAdapter { .. } => Category::ModelTransfer,
            Message::DraftBatch { .. }
            | Message::Commit { .. }
            | Message::CommitSequence { .. }
            | Message::GenerationResult { .. } => Category::Inference,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ByteCounts {
    pub up: u64,
    pub down: u64,
}

impl ByteCounts {
    pub fn total(&self) -> u64 {
        self.up + self.down
    }
}

/// Monotone counters; the only mutation is addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    bytes: [ByteCounts; 4],
    rounds: u64,
    tokens_drafted: u64,
    tokens_accepted: u64,
    replacements: u64,
    tokens_committed: u64,
    tokens_dropped: u64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_bytes(&mut self, category: Category, direction: Direction, bytes: usize) {
        let slot = &mut self.bytes[category.index()];
        match direction {
            Direction::ClientToServer => slot.up += bytes as u64,
            Direction::ServerToClient => slot.down += bytes as u64,
        }
    }

    /// Charges one framed message of `frame_len` bytes (header included).
    pub fn record(&mut self, msg: &Message, direction: Direction, frame_len: usize) {
        self.record_bytes(Category::of(msg), direction, frame_len);
    }

    /// One verify round: `drafted` tokens received, the first `accepted`
    /// kept verbatim, plus an optional replacement.
    pub fn record_round(&mut self, drafted: usize, accepted: usize, replaced: bool) {
        debug_assert!(accepted <= drafted);
        self.rounds += 1;
        self.tokens_drafted += drafted as u64;
        self.tokens_accepted += accepted as u64;
        self.replacements += replaced as u64;
        self.tokens_committed += (accepted + replaced as usize) as u64;
        self.tokens_dropped += (drafted - accepted) as u64;
    }

    /// Tokens produced by the server in one shot (api / transfer modes).
    pub fn record_server_tokens(&mut self, n: usize) {
        self.tokens_committed += n as u64;
    }

    pub fn bytes(&self, category: Category) -> ByteCounts {
        self.bytes[category.index()]
    }

    pub fn report(&self) -> LedgerReport {
        LedgerReport {
            control: self.bytes(Category::Control),
            data: self.bytes(Category::DataTransfer),
            model: self.bytes(Category::ModelTransfer),
            inference: self.bytes(Category::Inference),
            rounds: self.rounds,
            tokens_drafted: self.tokens_drafted,
            tokens_accepted: self.tokens_accepted,
            replacements: self.replacements,
            tokens_committed: self.tokens_committed,
            tokens_dropped: self.tokens_dropped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerReport {
    pub control: ByteCounts,
    pub data: ByteCounts,
    pub model: ByteCounts,
    pub inference: ByteCounts,
    pub rounds: u64,
    pub tokens_drafted: u64,
    pub tokens_accepted: u64,
    pub replacements: u64,
    pub tokens_committed: u64,
    pub tokens_dropped: u64,
}

impl LedgerReport {
    /// Tokens accepted verbatim over tokens drafted; `None` before any draft.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.tokens_drafted > 0).then(|| self.tokens_accepted as f64 / self.tokens_drafted as f64)
    }

    /// Sum of the three cost categories, control excluded.
    pub fn cost_bytes(&self) -> u64 {
        self.data.total() + self.model.total() + self.inference.total()
    }

    pub fn to_record(&self) -> Record {
        Record::new("ledger")
            .field("data_up", self.data.up)
            .field("data_down", self.data.down)
            .field("model_up", self.model.up)
            .field("model_down", self.model.down)
            .field("inference_up", self.inference.up)
            .field("inference_down", self.inference.down)
            .field("control_up", self.control.up)
            .field("control_down", self.control.down)
            .field("rounds", self.rounds)
            .field("tokens_drafted", self.tokens_drafted)
            .field("tokens_accepted", self.tokens_accepted)
            .field("replacements", self.replacements)
            .field("tokens_committed", self.tokens_committed)
            .field("tokens_dropped", self.tokens_dropped)
            .field(
                "acceptance_rate",
                self.acceptance_rate()
                    .map_or_else(|| "na".to_string(), |r| format!("{r:.6}")),
            )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counters_balance() {
        let mut l = CostLedger::new();
        l.record_round(8, 8, false);
        l.record_round(8, 3, true);
        l.record_round(2, 0, true);
        let r = l.report();
        assert_eq!(r.rounds, 3);
        assert_eq!(r.tokens_committed + r.tokens_dropped, r.tokens_drafted + r.replacements);
        assert_eq!(r.tokens_committed, 8 + 4 + 1);
        assert_eq!(r.acceptance_rate(), Some(11.0 / 18.0));
    }

    #[test]
    fn bytes_split_by_category_and_direction() {
        let mut l = CostLedger::new();
        l.record_bytes(Category::Inference, Direction::ServerToClient, 100);
        l.record_bytes(Category::Inference, Direction::ClientToServer, 23);
        l.record_bytes(Category::ModelTransfer, Direction::ClientToServer, 7);
        let r = l.report();
        assert_eq!(r.inference, ByteCounts { up: 23, down: 100 });
        assert_eq!(r.model.up, 7);
        assert_eq!(r.cost_bytes(), 130);
        assert_eq!(r.acceptance_rate(), None);
        assert!(r.to_record().to_string().contains("acceptance_rate=na"));
    }
}
