use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use super::{Channel, DeliveryState, OutboundMessage};
use crate::model::{MessageId, Timestamp};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway i/o: {0}")]
    Io(#[from] io::Error),
    #[error("gateway rejected message: {0}")]
    Rejected(String),
}

/// Hands a message to a carrier. Implementations must not retry on their own.
pub trait MessageGateway: Send {
    fn deliver(&mut self, msg: &OutboundMessage) -> Result<(), GatewayError>;
}

/// Line format of the file and stdout sinks.
#[derive(Serialize)]
struct SinkLine<'a> {
    message_id: &'a MessageId,
    channel: Channel,
    recipient: &'a str,
    body: &'a str,
    created_at: Timestamp,
    delivery_state: DeliveryState,
}

fn sink_line(msg: &OutboundMessage) -> String {
    serde_json::to_string(&SinkLine {
        message_id: &msg.message_id,
        channel: msg.channel,
        recipient: &msg.recipient,
        body: &msg.body,
        created_at: msg.created_at,
        delivery_state: DeliveryState::Sent,
    })
    .expect("sink line serializes")
}

/// Appends one JSON object per line.
pub struct FileGateway {
    out: BufWriter<File>,
}

impl FileGateway {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(FileGateway { out: BufWriter::new(file) })
    }
}

impl MessageGateway for FileGateway {
    fn deliver(&mut self, msg: &OutboundMessage) -> Result<(), GatewayError> {
        writeln!(self.out, "{}", sink_line(msg))?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Default)]
pub struct StdoutGateway;

impl MessageGateway for StdoutGateway {
    fn deliver(&mut self, msg: &OutboundMessage) -> Result<(), GatewayError> {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        writeln!(lock, "{}", sink_line(msg))?;
        Ok(())
    }
}

/// Discards everything. For simulations where only the event log matters.
#[derive(Default)]
pub struct NullGateway;

impl MessageGateway for NullGateway {
    fn deliver(&mut self, _msg: &OutboundMessage) -> Result<(), GatewayError> {
        Ok(())
    }
}

/// Keeps delivered messages in memory; clones share the same buffer.
#[derive(Clone, Default)]
pub struct MemoryGateway {
    sent: Arc<Mutex<Vec<OutboundMessage>>>,
}

impl MemoryGateway {
    pub fn messages(&self) -> Vec<OutboundMessage> {
        self.sent.lock().expect("memory gateway poisoned").clone()
    }
}

impl MessageGateway for MemoryGateway {
    fn deliver(&mut self, msg: &OutboundMessage) -> Result<(), GatewayError> {
        self.sent.lock().expect("memory gateway poisoned").push(msg.clone());
        Ok(())
    }
}
