use std::fmt;

use crate::error::{Error, Result};

/// Largest identifier representable in a 29-bit extended frame.
pub const MAX_EXTENDED_ID: u32 = (1 << 29) - 1;
/// Largest identifier representable in an 11-bit standard frame.
pub const MAX_STANDARD_ID: u32 = (1 << 11) - 1;

/// Class code of a frame. Code 0 is benign, attack classes start at 1.
///
/// Human-readable class names live in the label manifest or scenario that
/// produced the frames, not in the label itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(pub u16);

impl ClassLabel {
    pub const BENIGN: ClassLabel = ClassLabel(0);

    pub fn code(self) -> u16 {
        self.0
    }

    pub fn is_benign(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One timestamped classic CAN message.
#[derive(Debug, Clone, PartialEq)]
pub struct CanFrame {
    /// Seconds since epoch or capture start.
    pub timestamp: f64,
    pub can_id: u32,
    pub extended: bool,
    pub label: Option<ClassLabel>,
    dlc: u8,
    data: [u8; 8],
}

impl CanFrame {
    /// Builds a frame; `extended` is inferred from the identifier range.
    pub fn new(timestamp: f64, can_id: u32, payload: &[u8]) -> Result<Self> {
        Self::with_format(timestamp, can_id, can_id > MAX_STANDARD_ID, payload)
    }

    pub fn with_format(timestamp: f64, can_id: u32, extended: bool, payload: &[u8]) -> Result<Self> {
        if !(timestamp.is_finite() && timestamp >= 0.0) {
            return Err(Error::Config(format!("timestamp {timestamp} must be finite and >= 0")));
        }
        let limit = if extended { MAX_EXTENDED_ID } else { MAX_STANDARD_ID };
        if can_id > limit {
            return Err(Error::Config(format!(
                "CAN ID {can_id:#x} exceeds the {} frame range",
                if extended { "extended" } else { "standard" }
            )));
        }
        if payload.len() > 8 {
            return Err(Error::Config(format!(
                "payload of {} bytes exceeds the classic CAN maximum of 8",
                payload.len()
            )));
        }
        let mut data = [0u8; 8];
        data[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame {
            timestamp,
            can_id,
            extended,
            label: None,
            dlc: payload.len() as u8,
            data,
        })
    }

    pub fn labeled(mut self, label: ClassLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..self.dlc as usize]
    }

    /// Payload right-padded with zeros to eight bytes.
    pub fn padded_payload(&self) -> [u8; 8] {
        self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_oversized_ids_and_payloads() {
        assert!(CanFrame::with_format(0.0, 0x800, false, &[]).is_err());
        assert!(CanFrame::new(0.0, 1 << 29, &[]).is_err());
        assert!(CanFrame::new(0.0, 0x100, &[0; 9]).is_err());
        assert!(CanFrame::new(-1.0, 0x100, &[]).is_err());
    }

    #[test]
    fn short_payload_is_zero_padded() {
        let f = CanFrame::new(1.0, 0x316, &[0xab, 0xcd]).unwrap();
        assert_eq!(f.dlc(), 2);
        assert_eq!(f.payload(), &[0xab, 0xcd]);
        assert_eq!(f.padded_payload(), [0xab, 0xcd, 0, 0, 0, 0, 0, 0]);
        assert!(!f.extended);
        assert!(CanFrame::new(1.0, 0x1234_5678, &[]).unwrap().extended);
    }
}
