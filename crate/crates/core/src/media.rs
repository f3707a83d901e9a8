//! RTP-style media frames and in-call DTMF digits.

use std::collections::BTreeSet;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Conventional static payload type for GSM 06.10.
pub const PT_GSM: u8 = 3;
/// 160 samples at 8 kHz per 20 ms frame.
pub const TIMESTAMP_STEP: u32 = 160;
pub const FRAME_INTERVAL: Duration = Duration::from_millis(20);
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RtpFrame {
    pub payload_type: u8,
    pub marker: bool,
    pub seq: u16,
    pub timestamp: u32,
    pub ssrc: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RtpError {
    #[error("buffer of {0} octets is shorter than the 12-octet header")]
    ShortBuffer(usize),
    #[error("unsupported RTP version {0}")]
    BadVersion(u8),
    #[error("CSRC lists, padding and header extensions are not supported")]
    Unsupported,
}

impl RtpFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.push(0x80);
        out.push((u8::from(self.marker) << 7) | (self.payload_type & 0x7f));
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.ssrc.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<RtpFrame, RtpError> {
        if buf.len() < HEADER_LEN {
            return Err(RtpError::ShortBuffer(buf.len()));
        }
        let version = buf[0] >> 6;
        if version != 2 {
            return Err(RtpError::BadVersion(version));
        }
        if buf[0] & 0x3f != 0 {
            return Err(RtpError::Unsupported);
        }
        Ok(RtpFrame {
            payload_type: buf[1] & 0x7f,
            marker: buf[1] & 0x80 != 0,
            seq: u16::from_be_bytes([buf[2], buf[3]]),
            timestamp: u32::from_be_bytes([buf[4], buf[5], buf[6], buf[7]]),
            ssrc: u32::from_be_bytes([buf[8], buf[9], buf[10], buf[11]]),
            payload: buf[HEADER_LEN..].to_vec(),
        })
    }
}

/// Sender-side counters for one media stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaSession {
    pub ssrc: u32,
    pub next_seq: u16,
    pub next_timestamp: u32,
    pub frame_count: u64,
}

impl MediaSession {
    pub fn new(ssrc: u32, seq: u16, timestamp: u32) -> Self {
        MediaSession { ssrc, next_seq: seq, next_timestamp: timestamp, frame_count: 0 }
    }

    /// Emit a frame with the current counters, then advance them by one
    /// sequence number and 160 timestamp units.
    pub fn next_frame(&mut self, payload: impl Into<Vec<u8>>) -> RtpFrame {
        let frame = RtpFrame {
            payload_type: PT_GSM,
            marker: self.frame_count == 0,
            seq: self.next_seq,
            timestamp: self.next_timestamp,
            ssrc: self.ssrc,
            payload: payload.into(),
        };
        self.next_seq = self.next_seq.wrapping_add(1);
        self.next_timestamp = self.next_timestamp.wrapping_add(TIMESTAMP_STEP);
        self.frame_count += 1;
        frame
    }
}

/// Receiver-side continuity check for one SSRC.
#[derive(Debug, Clone, Default)]
pub struct StreamMonitor {
    last: Option<(u16, u32)>,
    pub frames: u64,
    pub discontinuities: u64,
}

impl StreamMonitor {
    /// Returns false when the frame does not follow the previous one.
    pub fn observe(&mut self, frame: &RtpFrame) -> bool {
        let continuous = match self.last {
            None => true,
            Some((seq, ts)) => {
                frame.seq == seq.wrapping_add(1) && frame.timestamp == ts.wrapping_add(TIMESTAMP_STEP)
            }
        };
        self.last = Some((frame.seq, frame.timestamp));
        self.frames += 1;
        if !continuous {
            self.discontinuities += 1;
        }
        continuous
    }
}

/// Hands out SSRCs and initial counters from a seeded generator, never
/// repeating an SSRC within one run.
#[derive(Debug, Clone)]
pub struct SsrcAllocator {
    rng: ChaCha8Rng,
    used: BTreeSet<u32>,
}

impl SsrcAllocator {
    pub fn new(seed: u64) -> Self {
        SsrcAllocator { rng: ChaCha8Rng::seed_from_u64(seed), used: BTreeSet::new() }
    }

    pub fn open_session(&mut self) -> MediaSession {
        let ssrc = loop {
            let candidate: u32 = self.rng.gen();
            if self.used.insert(candidate) {
                break candidate;
            }
        };
        MediaSession::new(ssrc, self.rng.gen(), self.rng.gen())
    }
}

/// A DTMF key. Only the twelve keypad symbols exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DtmfDigit(char);

impl DtmfDigit {
    pub fn new(c: char) -> Option<Self> {
        matches!(c, '0'..='9' | '*' | '#').then_some(DtmfDigit(c))
    }

    pub fn as_char(self) -> char {
        self.0
    }

    /// Parse a keypad string, rejecting anything outside `0-9*#`.
    pub fn parse_all(s: &str) -> Option<Vec<DtmfDigit>> {
        s.chars().map(DtmfDigit::new).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtmfEvent {
    pub call_id: String,
    pub digit: DtmfDigit,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_follow_capture() {
        let mut s = MediaSession::new(0x02ED_CFCE, 9933, 3_550_780);
        let a = s.next_frame(vec![0; 33]);
        let b = s.next_frame(vec![0; 33]);
        assert_eq!((a.seq, a.timestamp), (9933, 3_550_780));
        assert_eq!((b.seq, b.timestamp), (9934, 3_550_940));
        assert_eq!(s.frame_count, 2);
    }

    #[test]
    fn sequence_wraps() {
        let mut s = MediaSession::new(1, 65535, u32::MAX - 100);
        let a = s.next_frame(vec![]);
        let b = s.next_frame(vec![]);
        assert_eq!(a.seq, 65535);
        assert_eq!(b.seq, 0);
        assert_eq!(b.timestamp, (u32::MAX - 100).wrapping_add(160));
    }

    #[test]
    fn ten_frames_form_arithmetic_sequence() {
        let mut s = MediaSession::new(7, 100, 1000);
        let ts: Vec<u32> = (0..10).map(|_| s.next_frame(vec![]).timestamp).collect();
        let closed_form: Vec<u32> = (0..10).map(|n| 1000 + 160 * n).collect();
        assert_eq!(ts, closed_form);
    }

    #[test]
    fn header_layout_matches_hand_computed_octets() {
        let frame = RtpFrame { payload_type: 3, marker: false, seq: 9933, timestamp: 3_550_780, ssrc: 0x02ED_CFCE, payload: vec![] };
        assert_eq!(frame.encode(), [0x80, 0x03, 0x26, 0xCD, 0x00, 0x36, 0x2E, 0x3C, 0x02, 0xED, 0xCF, 0xCE]);
    }

    #[test]
    fn decode_errors() {
        assert_eq!(RtpFrame::decode(&[0x80; 11]), Err(RtpError::ShortBuffer(11)));
        let mut buf = [0u8; 12];
        buf[0] = 0x40;
        assert_eq!(RtpFrame::decode(&buf), Err(RtpError::BadVersion(1)));
        buf[0] = 0x81;
        assert_eq!(RtpFrame::decode(&buf), Err(RtpError::Unsupported));
    }

    #[test]
    fn monitor_flags_gaps() {
        let mut s = MediaSession::new(7, 0, 0);
        let mut m = StreamMonitor::default();
        let f1 = s.next_frame(vec![]);
        let _lost = s.next_frame(vec![]);
        let f3 = s.next_frame(vec![]);
        assert!(m.observe(&f1));
        assert!(!m.observe(&f3));
        assert_eq!(m.discontinuities, 1);
    }

    #[test]
    fn allocator_is_seeded_and_unique() {
        let mut a = SsrcAllocator::new(9);
        let mut b = SsrcAllocator::new(9);
        let sa: Vec<u32> = (0..100).map(|_| a.open_session().ssrc).collect();
        let sb: Vec<u32> = (0..100).map(|_| b.open_session().ssrc).collect();
        assert_eq!(sa, sb);
        assert_eq!(sa.iter().collect::<BTreeSet<_>>().len(), 100);
    }

    #[test]
    fn dtmf_alphabet_is_closed() {
        assert!(DtmfDigit::parse_all("0123456789*#").is_some());
        assert!(DtmfDigit::parse_all("12a").is_none());
    }
}
