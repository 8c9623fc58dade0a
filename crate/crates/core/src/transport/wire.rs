//! Binary frame codec.
//!
//! Frame layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   "ISON"
//! version    u16
//! msg_type   u8
//! payload_len u32
//! payload    payload_len bytes
//! checksum   u32 CRC-32 of the payload
//! ```
//!
//! Payloads:
//! - InitModel:      f32 values in layout order
//! - PredictedClass: u32 class index
//! - LocalParams:    u32 round, then f32 values
//! - GlobalParams:   u32 round, u8 source_converged, then f32 values
//! - Terminate:      u32 final round

use super::{RoundMessage, TransportError, TransportResult};

pub const MAGIC: [u8; 4] = *b"ISON";
pub const PROTOCOL_VERSION: u16 = 1;
/// Bytes besides the payload: header (4+2+1+4) plus trailing checksum.
pub const FRAME_OVERHEAD: usize = 15;

const TYPE_INIT_MODEL: u8 = 1;
const TYPE_PREDICTED_CLASS: u8 = 2;
const TYPE_LOCAL_PARAMS: u8 = 3;
const TYPE_GLOBAL_PARAMS: u8 = 4;
const TYPE_TERMINATE: u8 = 5;

fn push_floats(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn msg_type(msg: &RoundMessage) -> u8 {
    match msg {
        RoundMessage::InitModel { .. } => TYPE_INIT_MODEL,
        RoundMessage::PredictedClass { .. } => TYPE_PREDICTED_CLASS,
        RoundMessage::LocalParams { .. } => TYPE_LOCAL_PARAMS,
        RoundMessage::GlobalParams { .. } => TYPE_GLOBAL_PARAMS,
        RoundMessage::Terminate { .. } => TYPE_TERMINATE,
    }
}

fn payload(msg: &RoundMessage) -> Vec<u8> {
    let mut buf = Vec::new();
    match msg {
        RoundMessage::InitModel { params } => push_floats(&mut buf, params),
        RoundMessage::PredictedClass { class } => buf.extend_from_slice(&class.to_le_bytes()),
        RoundMessage::LocalParams { round, params } => {
            buf.extend_from_slice(&round.to_le_bytes());
            push_floats(&mut buf, params);
        }
        RoundMessage::GlobalParams { round, params, source_converged } => {
            buf.extend_from_slice(&round.to_le_bytes());
            buf.push(*source_converged as u8);
            push_floats(&mut buf, params);
        }
        RoundMessage::Terminate { final_round } => {
            buf.extend_from_slice(&final_round.to_le_bytes())
        }
    }
    buf
}

/// Deterministic byte encoding of a message as one complete frame.
pub fn encode(msg: &RoundMessage) -> Vec<u8> {
    let payload = payload(msg);
    let mut frame = Vec::with_capacity(FRAME_OVERHEAD + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    frame.push(msg_type(msg));
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    frame.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    frame
}

fn take_u32(buf: &[u8], at: usize, ctx: &'static str) -> TransportResult<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or(TransportError::MalformedPayload(ctx))
}

fn parse_floats(buf: &[u8], ctx: &'static str) -> TransportResult<Vec<f32>> {
    if buf.len() % 4 != 0 {
        return Err(TransportError::MalformedPayload(ctx));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect())
}

/// Decodes one complete frame. The inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> TransportResult<RoundMessage> {
    if bytes.len() < FRAME_OVERHEAD {
        return Err(TransportError::Truncated);
    }
    if bytes[..4] != MAGIC {
        return Err(TransportError::BadMagic);
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().expect("2 bytes"));
    if version != PROTOCOL_VERSION {
        return Err(TransportError::VersionMismatch { expected: PROTOCOL_VERSION, actual: version });
    }
    let msg_type = bytes[6];
    let payload_len = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
    if bytes.len() < FRAME_OVERHEAD + payload_len {
        return Err(TransportError::Truncated);
    }
    let payload = &bytes[11..11 + payload_len];
    let checksum =
        u32::from_le_bytes(bytes[11 + payload_len..15 + payload_len].try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != checksum {
        return Err(TransportError::ChecksumMismatch);
    }
    match msg_type {
        TYPE_INIT_MODEL => Ok(RoundMessage::InitModel { params: parse_floats(payload, "InitModel")? }),
        TYPE_PREDICTED_CLASS => {
            if payload.len() != 4 {
                return Err(TransportError::MalformedPayload("PredictedClass"));
            }
            Ok(RoundMessage::PredictedClass { class: take_u32(payload, 0, "PredictedClass")? })
        }
        TYPE_LOCAL_PARAMS => {
            let round = take_u32(payload, 0, "LocalParams")?;
            Ok(RoundMessage::LocalParams { round, params: parse_floats(&payload[4..], "LocalParams")? })
        }
        TYPE_GLOBAL_PARAMS => {
            let round = take_u32(payload, 0, "GlobalParams")?;
            let flag = *payload.get(4).ok_or(TransportError::MalformedPayload("GlobalParams"))?;
            Ok(RoundMessage::GlobalParams {
                round,
                params: parse_floats(&payload[5..], "GlobalParams")?,
                source_converged: flag != 0,
            })
        }
        TYPE_TERMINATE => {
            if payload.len() != 4 {
                return Err(TransportError::MalformedPayload("Terminate"));
            }
            Ok(RoundMessage::Terminate { final_round: take_u32(payload, 0, "Terminate")? })
        }
        other => Err(TransportError::UnknownMessageType(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_is_deterministic() {
        let msg = RoundMessage::LocalParams { round: 3, params: vec![1.0, -2.5, 0.0] };
        assert_eq!(encode(&msg), encode(&msg));
    }

    #[test]
    fn decode_inverts_encode_for_every_variant() {
        let msgs = [
            RoundMessage::InitModel { params: vec![0.5, 1.5] },
            RoundMessage::PredictedClass { class: 2 },
            RoundMessage::LocalParams { round: 7, params: vec![-1.0] },
            RoundMessage::GlobalParams { round: 7, params: vec![3.25], source_converged: true },
            RoundMessage::Terminate { final_round: 42 },
        ];
        for msg in msgs {
            assert_eq!(decode(&encode(&msg)).unwrap(), msg);
        }
    }

    #[test]
    fn predicted_class_payload_is_exactly_four_bytes() {
        let frame = encode(&RoundMessage::PredictedClass { class: 2 });
        assert_eq!(frame.len(), FRAME_OVERHEAD + 4);
        assert_eq!(&frame[11..15], &2u32.to_le_bytes());
    }

    #[test]
    fn corrupted_checksum_is_detected() {
        let mut frame = encode(&RoundMessage::Terminate { final_round: 1 });
        let last = frame.len() - 1;
        frame[last] ^= 0xff;
        assert!(matches!(decode(&frame), Err(TransportError::ChecksumMismatch)));
    }

    #[test]
    fn corrupted_payload_is_detected() {
        let mut frame = encode(&RoundMessage::InitModel { params: vec![1.0, 2.0] });
        frame[12] ^= 0x01;
        assert!(matches!(decode(&frame), Err(TransportError::ChecksumMismatch)));
    }

    #[test]
    fn unknown_message_type_is_an_error() {
        let mut frame = encode(&RoundMessage::Terminate { final_round: 0 });
        frame[6] = 99;
        assert!(matches!(decode(&frame), Err(TransportError::UnknownMessageType(99))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut frame = encode(&RoundMessage::Terminate { final_round: 0 });
        frame[0] = b'X';
        assert!(matches!(decode(&frame), Err(TransportError::BadMagic)));

        let mut frame = encode(&RoundMessage::Terminate { final_round: 0 });
        frame[4] = 9;
        assert!(matches!(decode(&frame), Err(TransportError::VersionMismatch { .. })));
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let frame = encode(&RoundMessage::InitModel { params: vec![1.0; 8] });
        assert!(matches!(decode(&frame[..frame.len() - 3]), Err(TransportError::Truncated)));
        assert!(matches!(decode(&frame[..5]), Err(TransportError::Truncated)));
    }

    #[test]
    fn payload_sizes_leave_no_room_for_sample_data() {
        // Parameter-bearing payloads are exactly the declared fields plus the
        // float array; fixed-size payloads are exactly four bytes.
        let n = 13;
        let params = vec![0.25f32; n];
        let init = encode(&RoundMessage::InitModel { params: params.clone() });
        assert_eq!(init.len(), FRAME_OVERHEAD + 4 * n);
        let local = encode(&RoundMessage::LocalParams { round: 1, params: params.clone() });
        assert_eq!(local.len(), FRAME_OVERHEAD + 4 + 4 * n);
        let global = encode(&RoundMessage::GlobalParams {
            round: 1,
            params,
            source_converged: false,
        });
        assert_eq!(global.len(), FRAME_OVERHEAD + 4 + 1 + 4 * n);
        let class = encode(&RoundMessage::PredictedClass { class: 0 });
        assert_eq!(class.len(), FRAME_OVERHEAD + 4);
        let term = encode(&RoundMessage::Terminate { final_round: 0 });
        assert_eq!(term.len(), FRAME_OVERHEAD + 4);
    }
}
