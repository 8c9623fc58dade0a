//! In-process lockstep channel. Messages go through the same byte codec as
//! TCP so deterministic tests exercise the full encode/decode path.

use std::sync::mpsc::{channel, Receiver, Sender};

use super::{decode, encode, Endpoint, RoundMessage, TransportError, TransportResult};

pub struct ChannelEndpoint {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Ordered, lossless, blocking pair of endpoints sharing a process.
pub fn channel_pair() -> (ChannelEndpoint, ChannelEndpoint) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (ChannelEndpoint { tx: tx_a, rx: rx_a }, ChannelEndpoint { tx: tx_b, rx: rx_b })
}

impl Endpoint for ChannelEndpoint {
    fn send(&mut self, msg: &RoundMessage) -> TransportResult<()> {
        self.tx.send(encode(msg)).map_err(|_| TransportError::Disconnected)
    }

    fn recv(&mut self) -> TransportResult<RoundMessage> {
        let bytes = self.rx.recv().map_err(|_| TransportError::Disconnected)?;
        decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_is_ordered_and_bidirectional() {
        let (mut a, mut b) = channel_pair();
        a.send(&RoundMessage::PredictedClass { class: 1 }).unwrap();
        a.send(&RoundMessage::Terminate { final_round: 9 }).unwrap();
        assert_eq!(b.recv().unwrap(), RoundMessage::PredictedClass { class: 1 });
        assert_eq!(b.recv().unwrap(), RoundMessage::Terminate { final_round: 9 });
        b.send(&RoundMessage::InitModel { params: vec![1.0] }).unwrap();
        assert_eq!(a.recv().unwrap(), RoundMessage::InitModel { params: vec![1.0] });
    }

    #[test]
    fn dropped_peer_surfaces_as_disconnect() {
        let (mut a, b) = channel_pair();
        drop(b);
        assert!(matches!(
            a.send(&RoundMessage::Terminate { final_round: 0 }),
            Err(TransportError::Disconnected)
        ));
    }
}
