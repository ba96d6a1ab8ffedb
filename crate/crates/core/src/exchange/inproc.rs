use std::sync::mpsc::{channel, Receiver, Sender};

use super::{Backend, Transport};
use crate::error::{Error, Result};

struct Packet {
    round: u32,
    payload: Vec<u8>,
}

/// Channel-backed transport for ranks that are threads of one process.
/// Each `(src, dst)` pair has its own FIFO channel.
pub struct InProcTransport {
    rank: usize,
    to: Vec<Sender<Packet>>,
    from: Vec<Receiver<Packet>>,
}

/// Creates the `p` connected endpoints of an in-process world.
pub fn in_process_world(p: usize) -> Vec<InProcTransport> {
    let mut senders: Vec<Vec<Sender<Packet>>> = (0..p).map(|_| Vec::with_capacity(p)).collect();
    let mut receivers: Vec<Vec<Receiver<Packet>>> = (0..p).map(|_| Vec::with_capacity(p)).collect();
    for src in 0..p {
        for dst in 0..p {
            let (tx, rx) = channel();
            senders[src].push(tx);
            // receivers[dst] is filled in source order because src is the outer loop.
            receivers[dst].push(rx);
        }
    }
    senders
        .into_iter()
        .zip(receivers)
        .enumerate()
        .map(|(rank, (to, from))| InProcTransport { rank, to, from })
        .collect()
}

impl Transport for InProcTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.to.len()
    }

    fn backend(&self) -> Backend {
        Backend::InProcess
    }

    fn exchange(&mut self, round: u32, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        let rank = self.rank;
        for (dst, payload) in outgoing.into_iter().enumerate() {
            self.to[dst]
                .send(Packet { round, payload })
                .map_err(|_| Error::Exchange {
                    rank,
                    reason: format!("rank {dst} disconnected"),
                })?;
        }
        self.from
            .iter()
            .enumerate()
            .map(|(src, rx)| {
                let packet = rx.recv().map_err(|_| Error::Exchange {
                    rank,
                    reason: format!("rank {src} disconnected"),
                })?;
                if packet.round != round {
                    return Err(Error::Exchange {
                        rank,
                        reason: format!(
                            "rank {src} is in round {} while this rank is in round {round}",
                            packet.round
                        ),
                    });
                }
                Ok(packet.payload)
            })
            .collect()
    }
}
