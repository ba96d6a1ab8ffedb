//! Bulk-synchronous irregular all-to-all exchange among `P` ranks.
//!
//! A [`Transport`] moves one byte buffer per `(src, dst)` pair per round. The
//! [`Exchanger`] layered on top adds count exchanges, length-prefixed item
//! framing, a per-round byte cap and the multi-round [`Exchanger::staged_stream`]
//! used by every pipeline stage. All calls are collective: every rank must make
//! the same sequence of calls.

mod inproc;
mod socket;

use std::fmt;
use std::net::TcpListener;
use std::str::FromStr;
use std::thread;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use inproc::{in_process_world, InProcTransport};
pub use socket::{read_hostfile, SocketTransport, WireHeader};

/// Default per-round outgoing payload cap per rank (64 MiB).
pub const DEFAULT_ROUND_CAP: usize = 64 << 20;

/// Bytes of framing in front of every item.
pub const FRAME_OVERHEAD: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    InProcess,
    Socket,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::InProcess => "inproc",
            Backend::Socket => "socket",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(Backend::InProcess),
            "socket" => Ok(Backend::Socket),
            other => Err(Error::config(format!("unknown backend {other:?}"))),
        }
    }
}

/// Point-to-point substrate for one collective round.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    fn backend(&self) -> Backend;

    /// Sends `outgoing[d]` to rank `d` and returns the buffers received,
    /// indexed by source rank. Blocks until every source has delivered.
    fn exchange(&mut self, round: u32, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>>;
}

/// A fixed-layout message record.
pub trait Wire: Sized {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(bytes: &[u8]) -> Result<Self>;
}

impl Wire for u64 {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; 8] = bytes
            .try_into()
            .map_err(|_| Error::Wire(format!("u64 record of {} bytes", bytes.len())))?;
        Ok(u64::from_le_bytes(arr))
    }
}

impl Wire for Vec<u8> {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self);
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        Ok(bytes.to_vec())
    }
}

/// Appends `item` with a little-endian u32 length prefix.
pub fn push_frame<T: Wire>(out: &mut Vec<u8>, item: &T) {
    let at = out.len();
    out.extend_from_slice(&[0; FRAME_OVERHEAD]);
    item.encode(out);
    let len = (out.len() - at - FRAME_OVERHEAD) as u32;
    out[at..at + FRAME_OVERHEAD].copy_from_slice(&len.to_le_bytes());
}

/// Splits a buffer of length-prefixed frames.
pub fn frames(mut buf: &[u8]) -> impl Iterator<Item = Result<&[u8]>> {
    std::iter::from_fn(move || {
        if buf.is_empty() {
            return None;
        }
        if buf.len() < FRAME_OVERHEAD {
            buf = &[];
            return Some(Err(Error::Wire("truncated frame header".into())));
        }
        let len = u32::from_le_bytes(buf[..FRAME_OVERHEAD].try_into().unwrap()) as usize;
        if buf.len() < FRAME_OVERHEAD + len {
            buf = &[];
            return Some(Err(Error::Wire("truncated frame payload".into())));
        }
        let item = &buf[FRAME_OVERHEAD..FRAME_OVERHEAD + len];
        buf = &buf[FRAME_OVERHEAD + len..];
        Some(Ok(item))
    })
}

/// Running totals for one rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    /// Collective rounds, including count and control exchanges.
    pub rounds: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Largest outgoing data payload of a single `all_to_all_v` call.
    pub peak_round_bytes: u64,
}

impl ExchangeStats {
    pub fn since(&self, earlier: &ExchangeStats) -> ExchangeStats {
        ExchangeStats {
            rounds: self.rounds - earlier.rounds,
            bytes_sent: self.bytes_sent - earlier.bytes_sent,
            bytes_received: self.bytes_received - earlier.bytes_received,
            peak_round_bytes: self.peak_round_bytes,
        }
    }
}

/// Result of a [`Exchanger::staged_stream`] call on one rank.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StreamSummary {
    pub rounds: u64,
    pub items_sent: u64,
    pub items_received: u64,
}

/// One rank's handle on the world: rank id, size and collective operations.
pub struct Exchanger {
    transport: Box<dyn Transport>,
    round: u32,
    cap: usize,
    stats: ExchangeStats,
    shuffle: Option<ChaCha8Rng>,
}

impl fmt::Debug for Exchanger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Exchanger")
            .field("rank", &self.rank())
            .field("size", &self.size())
            .field("backend", &self.backend())
            .field("cap", &self.cap)
            .finish()
    }
}

impl Exchanger {
    pub fn new(transport: Box<dyn Transport>, cap: usize) -> Result<Self> {
        if cap <= FRAME_OVERHEAD {
            return Err(Error::config(format!("round cap of {cap} bytes is too small")));
        }
        Ok(Exchanger {
            transport,
            round: 0,
            cap,
            stats: ExchangeStats::default(),
            shuffle: None,
        })
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn size(&self) -> usize {
        self.transport.size()
    }

    pub fn backend(&self) -> Backend {
        self.transport.backend()
    }

    pub fn round_cap(&self) -> usize {
        self.cap
    }

    pub fn stats(&self) -> ExchangeStats {
        self.stats
    }

    /// Delivers received buffers in a seeded random source order instead of
    /// ascending rank order. Used to check that stage outputs do not depend
    /// on arrival interleaving.
    pub fn shuffle_sources(&mut self, seed: u64) {
        let rank_seed = seed ^ (self.rank() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        self.shuffle = Some(ChaCha8Rng::seed_from_u64(rank_seed));
    }

    fn raw(&mut self, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        let p = self.size();
        if outgoing.len() != p {
            return Err(Error::contract(format!(
                "{} outgoing buffers for {p} ranks",
                outgoing.len()
            )));
        }
        self.round = self.round.wrapping_add(1);
        self.stats.rounds += 1;
        self.stats.bytes_sent += outgoing.iter().map(|b| b.len() as u64).sum::<u64>();
        let received = self.transport.exchange(self.round, outgoing)?;
        self.stats.bytes_received += received.iter().map(|b| b.len() as u64).sum::<u64>();
        Ok(received)
    }

    /// Rank `i` receives, from every rank `j`, the count `j` declared for `i`.
    pub fn all_to_all_counts(&mut self, counts: &[u64]) -> Result<Vec<u64>> {
        let out = counts.iter().map(|c| c.to_le_bytes().to_vec()).collect();
        self.raw(out)?
            .iter()
            .map(|b| u64::decode(b))
            .collect()
    }

    /// Irregular all-to-all. Returns `(source, payload)` pairs, one per
    /// source, in ascending source order unless shuffling is enabled.
    pub fn all_to_all_v(&mut self, outgoing: Vec<Vec<u8>>) -> Result<Vec<(usize, Vec<u8>)>> {
        let total: usize = outgoing.iter().map(Vec::len).sum();
        if total > self.cap {
            return Err(Error::contract(format!(
                "round payload of {total} bytes exceeds the {} byte cap",
                self.cap
            )));
        }
        self.stats.peak_round_bytes = self.stats.peak_round_bytes.max(total as u64);
        let mut received: Vec<(usize, Vec<u8>)> = self.raw(outgoing)?.into_iter().enumerate().collect();
        if let Some(rng) = self.shuffle.as_mut() {
            received.shuffle(rng);
        }
        Ok(received)
    }

    pub fn all_reduce_sum(&mut self, value: u64) -> Result<u64> {
        let p = self.size();
        Ok(self.all_to_all_counts(&vec![value; p])?.iter().sum())
    }

    pub fn all_reduce_max(&mut self, value: u64) -> Result<u64> {
        let p = self.size();
        Ok(self
            .all_to_all_counts(&vec![value; p])?
            .into_iter()
            .max()
            .unwrap_or(0))
    }

    pub fn barrier(&mut self) -> Result<()> {
        let p = self.size();
        self.raw(vec![Vec::new(); p]).map(drop)
    }

    /// Sends `payload` to rank 0. Rank 0 gets every rank's payload indexed by
    /// source; other ranks get `None`. Not subject to the round cap.
    pub fn gather_to_root(&mut self, payload: Vec<u8>) -> Result<Option<Vec<Vec<u8>>>> {
        let p = self.size();
        let mut out = vec![Vec::new(); p];
        out[0] = payload;
        let received = self.raw(out)?;
        Ok((self.rank() == 0).then_some(received))
    }

    /// Streams `(destination, item)` pairs to their destinations in as many
    /// capped rounds as needed and hands every received item to `deliver`
    /// together with its source rank.
    ///
    /// Each round first exchanges per-destination item counts plus a "more
    /// data" flag; rounds continue, with empty payloads from exhausted ranks,
    /// until no rank raises the flag.
    pub fn staged_stream<T, I, F>(&mut self, items: I, mut deliver: F) -> Result<StreamSummary>
    where
        T: Wire,
        I: IntoIterator<Item = (usize, T)>,
        F: FnMut(usize, T) -> Result<()>,
    {
        let p = self.size();
        let cap = self.cap;
        let mut iter = items.into_iter();
        let mut pending: Option<(usize, Vec<u8>)> = None;
        let mut summary = StreamSummary::default();

        let encode = |dst: usize, item: T| -> Result<(usize, Vec<u8>)> {
            if dst >= p {
                return Err(Error::contract(format!("destination {dst} outside 0..{p}")));
            }
            let mut frame = Vec::new();
            push_frame(&mut frame, &item);
            if frame.len() > cap {
                return Err(Error::contract(format!(
                    "single item of {} bytes exceeds the {cap} byte round cap",
                    frame.len()
                )));
            }
            Ok((dst, frame))
        };

        loop {
            let mut bufs = vec![Vec::new(); p];
            let mut counts = vec![0u64; p];
            let mut used = 0usize;
            loop {
                let next = match pending.take() {
                    Some(f) => Some(f),
                    None => iter.next().map(|(d, it)| encode(d, it)).transpose()?,
                };
                let Some((dst, frame)) = next else { break };
                if used + frame.len() > cap {
                    pending = Some((dst, frame));
                    break;
                }
                used += frame.len();
                counts[dst] += 1;
                bufs[dst].extend_from_slice(&frame);
            }
            if pending.is_none() {
                pending = iter.next().map(|(d, it)| encode(d, it)).transpose()?;
            }
            let more = pending.is_some();

            let control = counts
                .iter()
                .map(|&c| {
                    let mut b = c.to_le_bytes().to_vec();
                    b.push(more as u8);
                    b
                })
                .collect();
            let control = self.raw(control)?;
            let mut expected = vec![0u64; p];
            let mut any_more = more;
            for (src, b) in control.iter().enumerate() {
                if b.len() != 9 {
                    return Err(Error::Wire(format!("control record of {} bytes", b.len())));
                }
                expected[src] = u64::from_le_bytes(b[..8].try_into().unwrap());
                any_more |= b[8] != 0;
            }

            summary.items_sent += counts.iter().sum::<u64>();
            for (src, payload) in self.all_to_all_v(bufs)? {
                let mut n = 0u64;
                for frame in frames(&payload) {
                    deliver(src, T::decode(frame?)?)?;
                    n += 1;
                }
                if n != expected[src] {
                    return Err(Error::contract(format!(
                        "rank {src} announced {} items but delivered {n}",
                        expected[src]
                    )));
                }
                summary.items_received += n;
            }
            summary.rounds += 1;
            if !any_more {
                return Ok(summary);
            }
        }
    }
}

type MakeTransport = Box<dyn FnOnce() -> Result<Box<dyn Transport>> + Send>;

/// Runs `body` on `p` ranks connected by `backend`, one thread per rank, and
/// returns the per-rank results in rank order. The socket backend binds
/// loopback listeners on ephemeral ports.
pub fn launch<R, F>(p: usize, backend: Backend, cap: usize, body: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(Exchanger) -> Result<R> + Sync,
{
    if p == 0 {
        return Err(Error::config("rank count must be at least 1"));
    }
    let transports: Vec<MakeTransport> = match backend {
        Backend::InProcess => in_process_world(p)
            .into_iter()
            .map(|t| {
                Box::new(move || Ok(Box::new(t) as Box<dyn Transport>))
                    as MakeTransport
            })
            .collect(),
        Backend::Socket => {
            let listeners = (0..p)
                .map(|_| TcpListener::bind("127.0.0.1:0"))
                .collect::<std::io::Result<Vec<_>>>()?;
            let hosts = listeners
                .iter()
                .map(|l| l.local_addr().map(|a| a.to_string()))
                .collect::<std::io::Result<Vec<_>>>()?;
            listeners
                .into_iter()
                .enumerate()
                .map(|(rank, l)| {
                    let hosts = hosts.clone();
                    Box::new(move || {
                        SocketTransport::with_listener(rank, l, &hosts)
                            .map(|t| Box::new(t) as Box<dyn Transport>)
                    }) as MakeTransport
                })
                .collect()
        }
    };
    let body = &body;
    thread::scope(|s| {
        let handles: Vec<_> = transports
            .into_iter()
            .map(|make| s.spawn(move || body(Exchanger::new(make()?, cap)?)))
            .collect();
        let mut results = Vec::with_capacity(p);
        let mut first_err = None;
        for (rank, h) in handles.into_iter().enumerate() {
            match h.join() {
                Ok(Ok(r)) => results.push(r),
                Ok(Err(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(_) => {
                    first_err.get_or_insert(Error::Exchange {
                        rank,
                        reason: "rank thread panicked".into(),
                    });
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(results),
        }
    })
}
