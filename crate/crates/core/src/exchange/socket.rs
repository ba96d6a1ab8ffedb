use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use super::{Backend, Transport};
use crate::error::{Error, Result};

const HANDSHAKE_MAGIC: u32 = 0x4c52_4f56;
const BARRIER_BYTE: u8 = 0xb1;
const PREWARM_ROUND: u32 = u32::MAX;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(60);

/// Fixed little-endian header in front of every per-round payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WireHeader {
    pub round: u32,
    pub dst: u32,
    pub byte_len: u64,
}

impl WireHeader {
    pub const LEN: usize = 16;

    pub fn to_bytes(&self) -> [u8; Self::LEN] {
        let mut b = [0u8; Self::LEN];
        b[..4].copy_from_slice(&self.round.to_le_bytes());
        b[4..8].copy_from_slice(&self.dst.to_le_bytes());
        b[8..].copy_from_slice(&self.byte_len.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; Self::LEN]) -> Self {
        WireHeader {
            round: u32::from_le_bytes(b[..4].try_into().unwrap()),
            dst: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            byte_len: u64::from_le_bytes(b[8..].try_into().unwrap()),
        }
    }
}

/// Parses a host file: one `host:port` per non-blank line, indexed by rank.
pub fn read_hostfile(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let hosts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if hosts.is_empty() {
        return Err(Error::config(format!("host file {} is empty", path.display())));
    }
    Ok(hosts)
}

/// Full mesh of TCP connections, one per peer.
///
/// Rank `i` connects to every rank below it and accepts from every rank above
/// it. After the mesh is up, rank 0 runs a startup barrier and every rank
/// performs one empty exchange to warm up the connections.
pub struct SocketTransport {
    rank: usize,
    peers: Vec<Option<TcpStream>>,
}

impl SocketTransport {
    pub fn connect(rank: usize, hosts: &[String]) -> Result<Self> {
        let addr = hosts
            .get(rank)
            .ok_or_else(|| Error::config(format!("rank {rank} missing from host list")))?;
        let listener = TcpListener::bind(addr)?;
        Self::with_listener(rank, listener, hosts)
    }

    pub fn with_listener(rank: usize, listener: TcpListener, hosts: &[String]) -> Result<Self> {
        let p = hosts.len();
        if rank >= p {
            return Err(Error::config(format!("rank {rank} outside 0..{p}")));
        }
        let fail = |reason: String| Error::Exchange { rank, reason };
        let mut peers: Vec<Option<TcpStream>> = (0..p).map(|_| None).collect();

        for (peer, addr) in hosts.iter().enumerate().take(rank) {
            let deadline = Instant::now() + CONNECT_TIMEOUT;
            let mut stream = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() < deadline => {
                        log::debug!("rank {rank}: retrying {addr}: {e}");
                        thread::sleep(Duration::from_millis(20));
                    }
                    Err(e) => return Err(fail(format!("cannot reach rank {peer} at {addr}: {e}"))),
                }
            };
            stream.set_nodelay(true)?;
            let mut hello = Vec::with_capacity(12);
            hello.extend_from_slice(&HANDSHAKE_MAGIC.to_le_bytes());
            hello.extend_from_slice(&(rank as u32).to_le_bytes());
            hello.extend_from_slice(&(p as u32).to_le_bytes());
            stream.write_all(&hello)?;
            peers[peer] = Some(stream);
        }

        for _ in rank + 1..p {
            let (mut stream, _) = listener.accept()?;
            stream.set_nodelay(true)?;
            let mut hello = [0u8; 12];
            stream.read_exact(&mut hello)?;
            let magic = u32::from_le_bytes(hello[..4].try_into().unwrap());
            let peer = u32::from_le_bytes(hello[4..8].try_into().unwrap()) as usize;
            let size = u32::from_le_bytes(hello[8..].try_into().unwrap()) as usize;
            if magic != HANDSHAKE_MAGIC || size != p || peer <= rank || peer >= p {
                return Err(fail(format!(
                    "bad handshake (magic {magic:#x}, rank {peer}, size {size})"
                )));
            }
            if peers[peer].is_some() {
                return Err(fail(format!("rank {peer} connected twice")));
            }
            peers[peer] = Some(stream);
        }

        let mut t = SocketTransport { rank, peers };
        t.startup_barrier()?;
        t.exchange(PREWARM_ROUND, vec![Vec::new(); p])?;
        Ok(t)
    }

    fn startup_barrier(&mut self) -> Result<()> {
        let mut byte = [0u8; 1];
        if self.rank == 0 {
            for s in self.peers.iter_mut().flatten() {
                s.read_exact(&mut byte)?;
            }
            for s in self.peers.iter_mut().flatten() {
                s.write_all(&[BARRIER_BYTE])?;
            }
        } else if let Some(root) = self.peers[0].as_mut() {
            root.write_all(&[BARRIER_BYTE])?;
            root.read_exact(&mut byte)?;
        }
        if self.rank != 0 && byte[0] != BARRIER_BYTE {
            return Err(Error::Exchange {
                rank: self.rank,
                reason: "unexpected startup barrier byte".into(),
            });
        }
        Ok(())
    }
}

fn write_payload(mut stream: &TcpStream, header: WireHeader, payload: &[u8]) -> std::io::Result<()> {
    stream.write_all(&header.to_bytes())?;
    stream.write_all(payload)?;
    stream.flush()
}

impl Transport for SocketTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.peers.len()
    }

    fn backend(&self) -> Backend {
        Backend::Socket
    }

    fn exchange(&mut self, round: u32, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        let rank = self.rank;
        let p = self.peers.len();
        let fail = |reason: String| Error::Exchange { rank, reason };
        let mut own = Vec::new();
        let peers = &self.peers;

        thread::scope(|s| {
            let mut writers = Vec::new();
            for (dst, payload) in outgoing.into_iter().enumerate() {
                if dst == rank {
                    own = payload;
                    continue;
                }
                let stream = peers[dst].as_ref().expect("mesh is complete");
                let header = WireHeader {
                    round,
                    dst: dst as u32,
                    byte_len: payload.len() as u64,
                };
                writers.push((dst, s.spawn(move || write_payload(stream, header, &payload))));
            }

            let mut received = Vec::with_capacity(p);
            let mut read_err = None;
            for (src, peer) in peers.iter().enumerate() {
                let Some(mut stream) = peer.as_ref() else {
                    received.push(Vec::new());
                    continue;
                };
                let mut hb = [0u8; WireHeader::LEN];
                let res = stream.read_exact(&mut hb).map_err(|e| {
                    fail(format!("rank {src} disconnected: {e}"))
                });
                let header = match res {
                    Ok(()) => WireHeader::from_bytes(&hb),
                    Err(e) => {
                        read_err = Some(e);
                        break;
                    }
                };
                if header.round != round || header.dst as usize != rank {
                    read_err = Some(fail(format!(
                        "rank {src} sent round {} for rank {} during round {round}",
                        header.round, header.dst
                    )));
                    break;
                }
                let mut payload = vec![0u8; header.byte_len as usize];
                if let Err(e) = stream.read_exact(&mut payload) {
                    read_err = Some(fail(format!("rank {src} disconnected: {e}")));
                    break;
                }
                received.push(payload);
            }
            for (dst, w) in writers {
                match w.join() {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => {
                        read_err.get_or_insert(fail(format!("send to rank {dst} failed: {e}")));
                    }
                    Err(_) => {
                        read_err.get_or_insert(fail(format!("writer for rank {dst} panicked")));
                    }
                }
            }
            match read_err {
                Some(e) => Err(e),
                None => {
                    received[rank] = std::mem::take(&mut own);
                    Ok(received)
                }
            }
        })
    }
}
