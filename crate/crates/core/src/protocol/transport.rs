use std::io::{self, Read, Write};
use std::net::SocketAddr;
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};

/// How the two endpoints of [`run_session`](super::run_session) talk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Bounded in-process pipe.
    Memory,
    /// Alice listens on the address, Bob connects. Port 0 picks a free port.
    Tcp(SocketAddr),
}

/// One end of an in-process byte pipe. Each write becomes one buffered
/// chunk; at most `capacity` chunks are in flight per direction.
pub struct MemoryPipe {
    tx: SyncSender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
}

pub fn memory_pair(capacity: usize) -> (MemoryPipe, MemoryPipe) {
    let (tx_ab, rx_ab) = sync_channel(capacity);
    let (tx_ba, rx_ba) = sync_channel(capacity);
    let end = |tx, rx| MemoryPipe {
        tx,
        rx,
        pending: Vec::new(),
        pos: 0,
    };
    (end(tx_ab, rx_ba), end(tx_ba, rx_ab))
}

impl Write for MemoryPipe {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer hung up"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for MemoryPipe {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.pos == self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipe_carries_bytes_both_ways() {
        let (mut a, mut b) = memory_pair(2);
        a.write_all(b"hello").unwrap();
        let mut buf = [0u8; 3];
        b.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hel");
        b.write_all(b"x").unwrap();
        let mut one = [0u8; 1];
        a.read_exact(&mut one).unwrap();
        assert_eq!(&one, b"x");
        drop(a);
        let mut rest = Vec::new();
        b.read_to_end(&mut rest).unwrap();
        assert_eq!(rest, b"lo");
        assert!(b.write_all(b"z").is_err());
    }
}
