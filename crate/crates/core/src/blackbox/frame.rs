//! Frames: a 4-byte big-endian length followed by that many bytes of UTF-8
//! JSON.

use std::io::{self, ErrorKind, Read, Write};

/// Largest frame either side accepts.
pub const MAX_FRAME: usize = 1 << 20;

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| io::Error::new(ErrorKind::InvalidInput, "frame too large"))?;
    // One write per frame so Nagle never holds back the payload.
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()
}

pub fn write_json<T: serde::Serialize>(w: &mut impl Write, value: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(value).map_err(|e| io::Error::new(ErrorKind::InvalidData, e))?;
    write_frame(w, &bytes)
}

/// Reads one frame. `Ok(None)` means the peer closed the stream between
/// frames, or `cancelled` returned true while waiting on a read timeout.
pub fn read_frame(r: &mut impl Read, cancelled: &dyn Fn() -> bool) -> io::Result<Option<Vec<u8>>> {
    let mut header = [0u8; 4];
    if !fill(r, &mut header, cancelled, true)? {
        return Ok(None);
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(
            ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut body = vec![0u8; len];
    if !fill(r, &mut body, cancelled, false)? {
        return Ok(None);
    }
    Ok(Some(body))
}

/// Fills `buf` completely. Returns false on EOF before the first byte (when
/// `eof_ok`) or on cancellation.
fn fill(r: &mut impl Read, buf: &mut [u8], cancelled: &dyn Fn() -> bool, eof_ok: bool) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 && eof_ok => return Ok(false),
            Ok(0) => return Err(io::Error::new(ErrorKind::UnexpectedEof, "stream closed mid-frame")),
            Ok(n) => got += n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if cancelled() {
                    return Ok(false);
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}
