//! On-disk message traces. Each record is the little-endian sweep index
//! (u64), a delivered flag (u8), the payload length (u64) and the encoded
//! fusion message.

use std::io::{Read, Write};

use fusegp_core::fusion::FusionMessage;
use fusegp_core::netsim::TracedMessage;

use crate::error::{CliError, Result};

fn trace_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("message trace: {e}"))
}

pub fn write_trace<W: Write>(mut out: W, messages: &[TracedMessage]) -> Result<()> {
    for m in messages {
        let bytes = m.message.encode();
        out.write_all(&(m.sweep as u64).to_le_bytes()).map_err(trace_err)?;
        out.write_all(&[u8::from(m.delivered)]).map_err(trace_err)?;
        out.write_all(&(bytes.len() as u64).to_le_bytes()).map_err(trace_err)?;
        out.write_all(&bytes).map_err(trace_err)?;
    }
    out.flush().map_err(trace_err)
}

pub fn read_trace<R: Read>(mut input: R) -> Result<Vec<TracedMessage>> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf).map_err(trace_err)?;
    let mut rest = buf.as_slice();
    let mut out = Vec::new();
    let take = |n: usize, rest: &mut &[u8]| -> Result<Vec<u8>> {
        if rest.len() < n {
            return Err(trace_err("truncated record"));
        }
        let (head, tail) = rest.split_at(n);
        *rest = tail;
        Ok(head.to_vec())
    };
    while !rest.is_empty() {
        let sweep = u64::from_le_bytes(take(8, &mut rest)?.try_into().expect("8 bytes"));
        let delivered = match take(1, &mut rest)?[0] {
            0 => false,
            1 => true,
            b => return Err(trace_err(format!("invalid delivered flag {b}"))),
        };
        let len = u64::from_le_bytes(take(8, &mut rest)?.try_into().expect("8 bytes"));
        let body = take(len as usize, &mut rest)?;
        out.push(TracedMessage {
            sweep: sweep as usize,
            delivered,
            message: FusionMessage::decode(&body)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fusegp_core::linalg::Matrix;
    use fusegp_core::posterior::NaturalRepresentation;

    #[test]
    fn round_trip() {
        let rep = NaturalRepresentation::new(Matrix::from_fn(2, 2, |i, j| 1.0 + (i * j) as f64), vec![0.5, -1.0]).unwrap();
        let msgs: Vec<TracedMessage> = (0..3)
            .map(|i| TracedMessage {
                sweep: i,
                delivered: i != 1,
                message: FusionMessage::new(i, i + 1, 2 * i as u64, rep.clone(), 0),
            })
            .collect();
        let mut buf = Vec::new();
        write_trace(&mut buf, &msgs).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), msgs);
        assert!(read_trace(&buf[..buf.len() - 1]).is_err());
    }
}
