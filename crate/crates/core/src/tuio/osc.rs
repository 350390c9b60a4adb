//! Minimal OSC 1.0 reader: bundles of messages with `i`, `f`, `s`, `b`
//! arguments (plus the payload-less `T`, `F`, `N`, `I`).

use super::TuioError;

#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
    Blob(Vec<u8>),
    Bool(bool),
    Nil,
    Impulse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMessage {
    /// Byte offset of the message within the packet.
    pub offset: usize,
    pub address: String,
    pub args: Vec<OscArg>,
}

pub const BUNDLE_TAG: &[u8; 8] = b"#bundle\0";

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> TuioError {
        TuioError::Malformed {
            offset: self.base + self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TuioError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("need {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn word(&mut self) -> Result<[u8; 4], TuioError> {
        Ok(self.take(4)?.try_into().expect("4 bytes"))
    }

    fn string(&mut self) -> Result<String, TuioError> {
        let rest = &self.buf[self.pos..];
        let Some(nul) = rest.iter().position(|&b| b == 0) else {
            return Err(self.err("unterminated string"));
        };
        let s = std::str::from_utf8(&rest[..nul])
            .map_err(|_| self.err("string is not UTF-8"))?
            .to_string();
        let padded = (nul + 4) & !3;
        if rest.len() < padded {
            return Err(self.err("string padding runs past end"));
        }
        if rest[nul..padded].iter().any(|&b| b != 0) {
            return Err(self.err("non-NUL string padding"));
        }
        self.pos += padded;
        Ok(s)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Messages of a bundle, flattened through nested bundles.
pub fn read_bundle(packet: &[u8]) -> Result<Vec<OscMessage>, TuioError> {
    if packet.len() < 16 || &packet[..8] != BUNDLE_TAG {
        return Err(TuioError::NotOscBundle);
    }
    let mut out = Vec::new();
    read_bundle_at(packet, 0, &mut out, 0)?;
    Ok(out)
}

fn read_bundle_at(buf: &[u8], base: usize, out: &mut Vec<OscMessage>, depth: usize) -> Result<(), TuioError> {
    let mut c = Cursor { buf, pos: 0, base };
    if depth > 8 {
        return Err(c.err("bundles nested too deeply"));
    }
    if c.take(8)? != BUNDLE_TAG {
        return Err(c.err("expected #bundle"));
    }
    c.take(8)?; // time tag; TUIO frames are applied on arrival
    while !c.done() {
        let size = i32::from_be_bytes(c.word()?);
        if size < 0 || size % 4 != 0 {
            return Err(c.err(format!("bad element size {size}")));
        }
        let start = c.pos;
        let elem = c.take(size as usize)?;
        if elem.starts_with(b"#bundle") {
            read_bundle_at(elem, base + start, out, depth + 1)?;
        } else {
            out.push(read_message(elem, base + start)?);
        }
    }
    Ok(())
}

fn read_message(buf: &[u8], base: usize) -> Result<OscMessage, TuioError> {
    let mut c = Cursor { buf, pos: 0, base };
    let address = c.string()?;
    if !address.starts_with('/') {
        return Err(TuioError::Malformed {
            offset: base,
            reason: format!("bad address {address:?}"),
        });
    }
    let tags = if c.done() { String::from(",") } else { c.string()? };
    let Some(tags) = tags.strip_prefix(',') else {
        return Err(c.err("type tag string must start with ','"));
    };
    let mut args = Vec::with_capacity(tags.len());
    for t in tags.chars() {
        args.push(match t {
            'i' => OscArg::Int(i32::from_be_bytes(c.word()?)),
            'f' => OscArg::Float(f32::from_be_bytes(c.word()?)),
            's' => OscArg::Str(c.string()?),
            'b' => {
                let n = i32::from_be_bytes(c.word()?);
                if n < 0 {
                    return Err(c.err("negative blob size"));
                }
                let data = c.take(n as usize)?.to_vec();
                c.take((4 - n as usize % 4) % 4)?;
                OscArg::Blob(data)
            }
            'T' => OscArg::Bool(true),
            'F' => OscArg::Bool(false),
            'N' => OscArg::Nil,
            'I' => OscArg::Impulse,
            other => return Err(c.err(format!("unsupported type tag {other:?}"))),
        });
    }
    if !c.done() {
        return Err(c.err("trailing bytes after arguments"));
    }
    Ok(OscMessage {
        offset: base,
        address,
        args,
    })
}
