//! On-disk formats: the `HOMF` frame stream, the truth sidecar and the
//! tab-delimited event table.
//!
//! Frame file layout, all little-endian:
//!
//! | offset | size | field        |
//! |--------|------|--------------|
//! | 0      | 4    | magic `HOMF` |
//! | 4      | 2    | version (1)  |
//! | 6      | 2    | roi width    |
//! | 8      | 2    | roi height   |
//! | 10     | 8    | frame count  |
//! | 18     | 14   | reserved (0) |
//!
//! followed by `frame count` row-major `u16` rasters.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::frame::Frame;
use crate::frame_proc::TwoPhotonEvent;
use crate::sim::TruthRecord;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HOMF";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const EVENTS_SCHEMA: &str = "# homtwin-events v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub width: u16,
    pub height: u16,
    pub frame_count: u64,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(MAGIC);
        h[4..6].copy_from_slice(&VERSION.to_le_bytes());
        h[6..8].copy_from_slice(&self.width.to_le_bytes());
        h[8..10].copy_from_slice(&self.height.to_le_bytes());
        h[10..18].copy_from_slice(&self.frame_count.to_le_bytes());
        h
    }

    pub fn decode(h: &[u8; HEADER_LEN]) -> Result<Self> {
        let bad = |offset, message: String| Error::FrameFormat {
            frame: None,
            offset,
            message,
        };
        if &h[0..4] != MAGIC {
            return Err(bad(0, format!("bad magic {:?}, expected \"HOMF\"", &h[0..4])));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != VERSION {
            return Err(bad(4, format!("unsupported version {version}")));
        }
        let width = u16::from_le_bytes([h[6], h[7]]);
        let height = u16::from_le_bytes([h[8], h[9]]);
        if width == 0 || height == 0 {
            return Err(bad(6, format!("empty raster {width}x{height}")));
        }
        let frame_count = u64::from_le_bytes(h[10..18].try_into().expect("8 bytes"));
        Ok(Self {
            width,
            height,
            frame_count,
        })
    }

    pub fn frame_bytes(&self) -> usize {
        2 * self.width as usize * self.height as usize
    }
}

/// Streams frames to disk; the frame count is patched into the header on
/// [`finish`](Self::finish).
pub struct FrameWriter {
    path: PathBuf,
    out: BufWriter<File>,
    header: FrameHeader,
    buf: Vec<u8>,
}

impl FrameWriter {
    pub fn create(path: &Path, width: usize, height: usize) -> Result<Self> {
        let dims = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| Error::Input(format!("{what} {v} does not fit the frame format")))
        };
        let header = FrameHeader {
            width: dims(width, "width")?,
            height: dims(height, "height")?,
            frame_count: 0,
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&header.encode()).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            header,
            buf: Vec::new(),
        })
    }

    pub fn write(&mut self, frame: &Frame) -> Result<()> {
        if frame.width() != self.header.width as usize || frame.height() != self.header.height as usize {
            return Err(Error::Input(format!(
                "frame {} is {}x{}, stream is {}x{}",
                frame.index,
                frame.width(),
                frame.height(),
                self.header.width,
                self.header.height
            )));
        }
        self.buf.clear();
        self.buf.extend(frame.pixels().iter().flat_map(|p| p.to_le_bytes()));
        self.out.write_all(&self.buf).map_err(|e| Error::io(&self.path, e))?;
        self.header.frame_count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<FrameHeader> {
        let io_err = |e| Error::io(&self.path, e);
        self.out.flush().map_err(io_err)?;
        let file = self.out.get_mut();
        file.seek(SeekFrom::Start(10)).map_err(io_err)?;
        file.write_all(&self.header.frame_count.to_le_bytes()).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;
        Ok(self.header)
    }
}

/// Iterates the frames of a `HOMF` stream. A zero-length file is an empty
/// stream; anything else must carry a complete header.
pub struct FrameReader<R> {
    input: R,
    header: Option<FrameHeader>,
    next: u64,
    offset: u64,
    buf: Vec<u8>,
    failed: bool,
}

impl FrameReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::with_capacity(1 << 20, file))
    }
}

/// Reads until `buf` is full or the input ends; returns the bytes read.
fn read_full<R: Read>(input: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match input.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

fn io_format(offset: u64, frame: Option<u64>, e: io::Error) -> Error {
    Error::FrameFormat {
        frame,
        offset,
        message: e.to_string(),
    }
}

impl<R: Read> FrameReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut h = [0u8; HEADER_LEN];
        let n = read_full(&mut input, &mut h).map_err(|e| io_format(0, None, e))?;
        let header = match n {
            0 => None,
            HEADER_LEN => Some(FrameHeader::decode(&h)?),
            _ => {
                return Err(Error::FrameFormat {
                    frame: None,
                    offset: n as u64,
                    message: format!("truncated header ({n} of {HEADER_LEN} bytes)"),
                })
            }
        };
        Ok(Self {
            input,
            buf: vec![0; header.map_or(0, |h| h.frame_bytes())],
            header,
            next: 0,
            offset: n as u64,
            failed: false,
        })
    }

    /// `None` for a zero-length stream.
    pub fn header(&self) -> Option<FrameHeader> {
        self.header
    }

    fn read_frame(&mut self, h: FrameHeader) -> Result<Option<Frame>> {
        let index = self.next;
        if index == h.frame_count {
            let mut probe = [0u8; 1];
            let extra = read_full(&mut self.input, &mut probe)
                .map_err(|e| io_format(self.offset, None, e))?;
            if extra > 0 {
                return Err(Error::FrameFormat {
                    frame: None,
                    offset: self.offset,
                    message: format!("trailing data after {} frames", h.frame_count),
                });
            }
            return Ok(None);
        }
        let n = read_full(&mut self.input, &mut self.buf)
            .map_err(|e| io_format(self.offset, Some(index), e))?;
        if n < self.buf.len() {
            return Err(Error::FrameFormat {
                frame: Some(index),
                offset: self.offset + n as u64,
                message: format!(
                    "truncated frame ({n} of {} bytes; header promises {} frames)",
                    self.buf.len(),
                    h.frame_count
                ),
            });
        }
        self.offset += n as u64;
        self.next += 1;
        let pixels = self
            .buf
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        Frame::new(index, h.width as usize, h.height as usize, pixels).map(Some)
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let h = self.header?;
        match self.read_frame(h) {
            Ok(f) => f.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// One JSON object per line, one line per frame.
pub struct TruthWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TruthWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &TruthRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("truth records serialize");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Two rows per pair, in pair order.
pub fn format_events(pairs: &[TwoPhotonEvent]) -> String {
    let mut s = String::with_capacity(64 * (pairs.len() + 1));
    s.push_str(EVENTS_SCHEMA);
    s.push_str("\nframe_index\tx\ty\tamplitude\tfootprint\n");
    for p in pairs {
        for e in [&p.event_a, &p.event_b] {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.frame_index, e.x, e.y, e.peak_amplitude, e.footprint
            ));
        }
    }
    s
}

/// Writes `contents` to `dir/name`, returning the path.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
