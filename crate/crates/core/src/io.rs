//! Binary and CSV file formats. All binary integers and floats are
//! little-endian.
//!
//! | file          | layout                                                                  |
//! |---------------|-------------------------------------------------------------------------|
//! | photon stream | `"SKL1"`, u32 version = 1, u32 T, u64 n, n × u32 stamps                 |
//! | cube          | `"SKC1"`, u32 version = 1, u32 N_r, u32 N_c, u32 T, row-major u32 counts |
//! | sketch        | `"SKZ1"`, u32 version = 1, u32 T, u32 m, u8 scheme, u64 seed, u64 n,     |
//! |               | m × u32 indices, m × (f64 re, f64 im)                                   |
//! | sketch set    | `"SKS1"`, u32 version = 1, u32 N_r, u32 N_c, then N_r·N_c sketch records  |
//!
//! The sketch scheme byte is 0 for truncated and 1 for random sets; the seed
//! is 0 for truncated sets. Readers report malformed input with the byte
//! offset of the offending field.

use std::io::{BufRead, ErrorKind, Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::simulate::{LidarCube, PhotonStream};
use crate::sketch::{FrequencySet, Scheme, Sketch, SketchState};

pub const STREAM_MAGIC: &[u8; 4] = b"SKL1";
pub const CUBE_MAGIC: &[u8; 4] = b"SKC1";
pub const SKETCH_MAGIC: &[u8; 4] = b"SKZ1";
pub const SKETCH_SET_MAGIC: &[u8; 4] = b"SKS1";
pub const FORMAT_VERSION: u32 = 1;

/// Reader that tracks the byte offset for error reporting.
pub struct ByteReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R) -> Self {
        ByteReader { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => Err(Error::parse(
                self.offset,
                format!("unexpected end of file while reading {what}"),
            )),
            Err(e) => Err(e.into()),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset;
        let mut b = [0u8; 4];
        self.fill(&mut b, "magic")?;
        if &b != expected {
            return Err(Error::parse(
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&b),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset;
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::parse(at, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn positive(&mut self, what: &str) -> Result<u32> {
        let at = self.offset;
        let v = self.u32(what)?;
        if v == 0 {
            return Err(Error::parse(at, format!("{what} must be positive")));
        }
        Ok(v)
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(Error::parse(self.offset, "trailing bytes after record")),
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

// ── photon streams ────────────────────────────────────────────────────

pub fn write_stream<W: Write>(mut w: W, stream: &PhotonStream) -> Result<()> {
    w.write_all(STREAM_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(stream.bins() as u32).to_le_bytes())?;
    w.write_all(&(stream.len() as u64).to_le_bytes())?;
    for &x in stream.stamps() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Incremental reader over a binary photon stream; yields one stamp at a
/// time without holding the stream in memory.
pub struct StreamReader<R> {
    bytes: ByteReader<R>,
    t: u32,
    remaining: u64,
    n: u64,
}

impl<R: Read> StreamReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut bytes = ByteReader::new(inner);
        bytes.magic(STREAM_MAGIC)?;
        bytes.version()?;
        let t = bytes.positive("T")?;
        let n = bytes.u64("photon count")?;
        Ok(StreamReader {
            bytes,
            t,
            remaining: n,
            n,
        })
    }

    pub fn bins(&self) -> usize {
        self.t as usize
    }

    /// Photon count declared in the header.
    pub fn declared_len(&self) -> u64 {
        self.n
    }

    pub fn next_stamp(&mut self) -> Result<Option<u32>> {
        if self.remaining == 0 {
            self.bytes.expect_eof()?;
            return Ok(None);
        }
        let at = self.bytes.offset();
        let x = self.bytes.u32("time-stamp")?;
        if x >= self.t {
            return Err(Error::parse(at, format!("time-stamp {x} outside [0, {})", self.t)));
        }
        self.remaining -= 1;
        Ok(Some(x))
    }
}

/// Sketches a binary photon stream without materialising it.
pub fn sketch_stream_reader<R: Read>(r: R, freqs: &FrequencySet) -> Result<Sketch> {
    let mut reader = StreamReader::new(r)?;
    if reader.bins() != freqs.bins() {
        return Err(Error::invalid(format!(
            "stream has T = {}, frequency set has T = {}",
            reader.bins(),
            freqs.bins()
        )));
    }
    let mut state = SketchState::new(freqs.clone());
    while let Some(x) = reader.next_stamp()? {
        state.accumulate(x)?;
    }
    state.finalize()
}

pub fn read_stream<R: Read>(r: R) -> Result<PhotonStream> {
    let mut reader = StreamReader::new(r)?;
    let mut stamps = Vec::with_capacity(reader.declared_len().min(1 << 24) as usize);
    while let Some(x) = reader.next_stamp()? {
        stamps.push(x);
    }
    PhotonStream::new(reader.bins(), stamps)
}

pub fn write_stream_csv<W: Write>(mut w: W, stream: &PhotonStream) -> Result<()> {
    writeln!(w, "# T={}", stream.bins())?;
    for x in stream.stamps() {
        writeln!(w, "{x}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses the CSV stream form: a `# T=<T>` header line, then one stamp per
/// line. Offsets in errors are byte offsets of the offending line.
pub fn read_stream_csv<R: BufRead>(r: R) -> Result<PhotonStream> {
    let mut t: Option<usize> = None;
    let mut stamps = Vec::new();
    let mut offset = 0u64;
    for line in r.split(b'\n') {
        let line = line?;
        let len = line.len() as u64 + 1;
        let text = String::from_utf8_lossy(&line);
        let text = text.trim();
        if let Some(meta) = text.strip_prefix('#') {
            if let Some(v) = meta.trim().strip_prefix("T=") {
                let parsed: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(offset, format!("bad T in header: {v:?}")))?;
                if parsed == 0 {
                    return Err(Error::parse(offset, "T must be positive"));
                }
                t = Some(parsed);
            }
        } else if !text.is_empty() {
            let bins = t.ok_or_else(|| Error::parse(offset, "missing '# T=<T>' header"))?;
            let x: u32 = text
                .parse()
                .map_err(|_| Error::parse(offset, format!("not a time-stamp: {text:?}")))?;
            if x as usize >= bins {
                return Err(Error::parse(offset, format!("time-stamp {x} outside [0, {bins})")));
            }
            stamps.push(x);
        }
        offset += len;
    }
    let t = t.ok_or_else(|| Error::parse(0, "missing '# T=<T>' header"))?;
    PhotonStream::new(t, stamps)
}

// ── cubes ─────────────────────────────────────────────────────────────

pub fn write_cube<W: Write>(mut w: W, cube: &LidarCube) -> Result<()> {
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(cube.rows() as u32).to_le_bytes())?;
    w.write_all(&(cube.cols() as u32).to_le_bytes())?;
    w.write_all(&(cube.bins() as u32).to_le_bytes())?;
    for &c in cube.counts() {
        w.write_all(&c.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Cube header fields `(N_r, N_c, T)`.
pub fn read_cube_header<R: Read>(bytes: &mut ByteReader<R>) -> Result<(usize, usize, usize)> {
    bytes.magic(CUBE_MAGIC)?;
    bytes.version()?;
    let rows = bytes.positive("N_r")? as usize;
    let cols = bytes.positive("N_c")? as usize;
    let t = bytes.positive("T")? as usize;
    Ok((rows, cols, t))
}

pub fn read_cube<R: Read>(r: R) -> Result<LidarCube> {
    let mut bytes = ByteReader::new(r);
    let (rows, cols, t) = read_cube_header(&mut bytes)?;
    let total = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(t))
        .ok_or_else(|| Error::parse(8, "cube dimensions overflow"))?;
    let mut counts = Vec::with_capacity(total.min(1 << 26));
    for _ in 0..total {
        counts.push(bytes.u32("count")?);
    }
    bytes.expect_eof()?;
    LidarCube::new(rows, cols, t, counts)
}

// ── sketches ──────────────────────────────────────────────────────────

pub fn write_sketch<W: Write>(mut w: W, sketch: &Sketch) -> Result<()> {
    let freqs = sketch.freqs();
    w.write_all(SKETCH_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(freqs.bins() as u32).to_le_bytes())?;
    w.write_all(&(freqs.len() as u32).to_le_bytes())?;
    let (code, seed) = match freqs.scheme() {
        Scheme::Truncated => (0u8, 0u64),
        Scheme::Random { seed } => (1u8, seed),
    };
    w.write_all(&[code])?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&sketch.count().to_le_bytes())?;
    for &j in freqs.indices() {
        w.write_all(&(j as u32).to_le_bytes())?;
    }
    for z in sketch.z() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_sketch_record<R: Read>(bytes: &mut ByteReader<R>) -> Result<Sketch> {
    bytes.magic(SKETCH_MAGIC)?;
    bytes.version()?;
    let t = bytes.positive("T")? as usize;
    read_sketch_body(bytes, t)
}

fn read_sketch_body<R: Read>(bytes: &mut ByteReader<R>, t: usize) -> Result<Sketch> {
    let m_at = bytes.offset();
    let m = bytes.positive("m")? as usize;
    if m >= t.max(1) {
        return Err(Error::parse(m_at, format!("m = {m} must be below T = {t}")));
    }
    let scheme_at = bytes.offset();
    let code = bytes.u8("scheme")?;
    let seed = bytes.u64("seed")?;
    let scheme = match code {
        0 => Scheme::Truncated,
        1 => Scheme::Random { seed },
        other => return Err(Error::parse(scheme_at, format!("unknown scheme code {other}"))),
    };
    let n_at = bytes.offset();
    let n = bytes.u64("photon count")?;
    if n == 0 {
        return Err(Error::parse(n_at, "sketch photon count is zero"));
    }
    let idx_at = bytes.offset();
    let mut indices = Vec::with_capacity(m);
    for _ in 0..m {
        indices.push(bytes.u32("frequency index")? as usize);
    }
    let freqs = FrequencySet::from_indices(t, indices, scheme)
        .map_err(|e| Error::parse(idx_at, e.to_string()))?;
    let mut z = Vec::with_capacity(m);
    for _ in 0..m {
        let at = bytes.offset();
        let re = bytes.f64("sketch value")?;
        let im = bytes.f64("sketch value")?;
        let v = Complex64::new(re, im);
        if !(v.norm() <= 1.0 + 1e-12) {
            return Err(Error::parse(at, format!("sketch value {v} has modulus above 1")));
        }
        z.push(v);
    }
    Sketch::from_parts(freqs, z, n).map_err(|e| Error::parse(idx_at, e.to_string()))
}

pub fn read_sketch<R: Read>(r: R) -> Result<Sketch> {
    let mut bytes = ByteReader::new(r);
    let s = read_sketch_record(&mut bytes)?;
    bytes.expect_eof()?;
    Ok(s)
}

/// Row-major per-pixel sketches of a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchSet {
    pub rows: usize,
    pub cols: usize,
    pub sketches: Vec<Option<Sketch>>,
}

/// Pixels without photons are written as a placeholder record holding only
/// the magic, the version and `T = 0`.
pub fn write_sketch_set<W: Write>(mut w: W, set: &SketchSet) -> Result<()> {
    if set.sketches.len() != set.rows * set.cols {
        return Err(Error::invalid("sketch set size does not match its dimensions"));
    }
    w.write_all(SKETCH_SET_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(set.rows as u32).to_le_bytes())?;
    w.write_all(&(set.cols as u32).to_le_bytes())?;
    for s in &set.sketches {
        match s {
            Some(s) => write_sketch(&mut w, s)?,
            None => {
                w.write_all(SKETCH_MAGIC)?;
                w.write_all(&FORMAT_VERSION.to_le_bytes())?;
                w.write_all(&0u32.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a sketch set. A record whose `T` field is 0 marks a pixel that
/// received no photons.
pub fn read_sketch_set<R: Read>(r: R) -> Result<SketchSet> {
    let mut bytes = ByteReader::new(r);
    bytes.magic(SKETCH_SET_MAGIC)?;
    bytes.version()?;
    let rows = bytes.positive("N_r")? as usize;
    let cols = bytes.positive("N_c")? as usize;
    let mut sketches = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        bytes.magic(SKETCH_MAGIC)?;
        bytes.version()?;
        let t = bytes.u32("T")?;
        if t == 0 {
            sketches.push(None);
            continue;
        }
        let s = read_sketch_body(&mut bytes, t as usize)?;
        sketches.push(Some(s));
    }
    bytes.expect_eof()?;
    Ok(SketchSet {
        rows,
        cols,
        sketches,
    })
}

/// CSV form: metadata comment lines, a `j, re, im` header, one row per
/// frequency.
pub fn write_sketch_csv<W: Write>(mut w: W, sketch: &Sketch) -> Result<()> {
    let freqs = sketch.freqs();
    writeln!(w, "# T={}", freqs.bins())?;
    writeln!(w, "# m={}", freqs.len())?;
    match freqs.scheme() {
        Scheme::Truncated => writeln!(w, "# scheme=truncated")?,
        Scheme::Random { seed } => {
            writeln!(w, "# scheme=random")?;
            writeln!(w, "# seed={seed}")?;
        }
    }
    writeln!(w, "# n={}", sketch.count())?;
    writeln!(w, "j, re, im")?;
    for (j, z) in freqs.indices().iter().zip(sketch.z()) {
        writeln!(w, "{j}, {:e}, {:e}", z.re, z.im)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sketch_csv<R: BufRead>(r: R) -> Result<Sketch> {
    let mut t = None;
    let mut n = None;
    let mut scheme_name = String::from("truncated");
    let mut seed = 0u64;
    let mut header_seen = false;
    let mut indices = Vec::new();
    let mut z = Vec::new();
    let mut offset = 0u64;
    for line in r.split(b'\n') {
        let line = line?;
        let len = line.len() as u64 + 1;
        let text = String::from_utf8_lossy(&line).trim().to_string();
        let bad = |what: &str| Error::parse(offset, format!("bad {what}: {text:?}"));
        if let Some(meta) = text.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                let v = v.trim();
                match k.trim() {
                    "T" => t = Some(v.parse::<usize>().map_err(|_| bad("T"))?),
                    "n" => n = Some(v.parse::<u64>().map_err(|_| bad("n"))?),
                    "seed" => seed = v.parse().map_err(|_| bad("seed"))?,
                    "scheme" => scheme_name = v.to_string(),
                    _ => {}
                }
            }
        } else if !text.is_empty() {
            if !header_seen {
                let cols: Vec<&str> = text.split(',').map(str::trim).collect();
                if cols != ["j", "re", "im"] {
                    return Err(bad("header (expected 'j, re, im')"));
                }
                header_seen = true;
            } else {
                let cols: Vec<&str> = text.split(',').map(str::trim).collect();
                if cols.len() != 3 {
                    return Err(bad("row"));
                }
                indices.push(cols[0].parse::<usize>().map_err(|_| bad("index"))?);
                let re: f64 = cols[1].parse().map_err(|_| bad("real part"))?;
                let im: f64 = cols[2].parse().map_err(|_| bad("imaginary part"))?;
                z.push(Complex64::new(re, im));
            }
        }
        offset += len;
    }
    let t = t.ok_or_else(|| Error::parse(0, "missing '# T=' metadata"))?;
    let n = n.ok_or_else(|| Error::parse(0, "missing '# n=' metadata"))?;
    let scheme = match scheme_name.as_str() {
        "truncated" => Scheme::Truncated,
        "random" => Scheme::Random { seed },
        other => return Err(Error::parse(0, format!("unknown scheme {other:?}"))),
    };
    let freqs =
        FrequencySet::from_indices(t, indices, scheme).map_err(|e| Error::parse(0, e.to_string()))?;
    Sketch::from_parts(freqs, z, n).map_err(|e| Error::parse(0, e.to_string()))
}
