//! Matrix files.
//!
//! Text: a `DMAT <rows> <cols>` header line, then one line per row of
//! space-separated decimals written in shortest round-trip form, so text
//! files reproduce every value exactly.
//!
//! Binary: the 6 bytes `DMATB1`, little-endian `u64` rows and cols, then
//! `rows·cols` little-endian `f64` values in row-major order.
//!
//! Both formats are read and written one row at a time, so conversion runs
//! in memory proportional to one row.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sbattn::DenseMatrix;

pub const TEXT_MAGIC: &str = "DMAT";
pub const BINARY_MAGIC: &[u8; 6] = b"DMATB1";
const BINARY_HEADER_LEN: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Binary,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "binary" => Ok(Format::Binary),
            _ => Err(format!(
                "unknown matrix format '{s}' (expected text or binary)"
            )),
        }
    }
}

impl Format {
    /// `.bin` means binary, anything else text.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Binary,
            _ => Format::Text,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MatrixIoError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Text { line: usize, msg: String },
    #[error("byte offset {offset}: {msg}")]
    Binary { offset: u64, msg: String },
    #[error("{0}")]
    Shape(String),
}

type Result<T> = std::result::Result<T, MatrixIoError>;

enum Inner<R> {
    Text { src: R, line: usize, buf: String },
    Binary { src: R, offset: u64, buf: Vec<u8> },
}

/// Row-at-a-time reader; the format is detected from the first bytes.
pub struct MatrixReader<R> {
    inner: Inner<R>,
    rows: usize,
    cols: usize,
    next: usize,
}

impl MatrixReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        MatrixReader::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> MatrixReader<R> {
    pub fn new(mut src: R) -> Result<Self> {
        let head = src.fill_buf()?;
        if head.starts_with(BINARY_MAGIC) {
            let mut h = [0u8; BINARY_HEADER_LEN as usize];
            let got = read_full(&mut src, &mut h)?;
            if got < h.len() {
                return Err(MatrixIoError::Binary {
                    offset: got as u64,
                    msg: format!("truncated header: {got} of {} bytes", h.len()),
                });
            }
            let rows = u64::from_le_bytes(h[6..14].try_into().unwrap());
            let cols = u64::from_le_bytes(h[14..22].try_into().unwrap());
            let (rows, cols) = checked_shape(rows, cols)
                .map_err(|msg| MatrixIoError::Binary { offset: 6, msg })?;
            return Ok(Self {
                inner: Inner::Binary {
                    src,
                    offset: BINARY_HEADER_LEN,
                    buf: vec![0; cols * 8],
                },
                rows,
                cols,
                next: 0,
            });
        }
        let mut line = String::new();
        src.read_line(&mut line)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: String| MatrixIoError::Text { line: 1, msg };
        if tok.len() != 3 || tok[0] != TEXT_MAGIC {
            return Err(bad(format!(
                "expected header 'DMAT <rows> <cols>', found '{}'",
                line.trim_end()
            )));
        }
        let dim = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| bad(format!("bad dimension '{s}'")))
        };
        let (rows, cols) = checked_shape(dim(tok[1])?, dim(tok[2])?).map_err(bad)?;
        Ok(Self {
            inner: Inner::Text {
                src,
                line: 1,
                buf: String::new(),
            },
            rows,
            cols,
            next: 0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Reads the next row into `out`; `Ok(false)` once all rows are read and
    /// nothing but blank lines (text) or nothing at all (binary) remains.
    pub fn next_row(&mut self, out: &mut Vec<f64>) -> Result<bool> {
        let (row, cols, rows) = (self.next, self.cols, self.rows);
        out.clear();
        match &mut self.inner {
            Inner::Text { src, line, buf } => {
                if row == rows {
                    loop {
                        buf.clear();
                        if src.read_line(buf)? == 0 {
                            return Ok(false);
                        }
                        *line += 1;
                        if !buf.trim().is_empty() {
                            return Err(MatrixIoError::Text {
                                line: *line,
                                msg: format!("data after the last of {rows} rows"),
                            });
                        }
                    }
                }
                buf.clear();
                let got = src.read_line(buf)?;
                *line += 1;
                let err = |msg: String| MatrixIoError::Text { line: *line, msg };
                if got == 0 {
                    return Err(err(format!("truncated: row {row} of {rows} is missing")));
                }
                for (j, tok) in buf.split_whitespace().enumerate() {
                    let v: f64 = tok.parse().map_err(|_| {
                        err(format!("row {row}, column {j}: '{tok}' is not a number"))
                    })?;
                    if !v.is_finite() {
                        return Err(err(format!(
                            "row {row}, column {j}: non-finite value '{tok}'"
                        )));
                    }
                    out.push(v);
                }
                if out.len() < cols {
                    return Err(err(format!(
                        "truncated: row {row} has {} of {cols} values",
                        out.len()
                    )));
                }
                if out.len() > cols {
                    return Err(err(format!(
                        "row {row} has {} values, expected {cols}",
                        out.len()
                    )));
                }
            }
            Inner::Binary { src, offset, buf } => {
                if row == rows {
                    let mut extra = [0u8; 1];
                    return match src.read(&mut extra)? {
                        0 => Ok(false),
                        _ => Err(MatrixIoError::Binary {
                            offset: *offset,
                            msg: format!("data after the last of {rows} rows"),
                        }),
                    };
                }
                let got = read_full(src, buf)?;
                if got < buf.len() {
                    return Err(MatrixIoError::Binary {
                        offset: *offset + got as u64,
                        msg: format!(
                            "truncated payload in row {row} of {rows}: {got} of {} bytes",
                            buf.len()
                        ),
                    });
                }
                for (j, c) in buf.chunks_exact(8).enumerate() {
                    let v = f64::from_le_bytes(c.try_into().unwrap());
                    if !v.is_finite() {
                        return Err(MatrixIoError::Binary {
                            offset: *offset + 8 * j as u64,
                            msg: format!("row {row}, column {j}: non-finite value {v}"),
                        });
                    }
                    out.push(v);
                }
                *offset += buf.len() as u64;
            }
        }
        self.next += 1;
        Ok(true)
    }
}

fn checked_shape(rows: u64, cols: u64) -> std::result::Result<(usize, usize), String> {
    let too_big = || format!("shape {rows}x{cols} is too large");
    let r = usize::try_from(rows).map_err(|_| too_big())?;
    let c = usize::try_from(cols).map_err(|_| too_big())?;
    r.checked_mul(c)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(too_big)?;
    Ok((r, c))
}

/// Like `read_exact`, but reports how many bytes arrived before EOF.
fn read_full<R: Read>(src: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match src.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Row-at-a-time writer; [`MatrixWriter::finish`] checks the row count.
pub struct MatrixWriter<W: Write> {
    dst: W,
    format: Format,
    rows: usize,
    cols: usize,
    written: usize,
}

impl MatrixWriter<BufWriter<File>> {
    pub fn create(path: &Path, format: Format, rows: usize, cols: usize) -> Result<Self> {
        MatrixWriter::new(BufWriter::new(File::create(path)?), format, rows, cols)
    }
}

impl<W: Write> MatrixWriter<W> {
    pub fn new(mut dst: W, format: Format, rows: usize, cols: usize) -> Result<Self> {
        match format {
            Format::Text => writeln!(dst, "{TEXT_MAGIC} {rows} {cols}")?,
            Format::Binary => {
                dst.write_all(BINARY_MAGIC)?;
                dst.write_all(&(rows as u64).to_le_bytes())?;
                dst.write_all(&(cols as u64).to_le_bytes())?;
            }
        }
        Ok(Self {
            dst,
            format,
            rows,
            cols,
            written: 0,
        })
    }

    pub fn write_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols || self.written == self.rows {
            return Err(MatrixIoError::Shape(format!(
                "row {} of length {} does not fit a {}x{} matrix",
                self.written,
                row.len(),
                self.rows,
                self.cols
            )));
        }
        if let Some((j, v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(MatrixIoError::Shape(format!(
                "row {}, column {j}: non-finite value {v}",
                self.written
            )));
        }
        match self.format {
            Format::Text => {
                let mut first = true;
                for v in row {
                    if !first {
                        self.dst.write_all(b" ")?;
                    }
                    first = false;
                    // `{:?}` is the shortest string that parses back to `v`.
                    write!(self.dst, "{v:?}")?;
                }
                self.dst.write_all(b"\n")?;
            }
            Format::Binary => {
                for v in row {
                    self.dst.write_all(&v.to_le_bytes())?;
                }
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.rows {
            return Err(MatrixIoError::Shape(format!(
                "wrote {} of {} rows",
                self.written, self.rows
            )));
        }
        self.dst.flush()?;
        Ok(self.dst)
    }
}

pub fn read_matrix<R: BufRead>(src: R) -> Result<DenseMatrix> {
    let mut rd = MatrixReader::new(src)?;
    let (rows, cols) = rd.shape();
    let mut data = Vec::with_capacity(rows * cols);
    let mut row = Vec::with_capacity(cols);
    while rd.next_row(&mut row)? {
        data.extend_from_slice(&row);
    }
    DenseMatrix::from_vec(rows, cols, data).map_err(|e| MatrixIoError::Shape(e.to_string()))
}

pub fn write_matrix<W: Write>(dst: W, m: &DenseMatrix, format: Format) -> Result<W> {
    let mut w = MatrixWriter::new(dst, format, m.rows(), m.cols())?;
    for i in 0..m.rows() {
        w.write_row(m.row(i))?;
    }
    w.finish()
}

pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    read_matrix(BufReader::new(File::open(path)?))
}

pub fn save_matrix(path: &Path, m: &DenseMatrix, format: Format) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m, format).map(|_| ())
}

/// Streams `input` into `output` in the given format.
pub fn convert(input: &Path, output: &Path, format: Format) -> Result<(usize, usize)> {
    let mut rd = MatrixReader::open(input)?;
    let (rows, cols) = rd.shape();
    let mut w = MatrixWriter::create(output, format, rows, cols)?;
    let mut row = Vec::with_capacity(cols);
    while rd.next_row(&mut row)? {
        w.write_row(&row)?;
    }
    w.finish()?;
    Ok((rows, cols))
}
