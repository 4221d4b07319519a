//! Binary masks, bounding boxes and the binary PGM codec.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel rectangle, half-open: columns `[x_min, x_max)`, rows `[y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> usize {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> usize {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn fits(&self, rows: usize, cols: usize) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.x_max <= cols && self.y_max <= rows
    }

    /// Whether the column span overlaps `[lo, hi)`.
    pub fn overlaps_columns(&self, lo: usize, hi: usize) -> bool {
        self.x_min < hi && lo < self.x_max
    }

    /// Horizontal gap in pixels between two boxes (0 when they overlap).
    pub fn column_gap(&self, other: &BBox) -> usize {
        if self.x_max <= other.x_min {
            other.x_min - self.x_max
        } else {
            self.x_min.saturating_sub(other.x_max)
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BinaryImage {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for BinaryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BinaryImage({}x{}, ones={})",
            self.rows,
            self.cols,
            self.count_ones()
        )
    }
}

impl BinaryImage {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidInput("binary image values must be 0 or 1".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.cols + col] = value as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn fill_rect(&mut self, bbox: &BBox) {
        for r in bbox.y_min..bbox.y_max.min(self.rows) {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            row[bbox.x_min..bbox.x_max.min(self.cols)].fill(1);
        }
    }

    /// Ones inside `bbox` restricted to columns `[col_lo, col_hi)`.
    pub fn count_in(&self, bbox: &BBox, col_lo: usize, col_hi: usize) -> usize {
        let c0 = bbox.x_min.max(col_lo);
        let c1 = bbox.x_max.min(col_hi).min(self.cols);
        if c0 >= c1 {
            return 0;
        }
        (bbox.y_min..bbox.y_max.min(self.rows))
            .map(|r| {
                self.data[r * self.cols + c0..r * self.cols + c1]
                    .iter()
                    .map(|&v| v as usize)
                    .sum::<usize>()
            })
            .sum()
    }

    /// Copy of `self` with everything outside `bbox` cleared.
    pub fn masked_to(&self, bbox: &BBox) -> BinaryImage {
        let mut out = BinaryImage::zeros(self.rows, self.cols);
        for r in bbox.y_min..bbox.y_max.min(self.rows) {
            let span = r * self.cols + bbox.x_min..r * self.cols + bbox.x_max.min(self.cols);
            out.data[span.clone()].copy_from_slice(&self.data[span]);
        }
        out
    }

    /// Whether every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    /// Block max-pool down to `out_rows × out_cols`: an output pixel is 1 when
    /// any input pixel in its block is 1. Block `i` spans
    /// `[⌊i·rows/out_rows⌋, ⌊(i+1)·rows/out_rows⌋)`.
    pub fn downsample_any(&self, out_rows: usize, out_cols: usize) -> BinaryImage {
        let mut out = BinaryImage::zeros(out_rows, out_cols);
        let col_block: Vec<usize> = (0..self.cols).map(|c| c * out_cols / self.cols).collect();
        for r in 0..self.rows {
            let orow = r * out_rows / self.rows;
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (c, &v) in row.iter().enumerate() {
                if v != 0 {
                    out.data[orow * out_cols + col_block[c]] = 1;
                }
            }
        }
        out
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n1\n", self.cols, self.rows)?;
        w.write_all(&self.data)
    }

    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<pgm stream>", e))?;
        Self::parse_pgm(&bytes)
    }

    pub fn parse_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::Malformed {
            what: "pgm",
            detail: detail.to_string(),
        };
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("expected P5 magic"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let cols = parse(fields[1])?;
        let rows = parse(fields[2])?;
        if parse(fields[3])? != 1 {
            return Err(bad("maxval must be 1"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
        if raster.len() != rows * cols {
            return Err(bad("raster length does not match dimensions"));
        }
        Self::from_vec(rows, cols, raster.to_vec())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_pgm(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_pgm(&bytes)
    }
}
