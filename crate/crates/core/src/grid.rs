//! Row-major 2-D grids and their CSV form.
//!
//! CSV layout: a `# rows=R cols=C` line, a `row,col,value` header, then one
//! line per cell in row-major order.

use std::fmt::Display;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "grid data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.cols + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    /// Iterates `(row, col, &value)` in row-major order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let cols = self.cols;
        self.data
            .iter()
            .enumerate()
            .map(move |(k, v)| (k / cols, k % cols, v))
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_dims(&self, rows: usize, cols: usize, what: &'static str) -> Result<()> {
        if self.rows != rows {
            return Err(Error::Dimension {
                what,
                expected: rows,
                got: self.rows,
            });
        }
        if self.cols != cols {
            return Err(Error::Dimension {
                what,
                expected: cols,
                got: self.cols,
            });
        }
        Ok(())
    }
}

impl<T: Display> Grid<T> {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# rows={} cols={}", self.rows, self.cols)?;
        writeln!(out, "row,col,value")?;
        for (r, c, v) in self.indexed() {
            writeln!(out, "{r},{c},{v}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

impl Grid<f64> {
    /// Parses the CSV layout written by [`Grid::write_csv`].
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (rows, cols) = match lines.next() {
            Some((_, first)) => parse_dims(first).ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("expected '# rows=R cols=C', got {first:?}"),
            })?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty input".into(),
                })
            }
        };
        let mut grid = Grid::filled(rows, cols, f64::NAN);
        let mut seen = 0usize;
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line == "row,col,value" {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let mut parts = line.split(',');
            let r: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| err("bad row index"))?;
            let c: usize = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| err("bad column index"))?;
            let v: f64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| err("bad value"))?;
            if r >= rows || c >= cols {
                return Err(err("cell index outside declared dims"));
            }
            grid.set(r, c, v);
            seen += 1;
        }
        if seen != rows * cols {
            return Err(Error::Dimension {
                what: "csv cells",
                expected: rows * cols,
                got: seen,
            });
        }
        Ok(grid)
    }
}

fn parse_dims(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut rows = None;
    let mut cols = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("rows=") {
            rows = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("cols=") {
            cols = v.parse().ok();
        }
    }
    Some((rows?, cols?))
}
