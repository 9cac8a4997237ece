use std::fmt::Write as _;
use std::path::Path;

use crate::ad::Tensor;
use crate::error::{Error, Result};
use crate::numerics::GridFunction;

/// Samples of one trajectory: strictly increasing times and `[T, n]` states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Tensor,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Tensor) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid(format!("trajectory needs at least 2 samples, got {}", times.len())));
        }
        if states.rank() != 2 || states.rows() != times.len() || states.cols() == 0 {
            return Err(Error::invalid(format!(
                "states {:?} do not match {} times",
                states.shape(),
                times.len()
            )));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("time {i} is not finite")));
        }
        if let Some(i) = (1..times.len()).find(|&i| times[i] <= times[i - 1]) {
            return Err(Error::invalid(format!("times not strictly increasing at sample {i}")));
        }
        if !states.is_finite() {
            return Err(Error::invalid("states contain non-finite values"));
        }
        Ok(Trajectory { times, states })
    }

    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        Trajectory::new(times, Tensor::from_rows(rows)?)
    }

    /// Sample a grid function at the given times.
    pub fn sample(gf: &GridFunction, times: &[f64]) -> Result<Self> {
        let n = gf.dim();
        let mut data = vec![0.0; times.len() * n];
        for (row, &t) in data.chunks_mut(n).zip(times) {
            gf.eval_into(t, row);
        }
        Trajectory::new(times.to_vec(), Tensor::matrix(times.len(), n, data)?)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn initial(&self) -> &[f64] {
        self.states.row_slice(0)
    }

    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t1(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// First `len` samples.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        let len = len.min(self.len());
        let n = self.dim();
        Trajectory::new(
            self.times[..len].to_vec(),
            Tensor::matrix(len, n, self.states.data()[..len * n].to_vec())?,
        )
    }

    /// Samples at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let n = self.dim();
        let mut times = Vec::with_capacity(indices.len());
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            times.push(self.times[i]);
            data.extend_from_slice(self.states.row_slice(i));
        }
        Trajectory::new(times, Tensor::matrix(indices.len(), n, data)?)
    }

    /// Times mapped by `t -> scale * t + shift`.
    pub fn retimed(&self, scale: f64, shift: f64) -> Result<Self> {
        Trajectory::new(self.times.iter().map(|t| scale * t + shift).collect(), self.states.clone())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.dim() {
            write!(out, ",y{i}").expect("string write");
        }
        out.push('\n');
        for (r, t) in self.times.iter().enumerate() {
            out.push_str(&format_f64(*t));
            for v in self.states.row_slice(r) {
                out.push(',');
                out.push_str(&format_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::data(origin, "empty file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let n = cols.len().saturating_sub(1);
        let valid = cols.first() == Some(&"t")
            && n > 0
            && cols[1..].iter().enumerate().all(|(i, c)| *c == format!("y{i}"));
        if !valid {
            return Err(Error::data(origin, format!("malformed header `{header}`, expected t,y0,..")));
        }
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (line_no, line) in lines {
            let row = line_no + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != n + 1 {
                return Err(Error::data(
                    origin,
                    format!("row {row}: expected {} fields, got {}", n + 1, fields.len()),
                ));
            }
            let mut values = Vec::with_capacity(n + 1);
            for f in fields {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::data(origin, format!("row {row}: cannot parse `{f}`")))?;
                if !v.is_finite() {
                    return Err(Error::data(origin, format!("row {row}: non-finite value")));
                }
                values.push(v);
            }
            if let Some(&prev) = times.last() {
                if values[0] <= prev {
                    return Err(Error::data(origin, format!("row {row}: time {} is not increasing", values[0])));
                }
            }
            times.push(values[0]);
            data.extend_from_slice(&values[1..]);
        }
        let rows = times.len();
        Trajectory::new(times, Tensor::matrix(rows, n, data)?).map_err(|e| Error::data(origin, e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
        Trajectory::from_csv(&text, path)
    }
}

/// 17 significant digits; parses back to the same bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}
