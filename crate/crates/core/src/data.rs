//! Dataset container, CSV I/O, robust standardization, and simulation designs.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// A regression dataset: an `n x m` design and a length-`n` response.
/// Every entry is finite; loaders and simulators enforce this at the boundary.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    names: Vec<String>,
    response_name: String,
    standardization: Option<Standardization>,
}

/// Per-column robust location and scale recorded by [`Dataset::standardize`].
///
/// `mad` here is the raw median absolute deviation, with no consistency
/// factor; see the crate README. Intercept columns keep `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardization {
    pub medians: Vec<f64>,
    pub mads: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, names: Vec<String>, response_name: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Schema(format!(
                "design has {} rows but response has {}",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::Schema("empty dataset".into()));
        }
        if names.len() != x.ncols() {
            return Err(Error::Schema(format!(
                "{} column names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("dataset contains non-finite values".into()));
        }
        Ok(Self {
            x,
            y,
            names,
            response_name: response_name.into(),
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of design columns.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Prepend a column of ones named `intercept`. Refuses to stack a second
    /// intercept onto a design that already leads with one.
    pub fn with_intercept(&self) -> Result<Dataset> {
        if self.names.first().map(String::as_str) == Some("intercept") {
            return Err(Error::Schema("design already has an intercept column".into()));
        }
        let x = self.x.clone().insert_column(0, 1.0);
        let mut names = vec!["intercept".to_string()];
        names.extend_from_slice(&self.names);
        Dataset::new(x, self.y.clone(), names, self.response_name.clone())
    }

    /// Squared norm of row `i` of the design.
    pub fn row_norm_sq(&self, i: usize) -> f64 {
        self.x.row(i).iter().map(|v| v * v).sum()
    }

    /// `x_i . beta` for the leading `beta.len()` design columns.
    pub fn row_dot(&self, i: usize, beta: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for j in 0..beta.len() {
            acc += self.x[(i, j)] * beta[j];
        }
        acc
    }

    /// Robustly standardize every non-intercept design column:
    /// `x -> (x - median) / MAD` with the raw (unscaled) MAD.
    ///
    /// A column that is identically 1 is treated as an intercept and left
    /// alone. Any other column with zero MAD cannot be standardized and is an
    /// error. The recorded transform is invertible; see [`Dataset::unstandardize`].
    pub fn standardize(&self) -> Result<Dataset> {
        let m = self.dim();
        let mut medians = vec![0.0; m];
        let mut mads = vec![1.0; m];
        let mut x = self.x.clone();
        for j in 0..m {
            let col: Vec<f64> = (0..self.n()).map(|i| self.x[(i, j)]).collect();
            if col.iter().all(|&v| v == 1.0) {
                continue; // intercept column
            }
            let med = median(&col);
            let abs_dev: Vec<f64> = col.iter().map(|v| (v - med).abs()).collect();
            let mad = median(&abs_dev);
            if mad == 0.0 {
                return Err(Error::DegenerateColumn(format!(
                    "column '{}' has zero MAD",
                    self.names[j]
                )));
            }
            medians[j] = med;
            mads[j] = mad;
            for i in 0..self.n() {
                x[(i, j)] = (self.x[(i, j)] - med) / mad;
            }
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            names: self.names.clone(),
            response_name: self.response_name.clone(),
            standardization: Some(Standardization { medians, mads }),
        })
    }

    /// Undo [`Dataset::standardize`] using the recorded medians and MADs.
    pub fn unstandardize(&self) -> Result<Dataset> {
        let st = self.standardization.as_ref().ok_or_else(|| {
            Error::InvalidInput("dataset carries no standardization to invert".into())
        })?;
        let mut x = self.x.clone();
        for j in 0..self.dim() {
            for i in 0..self.n() {
                x[(i, j)] = self.x[(i, j)] * st.mads[j] + st.medians[j];
            }
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            names: self.names.clone(),
            response_name: self.response_name.clone(),
            standardization: None,
        })
    }

    /// Write as CSV: response column first, then the design columns.
    /// Floats are written in shortest round-trip form, so a write/load cycle
    /// reproduces the dataset exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.response_name.clone()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.y[i])];
            for j in 0..self.dim() {
                rec.push(format!("{}", self.x[(i, j)]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(f)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Load a headered CSV. The named response column becomes `y`; the remaining
/// columns, in file order, become the design. Every cell must parse as a
/// finite number; failures report the 1-based data row and the column name.
pub fn load_csv(path: &Path, response: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, response)
}

pub fn load_csv_reader<R: std::io::Read>(reader: R, response: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Schema("empty file".into()));
    }
    let resp_idx = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::Schema(format!("response column '{response}' not found")))?;
    let design_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != resp_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if design_names.is_empty() {
        return Err(Error::Schema("no design columns besides the response".into()));
    }

    let mut y = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let row = row_idx + 1;
        let record = record.map_err(|e| Error::Schema(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Schema(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let mut design_row = Vec::with_capacity(design_names.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                column: headers[j].clone(),
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[j].clone(),
                    message: format!("non-finite value '{field}'"),
                });
            }
            if j == resp_idx {
                y.push(v);
            } else {
                design_row.push(v);
            }
        }
        rows.push(design_row);
    }
    if rows.is_empty() {
        return Err(Error::Schema("empty file".into()));
    }
    let n = rows.len();
    let m = design_names.len();
    let x = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    Dataset::new(x, DVector::from_vec(y), design_names, response)
}

/// Design for the linear simulation: `y = x . beta + sigma * eps` with
/// `x = (1, z)`, `z ~ N(0, sigma_z^2 I)`, `eps ~ N(0, 1)`.
#[derive(Clone, Debug)]
pub struct LinearDesign {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub sigma_z: f64,
}

impl Default for LinearDesign {
    fn default() -> Self {
        Self {
            beta: vec![1.0, 1.0, 1.0, 1.0],
            sigma: 2.0,
            sigma_z: 2.0,
        }
    }
}

/// Design for the logistic simulation: `P(y=1|x) = sigmoid(x . beta)` with
/// `x = (1, z)`, `z ~ N(0, sigma_z^2 I)`.
#[derive(Clone, Debug)]
pub struct LogisticDesign {
    pub beta: Vec<f64>,
    pub sigma_z: f64,
}

impl Default for LogisticDesign {
    fn default() -> Self {
        Self {
            beta: vec![1.5, 1.0, -1.0, 0.5],
            sigma_z: 1.0,
        }
    }
}

fn design_names(p: usize) -> Vec<String> {
    let mut names = vec!["intercept".to_string()];
    names.extend((1..p).map(|j| format!("z{j}")));
    names
}

fn check_design(beta: &[f64], sigma_z: f64) -> Result<()> {
    if beta.is_empty() || beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("beta must be nonempty and finite".into()));
    }
    if !sigma_z.is_finite() || sigma_z <= 0.0 {
        return Err(Error::InvalidInput(format!("sigma_z must be positive, got {sigma_z}")));
    }
    Ok(())
}

/// Simulate the Gaussian linear design. Deterministic given the seed tree.
pub fn simulate_linear(n: usize, design: &LinearDesign, seeds: &SeedTree) -> Result<Dataset> {
    check_design(&design.beta, design.sigma_z)?;
    if !design.sigma.is_finite() || design.sigma <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "sigma must be positive, got {}",
            design.sigma
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let p = design.beta.len();
    let mut rng_x = seeds.rng("sim/linear/x");
    let mut rng_eps = seeds.rng("sim/linear/eps");
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            let z: f64 = rng_x.sample(StandardNormal);
            x[(i, j)] = design.sigma_z * z;
        }
        let mut mean = 0.0;
        for j in 0..p {
            mean += x[(i, j)] * design.beta[j];
        }
        let eps: f64 = rng_eps.sample(StandardNormal);
        y[i] = mean + design.sigma * eps;
    }
    Dataset::new(x, y, design_names(p), "y")
}

/// Simulate the logistic design. Deterministic given the seed tree.
pub fn simulate_logistic(n: usize, design: &LogisticDesign, seeds: &SeedTree) -> Result<Dataset> {
    check_design(&design.beta, design.sigma_z)?;
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let p = design.beta.len();
    let mut rng_x = seeds.rng("sim/logistic/x");
    let mut rng_y = seeds.rng("sim/logistic/y");
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            let z: f64 = rng_x.sample(StandardNormal);
            x[(i, j)] = design.sigma_z * z;
        }
        let mut lin = 0.0;
        for j in 0..p {
            lin += x[(i, j)] * design.beta[j];
        }
        let prob = 1.0 / (1.0 + (-lin).exp());
        y[i] = if rng_y.random::<f64>() < prob { 1.0 } else { 0.0 };
    }
    Dataset::new(x, y, design_names(p), "y")
}
