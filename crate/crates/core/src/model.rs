//! Trained monitoring model: whitening, latent dynamics, `D` and control
//! limits, with a self-contained text serialization.
//!
//! File layout (one item per line, numbers written with 17 significant
//! digits, values on a line separated by single spaces):
//!
//! ```text
//! ppfa-model 1
//! m <m>
//! r <r>
//! s <s>
//! beta          then s lines of r values (row j = lag j+1)
//! h             then m lines of r values
//! gamma         then 1 line of r values
//! sigma         then 1 line of m values
//! mean          then 1 line of m values
//! eigvecs       then m lines of m values
//! eigvals       then 1 line of m values
//! dynamics      then rs lines of rs values
//! limits        then 1 line: alpha psi_T2 psi_SPE psi_DI bw_T2 bw_SPE bw_DI
//! end
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::em::{self, EmConfig, TrainingTrace};
use crate::error::{Error, Result};
use crate::monitoring::{
    calibrate, estimate_dynamics, score_whitened, ControlLimits, DynamicsCovariance,
    MonitorReport, StreamState,
};
use crate::preprocess::{fit_whitening, WhiteningTransform};
use crate::statespace::{augment, AugmentedParams, ModelParams};

pub const FORMAT_HEADER: &str = "ppfa-model 1";

#[derive(Debug, Clone, PartialEq)]
pub struct PpfaModel {
    pub whitening: WhiteningTransform,
    /// Parameters in whitened coordinates.
    pub params: ModelParams,
    pub dynamics: DynamicsCovariance,
    pub limits: ControlLimits,
}

/// Whitens row by row so that any split of a series into chunks produces
/// bitwise identical rows.
pub fn whiten_rows(whitening: &WhiteningTransform, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if raw.ncols() != whitening.dim() {
        return Err(Error::DimensionMismatch {
            expected: whitening.dim(),
            found: raw.ncols(),
        });
    }
    let mut out = DMatrix::zeros(raw.nrows(), raw.ncols());
    for i in 0..raw.nrows() {
        let z = whitening.apply(&raw.row(i).transpose())?;
        out.set_row(i, &z.transpose());
    }
    Ok(out)
}

/// Fits whitening on `raw`, runs EM, estimates `D` from the smoothed
/// training moments and calibrates the control limits at `alpha`.
pub fn train(raw: &DMatrix<f64>, cfg: &EmConfig, alpha: f64) -> Result<(PpfaModel, TrainingTrace)> {
    cfg.validate_for(raw.nrows(), raw.ncols())?;
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("must lie in (0.5, 1), got {alpha}")));
    }
    let whitening = fit_whitening(raw)?;
    let x = whiten_rows(&whitening, raw)?;
    let (params, trace) = em::fit(&x, cfg)?;
    let moments = em::e_step(&params, &x)?.moments;
    let dynamics = estimate_dynamics(&moments)?;
    let aug = augment(&params);
    let limits = calibrate(&aug, &params.sigma, &dynamics, &x, alpha)?;
    Ok((
        PpfaModel {
            whitening,
            params,
            dynamics,
            limits,
        },
        trace,
    ))
}

impl PpfaModel {
    pub fn m(&self) -> usize {
        self.params.m()
    }

    pub fn augmented(&self) -> AugmentedParams {
        augment(&self.params)
    }

    /// Scores raw rows as a fresh stream.
    pub fn score(&self, raw: &DMatrix<f64>) -> Result<MonitorReport> {
        self.score_chunk(&mut StreamState::default(), raw)
    }

    /// Scores raw rows continuing `state`.
    pub fn score_chunk(&self, state: &mut StreamState, raw: &DMatrix<f64>) -> Result<MonitorReport> {
        let x = whiten_rows(&self.whitening, raw)?;
        score_whitened(
            &self.augmented(),
            &self.params.sigma,
            &self.dynamics,
            &self.limits,
            state,
            &x,
        )
    }

    /// One-step-ahead predictions of every row in raw units.
    pub fn predict_one_step(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        one_step_predictions(&self.params, &self.whitening, raw)
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let w = &self.whitening;
        let l = &self.limits;
        let mut out = String::new();
        out.push_str(FORMAT_HEADER);
        out.push('\n');
        let _ = writeln!(out, "m {}", p.m());
        let _ = writeln!(out, "r {}", p.r());
        let _ = writeln!(out, "s {}", p.s());
        write_matrix(&mut out, "beta", &p.beta);
        write_matrix(&mut out, "h", &p.h);
        write_vector(&mut out, "gamma", &p.gamma);
        write_vector(&mut out, "sigma", &p.sigma);
        write_vector(&mut out, "mean", &w.mean);
        write_matrix(&mut out, "eigvecs", &w.eigvecs);
        write_vector(&mut out, "eigvals", &w.eigvals);
        write_matrix(&mut out, "dynamics", &self.dynamics.d);
        let limits = DVector::from_vec(vec![
            l.alpha,
            l.psi_t2,
            l.psi_spe,
            l.psi_di,
            l.bandwidths[0],
            l.bandwidths[1],
            l.bandwidths[2],
        ]);
        write_vector(&mut out, "limits", &limits);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut reader = Reader::new(text);
        let header = reader.next_line()?;
        if header != FORMAT_HEADER {
            return Err(reader.error(format!("expected `{FORMAT_HEADER}`, found `{header}`")));
        }
        let m = reader.count("m")?;
        let r = reader.count("r")?;
        let s = reader.count("s")?;
        let beta = reader.matrix("beta", s, r)?;
        let h = reader.matrix("h", m, r)?;
        let gamma = reader.vector("gamma", r)?;
        let sigma = reader.vector("sigma", m)?;
        let mean = reader.vector("mean", m)?;
        let eigvecs = reader.matrix("eigvecs", m, m)?;
        let eigvals = reader.vector("eigvals", m)?;
        if eigvals.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(reader.error("whitening eigenvalues must be positive and finite"));
        }
        let d = reader.matrix("dynamics", r * s, r * s)?;
        let lim = reader.vector("limits", 7)?;
        reader.tag("end")?;

        let params = ModelParams::new(beta, h, gamma, sigma)?;
        params.validate()?;
        let limits = ControlLimits {
            alpha: lim[0],
            psi_t2: lim[1],
            psi_spe: lim[2],
            psi_di: lim[3],
            bandwidths: [lim[4], lim[5], lim[6]],
        };
        limits.validate()?;
        Ok(PpfaModel {
            whitening: WhiteningTransform {
                mean,
                eigvecs,
                eigvals,
            },
            params,
            dynamics: DynamicsCovariance::from_stored(d)?,
            limits,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// One-step-ahead predictions `E[x_k | x_1..x_{k-1}]` in raw units for a
/// model living in the coordinates of `whitening`. The first prediction is
/// the stationary mean.
pub fn one_step_predictions(
    params: &ModelParams,
    whitening: &WhiteningTransform,
    raw: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let aug = augment(params);
    let x = whiten_rows(whitening, raw)?;
    let mut state: Option<crate::kalman::AugmentedBelief> = None;
    let mut out = DMatrix::zeros(raw.nrows(), raw.ncols());
    for i in 0..x.nrows() {
        let row = x.row(i).transpose();
        let step = crate::kalman::filter_step(&aug, &params.sigma, state.as_ref(), &row, i)?;
        let predicted = whitening.invert(&(&row - &step.innovation))?;
        out.set_row(i, &predicted.transpose());
        state = Some(step.belief);
    }
    Ok(out)
}

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let line: Vec<String> = values.map(|&v| fmt_value(v)).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

fn write_matrix(out: &mut String, tag: &str, a: &DMatrix<f64>) {
    out.push_str(tag);
    out.push('\n');
    for row in a.row_iter() {
        write_row(out, row.iter());
    }
}

fn write_vector(out: &mut String, tag: &str, v: &DVector<f64>) {
    out.push_str(tag);
    out.push('\n');
    write_row(out, v.iter());
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines().enumerate(),
            line_no: 0,
        }
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse(format!("model file line {}: {}", self.line_no, msg.into()))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((i, line)) => {
                self.line_no = i + 1;
                Ok(line.trim())
            }
            None => {
                self.line_no += 1;
                Err(self.error("unexpected end of file"))
            }
        }
    }

    fn tag(&mut self, tag: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != tag {
            return Err(self.error(format!("expected `{tag}`, found `{line}`")));
        }
        Ok(())
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let line = self.next_line()?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.error(format!("expected `{key} <count>`, found `{line}`")))?;
        match value.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(self.error(format!("`{key}` must be a positive integer"))),
        }
    }

    fn row(&mut self, len: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| self.error(format!("bad number: {e}")))?;
        if values.len() != len {
            return Err(self.error(format!("expected {len} values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(self.error("non-finite value"));
        }
        Ok(values)
    }

    fn matrix(&mut self, tag: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        self.tag(tag)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn vector(&mut self, tag: &str, len: usize) -> Result<DVector<f64>> {
        self.tag(tag)?;
        Ok(DVector::from_vec(self.row(len)?))
    }
}
