//! Hold-out selection of the latent dimension `r` and dynamic order `s`.
//!
//! The data are split chronologically; every candidate pair is trained on
//! the leading part and scored on the trailing part after step deviations
//! are added to a few channels from the middle of the validation window.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::model::train;
use crate::monitoring::MonitorReport;

/// Minimum number of validation rows.
pub const MIN_VALIDATION_ROWS: usize = 200;

pub fn fdr(tp: usize, fn_: usize) -> Result<f64> {
    if tp + fn_ == 0 {
        return Err(Error::Numeric("FDR undefined: no faulty samples".into()));
    }
    Ok(tp as f64 / (tp + fn_) as f64)
}

pub fn far(fp: usize, tn: usize) -> Result<f64> {
    if fp + tn == 0 {
        return Err(Error::Numeric("FAR undefined: no normal samples".into()));
    }
    Ok(fp as f64 / (fp + tn) as f64)
}

/// Detection rate over `fault` and false-alarm rate over `normal` under the
/// any-statistic rule; burn-in samples are ignored.
pub fn detection_rates(
    report: &MonitorReport,
    normal: std::ops::Range<usize>,
    fault: std::ops::Range<usize>,
) -> Result<(f64, f64)> {
    let count = |range: std::ops::Range<usize>| {
        let recs: Vec<_> = report.records[range].iter().filter(|r| !r.burn_in).collect();
        let hits = recs.iter().filter(|r| r.any_alarm()).count();
        (hits, recs.len() - hits)
    };
    let (tp, fn_) = count(fault);
    let (fp, tn) = count(normal);
    Ok((fdr(tp, fn_)?, far(fp, tn)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    /// Step sizes in units of the channel's training standard deviation.
    pub magnitudes: Vec<f64>,
    /// Number of channels that receive a step.
    pub channels: usize,
    /// Onset as a fraction of the validation length.
    pub onset_fraction: f64,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        InjectionSpec {
            magnitudes: vec![1.0, 2.0, 4.0],
            channels: 2,
            onset_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionGrid {
    pub r_candidates: Vec<usize>,
    pub s_candidates: Vec<usize>,
    pub injection: InjectionSpec,
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for SelectionGrid {
    fn default() -> Self {
        SelectionGrid {
            r_candidates: vec![1, 2, 3],
            s_candidates: vec![1, 2, 3],
            injection: InjectionSpec::default(),
            split_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SelectionGrid {
    pub fn validate(&self) -> Result<()> {
        if self.r_candidates.is_empty() || self.r_candidates.contains(&0) {
            return Err(Error::config("select.r_candidates", "must be nonempty positive counts"));
        }
        if self.s_candidates.is_empty() || self.s_candidates.contains(&0) {
            return Err(Error::config("select.s_candidates", "must be nonempty positive counts"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::config("select.split_fraction", "must lie in (0, 1)"));
        }
        let inj = &self.injection;
        if inj.magnitudes.is_empty() || inj.magnitudes.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("select.magnitudes", "must be nonempty finite values"));
        }
        if inj.channels == 0 {
            return Err(Error::config("select.channels", "must be at least 1"));
        }
        if !(inj.onset_fraction > 0.0 && inj.onset_fraction < 1.0) {
            return Err(Error::config("select.onset_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// One injected validation copy: a step of `magnitude` channel standard
/// deviations on each of `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub magnitude: f64,
    pub channels: Vec<usize>,
}

/// One scenario per magnitude, each on its own random channel subset.
pub fn draw_scenarios(m: usize, spec: &InjectionSpec, seed: u64) -> Vec<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.magnitudes
        .iter()
        .map(|&magnitude| {
            let mut channels = sample(&mut rng, m, spec.channels.min(m)).into_vec();
            channels.sort_unstable();
            Scenario {
                magnitude,
                channels,
            }
        })
        .collect()
}

/// Adds `magnitude * sd[c]` to every channel `c` of the scenario from row
/// `onset` on.
pub fn inject_steps(validation: &DMatrix<f64>, sd: &[f64], scenario: &Scenario, onset: usize) -> DMatrix<f64> {
    let mut out = validation.clone();
    for &c in &scenario.channels {
        let offset = scenario.magnitude * sd[c];
        for k in onset..out.nrows() {
            out[(k, c)] += offset;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub r: usize,
    pub s: usize,
    pub fdr: f64,
    pub far: f64,
    /// Training log-likelihood of the fitted model.
    pub loglik: f64,
    pub train_seconds: f64,
}

impl ScoreRow {
    pub fn criterion(&self) -> f64 {
        self.fdr - self.far
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub r: usize,
    pub s: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub r: usize,
    pub s: usize,
    pub scoreboard: Vec<ScoreRow>,
    pub skipped: Vec<Skipped>,
    pub scenarios: Vec<Scenario>,
}

pub const SCOREBOARD_HEADER: &str = "r,s,FDR,FAR,loglik,train_seconds";

pub fn scoreboard_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from(SCOREBOARD_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.r, row.s, row.fdr, row.far, row.loglik, row.train_seconds
        ));
    }
    out
}

/// Index of the best row: largest `FDR - FAR`, then smaller `r s`, then
/// smaller `s`.
pub fn best_row(rows: &[ScoreRow]) -> Option<usize> {
    (0..rows.len()).min_by(|&a, &b| {
        let (x, y) = (&rows[a], &rows[b]);
        y.criterion()
            .total_cmp(&x.criterion())
            .then((x.r * x.s).cmp(&(y.r * y.s)))
            .then(x.s.cmp(&y.s))
    })
}

fn evaluate(
    train_rows: &DMatrix<f64>,
    copies: &[DMatrix<f64>],
    onset: usize,
    em: &EmConfig,
    alpha: f64,
    r: usize,
    s: usize,
) -> Result<ScoreRow> {
    let cfg = EmConfig { r, s, ..em.clone() };
    let start = Instant::now();
    let (model, trace) = train(train_rows, &cfg, alpha)?;
    let train_seconds = start.elapsed().as_secs_f64();
    // scoring is causal, so every copy shares the pre-onset records
    let mut fdr_sum = 0.0;
    let mut far = 0.0;
    for (i, copy) in copies.iter().enumerate() {
        let report = model.score(copy)?;
        let (f, a) = detection_rates(&report, 0..onset, onset..copy.nrows())?;
        fdr_sum += f;
        if i == 0 {
            far = a;
        }
    }
    let fdr = fdr_sum / copies.len() as f64;
    Ok(ScoreRow {
        r,
        s,
        fdr,
        far,
        loglik: trace.best_log_likelihood,
        train_seconds,
    })
}

/// Trains and scores every grid pair; pairs run concurrently and are
/// reported in grid order (`r` outer, `s` inner).
pub fn select(raw: &DMatrix<f64>, grid: &SelectionGrid, em: &EmConfig, alpha: f64) -> Result<Selection> {
    grid.validate()?;
    em.validate()?;
    let n = raw.nrows();
    let n_train = (grid.split_fraction * n as f64).floor() as usize;
    let n_valid = n - n_train;
    if n_valid < MIN_VALIDATION_ROWS {
        return Err(Error::config(
            "data",
            format!("validation split has {n_valid} rows, need at least {MIN_VALIDATION_ROWS}"),
        ));
    }
    let train_rows = raw.rows(0, n_train).clone_owned();
    let sd: Vec<f64> = train_rows
        .column_iter()
        .map(|c| c.variance().sqrt())
        .collect();
    let onset = (grid.injection.onset_fraction * n_valid as f64).floor() as usize;
    let validation = raw.rows(n_train, n_valid).clone_owned();
    let scenarios = draw_scenarios(raw.ncols(), &grid.injection, grid.seed);
    let copies: Vec<DMatrix<f64>> = scenarios
        .iter()
        .map(|sc| inject_steps(&validation, &sd, sc, onset))
        .collect();

    let pairs: Vec<(usize, usize)> = grid
        .r_candidates
        .iter()
        .flat_map(|&r| grid.s_candidates.iter().map(move |&s| (r, s)))
        .collect();
    let results: Vec<Result<ScoreRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = pairs
            .iter()
            .map(|&(r, s)| {
                let (train_rows, copies) = (&train_rows, &copies);
                scope.spawn(move || evaluate(train_rows, copies, onset, em, alpha, r, s))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Numeric("worker panicked".into()))))
            .collect()
    });

    let mut scoreboard = Vec::new();
    let mut skipped = Vec::new();
    for (&(r, s), result) in pairs.iter().zip(results) {
        match result {
            Ok(row) => scoreboard.push(row),
            Err(e) => skipped.push(Skipped {
                r,
                s,
                reason: e.to_string(),
            }),
        }
    }
    let best = best_row(&scoreboard).ok_or_else(|| {
        let reasons: Vec<String> = skipped
            .iter()
            .map(|k| format!("(r={}, s={}): {}", k.r, k.s, k.reason))
            .collect();
        Error::Convergence(format!("no candidate succeeded: {}", reasons.join("; ")))
    })?;
    Ok(Selection {
        r: scoreboard[best].r,
        s: scoreboard[best].s,
        scoreboard,
        skipped,
        scenarios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::{simulate, ModelParams};

    fn row(r: usize, s: usize, fdr: f64, far: f64) -> ScoreRow {
        ScoreRow {
            r,
            s,
            fdr,
            far,
            loglik: 0.0,
            train_seconds: 0.0,
        }
    }

    #[test]
    fn rate_arithmetic() {
        assert!((fdr(9, 1).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(fdr(4, 0).unwrap(), 1.0);
        assert_eq!(fdr(0, 4).unwrap(), 0.0);
        assert!(fdr(0, 0).is_err());
        assert!((far(2, 98).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(far(0, 5).unwrap(), 0.0);
        assert_eq!(far(5, 0).unwrap(), 1.0);
        assert!(far(0, 0).is_err());
    }

    #[test]
    fn best_row_uses_criterion_then_size_then_order() {
        let rows = vec![row(2, 2, 0.75, 0.25), row(1, 3, 0.5, 0.0), row(3, 1, 0.5, 0.0)];
        assert_eq!(best_row(&rows), Some(2));
        let rows = vec![row(2, 2, 0.75, 0.25), row(1, 3, 0.5, 0.0)];
        assert_eq!(best_row(&rows), Some(1));
        let rows = vec![row(2, 2, 0.9, 0.0), row(1, 4, 0.9, 0.0), row(4, 1, 0.9, 0.0)];
        assert_eq!(best_row(&rows), Some(2));
        let rows = vec![row(1, 1, 0.1, 0.0), row(3, 3, 0.95, 0.01)];
        assert_eq!(best_row(&rows), Some(1));
        assert_eq!(best_row(&[]), None);
    }

    #[test]
    fn one_scenario_per_magnitude_with_steps_from_onset() {
        let spec = InjectionSpec::default();
        let scenarios = draw_scenarios(4, &spec, 5);
        assert_eq!(scenarios.len(), 3);
        for (sc, mag) in scenarios.iter().zip([1.0, 2.0, 4.0]) {
            assert_eq!(sc.magnitude, mag);
            assert_eq!(sc.channels.len(), 2);
            assert!(sc.channels[0] < sc.channels[1] && sc.channels[1] < 4);
        }
        assert_eq!(draw_scenarios(4, &spec, 5), scenarios);

        let v = DMatrix::zeros(10, 4);
        let sd = [1.0, 2.0, 3.0, 4.0];
        let out = inject_steps(&v, &sd, &scenarios[2], 6);
        for c in 0..4 {
            let expected = if scenarios[2].channels.contains(&c) { 4.0 * sd[c] } else { 0.0 };
            assert!((0..6).all(|k| out[(k, c)] == 0.0));
            assert!((6..10).all(|k| out[(k, c)] == expected));
        }
    }

    #[test]
    fn grid_validation_names_keys() {
        let grid = SelectionGrid {
            s_candidates: vec![],
            ..SelectionGrid::default()
        };
        assert!(matches!(grid.validate(), Err(Error::Config { key, .. }) if key == "select.s_candidates"));
    }

    #[test]
    fn too_short_validation_split_is_rejected() {
        let raw = DMatrix::from_fn(500, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let res = select(&raw, &SelectionGrid::default(), &EmConfig::default(), 0.99);
        assert!(matches!(res, Err(Error::Config { key, .. }) if key == "data"));
    }

    #[test]
    fn single_pair_grid_and_skips() {
        let truth = ModelParams::random_stable(3, 1, 1, 0.3, 2).unwrap();
        let raw = simulate(&truth, 1500, 4).unwrap().observations;
        let em = EmConfig {
            max_iterations: 4,
            ..EmConfig::default()
        };
        let grid = SelectionGrid {
            r_candidates: vec![1],
            s_candidates: vec![2],
            ..SelectionGrid::default()
        };
        let sel = select(&raw, &grid, &em, 0.99).unwrap();
        assert_eq!((sel.r, sel.s), (1, 2));
        assert_eq!(sel.scoreboard.len(), 1);
        let row = &sel.scoreboard[0];
        assert!((0.0..=1.0).contains(&row.fdr) && (0.0..=1.0).contains(&row.far));

        let grid = SelectionGrid {
            r_candidates: vec![1, 4],
            s_candidates: vec![1],
            ..SelectionGrid::default()
        };
        let sel = select(&raw, &grid, &em, 0.99).unwrap();
        assert_eq!(sel.scoreboard.len(), 1);
        assert_eq!(sel.skipped.len(), 1);
        assert_eq!((sel.skipped[0].r, sel.skipped[0].s), (4, 1));

        let grid = SelectionGrid {
            r_candidates: vec![4],
            s_candidates: vec![1],
            ..SelectionGrid::default()
        };
        assert!(matches!(select(&raw, &grid, &em, 0.99), Err(Error::Convergence(_))));
    }

    #[test]
    fn scoreboard_csv_layout() {
        let csv = scoreboard_csv(&[row(1, 2, 0.5, 0.25)]);
        assert_eq!(csv, "r,s,FDR,FAR,loglik,train_seconds\n1,2,0.5,0.25,0,0\n");
    }
}
