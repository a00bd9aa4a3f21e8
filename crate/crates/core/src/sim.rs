//! Monte Carlo estimation of levels and powers on the normal4 model.
//!
//! Every (n, ρ0, ρ) cell draws its replications from substreams keyed by the
//! seed and the cell, so a cell yields the same draws whichever table it is
//! part of, and all statistics within a cell see the same samples.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::asymptotics::{clrt_spectrum, composite_null_spectrum, constrained_blocks, godambe};
use crate::error::{Error, Result};
use crate::normal4::{rho_hat, Normal4, Normal4Params, Normal4Sampler, Statistic, RHO_INDEX};
use crate::rng;
use crate::wchisq::weighted_chisq_quantile;
use crate::CompositeModel;

/// χ²₁ upper 5% point used by the published tables.
pub const CHISQ1_95: f64 = 3.841458820694124;
pub const DALE_EPSILON: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Critical {
    /// Upper α point of χ² with the given degrees of freedom.
    FixedChiSq { dof: f64 },
    /// A fixed threshold; +∞ never rejects.
    Fixed(f64),
    /// Upper α point of the weighted χ² law, recomputed for each replication
    /// from the model's H and J at the restricted estimate.
    AsymptoticSpectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: String,
    pub statistics: Vec<Statistic>,
    pub rho0: f64,
    pub rho_true: f64,
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub critical: Critical,
    /// Largest tolerated fraction of failed replications.
    pub failure_budget: f64,
    /// Drop failed replications from the denominator instead of counting them
    /// as non-rejections.
    pub exclude_failures: bool,
}

impl SimConfig {
    pub fn new(statistics: Vec<Statistic>, n: usize, rho0: f64, rho_true: f64, reps: usize, seed: u64) -> Self {
        Self {
            model: "normal4".into(),
            statistics,
            rho0,
            rho_true,
            n,
            reps,
            alpha: 0.05,
            seed,
            critical: Critical::FixedChiSq { dof: 1.0 },
            failure_budget: 0.001,
            exclude_failures: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.model != "normal4" {
            return Err(Error::UnknownModel(self.model.clone()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidProbability(self.alpha));
        }
        if self.n < 2 {
            return Err(Error::TooFewObservations { needed: 2, got: self.n });
        }
        if self.statistics.is_empty() || self.statistics.len() > 64 {
            return Err(Error::InvalidConfig("between 1 and 64 statistics per cell".into()));
        }
        if !(self.rho0.abs() < 1.0) {
            return Err(Error::InadmissibleRho(self.rho0));
        }
        Ok(())
    }

    fn cell_key(&self) -> u64 {
        rng::combine(
            self.seed,
            &[self.n as u64, self.rho0.to_bits(), self.rho_true.to_bits()],
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub statistic: Statistic,
    pub n: usize,
    pub rho0: f64,
    pub rho_true: f64,
    /// Replications in the denominator.
    pub reps: usize,
    pub rejections: usize,
    pub failed: usize,
    pub rate: f64,
    pub se: f64,
    pub dale_pass: Option<bool>,
    pub rel_eff: Option<f64>,
    pub error: Option<String>,
}

impl SimRow {
    pub fn is_level(&self) -> bool {
        self.rho0 == self.rho_true
    }

    fn failed_cell(statistic: Statistic, cfg: &SimConfig, err: &Error) -> Self {
        Self {
            statistic,
            n: cfg.n,
            rho0: cfg.rho0,
            rho_true: cfg.rho_true,
            reps: cfg.reps,
            rejections: 0,
            failed: cfg.reps,
            rate: f64::NAN,
            se: f64::NAN,
            dale_pass: None,
            rel_eff: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTable {
    pub label: String,
    pub rows: Vec<SimRow>,
}

pub const CSV_HEADER: &str = "statistic,lambda_or_r,n,rho0,rho_true,rate,se,dale_pass,rel_eff";

/// Rounds to six significant digits and prints the shortest exact form.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("valid float");
    format!("{rounded}")
}

impl SimTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.statistic.kind(),
                r.statistic.index().map(sig6).unwrap_or_default(),
                r.n,
                sig6(r.rho0),
                sig6(r.rho_true),
                sig6(r.rate),
                sig6(r.se),
                r.dale_pass.map(|b| b.to_string()).unwrap_or_default(),
                r.rel_eff.map(sig6).unwrap_or_default(),
            );
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    pub fn find(&self, statistic: Statistic, n: usize, rho0: f64, rho_true: f64) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.statistic == statistic && r.n == n && r.rho0 == rho0 && r.rho_true == rho_true)
    }

    pub fn errors(&self) -> impl Iterator<Item = &SimRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

/// Per-replication critical values for the spectrum-calibrated mode.
fn spectrum_critical(statistic: Statistic, rho0: f64, alpha: f64) -> Result<f64> {
    let model = Normal4::new();
    let theta = [0.0, 0.0, 0.0, 0.0, rho0];
    let h = model.sensitivity(&theta).ok_or(Error::InadmissibleRho(rho0))?;
    let j = model.variability(&theta).ok_or(Error::InadmissibleRho(rho0))?;
    let mut g = DMatrix::zeros(5, 1);
    g[(RHO_INDEX, 0)] = 1.0;
    let bundle = godambe(&h, &j)?;
    let blocks = constrained_blocks(&h, &g)?;
    let spectrum = match statistic {
        Statistic::Clrt => clrt_spectrum(&h, &g, &blocks.q, &bundle.g_star)?,
        _ => composite_null_spectrum(&j, &g, &blocks.q, &bundle.g_star)?,
    };
    weighted_chisq_quantile(spectrum.retained(), 1.0 - alpha)
}

/// Rejection rates for every statistic of one cell.
pub fn estimate_rate(cfg: &SimConfig) -> Result<Vec<SimRow>> {
    cfg.validate()?;
    let params = Normal4Params::new([0.0; 4], cfg.rho_true)?;
    let sampler = Normal4Sampler::new(&params)?;
    let fixed: Option<Vec<f64>> = match cfg.critical {
        Critical::FixedChiSq { dof } => {
            let chi = ChiSquared::new(dof).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Some(vec![chi.inverse_cdf(1.0 - cfg.alpha); cfg.statistics.len()])
        }
        Critical::Fixed(v) => Some(vec![v; cfg.statistics.len()]),
        Critical::AsymptoticSpectrum => None,
    };
    let key = cfg.cell_key();
    let k = cfg.statistics.len();

    let (counts, failed) = (0..cfg.reps as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, rep| -> Option<u64> {
            let mut rng = rng::substream(key, rep);
            let stats = sampler.stats(cfg.n, &mut rng, buf).ok()?;
            let est = rho_hat(&stats);
            if est.clipped {
                return None;
            }
            let mut mask = 0u64;
            for (i, s) in cfg.statistics.iter().enumerate() {
                let t = s.evaluate(&stats, est.rho, cfg.rho0).ok()?;
                if t.is_nan() {
                    return None;
                }
                let crit = match &fixed {
                    Some(c) => c[i],
                    None => spectrum_critical(*s, cfg.rho0, cfg.alpha).ok()?,
                };
                if t > crit {
                    mask |= 1 << i;
                }
            }
            Some(mask)
        })
        .fold(
            || (vec![0usize; k], 0usize),
            |(mut counts, mut failed), m| {
                match m {
                    Some(mask) => {
                        for (i, c) in counts.iter_mut().enumerate() {
                            *c += ((mask >> i) & 1) as usize;
                        }
                    }
                    None => failed += 1,
                }
                (counts, failed)
            },
        )
        .reduce(
            || (vec![0usize; k], 0usize),
            |(a, fa), (b, fb)| (a.iter().zip(&b).map(|(x, y)| x + y).collect(), fa + fb),
        );

    if failed as f64 > cfg.failure_budget * cfg.reps as f64 && !cfg.exclude_failures {
        return Err(Error::ReplicationFailures {
            failed,
            total: cfg.reps,
        });
    }
    let denom = if cfg.exclude_failures { cfg.reps - failed } else { cfg.reps };
    if denom == 0 {
        return Err(Error::ReplicationFailures {
            failed,
            total: cfg.reps,
        });
    }
    Ok(cfg
        .statistics
        .iter()
        .zip(counts)
        .map(|(s, c)| {
            let rate = c as f64 / denom as f64;
            let level = cfg.rho0 == cfg.rho_true;
            SimRow {
                statistic: *s,
                n: cfg.n,
                rho0: cfg.rho0,
                rho_true: cfg.rho_true,
                reps: denom,
                rejections: c,
                failed,
                rate,
                se: (rate * (1.0 - rate) / denom as f64).sqrt(),
                dale_pass: if level {
                    Some(dale_screen(rate, cfg.alpha, DALE_EPSILON).unwrap_or(false))
                } else {
                    None
                },
                rel_eff: None,
                error: None,
            }
        })
        .collect())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// |logit(1 − rate) − logit(1 − α)| ≤ ε.
pub fn dale_screen(rate: f64, alpha: f64, epsilon: f64) -> Result<bool> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::DegenerateRate(rate));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    Ok((logit(1.0 - rate) - logit(1.0 - alpha)).abs() <= epsilon)
}

/// ((β − α) − (β_C − α_C)) / (β_C − α_C).
pub fn relative_efficiency(beta: f64, alpha: f64, beta_clrt: f64, alpha_clrt: f64) -> Result<f64> {
    let base = beta_clrt - alpha_clrt;
    if !(base > 0.0) {
        return Err(Error::DegenerateBaseline {
            beta: beta_clrt,
            alpha: alpha_clrt,
        });
    }
    Ok(((beta - alpha) - base) / base)
}

/// Grid of cells to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub label: String,
    pub statistics: Vec<Statistic>,
    pub ns: Vec<usize>,
    pub rho0s: Vec<f64>,
    /// Alternatives; `None` gives a level table.
    pub alternatives: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableSpec {
    /// One of the four built-in level and power tables, numbered 1 to 4.
    Builtin(u8),
    Custom(GridSpec),
}

pub fn level_statistics() -> Vec<Statistic> {
    let mut s = vec![Statistic::Clrt];
    s.extend([-1.0, -0.5, 0.0, 2.0 / 3.0, 1.0, 1.5].map(Statistic::CressieRead));
    s
}

impl TableSpec {
    pub fn grid(&self) -> Result<GridSpec> {
        let power_stats = vec![Statistic::Clrt, Statistic::CressieRead(-0.5)];
        match self {
            Self::Custom(g) => Ok(g.clone()),
            Self::Builtin(1) => Ok(GridSpec {
                label: "levels, rho0 in {-0.1, 0.2}".into(),
                statistics: level_statistics(),
                ns: vec![100, 200, 300],
                rho0s: vec![-0.1, 0.2],
                alternatives: None,
            }),
            Self::Builtin(2) => Ok(GridSpec {
                label: "levels, rho0 = 0".into(),
                statistics: level_statistics(),
                ns: vec![50, 100, 200, 300],
                rho0s: vec![0.0],
                alternatives: None,
            }),
            Self::Builtin(3) => Ok(GridSpec {
                label: "powers, rho0 = -0.1".into(),
                statistics: power_stats,
                ns: vec![100, 200, 300],
                rho0s: vec![-0.1],
                alternatives: Some(vec![-0.2, -0.15, 0.0, 0.1]),
            }),
            Self::Builtin(4) => Ok(GridSpec {
                label: "powers, rho0 = 0.2".into(),
                statistics: power_stats,
                ns: vec![100, 200, 300],
                rho0s: vec![0.2],
                alternatives: Some(vec![0.0, 0.15, 0.25, 0.3]),
            }),
            Self::Builtin(id) => Err(Error::InvalidConfig(format!("unknown table {id}; expected 1 to 4"))),
        }
    }
}

/// Runs every cell of a table. Cell failures are recorded on the rows.
pub fn run_table(spec: &TableSpec, reps: usize, seed: u64, alpha: f64) -> Result<SimTable> {
    let grid = spec.grid()?;
    let mut configs = Vec::new();
    for &n in &grid.ns {
        for &rho0 in &grid.rho0s {
            let trues = grid.alternatives.clone().unwrap_or_else(|| vec![rho0]);
            for rho_true in trues {
                let mut cfg = SimConfig::new(grid.statistics.clone(), n, rho0, rho_true, reps, seed);
                cfg.alpha = alpha;
                configs.push(cfg);
            }
        }
    }
    let run = |cfg: &SimConfig| -> Vec<SimRow> {
        estimate_rate(cfg).unwrap_or_else(|e| {
            cfg.statistics
                .iter()
                .map(|s| SimRow::failed_cell(*s, cfg, &e))
                .collect()
        })
    };
    let mut rows: Vec<SimRow> = configs.iter().flat_map(run).collect();

    if grid.alternatives.is_some() && grid.statistics.contains(&Statistic::Clrt) {
        // Level cells at the same (n, ρ0) supply α for the efficiencies.
        for &n in &grid.ns {
            for &rho0 in &grid.rho0s {
                let mut cfg = SimConfig::new(grid.statistics.clone(), n, rho0, rho0, reps, seed);
                cfg.alpha = alpha;
                let levels = run(&cfg);
                let level_of = |s: Statistic| levels.iter().find(|r| r.statistic == s).map(|r| r.rate);
                let Some(alpha_c) = level_of(Statistic::Clrt) else { continue };
                let power_rows: Vec<(usize, f64)> = rows
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.n == n && r.rho0 == rho0 && r.statistic == Statistic::Clrt)
                    .map(|(i, r)| (i, r.rho_true))
                    .collect();
                for (ci, rho_true) in power_rows {
                    let beta_c = rows[ci].rate;
                    for r in rows.iter_mut() {
                        if r.n == n && r.rho0 == rho0 && r.rho_true == rho_true && r.statistic != Statistic::Clrt {
                            if let Some(a) = level_of(r.statistic) {
                                r.rel_eff = relative_efficiency(r.rate, a, beta_c, alpha_c).ok();
                            }
                        }
                    }
                }
            }
        }
    }

    let order = |s: &Statistic| grid.statistics.iter().position(|x| x == s).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        order(&a.statistic)
            .cmp(&order(&b.statistic))
            .then(a.n.cmp(&b.n))
            .then(a.rho0.total_cmp(&b.rho0))
            .then(a.rho_true.total_cmp(&b.rho_true))
    });
    Ok(SimTable {
        label: grid.label,
        rows,
    })
}
