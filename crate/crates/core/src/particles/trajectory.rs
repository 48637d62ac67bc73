//! Driver, observation record and density estimator.

use std::io;

use serde::{Deserialize, Serialize};

use crate::domain::InitialCondition;

use super::{Annihilation, ParticleEngine, ParticleEnsemble, ParticleError};

/// Counts per bin divided by the bin width, for radii `[0, n_bins · width)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

impl Histogram {
    pub fn scaled(mut self, k: f64) -> Self {
        self.plus
            .iter_mut()
            .chain(self.minus.iter_mut())
            .for_each(|v| *v *= k);
        self
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.bin_width
    }
}

/// Histogram of radii `r = |x - b|` measured from the current boundary.
pub fn empirical_density(e: &ParticleEnsemble, bin_width: f64, n_bins: usize) -> Histogram {
    assert!(bin_width > 0.0, "bin width must be positive");
    let b = e.b();
    let fill = |radii: &mut dyn Iterator<Item = f64>| {
        let mut h = vec![0.0; n_bins];
        for r in radii {
            if r >= 0.0 {
                let i = (r / bin_width) as usize;
                if i < n_bins {
                    h[i] += 1.0 / bin_width;
                }
            }
        }
        h
    };
    Histogram {
        bin_width,
        plus: fill(&mut e.plus_positions().into_iter().map(|x| x - b)),
        minus: fill(&mut e.minus_positions().into_iter().map(|x| b - x)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Record `b` and counts every this many steps (0 disables).
    #[serde(default = "one")]
    pub sample_every: usize,
    /// Density snapshots every this many steps (0 disables; the final state
    /// is always recorded).
    #[serde(default)]
    pub density_every: usize,
    #[serde(default = "default_bin")]
    pub bin_width: f64,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub replica: u64,
}

fn one() -> usize {
    1
}

fn default_bin() -> f64 {
    0.1
}

fn default_bins() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySnapshot {
    pub t: f64,
    pub b: f64,
    /// Densities in mass units (counts / N).
    pub density: Histogram,
}

/// Interval without sellers; `end` is `None` while it lasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmptyPlusEpisode {
    pub start: f64,
    pub end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrajectory {
    pub times: Vec<f64>,
    pub b: Vec<f64>,
    pub n_plus: Vec<usize>,
    pub n_minus: Vec<usize>,
    pub annihilations: Vec<Annihilation>,
    pub snapshots: Vec<DensitySnapshot>,
    pub empty_plus: Vec<EmptyPlusEpisode>,
    /// Time at which the run stopped because sellers can never return.
    pub terminated_at: Option<f64>,
}

impl SimTrajectory {
    pub fn final_snapshot(&self) -> Option<&DensitySnapshot> {
        self.snapshots.last()
    }

    /// Writes `t,b,n_plus,n_minus`.
    pub fn write_path_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "b", "n_plus", "n_minus"])?;
        for i in 0..self.times.len() {
            w.serialize((self.times[i], self.b[i], self.n_plus[i], self.n_minus[i]))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `t,x`.
    pub fn write_annihilations_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x"])?;
        for a in &self.annihilations {
            w.serialize((a.t, a.x))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `t,phase,r_bin,density` with `r_bin` the bin centre.
    pub fn write_density_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "phase", "r_bin", "density"])?;
        for s in &self.snapshots {
            for (phase, h) in [("plus", &s.density.plus), ("minus", &s.density.minus)] {
                for (i, v) in h.iter().enumerate() {
                    w.serialize((s.t, phase, s.density.bin_center(i), v))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one replica from Poisson initial clouds. Deterministic in
/// `(seed, replica)`.
pub fn run_particles(
    engine: &ParticleEngine,
    init: &InitialCondition,
    cfg: &RunConfig,
) -> Result<SimTrajectory, ParticleError> {
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        return Err(ParticleError::BadTimeStep(cfg.dt));
    }
    let mut e = ParticleEnsemble::from_initial(
        engine.params(),
        init,
        engine.n_scale(),
        cfg.seed,
        cfg.replica,
    )?;
    let weight = 1.0 / engine.n_scale();
    let mut tr = SimTrajectory {
        times: Vec::new(),
        b: Vec::new(),
        n_plus: Vec::new(),
        n_minus: Vec::new(),
        annihilations: Vec::new(),
        snapshots: Vec::new(),
        empty_plus: Vec::new(),
        terminated_at: None,
    };
    let record = |tr: &mut SimTrajectory, e: &ParticleEnsemble| {
        tr.times.push(e.t());
        tr.b.push(e.b());
        tr.n_plus.push(e.n_plus());
        tr.n_minus.push(e.n_minus());
    };
    let snapshot = |tr: &mut SimTrajectory, e: &ParticleEnsemble| {
        if tr.snapshots.last().is_some_and(|s| s.t == e.t()) {
            return;
        }
        tr.snapshots.push(DensitySnapshot {
            t: e.t(),
            b: e.b(),
            density: empirical_density(e, cfg.bin_width, cfg.n_bins).scaled(weight),
        });
    };
    record(&mut tr, &e);
    let n_steps = (cfg.t_end / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let h = if n_steps > 0 {
        cfg.t_end / n_steps as f64
    } else {
        cfg.dt
    };
    let mut empty = e.n_plus() == 0;
    if empty {
        tr.empty_plus.push(EmptyPlusEpisode {
            start: 0.0,
            end: None,
        });
        if engine.plus_extinction_is_final() {
            tr.terminated_at = Some(0.0);
        }
    }
    if tr.terminated_at.is_none() {
        for k in 1..=n_steps {
            let c = engine.step(&mut e, h, &mut tr.annihilations)?;
            if c.empty_plus && !empty {
                tr.empty_plus.push(EmptyPlusEpisode {
                    start: e.t(),
                    end: None,
                });
            } else if !c.empty_plus && empty {
                if let Some(ep) = tr.empty_plus.last_mut() {
                    ep.end = Some(e.t());
                }
            }
            empty = c.empty_plus;
            if cfg.sample_every > 0 && k % cfg.sample_every == 0 {
                record(&mut tr, &e);
            }
            if cfg.density_every > 0 && k % cfg.density_every == 0 {
                snapshot(&mut tr, &e);
            }
            if empty && engine.plus_extinction_is_final() {
                tr.terminated_at = Some(e.t());
                break;
            }
        }
    }
    if tr.times.last() != Some(&e.t()) {
        record(&mut tr, &e);
    }
    snapshot(&mut tr, &e);
    Ok(tr)
}
