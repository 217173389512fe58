use std::fs;
use std::path::Path;

use super::svg::{self, Series};
use super::{mi_matrix, recon_error_per_level, Histogram, MiMatrix};
use crate::dataset::Dataset;
use crate::error::{config_err, Result};
use crate::model::FeModel;
use crate::system::{linspace, SystemSpec};
use crate::tensor::Tensor;

pub const TRAVERSAL_POINTS: usize = 41;
pub const TRAVERSAL_RANGE: (f64, f64) = (-2.0, 2.0);

/// Latent responses as each factor sweeps the grid with the others held at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Traversal {
    pub grid: Vec<f64>,
    /// One `grid x latents` matrix per factor.
    pub responses: Vec<Tensor>,
}

impl Traversal {
    pub fn n_latents(&self) -> usize {
        self.responses.first().map_or(0, Tensor::cols)
    }

    /// Largest peak-to-peak response of `latent` over all factor sweeps.
    pub fn range(&self, latent: usize) -> f64 {
        self.responses
            .iter()
            .map(|r| {
                let c = r.column(latent);
                c.iter().copied().fold(f64::NEG_INFINITY, f64::max) - c.iter().copied().fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

/// Encode noiseless system outputs along each factor sweep.
pub fn latent_traversals(model: &FeModel, spec: &SystemSpec, points: usize) -> Result<Traversal> {
    if model.config.n_observed != spec.n_outputs {
        return config_err(format!(
            "model observes {} outputs, system has {}",
            model.config.n_observed, spec.n_outputs
        ));
    }
    let grid = linspace(TRAVERSAL_RANGE.0, TRAVERSAL_RANGE.1, points);
    let responses =
        (0..spec.n_inputs).map(|j| model.latents(&spec.traversal_curves(j, &grid)?)).collect::<Result<_>>()?;
    Ok(Traversal { grid, responses })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodeHistogram {
    pub level: usize,
    /// `p1`, `p2` or `m`.
    pub kind: String,
    pub std: f64,
    pub hist: Histogram,
}

/// Everything measured for one trained model on held-out data.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub re: Vec<f64>,
    pub mi: MiMatrix,
    pub latents: Tensor,
    pub traversal: Traversal,
    pub histograms: Vec<CodeHistogram>,
    pub config_digest: String,
    pub seed: u64,
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

impl RunReport {
    pub fn build(model: &FeModel, eval: &Dataset, spec: &SystemSpec, seed: u64) -> Result<Self> {
        let out = model.evaluate(&eval.x)?;
        let re = recon_error_per_level(model, eval)?;
        let mi = mi_matrix(&out.latents, &eval.s)?;
        let traversal = latent_traversals(model, spec, TRAVERSAL_POINTS)?;
        let mut histograms = Vec::new();
        // p codes exist from level 1, medians from level 0
        for (kind, codes, first) in [("p1", &out.p1, 1), ("p2", &out.p2, 1), ("m", &out.m, 0)] {
            for (i, t) in codes.iter().enumerate() {
                histograms.push(CodeHistogram {
                    level: i + first,
                    kind: kind.into(),
                    std: super::std_dev(t.data()),
                    hist: Histogram::codes(t.data()),
                });
            }
        }
        Ok(Self { re, mi, latents: out.latents, traversal, histograms, config_digest: model.config.digest(), seed })
    }

    /// Standard deviation of the `kind` codes at each level, in level order.
    pub fn code_std(&self, kind: &str) -> Vec<f64> {
        self.histograms.iter().filter(|h| h.kind == kind).map(|h| h.std).collect()
    }

    /// Writes every CSV and SVG into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;

        let mut w = csv::Writer::from_path(dir.join("re_curve.csv"))?;
        w.write_record(["level", "re"])?;
        for (i, r) in self.re.iter().enumerate() {
            w.write_record([i.to_string(), fmt(*r)])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("mi_matrix.csv"))?;
        w.write_record(["latent", "factor", "mi_nats", "mi_raw"])?;
        for i in 0..self.mi.raw.rows() {
            for j in 0..self.mi.raw.cols() {
                let raw = self.mi.raw.get(i, j);
                w.write_record([i.to_string(), j.to_string(), fmt(raw.max(0.0)), fmt(raw)])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("traversal.csv"))?;
        w.write_record(["latent", "factor", "grid_value", "latent_response"])?;
        for i in 0..self.traversal.n_latents() {
            for (j, resp) in self.traversal.responses.iter().enumerate() {
                for (g, &v) in self.traversal.grid.iter().enumerate() {
                    w.write_record([i.to_string(), j.to_string(), fmt(v), fmt(resp.get(g, i))])?;
                }
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("histogram.csv"))?;
        w.write_record(["level", "code_kind", "bin_left", "count"])?;
        for h in &self.histograms {
            for (b, c) in h.hist.counts.iter().enumerate() {
                w.write_record([h.level.to_string(), h.kind.clone(), fmt(h.hist.bin_left(b)), c.to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("latents.csv"))?;
        w.write_record((0..self.latents.cols()).map(|i| format!("L{i}")))?;
        for r in 0..self.latents.rows() {
            w.write_record(self.latents.row(r).iter().map(|&v| fmt(v)))?;
        }
        w.flush()?;

        for (name, body) in self.svgs() {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    fn svgs(&self) -> Vec<(&'static str, String)> {
        let re =
            Series { label: "RE".into(), points: self.re.iter().enumerate().map(|(i, &r)| (i as f64, r)).collect() };
        let labels = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let traversal: Vec<(String, Vec<Series>)> = (0..self.traversal.n_latents())
            .map(|i| {
                let series = self
                    .traversal
                    .responses
                    .iter()
                    .enumerate()
                    .map(|(j, resp)| Series {
                        label: format!("S{j}"),
                        points: self.traversal.grid.iter().enumerate().map(|(g, &v)| (v, resp.get(g, i))).collect(),
                    })
                    .collect();
                (format!("L{i}"), series)
            })
            .collect();
        let hist: Vec<(String, Vec<Series>)> = ["p1", "p2", "m"]
            .iter()
            .map(|&kind| {
                let series = self
                    .histograms
                    .iter()
                    .filter(|h| h.kind == kind)
                    .map(|h| Series {
                        label: format!("{kind} level {}", h.level),
                        points: h
                            .hist
                            .counts
                            .iter()
                            .enumerate()
                            .map(|(b, &c)| (h.hist.bin_left(b), c as f64))
                            .collect(),
                    })
                    .collect();
                (kind.to_string(), series)
            })
            .collect();
        vec![
            ("re_curve.svg", svg::line_chart("reconstruction error per level", &[re])),
            (
                "mi_matrix.svg",
                svg::heatmap(
                    "mutual information (nats)",
                    &self.mi.rows(),
                    &labels("L", self.mi.raw.rows()),
                    &labels("S", self.mi.raw.cols()),
                ),
            ),
            ("traversal.svg", svg::small_multiples(&traversal, 3)),
            ("histogram.svg", svg::small_multiples(&hist, 3)),
        ]
    }
}
