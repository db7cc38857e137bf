//! Versioned `key = value` text serialization of [`TrainedModel`].
//!
//! Reals are written with 17 significant digits, which round-trips every
//! finite `f64` exactly. Vectors are space-separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array1;

use super::{FitDiagnostics, LogisticParams, ModelKind, Posterior, TrainedModel};
use crate::annotators::AnnotatorParams;
use crate::data::ScalingParams;
use crate::error::{Error, Result};

const FORMAT: &str = "lgp-model";
const VERSION: u32 = 1;

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn reals<'a>(v: impl IntoIterator<Item = &'a f64>) -> String {
    v.into_iter().map(|x| real(*x)).collect::<Vec<_>>().join(" ")
}

fn classifier_keys(kind: ModelKind) -> (&'static str, &'static str) {
    match kind {
        ModelKind::Lgp => ("xi", "xi0"),
        ModelKind::Id | ModelKind::MlOriginal => ("alpha", "beta"),
    }
}

impl TrainedModel {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (ck, ik) = classifier_keys(self.kind);
        let diag = &self.diagnostics;
        let _ = writeln!(s, "format = {FORMAT}");
        let _ = writeln!(s, "version = {VERSION}");
        let _ = writeln!(s, "kind = {}", self.kind);
        let _ = writeln!(s, "D = {}", self.dim());
        let _ = writeln!(s, "T = {}", self.num_annotators());
        let _ = writeln!(s, "{ck} = {}", reals(&self.classifier.coef));
        let _ = writeln!(s, "{ik} = {}", real(self.classifier.intercept));
        for (t, p) in self.annotators.iter().enumerate() {
            let _ = writeln!(s, "w.{t} = {}", reals(&p.w));
            let _ = writeln!(s, "gamma.{t} = {}", real(p.gamma));
        }
        let _ = writeln!(s, "scaling.mean = {}", reals(&self.scaling.mean));
        let _ = writeln!(s, "scaling.std = {}", reals(&self.scaling.std));
        let _ = writeln!(s, "eta = {}", real(self.eta));
        let _ = writeln!(s, "bandwidth = {}", self.bandwidth.map_or_else(|| "none".into(), real));
        let _ = writeln!(s, "sigma_min = {}", real(self.sigma_min));
        let _ = writeln!(s, "iterations = {}", diag.iterations);
        let _ = writeln!(s, "final_objective = {}", real(diag.final_objective));
        let _ = writeln!(s, "converged = {}", diag.converged);
        let _ = writeln!(s, "monotone = {}", diag.monotone);
        let _ = writeln!(s, "objective_history = {}", reals(&diag.objective_history));
        let _ = writeln!(s, "posterior = {}", reals(&self.posterior.p1));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = Fields::parse(text)?;
        let format = fields.take("format")?;
        if format != FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format {format:?}")));
        }
        let version: u32 = fields.parsed("version")?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let kind: ModelKind = fields.take("kind")?.parse().map_err(|e: Error| Error::ModelFormat(e.to_string()))?;
        let d: usize = fields.parsed("D")?;
        let t: usize = fields.parsed("T")?;
        let (ck, ik) = classifier_keys(kind);
        let classifier = LogisticParams {
            coef: fields.vector(ck, Some(d))?,
            intercept: fields.scalar(ik)?,
        };
        let annotators = (0..t)
            .map(|a| {
                Ok(AnnotatorParams {
                    w: fields.vector(&format!("w.{a}"), Some(d))?,
                    gamma: fields.scalar(&format!("gamma.{a}"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scaling = ScalingParams {
            mean: fields.vector("scaling.mean", Some(d))?,
            std: fields.vector("scaling.std", Some(d))?,
        };
        let eta = fields.scalar("eta")?;
        let bandwidth = match fields.take("bandwidth")?.as_str() {
            "none" => None,
            v => Some(parse_real("bandwidth", v)?),
        };
        let sigma_min = fields.scalar("sigma_min")?;
        let diagnostics = FitDiagnostics {
            iterations: fields.parsed("iterations")?,
            final_objective: fields.scalar("final_objective")?,
            converged: fields.parsed("converged")?,
            monotone: fields.parsed("monotone")?,
            objective_history: fields.vector("objective_history", None)?.to_vec(),
        };
        let posterior = Posterior {
            p1: fields.vector("posterior", None)?.to_vec(),
        };
        fields.finish()?;
        Ok(Self {
            kind,
            classifier,
            annotators,
            posterior,
            scaling,
            eta,
            bandwidth,
            sigma_min,
            diagnostics,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_real(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|e| Error::ModelFormat(format!("{key}: cannot parse {v:?}: {e}")))
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ModelFormat(format!("line {}: expected `key = value`", n + 1)))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::ModelFormat(format!("line {}: duplicate key {:?}", n + 1, k.trim())));
            }
        }
        Ok(Self(map))
    }

    fn take(&mut self, key: &str) -> Result<String> {
        self.0
            .remove(key)
            .ok_or_else(|| Error::ModelFormat(format!("missing field {key:?}")))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.take(key)?;
        v.parse()
            .map_err(|e| Error::ModelFormat(format!("{key}: cannot parse {v:?}: {e}")))
    }

    fn scalar(&mut self, key: &str) -> Result<f64> {
        let v = self.take(key)?;
        parse_real(key, &v)
    }

    fn vector(&mut self, key: &str, len: Option<usize>) -> Result<Array1<f64>> {
        let v = self.take(key)?;
        let values = v
            .split_whitespace()
            .map(|s| parse_real(key, s))
            .collect::<Result<Vec<_>>>()?;
        if let Some(len) = len {
            if values.len() != len {
                return Err(Error::ModelFormat(format!("{key}: expected {len} values, found {}", values.len())));
            }
        }
        Ok(Array1::from(values))
    }

    fn finish(self) -> Result<()> {
        match self.0.keys().next() {
            Some(k) => Err(Error::ModelFormat(format!("unknown field {k:?}"))),
            None => Ok(()),
        }
    }
}
