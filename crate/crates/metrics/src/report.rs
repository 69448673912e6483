use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emeasure::e_parts;
use crate::error::{MetricError, Result};
use crate::fmeasure::{f_parts, mean_max, PrCurve};
use crate::mae::mae;
use crate::map::{BinaryMask, ScoreMap};
use crate::smeasure::{s_measure, DEFAULT_ALPHA};
use crate::sweep::NUM_THRESHOLDS;
use crate::weighted::weighted_f;

/// The six metrics with their threshold variants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub s_measure: f64,
    pub weighted_f: f64,
    pub f_adaptive: f64,
    pub f_mean: f64,
    pub f_max: f64,
    pub e_adaptive: f64,
    pub e_mean: f64,
    pub e_max: f64,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub name: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub aggregate: Scores,
    pub per_image: Vec<ImageScores>,
}

/// Per-image scores and the curves that dataset aggregation averages.
struct ImageEval {
    scores: Scores,
    pr: PrCurve,
    e_curve: Vec<f64>,
}

fn evaluate_image(c: &ScoreMap, g: &BinaryMask) -> Result<ImageEval> {
    let (f_adaptive, pr) = f_parts(c, g)?;
    let (f_mean, f_max) = pr.reduce();
    let (e_adaptive, e_curve) = e_parts(c, g)?;
    let (e_mean, e_max) = mean_max(&e_curve);
    Ok(ImageEval {
        scores: Scores {
            s_measure: s_measure(c, g, DEFAULT_ALPHA)?,
            weighted_f: weighted_f(c, g)?,
            f_adaptive,
            f_mean,
            f_max,
            e_adaptive,
            e_mean,
            e_max,
            mae: mae(c, g)?,
        },
        pr,
        e_curve,
    })
}

/// Every metric of one pair.
pub fn evaluate(c: &ScoreMap, g: &BinaryMask) -> Result<Scores> {
    Ok(evaluate_image(c, g)?.scores)
}

/// Per-image metrics and dataset aggregates. S, weighted F, adaptive F,
/// adaptive E and MAE are means of per-image values. For the swept
/// variants, precision and recall (and E) are averaged across images at
/// each threshold before taking the mean and max over thresholds.
///
/// Images are scored in parallel; every reduction runs in input order.
/// Images are named by their index; see [`evaluate_named`].
pub fn evaluate_dataset(pairs: &[(ScoreMap, BinaryMask)]) -> Result<MetricReport> {
    let names: Vec<String> = (0..pairs.len()).map(|i| i.to_string()).collect();
    evaluate_named(pairs, &names)
}

pub fn evaluate_named(pairs: &[(ScoreMap, BinaryMask)], names: &[String]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    if names.len() != pairs.len() {
        return Err(MetricError::InvalidMap(format!(
            "{} names for {} images",
            names.len(),
            pairs.len()
        )));
    }
    let evals = pairs
        .par_iter()
        .map(|(c, g)| evaluate_image(c, g))
        .collect::<Result<Vec<_>>>()?;
    let n = evals.len() as f64;
    let mean_of = |f: fn(&ImageEval) -> f64| evals.iter().map(f).sum::<f64>() / n;
    let curve_mean = |f: &dyn Fn(&ImageEval, usize) -> f64| -> Vec<f64> {
        (0..NUM_THRESHOLDS)
            .map(|k| evals.iter().map(|e| f(e, k)).sum::<f64>() / n)
            .collect()
    };
    let pr = PrCurve {
        precision: curve_mean(&|e, k| e.pr.precision[k]),
        recall: curve_mean(&|e, k| e.pr.recall[k]),
    };
    let (f_mean, f_max) = pr.reduce();
    let (e_mean, e_max) = mean_max(&curve_mean(&|e, k| e.e_curve[k]));
    let aggregate = Scores {
        s_measure: mean_of(|e| e.scores.s_measure),
        weighted_f: mean_of(|e| e.scores.weighted_f),
        f_adaptive: mean_of(|e| e.scores.f_adaptive),
        f_mean,
        f_max,
        e_adaptive: mean_of(|e| e.scores.e_adaptive),
        e_mean,
        e_max,
        mae: mean_of(|e| e.scores.mae),
    };
    let per_image = evals
        .into_iter()
        .zip(names)
        .map(|(e, name)| ImageScores {
            name: name.clone(),
            scores: e.scores,
        })
        .collect();
    Ok(MetricReport { aggregate, per_image })
}

/// Name of the CSV row holding the dataset aggregate.
pub const AGGREGATE_ROW: &str = "AGGREGATE";

/// Flat CSV record; the csv crate cannot write flattened structs.
#[derive(Serialize, Deserialize)]
struct CsvRow {
    name: String,
    s_measure: f64,
    weighted_f: f64,
    f_adaptive: f64,
    f_mean: f64,
    f_max: f64,
    e_adaptive: f64,
    e_mean: f64,
    e_max: f64,
    mae: f64,
}

impl CsvRow {
    fn new(name: &str, s: &Scores) -> Self {
        Self {
            name: name.to_string(),
            s_measure: s.s_measure,
            weighted_f: s.weighted_f,
            f_adaptive: s.f_adaptive,
            f_mean: s.f_mean,
            f_max: s.f_max,
            e_adaptive: s.e_adaptive,
            e_mean: s.e_mean,
            e_max: s.e_max,
            mae: s.mae,
        }
    }

    fn into_image(self) -> ImageScores {
        ImageScores {
            name: self.name,
            scores: Scores {
                s_measure: self.s_measure,
                weighted_f: self.weighted_f,
                f_adaptive: self.f_adaptive,
                f_mean: self.f_mean,
                f_max: self.f_max,
                e_adaptive: self.e_adaptive,
                e_mean: self.e_mean,
                e_max: self.e_max,
                mae: self.mae,
            },
        }
    }
}

impl MetricReport {
    /// One row per image, then the aggregate row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.per_image {
            w.serialize(CsvRow::new(&row.name, &row.scores))?;
        }
        w.serialize(CsvRow::new(AGGREGATE_ROW, &self.aggregate))?;
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads back a CSV written by [`MetricReport::write_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<ImageScores> = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .map(|r| r.map(CsvRow::into_image))
            .collect::<std::result::Result<_, _>>()?;
        match rows.pop() {
            Some(last) if last.name == AGGREGATE_ROW => Ok(Self {
                aggregate: last.scores,
                per_image: rows,
            }),
            _ => Err(MetricError::InvalidMap("CSV report lacks the aggregate row".into())),
        }
    }

    /// Writes JSON when the extension is `json`, CSV otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            std::fs::write(path, self.to_json()? + "\n")?;
        } else {
            self.write_csv(std::fs::File::create(path)?)?;
        }
        Ok(())
    }
}
