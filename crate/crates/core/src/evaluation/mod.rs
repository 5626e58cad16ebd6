//! Estimated-age fidelity, identity preservation and aging strips, measured
//! through a pluggable [`VerifierClient`].

mod client;
pub mod metrics;
mod oracle;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{normalize_age, DatasetStats, LabeledSample};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::networks::Generator;

pub use client::{ask, CachedClient, ClientFactory, ClientRegistry, VerifierClient};
pub use oracle::ToyOracle;

/// Threshold (percent) at which a verification pair counts as positive.
pub const VERIFICATION_THRESHOLD: f64 = 73.795;

/// Attempts per client query before the answer is recorded as missing.
pub const CLIENT_ATTEMPTS: usize = 3;

/// Images translated per forward pass during evaluation.
const EVAL_CHUNK: usize = 32;

/// A target age group. `lower` is the smallest age that belongs to the group
/// when classifying source images; `target` is the age fed to the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGroup {
    pub label: String,
    pub lower: f64,
    pub target: f64,
}

/// 21-30, 31-40, 41-50 and 50+, targeted at their midpoints (60 for 50+).
pub fn default_groups() -> Vec<AgeGroup> {
    [("21-30", 21.0, 25.5), ("31-40", 31.0, 35.5), ("41-50", 41.0, 45.5), ("50+", 51.0, 60.0)]
        .into_iter()
        .map(|(label, lower, target)| AgeGroup { label: label.into(), lower, target })
        .collect()
}

/// Index of the group an age belongs to: the last group whose lower bound
/// does not exceed it. Ages below every bound fall into the first group.
pub fn source_group(groups: &[AgeGroup], age: f64) -> usize {
    groups.iter().rposition(|g| g.lower <= age).unwrap_or(0)
}

/// `from, from + step, ...` up to and including `to` (within rounding).
pub fn strip_ages(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(to >= from) {
        return Err(Error::NonIncreasingAges);
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| from + step * i as f64).collect())
}

/// Translates `x` to every age in `ages` from a single encoding.
pub fn generate_aging_strip(
    generator: &Generator,
    x: &ImageTensor,
    ages: &[f64],
    stats: &DatasetStats,
) -> Result<Vec<ImageTensor>> {
    if ages.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::NonIncreasingAges);
    }
    let normalized = ages.iter().map(|&a| normalize_age(a, stats)).collect::<Result<Vec<_>>>()?;
    generator.translate_sequence(x, &normalized)
}

fn translate_all(
    generator: &Generator,
    images: &[ImageTensor],
    ages: &[f64],
    stats: &DatasetStats,
) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::with_capacity(images.len());
    for (imgs, ages) in images.chunks(EVAL_CHUNK).zip(ages.chunks(EVAL_CHUNK)) {
        let norm = ages.iter().map(|&a| normalize_age(a, stats)).collect::<Result<Vec<_>>>()?;
        out.extend(generator.translate(imgs, &norm)?);
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"))
}

/// One translated image scored by the client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgeRecord {
    pub sample: usize,
    /// `Some(g)` for a group-midpoint translation, `None` for a uniformly
    /// sampled exact age.
    pub group: Option<usize>,
    pub target: f64,
    pub estimated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAge {
    pub label: String,
    pub target: f64,
    pub mean_estimated: Option<f64>,
    pub mean_absolute_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgeEvalReport {
    pub groups: Vec<GroupAge>,
    /// Over the uniformly sampled exact-age translations.
    pub mean_absolute_error: Option<f64>,
    pub records: Vec<AgeRecord>,
    /// Queries that failed after retries or were rejected by the client.
    pub missing: usize,
}

impl AgeEvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let labels: Vec<&str> = self.groups.iter().map(|g| g.label.as_str()).collect();
        let _ = writeln!(s, "{:<24}{}", "Age group", labels.iter().map(|l| format!("{l:>10}")).collect::<String>());
        let row = |name: &str, f: &dyn Fn(&GroupAge) -> Option<f64>| {
            format!("{name:<24}{}", self.groups.iter().map(|g| format!("{:>10}", fmt_opt(f(g)))).collect::<String>())
        };
        let _ = writeln!(s, "{}", row("Target age", &|g| Some(g.target)));
        let _ = writeln!(s, "{}", row("Estimated age", &|g| g.mean_estimated));
        let _ = writeln!(s, "{}", row("Estimated age error", &|g| g.mean_absolute_error));
        let _ = writeln!(s, "Exact-age mean absolute error: {}", fmt_opt(self.mean_absolute_error));
        let _ = writeln!(s, "Missing answers: {}", self.missing);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["sample", "group", "target_age", "estimated_age"]).map_err(io)?;
        for r in &self.records {
            let group = r.group.map_or(String::new(), |g| self.groups[g].label.clone());
            let est = r.estimated.map_or(String::new(), |v| v.to_string());
            w.write_record([r.sample.to_string(), group, r.target.to_string(), est]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Translates every test image to each group's target age and to one
/// uniformly drawn exact age (seeded by `seed`), then asks `client` for the
/// age of each translation.
pub fn evaluate_age_fidelity(
    generator: &Generator,
    test: &[LabeledSample],
    groups: &[AgeGroup],
    client: &dyn VerifierClient,
    stats: &DatasetStats,
    seed: u64,
) -> Result<AgeEvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let images: Vec<ImageTensor> = test.iter().map(|s| s.image.clone()).collect();
    let mut records = Vec::new();
    let mut missing = 0;
    let mut score = |records: &mut Vec<AgeRecord>, group, targets: &[f64]| -> Result<()> {
        for (i, img) in translate_all(generator, &images, targets, stats)?.iter().enumerate() {
            let estimated = ask(CLIENT_ATTEMPTS, || client.estimate_age(img))?;
            missing += estimated.is_none() as usize;
            records.push(AgeRecord { sample: i, group, target: targets[i], estimated });
        }
        Ok(())
    };
    for (g, group) in groups.iter().enumerate() {
        score(&mut records, Some(g), &vec![group.target; images.len()])?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exact: Vec<f64> =
        (0..images.len()).map(|_| stats.age_min + rng.random::<f64>() * (stats.age_max - stats.age_min)).collect();
    score(&mut records, None, &exact)?;

    let abs_err = |r: &AgeRecord| r.estimated.map(|e| (e - r.target).abs());
    let summary = groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let mine: Vec<&AgeRecord> = records.iter().filter(|r| r.group == Some(g)).collect();
            GroupAge {
                label: group.label.clone(),
                target: group.target,
                mean_estimated: mean(mine.iter().filter_map(|r| r.estimated)),
                mean_absolute_error: mean(mine.iter().filter_map(|r| abs_err(r))),
            }
        })
        .collect();
    let mean_absolute_error = mean(records.iter().filter(|r| r.group.is_none()).filter_map(abs_err));
    Ok(AgeEvalReport { groups: summary, mean_absolute_error, records, missing })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationPair {
    pub sample: usize,
    pub source_group: usize,
    pub target_group: usize,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub labels: Vec<String>,
    pub threshold: f64,
    /// Mean confidence indexed `[source group][target group]`.
    pub confidence: Vec<Vec<Option<f64>>>,
    /// Percentage of answered pairs at or above the threshold, per target
    /// group.
    pub rates: Vec<Option<f64>>,
    pub pairs: Vec<VerificationPair>,
    pub missing: usize,
}

/// Share of `confidences` at or above `threshold`, in percent.
pub fn verification_rate(confidences: &[f64], threshold: f64) -> Option<f64> {
    if confidences.is_empty() {
        return None;
    }
    let hits = confidences.iter().filter(|&&c| c >= threshold).count();
    Some(100.0 * hits as f64 / confidences.len() as f64)
}

impl VerificationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let head: String = self.labels.iter().map(|l| format!("{l:>10}")).collect();
        let _ = writeln!(s, "Verification confidence (%)");
        let _ = writeln!(s, "{:<12}{head}", "Age group");
        for (label, row) in self.labels.iter().zip(&self.confidence) {
            let cells: String = row.iter().map(|c| format!("{:>10}", fmt_opt(*c))).collect();
            let _ = writeln!(s, "{label:<12}{cells}");
        }
        let _ = writeln!(s, "Verification rate (%) at threshold {}", self.threshold);
        let cells: String = self.rates.iter().map(|c| format!("{:>10}", fmt_opt(*c))).collect();
        let _ = writeln!(s, "{:<12}{cells}", "Rate");
        let _ = writeln!(s, "Missing answers: {}", self.missing);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["sample", "source_group", "target_group", "confidence", "positive"]).map_err(io)?;
        for p in &self.pairs {
            let (conf, pos) = match p.confidence {
                Some(c) => (c.to_string(), (c >= self.threshold).to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                p.sample.to_string(),
                self.labels[p.source_group].clone(),
                self.labels[p.target_group].clone(),
                conf,
                pos,
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Translates every test image to each group's target age and verifies the
/// translation against its input.
pub fn evaluate_identity_preservation(
    generator: &Generator,
    test: &[LabeledSample],
    groups: &[AgeGroup],
    client: &dyn VerifierClient,
    threshold: f64,
    stats: &DatasetStats,
) -> Result<VerificationReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let images: Vec<ImageTensor> = test.iter().map(|s| s.image.clone()).collect();
    let mut pairs = Vec::new();
    let mut missing = 0;
    for (g, group) in groups.iter().enumerate() {
        let translated = translate_all(generator, &images, &vec![group.target; images.len()], stats)?;
        for (i, out) in translated.iter().enumerate() {
            let confidence = ask(CLIENT_ATTEMPTS, || client.verify(&images[i], out))?;
            missing += confidence.is_none() as usize;
            pairs.push(VerificationPair {
                sample: i,
                source_group: source_group(groups, test[i].age),
                target_group: g,
                confidence,
            });
        }
    }
    let k = groups.len();
    let confidence = (0..k)
        .map(|s| {
            (0..k)
                .map(|t| {
                    mean(
                        pairs
                            .iter()
                            .filter(|p| p.source_group == s && p.target_group == t)
                            .filter_map(|p| p.confidence),
                    )
                })
                .collect()
        })
        .collect();
    let rates = (0..k)
        .map(|t| {
            let c: Vec<f64> = pairs.iter().filter(|p| p.target_group == t).filter_map(|p| p.confidence).collect();
            verification_rate(&c, threshold)
        })
        .collect();
    Ok(VerificationReport {
        labels: groups.iter().map(|g| g.label.clone()).collect(),
        threshold,
        confidence,
        rates,
        pairs,
        missing,
    })
}

/// Confidences between every pair of test images with different
/// identities; the impostor distribution.
pub fn cross_identity_confidences(test: &[LabeledSample], client: &dyn VerifierClient) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, a) in test.iter().enumerate() {
        for b in &test[i + 1..] {
            if a.identity != b.identity {
                if let Some(c) = ask(CLIENT_ATTEMPTS, || client.verify(&a.image, &b.image))? {
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}
