//! Score-stream sources: truncated Gaussian mixtures, exactly calibrated
//! streams, and CSV traces of real local-model outputs.
//!
//! CSV layout: header `f,rdl_label[,true_label][,beta]`, comma separated,
//! decimal point, one round per row. Optional cells may be left empty.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::domain::{grid_cells, Label, Sample, Score};
use crate::error::{Error, Result};

/// Normal draws allowed per sample before the mixture is declared pathological.
pub const REJECTION_BUDGET: usize = 100_000;

/// How the second parameter of each mixture component is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spread {
    #[default]
    StdDev,
    Variance,
}

/// Two-component Gaussian mixture truncated to the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub mean1: f64,
    pub spread1: f64,
    pub mean0: f64,
    pub spread0: f64,
    pub class1_fraction: f64,
    pub spread: Spread,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self::reference()
    }
}

impl MixtureSpec {
    /// Class 1 ~ N(0.9, 0.4), class 0 ~ N(0.3, 2), balanced.
    pub fn reference() -> Self {
        Self {
            mean1: 0.9,
            spread1: 0.4,
            mean0: 0.3,
            spread0: 2.0,
            class1_fraction: 0.5,
            spread: Spread::StdDev,
        }
    }

    fn sd(&self, spread: f64) -> f64 {
        match self.spread {
            Spread::StdDev => spread,
            Spread::Variance => spread.sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.spread0 > 0.0 && self.spread1 > 0.0) {
            return Err(Error::invalid("mixture spreads must be positive"));
        }
        if !(0.0..=1.0).contains(&self.class1_fraction) {
            return Err(Error::invalid(format!(
                "class-1 fraction {} outside [0, 1]",
                self.class1_fraction
            )));
        }
        if !(self.mean0.is_finite() && self.mean1.is_finite()) {
            return Err(Error::invalid("mixture means must be finite"));
        }
        Ok(())
    }
}

/// Distribution over the score grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLaw {
    bits: u8,
    weights: Vec<f64>,
}

impl ScoreLaw {
    pub fn uniform(bits: u8) -> Result<Self> {
        Self::from_weights(bits, vec![1.0; grid_cells(bits) as usize])
    }

    pub fn point_mass(score: Score) -> Self {
        let mut weights = vec![0.0; score.cells() as usize];
        weights[score.index() as usize] = 1.0;
        Self {
            bits: score.bits(),
            weights,
        }
    }

    pub fn from_weights(bits: u8, weights: Vec<f64>) -> Result<Self> {
        Score::new(0, bits)?;
        if weights.len() != grid_cells(bits) as usize {
            return Err(Error::DimensionMismatch {
                expected: grid_cells(bits) as usize,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::invalid(
                "score law weights must be nonnegative with positive total",
            ));
        }
        Ok(Self { bits, weights })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    /// Probability of each grid cell.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Mixture { spec: MixtureSpec, seed: u64 },
    Calibrated { seed: u64 },
    Csv { path: String },
    Resampled { seed: u64 },
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    bits: u8,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, bits: u8, provenance: Provenance) -> Result<Self> {
        Score::new(0, bits)?;
        if let Some(bad) = samples.iter().position(|s| s.score.bits() != bits) {
            return Err(Error::invalid(format!(
                "sample {bad} quantized to {} bits, dataset uses {bits}",
                samples[bad].score.bits()
            )));
        }
        Ok(Self {
            samples,
            bits,
            provenance,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` rounds.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            bits: self.bits,
            provenance: self.provenance.clone(),
        }
    }

    /// `n` rounds drawn uniformly with replacement.
    pub fn resample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| self.samples[rng.random_range(0..self.samples.len())])
            .collect();
        Ok(Dataset {
            samples,
            bits: self.bits,
            provenance: Provenance::Resampled { seed },
        })
    }
}

fn truncated_draw<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> Result<f64> {
    let normal = Normal::new(mean, sd).map_err(|e| Error::invalid(e.to_string()))?;
    for _ in 0..REJECTION_BUDGET {
        let x = normal.sample(rng);
        if x > 0.0 && x < 1.0 {
            return Ok(x);
        }
    }
    Err(Error::RejectionBudget {
        budget: REJECTION_BUDGET,
        mean,
        spread: sd,
    })
}

/// Draws the class from `class1_fraction`, then the raw score from that
/// class's normal by rejection until it lands in (0, 1). The remote label is
/// the drawn class.
pub fn gen_mixture(spec: &MixtureSpec, n: usize, bits: u8, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let class = if rng.random_bool(spec.class1_fraction) {
            Label::One
        } else {
            Label::Zero
        };
        let (mean, spread) = match class {
            Label::One => (spec.mean1, spec.spread1),
            Label::Zero => (spec.mean0, spec.spread0),
        };
        let raw = truncated_draw(&mut rng, mean, spec.sd(spread))?;
        let mut sample = Sample::new(Score::quantize(raw, bits)?, class);
        sample.true_label = Some(class);
        samples.push(sample);
    }
    Dataset::new(samples, bits, Provenance::Mixture { spec: *spec, seed })
}

/// Draws `f` from `law` and the remote label from Bernoulli(`f`), so the
/// stream is calibrated by construction.
pub fn gen_calibrated(law: &ScoreLaw, n: usize, seed: u64) -> Result<Dataset> {
    let bits = law.bits;
    let index = WeightedIndex::new(&law.weights).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let score = Score::new(index.sample(&mut rng) as u32, bits)?;
            let label = if rng.random_bool(score.value()) {
                Label::One
            } else {
                Label::Zero
            };
            Ok(Sample::new(score, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, bits, Provenance::Calibrated { seed })
}

fn parse_label(cell: &str) -> std::result::Result<Label, String> {
    match cell.trim() {
        "0" => Ok(Label::Zero),
        "1" => Ok(Label::One),
        other => Err(format!("label `{other}` is not 0 or 1")),
    }
}

/// Loads a score trace. Scores are quantized to `bits`.
pub fn load_csv(path: impl AsRef<Path>, bits: u8) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), bits)
}

pub fn read_csv<R: io::Read>(reader: R, source: &str, bits: u8) -> Result<Dataset> {
    Score::new(0, bits)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let csv_err = |line: u64, message: String| Error::Csv {
        path: source.to_string(),
        line,
        message,
    };
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    let mut columns = [None; 4];
    for (i, name) in headers.iter().enumerate() {
        let slot = match name {
            "f" => 0,
            "rdl_label" => 1,
            "true_label" => 2,
            "beta" => 3,
            other => return Err(csv_err(1, format!("unknown column `{other}`"))),
        };
        if columns[slot].replace(i).is_some() {
            return Err(csv_err(1, format!("duplicate column `{name}`")));
        }
    }
    let [Some(f_col), Some(rdl_col), true_col, beta_col] = columns else {
        let column = if columns[0].is_none() {
            "f"
        } else {
            "rdl_label"
        };
        return Err(Error::MissingColumn {
            path: source.to_string(),
            column: column.to_string(),
        });
    };

    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");
        let raw: f64 = cell(f_col)
            .parse()
            .map_err(|_| csv_err(line, format!("score `{}` is not a number", cell(f_col))))?;
        if !(0.0..=1.0).contains(&raw) {
            return Err(csv_err(line, format!("score {raw} outside [0, 1]")));
        }
        let score = Score::quantize(raw, bits)?;
        let rdl_label = parse_label(cell(rdl_col)).map_err(|m| csv_err(line, m))?;
        let true_label = match true_col.map(cell).filter(|c| !c.is_empty()) {
            Some(c) => Some(parse_label(c).map_err(|m| csv_err(line, m))?),
            None => None,
        };
        let beta_override = match beta_col.map(cell).filter(|c| !c.is_empty()) {
            Some(c) => {
                let b: f64 = c
                    .parse()
                    .map_err(|_| csv_err(line, format!("beta `{c}` is not a number")))?;
                if !(0.0..=1.0).contains(&b) {
                    return Err(csv_err(line, format!("beta {b} outside [0, 1]")));
                }
                Some(b)
            }
            None => None,
        };
        samples.push(Sample {
            score,
            rdl_label,
            true_label,
            beta_override,
        });
    }
    Dataset::new(
        samples,
        bits,
        Provenance::Csv {
            path: source.to_string(),
        },
    )
}

/// Writes the dataset in the loader's schema. Optional columns appear only
/// when at least one sample carries them.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> io::Result<()> {
    let with_true = dataset.samples.iter().any(|s| s.true_label.is_some());
    let with_beta = dataset.samples.iter().any(|s| s.beta_override.is_some());
    let mut header = String::from("f,rdl_label");
    if with_true {
        header.push_str(",true_label");
    }
    if with_beta {
        header.push_str(",beta");
    }
    writeln!(out, "{header}")?;
    for s in &dataset.samples {
        write!(out, "{},{}", s.score.value(), s.rdl_label.bit())?;
        if with_true {
            match s.true_label {
                Some(l) => write!(out, ",{}", l.bit())?,
                None => write!(out, ",")?,
            }
        }
        if with_beta {
            match s.beta_override {
                Some(b) => write!(out, ",{b}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_mixture_separates_classes() {
        let d = gen_mixture(&MixtureSpec::reference(), 20_000, 4, 7).unwrap();
        let frac_high = |label| {
            let xs: Vec<_> = d
                .samples()
                .iter()
                .filter(|s| s.rdl_label == label)
                .collect();
            xs.iter().filter(|s| s.score.value() >= 0.5).count() as f64 / xs.len() as f64
        };
        assert!(frac_high(Label::One) > frac_high(Label::Zero));
    }

    #[test]
    fn tiny_spread_collapses_to_one_cell() {
        let spec = MixtureSpec {
            mean1: 0.9,
            spread1: 1e-9,
            mean0: 0.3,
            spread0: 1e-9,
            class1_fraction: 0.5,
            spread: Spread::StdDev,
        };
        let d = gen_mixture(&spec, 500, 4, 1).unwrap();
        let cell = Score::quantize(0.9, 4).unwrap();
        assert!(d
            .samples()
            .iter()
            .filter(|s| s.rdl_label == Label::One)
            .all(|s| s.score == cell));
    }

    #[test]
    fn pathological_spec_hits_budget() {
        let spec = MixtureSpec {
            mean1: 50.0,
            spread1: 0.01,
            ..MixtureSpec::reference()
        };
        let err = gen_mixture(&spec, 10, 4, 1).unwrap_err();
        assert!(matches!(err, Error::RejectionBudget { .. }));
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_mixture(&MixtureSpec::reference(), 100_000, 4, 42).unwrap();
        let b = gen_mixture(&MixtureSpec::reference(), 100_000, 4, 42).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_csv(&a, &mut ba).unwrap();
        write_csv(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 1000, 9).unwrap();
        let d = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 1000, 9).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn calibrated_point_masses() {
        let zero = ScoreLaw::point_mass(Score::new(0, 4).unwrap());
        let d = gen_calibrated(&zero, 1000, 3).unwrap();
        assert!(d.samples().iter().all(|s| s.rdl_label == Label::Zero));

        let half = ScoreLaw::point_mass(Score::new(8, 4).unwrap());
        let n = 100_000;
        let d = gen_calibrated(&half, n, 3).unwrap();
        let ones = d
            .samples()
            .iter()
            .filter(|s| s.rdl_label == Label::One)
            .count() as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((ones / n as f64 - 0.5).abs() <= 3.0 * sigma);
    }

    #[test]
    fn calibrated_uniform_matches_grid_summation() {
        use crate::calibrated::expected_cost;
        use crate::domain::CostModel;
        let costs = CostModel::fixed(0.7, 1.0, 0.3).unwrap();
        // oracle: sum the closed form over the 16 equally likely cells
        let oracle: f64 = (0..16)
            .map(|i| expected_cost(i as f64 / 16.0, 0.3, &costs))
            .sum::<f64>()
            / 16.0;
        assert!((oracle - 3.04375 / 16.0).abs() < 1e-12);
        let d = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 200_000, 5).unwrap();
        let mean = d
            .samples()
            .iter()
            .map(|s| expected_cost(s.score.value(), 0.3, &costs))
            .sum::<f64>()
            / d.len() as f64;
        assert!((mean - oracle).abs() < 0.002, "{mean} vs {oracle}");
    }

    #[test]
    fn calibrated_stream_passes_cell_test() {
        let d = gen_calibrated(&ScoreLaw::uniform(4).unwrap(), 100_000, 11).unwrap();
        for cell in 0..16u32 {
            let xs: Vec<_> = d
                .samples()
                .iter()
                .filter(|s| s.score.index() == cell)
                .collect();
            if xs.len() < 1000 {
                continue;
            }
            let f = cell as f64 / 16.0;
            let mean =
                xs.iter().filter(|s| s.rdl_label == Label::One).count() as f64 / xs.len() as f64;
            assert!((mean - f).abs() <= 4.0 * (f * (1.0 - f) / xs.len() as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn csv_rows() {
        let d = read_csv("f,rdl_label\n0.73,1\n".as_bytes(), "mem", 4).unwrap();
        assert_eq!(d.samples()[0].score, Score::quantize(0.73, 4).unwrap());
        assert_eq!(d.samples()[0].rdl_label, Label::One);

        let err = read_csv("f,rdl_label\n0.5,0\n1.2,0\n".as_bytes(), "mem", 4).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");

        let err = read_csv("f,rdl_label\n0.5,2\n".as_bytes(), "mem", 4).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 2, .. }));

        let err = read_csv("f,true_label\n0.5,1\n".as_bytes(), "mem", 4).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref column, .. } if column == "rdl_label"));

        let d = read_csv(
            "f,rdl_label,beta\n0.5,0,0.25\n0.1,1,\n".as_bytes(),
            "mem",
            4,
        )
        .unwrap();
        assert_eq!(d.samples()[0].beta_override, Some(0.25));
        assert_eq!(d.samples()[1].beta_override, None);
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in proptest::collection::vec((0u32..16, 0u8..2, proptest::option::of(0u8..2), proptest::option::of(0.0f64..=1.0)), 1..40)) {
            let samples: Vec<Sample> = rows.iter().map(|&(i, r, t, b)| Sample {
                score: Score::new(i, 4).unwrap(),
                rdl_label: Label::from_bit(r).unwrap(),
                true_label: t.map(|x| Label::from_bit(x).unwrap()),
                beta_override: b,
            }).collect();
            let d = Dataset::new(samples, 4, Provenance::Manual).unwrap();
            let mut buf = Vec::new();
            write_csv(&d, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), "mem", 4).unwrap();
            prop_assert_eq!(back.samples(), d.samples());
            let mut again = Vec::new();
            write_csv(&back, &mut again).unwrap();
            prop_assert_eq!(again, buf);
        }
    }
}
