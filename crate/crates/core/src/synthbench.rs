//! Synthetic domain pairs with shared classes, a rotation-plus-translation
//! domain shift and private classes that play the role of outliers.
//!
//! Sampling order is fixed: the source domain is drawn first, then the target.
//! Within a domain, classes are drawn in label order (shared `0..C`, then that
//! domain's private classes), and each sample draws `m` standard normals from
//! the seeded ChaCha8 stream (see [`crate::rng`]).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Osda,
    Pda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Generator settings for one domain pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub input_dim: usize,
    /// One prototype per shared class; their count is `C`.
    pub shared_prototypes: Vec<Vec<f64>>,
    /// Prototypes of the source-private classes (`K_s` of them).
    #[serde(default)]
    pub source_private_prototypes: Vec<Vec<f64>>,
    /// Prototypes of the target-private classes (`K_t` of them).
    #[serde(default)]
    pub target_private_prototypes: Vec<Vec<f64>>,
    /// Isotropic standard deviation per class: shared classes first, then the
    /// private classes of whichever domain has them. A single entry applies to all.
    pub spreads: Vec<f64>,
    /// Rotation of the first two coordinates applied to target shared samples, degrees.
    pub rotation_degrees: f64,
    pub translation: Vec<f64>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl DomainSpec {
    /// Three shared classes on the unit circle, spread 0.25, a 30° rotation
    /// plus a (0.5, 0.25) translation, 200 samples per class and one private
    /// class at (3, 3) in the target (osda) or the source (pda).
    pub fn default_benchmark(mode: Mode, seed: u64) -> Self {
        let shared = (0..3)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                vec![angle.cos(), angle.sin()]
            })
            .collect();
        let private = vec![vec![3.0, 3.0]];
        let (source_private_prototypes, target_private_prototypes) = match mode {
            Mode::Osda => (Vec::new(), private),
            Mode::Pda => (private, Vec::new()),
        };
        DomainSpec {
            input_dim: 2,
            shared_prototypes: shared,
            source_private_prototypes,
            target_private_prototypes,
            spreads: vec![0.25],
            rotation_degrees: 30.0,
            translation: vec![0.5, 0.25],
            samples_per_class: 200,
            seed,
        }
    }

    pub fn shared_classes(&self) -> usize {
        self.shared_prototypes.len()
    }

    pub fn spread(&self, class: usize) -> f64 {
        if self.spreads.len() == 1 {
            self.spreads[0]
        } else {
            self.spreads[class]
        }
    }

    fn max_spread(&self) -> f64 {
        self.spreads.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        let fail = |msg: String| Err(Error::SpecInvalid(msg));
        let m = self.input_dim;
        if m == 0 {
            return fail("input_dim must be positive".into());
        }
        if self.shared_classes() < 2 {
            return fail(format!("need at least 2 shared classes, got {}", self.shared_classes()));
        }
        let (ks, kt) = (
            self.source_private_prototypes.len(),
            self.target_private_prototypes.len(),
        );
        match mode {
            Mode::Osda if ks > 0 => return fail("osda pairs cannot have source-private classes".into()),
            Mode::Pda if kt > 0 => return fail("pda pairs cannot have target-private classes".into()),
            _ => {}
        }
        let all = self
            .shared_prototypes
            .iter()
            .chain(&self.source_private_prototypes)
            .chain(&self.target_private_prototypes);
        for (i, p) in all.enumerate() {
            if p.len() != m || p.iter().any(|v| !v.is_finite()) {
                return fail(format!("prototype {i} must be {m} finite coordinates"));
            }
        }
        let classes = self.shared_classes() + ks.max(kt);
        if self.spreads.len() != 1 && self.spreads.len() != classes {
            return fail(format!(
                "spreads needs 1 or {classes} entries, got {}",
                self.spreads.len()
            ));
        }
        if self.spreads.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return fail("spreads must be positive".into());
        }
        if self.translation.len() != m || self.translation.iter().any(|v| !v.is_finite()) {
            return fail(format!("translation must have {m} finite entries"));
        }
        if !self.rotation_degrees.is_finite() || (m < 2 && self.rotation_degrees != 0.0) {
            return fail("rotation needs at least two input dimensions".into());
        }
        if self.samples_per_class == 0 {
            return fail("samples_per_class must be positive".into());
        }
        let min_gap = 3.0 * self.max_spread();
        for private in self.source_private_prototypes.iter().chain(&self.target_private_prototypes) {
            for shared in &self.shared_prototypes {
                let shifted = self.shift(shared);
                for candidate in [shared, &shifted] {
                    if squared_distance(private, candidate).sqrt() < min_gap {
                        return fail(format!(
                            "private prototype {private:?} lies within {min_gap} of a shared prototype"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Rotation of the first two coordinates followed by the translation.
    pub fn shift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        if out.len() >= 2 {
            let (s, c) = self.rotation_degrees.to_radians().sin_cos();
            let (a, b) = (x[0], x[1]);
            out[0] = c * a - s * b;
            out[1] = s * a + c * b;
        }
        for (o, t) in out.iter_mut().zip(&self.translation) {
            *o += t;
        }
        out
    }

    /// Inverse of [`DomainSpec::shift`].
    pub fn unshift(&self, y: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = y.iter().zip(&self.translation).map(|(v, t)| v - t).collect();
        if out.len() >= 2 {
            let (s, c) = self.rotation_degrees.to_radians().sin_cos();
            let (a, b) = (out[0], out[1]);
            out[0] = c * a + s * b;
            out[1] = -s * a + c * b;
        }
        out
    }
}

/// Labelled samples from one domain. Target labels are kept for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    pub domain: Domain,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, domain: Domain) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::MismatchedLength {
                left: samples.rows(),
                right: labels.len(),
            });
        }
        Ok(Dataset {
            samples,
            labels,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Sorted distinct labels.
    pub fn label_set(&self) -> Vec<usize> {
        let mut set = self.labels.clone();
        set.sort_unstable();
        set.dedup();
        set
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain: self.domain,
        }
    }

    /// Samples whose label is one of `classes`.
    pub fn restrict_to(&self, classes: &[usize]) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.subset(&idx)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,domain");
        for j in 0..self.dim() {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for (row, label) in self.samples.iter_rows().zip(&self.labels) {
            out.push_str(&format!("{label},{}", self.domain.as_str()));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, h)) if !h.trim().is_empty() => h.trim(),
            _ => return Err(Error::parse(1, "empty dataset file")),
        };
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "label" || cols[1] != "domain" {
            return Err(Error::parse(1, "header must be `label,domain,x0,...`"));
        }
        for (j, c) in cols[2..].iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(Error::parse(1, format!("expected column x{j}, found `{c}`")));
            }
        }
        let m = cols.len() - 2;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut domain = None;
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != m + 2 {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} fields, found {}", m + 2, fields.len()),
                ));
            }
            let label = fields[0]
                .parse::<usize>()
                .map_err(|e| Error::parse(line_no, format!("bad label `{}`: {e}", fields[0])))?;
            let d = match fields[1] {
                "source" => Domain::Source,
                "target" => Domain::Target,
                other => return Err(Error::parse(line_no, format!("unknown domain `{other}`"))),
            };
            if *domain.get_or_insert(d) != d {
                return Err(Error::parse(line_no, "mixed domains in one file"));
            }
            for f in &fields[2..] {
                let v = f
                    .parse::<f64>()
                    .map_err(|e| Error::parse(line_no, format!("bad value `{f}`: {e}")))?;
                data.push(v);
            }
            labels.push(label);
        }
        let Some(domain) = domain else {
            return Err(Error::parse(2, "dataset has no rows"));
        };
        let samples = Matrix::from_vec(labels.len(), m, data)?;
        Dataset::new(samples, labels, domain)
    }
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, d.to_csv()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_csv(&text)
}

/// Draws the source and target datasets for `spec`.
pub fn generate_pair(spec: &DomainSpec, mode: Mode) -> Result<(Dataset, Dataset)> {
    spec.validate(mode)?;
    let mut rng = rng::seeded(spec.seed);
    let m = spec.input_dim;
    let n = spec.samples_per_class;
    let c = spec.shared_classes();

    let mut draw = |domain: Domain, private: &[Vec<f64>]| -> Result<Dataset> {
        let classes = c + private.len();
        let mut data = Vec::with_capacity(classes * n * m);
        let mut labels = Vec::with_capacity(classes * n);
        for class in 0..classes {
            let (proto, shifted) = if class < c {
                (&spec.shared_prototypes[class], domain == Domain::Target)
            } else {
                (&private[class - c], false)
            };
            let sd = spec.spread(class);
            for _ in 0..n {
                let x: Vec<f64> = proto
                    .iter()
                    .map(|mu| mu + sd * rng::standard_normal(&mut rng))
                    .collect();
                data.extend(if shifted { spec.shift(&x) } else { x });
                labels.push(class);
            }
        }
        Dataset::new(Matrix::from_vec(labels.len(), m, data)?, labels, domain)
    };

    let source = draw(Domain::Source, &spec.source_private_prototypes)?;
    let target = draw(Domain::Target, &spec.target_private_prototypes)?;
    Ok((source, target))
}
