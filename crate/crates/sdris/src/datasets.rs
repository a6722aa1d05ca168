//! Benchmark generators and data ingestion.
//!
//! `synth_conflicting` plants two competing sub-structures in one
//! co-occurrence table: a strong monotone-in-x gradient on the right half
//! of Y and a weaker mid-x bump on the left half. The irrelevance table
//! carries only the gradient, so trading off against it should switch a
//! 1-D feature from the gradient to the bump. The planted structure
//! vectors are orthogonalized under p(x) and returned for oracle use.
//!
//! `synth_nuisance_classes` builds a labeled classification benchmark
//! where a strong shared nuisance profile varies within every class and
//! dominates the weak class signal; the nuisance-only table serves as
//! irrelevance data.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write as IoWrite};
use std::path::Path;
use thiserror::Error;

use crate::dist::{DistError, JointTable};

/// Probability floor applied before normalization wherever zeros would
/// violate table invariants.
pub const PROB_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: usize, message: String },
    #[error("pgm parse error in {path}: {message}")]
    PgmParse { path: String, message: String },
    #[error("image {0} has shape {1}x{2}, expected {3}x{4}")]
    ImageShape(String, usize, usize, usize, usize),
    #[error("image {0} has no positive pixel")]
    AllZeroImage(String),
    #[error("no images found under {0}")]
    EmptyImageSet(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub nx: usize,
    pub ny: usize,
    pub strong_amplitude: f64,
    pub weak_amplitude: f64,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            nx: 16,
            ny: 16,
            strong_amplitude: 2.0,
            weak_amplitude: 1.0,
            noise_level: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), DatasetError> {
        if self.nx < 4 || self.ny < 4 {
            return Err(DatasetError::InvalidSpec(format!(
                "nx, ny must be >= 4, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.strong_amplitude <= 0.0 || self.weak_amplitude < 0.0 {
            return Err(DatasetError::InvalidSpec(
                "amplitudes must be positive (weak may be 0)".into(),
            ));
        }
        if self.strong_amplitude <= self.weak_amplitude {
            return Err(DatasetError::InvalidSpec(
                "strong_amplitude must exceed weak_amplitude".into(),
            ));
        }
        if self.noise_level < 0.0 {
            return Err(DatasetError::InvalidSpec("noise_level must be >= 0".into()));
        }
        Ok(())
    }
}

/// The planted relevance/irrelevance pair plus the structure vectors the
/// generator actually used: g (gradient, linear in x-rank) and b (mid-x
/// bump), orthogonalized so their uniform-weighted correlation is zero.
#[derive(Debug, Clone)]
pub struct ConflictingPair {
    pub relevance: JointTable,
    pub irrelevance: JointTable,
    pub gradient_vector: DVector<f64>,
    pub bump_vector: DVector<f64>,
}

fn centered(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|x| x - mean)
}

/// Two-structure co-occurrence benchmark. Right-half columns of Y carry
/// exp(strong·g(x)·s_y); left-half columns carry exp(weak·b(x)·s_y) with
/// per-column signs s_y alternating so each structure varies within its
/// half. Seeded multiplicative noise, floor, normalize.
pub fn synth_conflicting(spec: &SynthSpec) -> Result<ConflictingPair, DatasetError> {
    spec.validate()?;
    let (nx, ny) = (spec.nx, spec.ny);

    // gradient: linear in x-rank; bump: peaked at mid-x
    let g_raw = DVector::from_fn(nx, |x, _| x as f64 / (nx - 1) as f64 - 0.5);
    let mid = (nx - 1) as f64 / 2.0;
    let width = nx as f64 / 4.0;
    let b_raw = DVector::from_fn(nx, |x, _| {
        let z = (x as f64 - mid) / width;
        (-0.5 * z * z).exp()
    });
    // orthogonalize b against g under uniform weights, then scale both to
    // unit max-abs so amplitudes are comparable
    let g_c = centered(&g_raw);
    let mut b_c = centered(&b_raw);
    let proj = g_c.dot(&b_c) / g_c.dot(&g_c);
    b_c -= proj * &g_c;
    let g = &g_c / g_c.amax();
    let b = &b_c / b_c.amax();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0xC0);
    let half = ny / 2;
    let build = |use_bump_left: bool, rng: &mut ChaCha8Rng| -> Result<JointTable, DistError> {
        let mut m = DMatrix::zeros(nx, ny);
        for y in 0..ny {
            // alternate the structure's sign across columns of its half
            let s = if y % 2 == 0 { 1.0 } else { -1.0 };
            for x in 0..nx {
                let field = if y < half {
                    if use_bump_left {
                        spec.weak_amplitude * b[x] * s
                    } else {
                        spec.strong_amplitude * g[x] * s
                    }
                } else {
                    spec.strong_amplitude * g[x] * s
                };
                let noise: f64 = StandardNormal.sample(rng);
                m[(x, y)] = (field + spec.noise_level * noise).exp().max(PROB_FLOOR);
            }
        }
        JointTable::from_counts_unlabeled(m)
    };
    let relevance = build(true, &mut rng)?;
    let irrelevance = build(false, &mut rng)?;
    Ok(ConflictingPair {
        relevance,
        irrelevance,
        gradient_vector: g,
        bump_vector: b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub signal_dims: usize,
    pub nuisance_dims: usize,
    pub signal_strength: f64,
    pub nuisance_strength: f64,
    pub seed: u64,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            per_class: 12,
            signal_dims: 8,
            nuisance_dims: 8,
            signal_strength: 1.0,
            nuisance_strength: 3.0,
            seed: 0,
        }
    }
}

/// Labeled relevance table (one y per sample), plus the nuisance-only
/// irrelevance table and per-sample class labels.
#[derive(Debug, Clone)]
pub struct NuisancePair {
    pub relevance: JointTable,
    pub irrelevance: JointTable,
    pub labels: Vec<String>,
}

/// Classification benchmark with a dominant shared nuisance. X has
/// signal_dims + nuisance_dims outcomes. Each class owns a random signal
/// profile over the signal dims (weak); every sample additionally draws
/// its own coefficient on a shared set of nuisance profiles spanning all
/// of X (strong), so nuisance variation dominates within and across
/// classes. The irrelevance table holds nuisance-only samples.
pub fn synth_nuisance_classes(spec: &NuisanceSpec) -> Result<NuisancePair, DatasetError> {
    if spec.n_classes < 2 || spec.per_class < 4 {
        return Err(DatasetError::InvalidSpec(
            "need >= 2 classes with >= 4 samples each".into(),
        ));
    }
    if spec.signal_dims < 2 || spec.nuisance_dims < 1 {
        return Err(DatasetError::InvalidSpec(
            "need signal_dims >= 2 and nuisance_dims >= 1".into(),
        ));
    }
    if spec.nuisance_strength < 0.0 || spec.signal_strength <= 0.0 {
        return Err(DatasetError::InvalidSpec(
            "signal_strength > 0 and nuisance_strength >= 0 required".into(),
        ));
    }
    let nx = spec.signal_dims + spec.nuisance_dims;
    let n_samples = spec.n_classes * spec.per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0xA1);

    // class signal profiles live on the signal dims only
    let mut class_profiles = Vec::with_capacity(spec.n_classes);
    for _ in 0..spec.n_classes {
        let v = DVector::from_fn(nx, |x, _| {
            if x < spec.signal_dims {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            } else {
                0.0
            }
        });
        class_profiles.push(centered(&v).normalize());
    }
    // shared nuisance profiles span all of X, deliberately overlapping
    // the signal dims so removing the nuisance subspace costs signal
    // more shared profiles than a low-d linear reducer can whiten away
    // without sacrificing signal
    let n_profiles = 4;
    let mut nuisance_profiles = Vec::with_capacity(n_profiles);
    for _ in 0..n_profiles {
        let v = DVector::from_fn(nx, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        nuisance_profiles.push(centered(&v).normalize());
    }

    // coefficients are clamped: unbounded draws occasionally concentrate a
    // whole conditional onto one outcome, which makes the I-projection
    // numerically infeasible for any informative feature map
    let sample_field = |class: usize, rng: &mut ChaCha8Rng| -> DVector<f64> {
        let mut field = spec.signal_strength * &class_profiles[class];
        for profile in &nuisance_profiles {
            let coeff = f64::clamp(StandardNormal.sample(rng), -2.0, 2.0);
            field += spec.nuisance_strength * coeff * profile;
        }
        field
    };

    let mut rel = DMatrix::zeros(nx, n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for class in 0..spec.n_classes {
        for i in 0..spec.per_class {
            let y = class * spec.per_class + i;
            let field = sample_field(class, &mut rng);
            for x in 0..nx {
                rel[(x, y)] = field[x].exp().max(PROB_FLOOR);
            }
            labels.push(format!("class_{class}"));
        }
    }

    // nuisance-only samples: same construction without the class signal
    let mut irr = DMatrix::zeros(nx, n_samples);
    for y in 0..n_samples {
        let mut field = DVector::zeros(nx);
        for profile in &nuisance_profiles {
            let coeff = f64::clamp(StandardNormal.sample(&mut rng), -2.0, 2.0);
            field += spec.nuisance_strength * coeff * profile;
        }
        for x in 0..nx {
            irr[(x, y)] = field[x].exp().max(PROB_FLOOR);
        }
    }

    // uniform p(y): normalize each column, floor the conditional so hard
    // nuisance fields cannot leave cells many orders below the floor (which
    // makes the downstream I-projection duals blow up), renormalize, divide
    // by n
    let normalize_columns = |mut m: DMatrix<f64>| -> DMatrix<f64> {
        let n = m.ncols() as f64;
        for y in 0..m.ncols() {
            let total: f64 = m.column(y).sum();
            let mut floored: f64 = 0.0;
            for x in 0..m.nrows() {
                m[(x, y)] = (m[(x, y)] / total).max(PROB_FLOOR);
                floored += m[(x, y)];
            }
            for x in 0..m.nrows() {
                m[(x, y)] /= floored * n;
            }
        }
        m
    };
    let x_labels: Vec<String> = (0..nx).map(|x| format!("x{x}")).collect();
    let y_labels: Vec<String> = (0..n_samples).map(|y| format!("y{y}")).collect();
    let relevance = JointTable::from_probs(normalize_columns(rel), x_labels.clone(), y_labels.clone())?;
    let irrelevance = JointTable::from_probs(normalize_columns(irr), x_labels, y_labels)?;
    Ok(NuisancePair {
        relevance,
        irrelevance,
        labels,
    })
}

/// A grayscale image set grouped by class.
#[derive(Debug, Clone)]
pub struct ImageClassSpec {
    /// (class label, image name, pixel matrix).
    pub images: Vec<(String, String, DMatrix<f64>)>,
}

impl ImageClassSpec {
    fn validate(&self) -> Result<(usize, usize), DatasetError> {
        let first = self
            .images
            .first()
            .ok_or_else(|| DatasetError::EmptyImageSet("<memory>".into()))?;
        let (h, w) = (first.2.nrows(), first.2.ncols());
        for (class, name, img) in &self.images {
            if img.nrows() != h || img.ncols() != w {
                return Err(DatasetError::ImageShape(
                    format!("{class}/{name}"),
                    img.nrows(),
                    img.ncols(),
                    h,
                    w,
                ));
            }
            if !img.iter().any(|&v| v > 0.0) {
                return Err(DatasetError::AllZeroImage(format!("{class}/{name}")));
            }
            if img.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(DatasetError::InvalidSpec(format!(
                    "negative or non-finite pixel in {class}/{name}"
                )));
            }
        }
        Ok((h, w))
    }
}

/// Flatten images into a JointTable: x indexes pixels row-major, y indexes
/// images, p(x|y) is the normalized grey level and p(y) is uniform. Zero
/// pixels are floored so every image shares the full X support.
pub fn images_to_joint(
    spec: &ImageClassSpec,
) -> Result<(JointTable, Vec<String>), DatasetError> {
    let (h, w) = spec.validate()?;
    let nx = h * w;
    let n = spec.images.len();
    let mut m = DMatrix::zeros(nx, n);
    let mut labels = Vec::with_capacity(n);
    let mut y_labels = Vec::with_capacity(n);
    for (y, (class, name, img)) in spec.images.iter().enumerate() {
        let mut total = 0.0;
        for r in 0..h {
            for c in 0..w {
                let v = img[(r, c)].max(PROB_FLOOR);
                m[(r * w + c, y)] = v;
                total += v;
            }
        }
        for x in 0..nx {
            m[(x, y)] /= total * n as f64;
        }
        labels.push(class.clone());
        y_labels.push(format!("{class}/{name}"));
    }
    let x_labels: Vec<String> = (0..nx).map(|x| format!("px{x}")).collect();
    let table = JointTable::from_probs(m, x_labels, y_labels)?;
    Ok((table, labels))
}

/// Read a class_<label>/ directory tree of PGM images.
pub fn load_image_tree(root: &Path) -> Result<ImageClassSpec, DatasetError> {
    let mut images = Vec::new();
    let entries = std::fs::read_dir(root).map_err(io_err(root))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("class_"))
        })
        .collect();
    dirs.sort();
    for dir in dirs {
        let label = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap()
            .trim_start_matches("class_")
            .to_string();
        let mut files: Vec<_> = std::fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .collect();
        files.sort();
        for file in files {
            let name = file.file_name().and_then(|n| n.to_str()).unwrap().to_string();
            let img = load_pgm(&file)?;
            images.push((label.clone(), name, img));
        }
    }
    if images.is_empty() {
        return Err(DatasetError::EmptyImageSet(root.display().to_string()));
    }
    Ok(ImageClassSpec { images })
}

/// Parse an 8-bit grayscale PGM, ASCII (P2) or binary (P5).
pub fn load_pgm(path: &Path) -> Result<DMatrix<f64>, DatasetError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let err = |message: &str| DatasetError::PgmParse {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    // header tokens separated by whitespace, # comments to end of line
    let mut pos = 0usize;
    let next_token = |bytes: &[u8], pos: &mut usize| -> Option<String> {
        while *pos < bytes.len() {
            let b = bytes[*pos];
            if b == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                *pos += 1;
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            None
        } else {
            Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        }
    };
    let magic = next_token(&bytes, &mut pos).ok_or_else(|| err("missing magic"))?;
    if magic != "P2" && magic != "P5" {
        return Err(err(&format!("unsupported magic {magic}")));
    }
    let parse = |t: Option<String>, what: &str| -> Result<usize, DatasetError> {
        t.ok_or_else(|| err(&format!("missing {what}")))?
            .parse()
            .map_err(|_| err(&format!("bad {what}")))
    };
    let width = parse(next_token(&bytes, &mut pos), "width")?;
    let height = parse(next_token(&bytes, &mut pos), "height")?;
    let maxval = parse(next_token(&bytes, &mut pos), "maxval")?;
    if width == 0 || height == 0 {
        return Err(err("zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err("maxval must be in 1..=255"));
    }
    let mut img = DMatrix::zeros(height, width);
    if magic == "P2" {
        for r in 0..height {
            for c in 0..width {
                let v = parse(next_token(&bytes, &mut pos), "pixel")?;
                if v > maxval {
                    return Err(err("pixel exceeds maxval"));
                }
                img[(r, c)] = v as f64;
            }
        }
    } else {
        // single whitespace byte after maxval, then raw data
        pos += 1;
        let needed = height * width;
        if bytes.len() < pos + needed {
            return Err(err("truncated binary data"));
        }
        for r in 0..height {
            for c in 0..width {
                let v = bytes[pos + r * width + c];
                if v as usize > maxval {
                    return Err(err("pixel exceeds maxval"));
                }
                img[(r, c)] = v as f64;
            }
        }
    }
    Ok(img)
}

/// Write a labeled table as CSV: header row of y labels (leading empty
/// cell), then one row per x with its label first. Floats round-trip via
/// the shortest exact decimal representation.
pub fn save_csv(path: &Path, table: &JointTable) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str(&std::iter::once(String::new())
        .chain(table.y_labels().iter().cloned())
        .collect::<Vec<_>>()
        .join(","));
    out.push('\n');
    for x in 0..table.nx() {
        let mut row = vec![table.x_labels()[x].clone()];
        for y in 0..table.ny() {
            row.push(format!("{}", table.probs()[(x, y)]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Atomic write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), DatasetError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Load a CSV written by [`save_csv`]. Entries are treated as
/// probabilities if they sum to 1 within tolerance, otherwise as counts.
pub fn load_csv(path: &Path) -> Result<JointTable, DatasetError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or(DatasetError::CsvParse {
            line: 1,
            message: "empty file".into(),
        })?;
    let header = header.map_err(io_err(path))?;
    let y_labels: Vec<String> = header
        .split(',')
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if y_labels.is_empty() {
        return Err(DatasetError::CsvParse {
            line: 1,
            message: "header has no y labels".into(),
        });
    }

    let mut x_labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let label = cells.next().unwrap().trim().to_string();
        let values: Vec<f64> = cells
            .map(|c| {
                let v: f64 = c.trim().parse().map_err(|_| DatasetError::CsvParse {
                    line: i + 1,
                    message: format!("bad number {c:?}"),
                })?;
                if v < 0.0 {
                    return Err(DatasetError::CsvParse {
                        line: i + 1,
                        message: format!("negative entry {v}"),
                    });
                }
                Ok(v)
            })
            .collect::<Result<_, _>>()?;
        if values.len() != y_labels.len() {
            return Err(DatasetError::CsvParse {
                line: i + 1,
                message: format!("expected {} cells, got {}", y_labels.len(), values.len()),
            });
        }
        x_labels.push(label);
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(DatasetError::CsvParse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let m = DMatrix::from_fn(rows.len(), y_labels.len(), |x, y| rows[x][y]);
    let total: f64 = m.iter().sum();
    let table = if (total - 1.0).abs() <= 1e-9 {
        JointTable::from_probs(m, x_labels, y_labels)?
    } else {
        JointTable::from_counts(m, x_labels, y_labels)?
    };
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::JointTable;

    #[test]
    fn synth_conflicting_is_deterministic_and_valid() {
        let spec = SynthSpec::default();
        let a = synth_conflicting(&spec).unwrap();
        let b = synth_conflicting(&spec).unwrap();
        assert_eq!(a.relevance.probs(), b.relevance.probs());
        assert_eq!(a.irrelevance.probs(), b.irrelevance.probs());

        // planted vectors uncorrelated under uniform weights by construction
        let g = &a.gradient_vector;
        let bv = &a.bump_vector;
        let corr = g.dot(bv) / (g.norm() * bv.norm());
        assert!(corr.abs() < 1e-12, "corr {corr}");

        // tables are strictly positive and normalized
        assert!(a.relevance.probs().iter().all(|&v| v > 0.0));
        assert!((a.relevance.probs().sum() - 1.0).abs() < 1e-12);

        let other = synth_conflicting(&SynthSpec {
            seed: 1,
            ..spec
        })
        .unwrap();
        assert_ne!(a.relevance.probs(), other.relevance.probs());
    }

    #[test]
    fn synth_conflicting_rejects_bad_specs() {
        let bad = SynthSpec {
            nx: 3,
            ..SynthSpec::default()
        };
        assert!(synth_conflicting(&bad).is_err());
        let bad = SynthSpec {
            strong_amplitude: 0.5,
            weak_amplitude: 1.0,
            ..SynthSpec::default()
        };
        assert!(synth_conflicting(&bad).is_err());
    }

    #[test]
    fn synth_nuisance_deterministic_and_labeled() {
        let spec = NuisanceSpec::default();
        let a = synth_nuisance_classes(&spec).unwrap();
        let b = synth_nuisance_classes(&spec).unwrap();
        assert_eq!(a.relevance.probs(), b.relevance.probs());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.labels.len(), spec.n_classes * spec.per_class);
        assert_eq!(a.relevance.ny(), a.labels.len());
        // uniform p(y)
        let py = a.relevance.marginal_y();
        let expect = 1.0 / a.labels.len() as f64;
        for y in 0..a.labels.len() {
            assert!((py[y] - expect).abs() < 1e-12);
        }
        // shared X across tables
        assert_eq!(a.relevance.x_labels(), a.irrelevance.x_labels());
    }

    #[test]
    fn images_to_joint_cases() {
        // single constant image → uniform conditional
        let spec = ImageClassSpec {
            images: vec![
                ("a".into(), "one.pgm".into(), DMatrix::from_element(2, 2, 5.0)),
                ("a".into(), "two.pgm".into(), DMatrix::from_element(2, 2, 3.0)),
            ],
        };
        let (table, labels) = images_to_joint(&spec).unwrap();
        assert_eq!(labels, vec!["a".to_string(), "a".to_string()]);
        let cond = table.conditionals_x_given_y();
        for y in 0..2 {
            for x in 0..4 {
                assert!((cond[(x, y)] - 0.25).abs() < 1e-12);
            }
            let s: f64 = (0..4).map(|x| cond[(x, y)]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }

        // mass concentrated in one pixel each
        let mut i0 = DMatrix::zeros(1, 2);
        i0[(0, 0)] = 9.0;
        let mut i1 = DMatrix::zeros(1, 2);
        i1[(0, 1)] = 4.0;
        let spec = ImageClassSpec {
            images: vec![
                ("a".into(), "0.pgm".into(), i0),
                ("b".into(), "1.pgm".into(), i1),
            ],
        };
        let (table, _) = images_to_joint(&spec).unwrap();
        assert!((table.probs()[(0, 0)] - 0.5).abs() < 1e-6);
        assert!((table.probs()[(1, 1)] - 0.5).abs() < 1e-6);

        // mismatched shapes rejected
        let spec = ImageClassSpec {
            images: vec![
                ("a".into(), "0.pgm".into(), DMatrix::from_element(2, 2, 1.0)),
                ("a".into(), "1.pgm".into(), DMatrix::from_element(3, 2, 1.0)),
            ],
        };
        assert!(matches!(
            images_to_joint(&spec),
            Err(DatasetError::ImageShape(..))
        ));

        // all-zero image rejected
        let spec = ImageClassSpec {
            images: vec![
                ("a".into(), "0.pgm".into(), DMatrix::zeros(2, 2)),
                ("a".into(), "1.pgm".into(), DMatrix::from_element(2, 2, 1.0)),
            ],
        };
        assert!(matches!(
            images_to_joint(&spec),
            Err(DatasetError::AllZeroImage(_))
        ));
    }

    #[test]
    fn pgm_ascii_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let ascii = dir.path().join("a.pgm");
        std::fs::write(&ascii, b"P2\n# comment\n3 2\n255\n0 10 20\n30 40 50\n").unwrap();
        let img = load_pgm(&ascii).unwrap();
        assert_eq!(img.nrows(), 2);
        assert_eq!(img.ncols(), 3);
        assert_eq!(img[(1, 2)], 50.0);

        let binary = dir.path().join("b.pgm");
        let mut data = b"P5\n3 2\n255\n".to_vec();
        data.extend_from_slice(&[0, 10, 20, 30, 40, 50]);
        std::fs::write(&binary, &data).unwrap();
        let img2 = load_pgm(&binary).unwrap();
        assert_eq!(img, img2);

        let bad = dir.path().join("c.pgm");
        std::fs::write(&bad, b"P6\n1 1\n255\n\x00").unwrap();
        assert!(load_pgm(&bad).is_err());

        let trunc = dir.path().join("d.pgm");
        std::fs::write(&trunc, b"P5\n3 2\n255\n\x00\x01").unwrap();
        assert!(load_pgm(&trunc).is_err());
    }

    #[test]
    fn image_tree_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for (class, name, seed) in [("a", "0.pgm", 1u8), ("a", "1.pgm", 2), ("b", "0.pgm", 3)] {
            let d = dir.path().join(format!("class_{class}"));
            std::fs::create_dir_all(&d).unwrap();
            let mut data = b"P5\n2 2\n255\n".to_vec();
            data.extend_from_slice(&[seed, seed + 1, seed + 2, seed + 3]);
            std::fs::write(d.join(name), &data).unwrap();
        }
        let spec = load_image_tree(dir.path()).unwrap();
        assert_eq!(spec.images.len(), 3);
        assert_eq!(spec.images[0].0, "a");
        assert_eq!(spec.images[2].0, "b");
        let (table, labels) = images_to_joint(&spec).unwrap();
        assert_eq!(labels, vec!["a", "a", "b"]);
        assert_eq!(table.nx(), 4);
    }

    #[test]
    fn csv_roundtrip_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(5, 4, |_, _| rng.gen_range(0.01..1.0));
        let table = JointTable::from_counts_unlabeled(m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        save_csv(&path, &table).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(table.probs(), loaded.probs());
        assert_eq!(table.x_labels(), loaded.x_labels());
        assert_eq!(table.y_labels(), loaded.y_labels());
    }

    #[test]
    fn csv_rejects_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("e.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_csv(&empty).is_err());

        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, ",y0,y1\nx0,0.5,0.25\nx1,0.25\n").unwrap();
        assert!(matches!(
            load_csv(&ragged),
            Err(DatasetError::CsvParse { line: 3, .. })
        ));

        let negative = dir.path().join("n.csv");
        std::fs::write(&negative, ",y0,y1\nx0,0.5,-0.1\nx1,0.3,0.3\n").unwrap();
        assert!(load_csv(&negative).is_err());
    }
}
