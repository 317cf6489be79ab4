//! Synthetic test problems on the unit cube: embedded Branin, Hartmann-6 and
//! log-transformed Rosenbrock, plus randomly rotated Hartmann-6.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BRANIN_OPTIMUM: f64 = 0.397_887_357_729_738;

/// Hartmann-6 minimizer, polished by local descent from the published digits.
pub const HARTMANN6_MINIMIZER: [f64; 6] = [
    0.201_689_510_892_828_08,
    0.150_010_691_822_662_75,
    0.476_873_974_554_639_5,
    0.275_332_430_303_249_16,
    0.311_651_616_395_383_7,
    0.657_300_534_474_315_7,
];

/// `hartmann6(HARTMANN6_MINIMIZER)`.
pub const HARTMANN6_OPTIMUM: f64 = -3.322_368_011_415_514_7;

pub fn branin(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

const H_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const H_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const H_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

pub fn hartmann6(x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..6).map(|j| H_A[i][j] * (x[j] - H_P[i][j]).powi(2)).sum();
            H_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

/// `log(1 + f)` of the 3-D Rosenbrock function.
pub fn rosenbrock3_log1p(x: &[f64]) -> f64 {
    let f: f64 = (0..2)
        .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
        .sum();
    f.ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseFunction {
    Branin,
    Hartmann6,
    Rosenbrock3Log1p,
}

impl BaseFunction {
    pub fn dim(self) -> usize {
        match self {
            BaseFunction::Branin => 2,
            BaseFunction::Hartmann6 => 6,
            BaseFunction::Rosenbrock3Log1p => 3,
        }
    }

    /// Native domain of each input.
    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            BaseFunction::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            BaseFunction::Hartmann6 => vec![(0.0, 1.0); 6],
            BaseFunction::Rosenbrock3Log1p => vec![(-2.0, 2.0); 3],
        }
    }

    pub fn eval(self, raw: &[f64]) -> f64 {
        match self {
            BaseFunction::Branin => branin(raw),
            BaseFunction::Hartmann6 => hartmann6(raw),
            BaseFunction::Rosenbrock3Log1p => rosenbrock3_log1p(raw),
        }
    }

    pub fn optimum(self) -> f64 {
        match self {
            BaseFunction::Branin => BRANIN_OPTIMUM,
            BaseFunction::Hartmann6 => HARTMANN6_OPTIMUM,
            BaseFunction::Rosenbrock3Log1p => 0.0,
        }
    }

    /// One minimizer in native coordinates.
    pub fn minimizer(self) -> Vec<f64> {
        match self {
            BaseFunction::Branin => vec![PI, 2.275],
            BaseFunction::Hartmann6 => HARTMANN6_MINIMIZER.to_vec(),
            BaseFunction::Rosenbrock3Log1p => vec![1.0; 3],
        }
    }

    /// Default initial design size.
    pub fn default_init(self) -> usize {
        match self {
            BaseFunction::Hartmann6 => 20,
            _ => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseFunction::Branin => "branin",
            BaseFunction::Hartmann6 => "hartmann6",
            BaseFunction::Rosenbrock3Log1p => "rosenbrock",
        }
    }
}

/// Random linear map feeding Hartmann-6: `f(x) = hartmann6(P x[..d_p] - z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSpec {
    pub name: String,
    pub dim: usize,
    pub dp: usize,
    pub seed: u64,
    /// `6 × d_p`, row-major.
    pub projection: Vec<f64>,
    pub translation: Vec<f64>,
    /// The first `d_p` coordinates of a point attaining the optimum.
    pub anchor: Vec<f64>,
}

impl RotationSpec {
    /// The map applied to the leading `d_p` coordinates.
    pub fn project(&self, x: &[f64]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.projection[i * self.dp..(i + 1) * self.dp];
            *o = row.iter().zip(x).map(|(p, v)| p * v).sum::<f64>() - self.translation[i];
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        hartmann6(&self.project(x))
    }

    /// `[anchor; 0.5, ..., 0.5]`.
    pub fn optimum_point(&self) -> Vec<f64> {
        let mut x = self.anchor.clone();
        x.resize(self.dim, 0.5);
        x
    }

    /// Line-oriented text form; floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "D {}", self.dim);
        let _ = writeln!(s, "dp {}", self.dp);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "P {}", join(&self.projection));
        let _ = writeln!(s, "z {}", join(&self.translation));
        let _ = writeln!(s, "anchor {}", join(&self.anchor));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            fields.insert(key.trim(), rest.trim());
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::Parse(format!("missing field `{k}`")));
        let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|e| Error::Parse(format!("{k}: {e}"))) };
        let floats = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{k}: {e}"))))
                .collect()
        };
        let spec = Self {
            name: get("name")?.to_string(),
            dim: int("D")? as usize,
            dp: int("dp")? as usize,
            seed: int("seed")?,
            projection: floats("P")?,
            translation: floats("z")?,
            anchor: floats("anchor")?,
        };
        if spec.projection.len() != 6 * spec.dp || spec.translation.len() != 6 || spec.anchor.len() != spec.dp {
            return Err(Error::Parse("rotation spec arrays have inconsistent lengths".into()));
        }
        if spec.dp < 6 || spec.dp > spec.dim {
            return Err(Error::Parse(format!("need 6 <= dp <= D, got dp={} D={}", spec.dp, spec.dim)));
        }
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Draws `P` with `N(0, 1/d_p)` entries and builds `z` so that
/// `[anchor; 0.5, ...]` attains the Hartmann-6 optimum.
///
/// The first anchor is `[x*; 0.5, ...]`; later attempts use uniform anchors.
pub fn rotation_spec(dim: usize, dp: usize, seed: u64) -> Result<RotationSpec> {
    if dp < 6 || dp > dim {
        return Err(Error::InvalidConfig(format!("need 6 <= dp <= D, got dp={dp} D={dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (1.0 / dp as f64).sqrt()).expect("valid normal");
    let projection: Vec<f64> = (0..6 * dp).map(|_| normal.sample(&mut rng)).collect();
    let unit = Uniform::new(0.0, 1.0);
    for attempt in 0..100 {
        let anchor: Vec<f64> = if attempt == 0 {
            let mut a = HARTMANN6_MINIMIZER.to_vec();
            a.resize(dp, 0.5);
            a
        } else {
            (0..dp).map(|_| unit.sample(&mut rng)).collect()
        };
        let mut spec = RotationSpec {
            name: "rotated-hartmann".into(),
            dim,
            dp,
            seed,
            projection: projection.clone(),
            translation: vec![0.0; 6],
            anchor,
        };
        let image = spec.project(&spec.anchor);
        spec.translation = image.iter().zip(HARTMANN6_MINIMIZER).map(|(p, x)| p - x).collect();
        let x0 = spec.optimum_point();
        let inside = x0.iter().all(|v| (0.0..=1.0).contains(v));
        if inside && (spec.eval(&x0) - HARTMANN6_OPTIMUM).abs() <= 1e-9 {
            return Ok(spec);
        }
    }
    Err(Error::NonFiniteModel(format!(
        "no anchor attained the Hartmann optimum for dp={dp}, seed={seed}"
    )))
}

/// Loads the spec at `path` if present, otherwise creates and saves it.
pub fn load_or_create_rotation(path: &Path, dim: usize, dp: usize, seed: u64) -> Result<RotationSpec> {
    if path.exists() {
        let spec = RotationSpec::load(path)?;
        if spec.dim != dim || spec.dp != dp || spec.seed != seed {
            return Err(Error::InvalidConfig(format!(
                "{} holds D={} dp={} seed={}, requested D={dim} dp={dp} seed={seed}",
                path.display(),
                spec.dim,
                spec.dp,
                spec.seed
            )));
        }
        return Ok(spec);
    }
    let spec = rotation_spec(dim, dp, seed)?;
    spec.save(path)?;
    Ok(spec)
}

/// Axis-aligned embedding of a low-dimensional function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub base: BaseFunction,
    /// `relevant[k]` feeds input `k` of the base function.
    pub relevant: Vec<usize>,
    /// Native interval each relevant coordinate is mapped onto.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Embedded(Embedding),
    RotatedHartmann(RotationSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkProblem {
    pub name: String,
    pub dim: usize,
    pub kind: ProblemKind,
}

impl BenchmarkProblem {
    pub fn active_dim(&self) -> usize {
        match &self.kind {
            ProblemKind::Embedded(e) => e.relevant.len(),
            ProblemKind::RotatedHartmann(r) => r.dp,
        }
    }

    /// Relevant coordinates, when the problem is axis-aligned.
    pub fn relevant(&self) -> Option<&[usize]> {
        match &self.kind {
            ProblemKind::Embedded(e) => Some(&e.relevant),
            ProblemKind::RotatedHartmann(_) => None,
        }
    }

    pub fn optimum(&self) -> f64 {
        match &self.kind {
            ProblemKind::Embedded(e) => e.base.optimum(),
            ProblemKind::RotatedHartmann(_) => HARTMANN6_OPTIMUM,
        }
    }

    pub fn log1p_transformed(&self) -> bool {
        matches!(&self.kind, ProblemKind::Embedded(e) if e.base == BaseFunction::Rosenbrock3Log1p)
    }

    /// A unit-cube point attaining [`Self::optimum`].
    pub fn optimum_point(&self) -> Vec<f64> {
        match &self.kind {
            ProblemKind::Embedded(e) => {
                let mut x = vec![0.5; self.dim];
                for ((&idx, (lo, hi)), m) in e.relevant.iter().zip(&e.bounds).zip(e.base.minimizer()) {
                    x[idx] = (m - lo) / (hi - lo);
                }
                x
            }
            ProblemKind::RotatedHartmann(r) => r.optimum_point(),
        }
    }

    pub fn default_init(&self) -> usize {
        match &self.kind {
            ProblemKind::Embedded(e) => e.base.default_init(),
            ProblemKind::RotatedHartmann(_) => 20,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(match &self.kind {
            ProblemKind::Embedded(e) => {
                let raw: Vec<f64> = e
                    .relevant
                    .iter()
                    .zip(&e.bounds)
                    .map(|(&i, (lo, hi))| lo + (hi - lo) * x[i])
                    .collect();
                e.base.eval(&raw)
            }
            ProblemKind::RotatedHartmann(r) => r.eval(x),
        })
    }
}

/// Embeds `base` into `dim` dimensions at the given coordinates.
pub fn embed(base: BaseFunction, dim: usize, relevant: Vec<usize>, bounds: Vec<(f64, f64)>) -> Result<BenchmarkProblem> {
    if relevant.len() != base.dim() || bounds.len() != base.dim() {
        return Err(Error::InvalidConfig(format!(
            "{} takes {} inputs, got {} indices and {} intervals",
            base.name(),
            base.dim(),
            relevant.len(),
            bounds.len()
        )));
    }
    if dim < base.dim() || relevant.iter().any(|&i| i >= dim) {
        return Err(Error::InvalidConfig(format!("relevant indices {relevant:?} do not fit D={dim}")));
    }
    let mut seen = relevant.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != relevant.len() {
        return Err(Error::InvalidConfig(format!("duplicate relevant indices in {relevant:?}")));
    }
    if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidConfig("each interval needs lo < hi".into()));
    }
    Ok(BenchmarkProblem {
        name: format!("{}{}", base.name(), dim),
        dim,
        kind: ProblemKind::Embedded(Embedding { base, relevant, bounds }),
    })
}

/// Embedding with relevant coordinates drawn from `problem_seed`.
pub fn embedded_problem(base: BaseFunction, dim: usize, problem_seed: u64) -> Result<BenchmarkProblem> {
    if dim < base.dim() {
        return Err(Error::InvalidConfig(format!("{} needs D >= {}", base.name(), base.dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(problem_seed);
    let relevant = sample(&mut rng, dim, base.dim()).into_vec();
    embed(base, dim, relevant, base.bounds())
}

pub fn rotated_hartmann(dim: usize, dp: usize, seed: u64) -> Result<BenchmarkProblem> {
    Ok(rotated_from_spec(rotation_spec(dim, dp, seed)?))
}

pub fn rotated_from_spec(spec: RotationSpec) -> BenchmarkProblem {
    BenchmarkProblem {
        name: format!("rotated-hartmann{}-dp{}", spec.dim, spec.dp),
        dim: spec.dim,
        kind: ProblemKind::RotatedHartmann(spec),
    }
}

/// Splits names like `branin100` into a family and optional dimension.
pub fn parse_problem_name(name: &str) -> Result<(String, Option<usize>)> {
    let digits = name.len() - name.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (family, dim) = name.split_at(name.len() - digits);
    // `hartmann6` names the base function, not an ambient dimension.
    let (family, dim) = match family {
        "hartmann" if dim.starts_with('6') => ("hartmann6", &dim[1..]),
        _ => (family, dim),
    };
    let family = match family {
        "branin" => "branin",
        "hartmann" | "hartmann6" => "hartmann6",
        "rosenbrock" | "rosenbrock3" => "rosenbrock",
        "rotated-hartmann" => "rotated-hartmann",
        other => return Err(Error::InvalidConfig(format!("unknown problem `{other}`"))),
    };
    let dim = if dim.is_empty() {
        None
    } else {
        Some(dim.parse().map_err(|_| Error::InvalidConfig(format!("bad dimension in `{name}`")))?)
    };
    Ok((family.to_string(), dim))
}

pub fn base_function(family: &str) -> Option<BaseFunction> {
    match family {
        "branin" => Some(BaseFunction::Branin),
        "hartmann6" => Some(BaseFunction::Hartmann6),
        "rosenbrock" => Some(BaseFunction::Rosenbrock3Log1p),
        _ => None,
    }
}
