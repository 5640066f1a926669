//! Dictionaries, designs, noise families and seeded scenario generation.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATA_SCHEMA: &str = "seqsew.data.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryKind {
    /// φⱼ(x) = xⱼ on ℝᵈ.
    #[default]
    Coordinate,
    /// Orthonormal trigonometric system on [0, 1]: √2 cos(2πkx), √2 sin(2πkx), k = 1, 2, ...
    Fourier,
    /// φⱼ(x) = sⱼ·x/√m with fixed random signs sⱼ ∈ {±1}^m.
    RandomSigns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionarySpec {
    #[serde(default)]
    pub kind: DictionaryKind,
    /// Number of features; 0 inside a scenario means "use the scenario's d".
    #[serde(default)]
    pub d: usize,
    #[serde(default)]
    pub normalization: Option<Vec<f64>>,
    /// Input dimension for `random_signs` (defaults to d).
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl DictionarySpec {
    pub fn new(kind: DictionaryKind, d: usize) -> Self {
        Self {
            kind,
            d,
            normalization: None,
            input_dim: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    kind: DictionaryKind,
    d: usize,
    input_dim: usize,
    scale: Vec<f64>,
    /// d × m sign matrix, row-major, already divided by √m.
    mix: Vec<f64>,
}

impl Dictionary {
    pub fn new(spec: &DictionarySpec) -> Result<Self> {
        let d = spec.d;
        if d == 0 {
            return Err(Error::arg("dictionary needs at least one feature"));
        }
        let scale = match &spec.normalization {
            Some(s) if s.len() != d => return Err(Error::arg(format!("normalization has {} entries, need {d}", s.len()))),
            Some(s) if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) => {
                return Err(Error::arg("normalization factors must be positive"))
            }
            Some(s) => s.clone(),
            None => vec![1.0; d],
        };
        let (input_dim, mix) = match spec.kind {
            DictionaryKind::Coordinate => {
                if spec.input_dim.is_some_and(|m| m != d) {
                    return Err(Error::arg("coordinate dictionary requires input dimension d"));
                }
                (d, Vec::new())
            }
            DictionaryKind::Fourier => (1, Vec::new()),
            DictionaryKind::RandomSigns => {
                let m = spec.input_dim.unwrap_or(d);
                if m == 0 {
                    return Err(Error::arg("input dimension must be positive"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let norm = 1.0 / (m as f64).sqrt();
                let mix = (0..d * m).map(|_| if rng.random::<bool>() { norm } else { -norm }).collect();
                (m, mix)
            }
        };
        Ok(Self {
            kind: spec.kind,
            d,
            input_dim,
            scale,
            mix,
        })
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Unnormalized linear map for the linear kinds: φ(x) = A x before scaling.
    fn linear_row(&self, j: usize) -> Vec<f64> {
        match self.kind {
            DictionaryKind::Coordinate => {
                let mut r = vec![0.0; self.d];
                r[j] = 1.0;
                r
            }
            DictionaryKind::RandomSigns => self.mix[j * self.input_dim..(j + 1) * self.input_dim].to_vec(),
            DictionaryKind::Fourier => unreachable!("fourier features are not linear"),
        }
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::arg(format!("input has length {}, dictionary expects {}", x.len(), self.input_dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("input is not finite"));
        }
        let mut out = vec![0.0; self.d];
        match self.kind {
            DictionaryKind::Coordinate => out.copy_from_slice(x),
            DictionaryKind::Fourier => {
                for (j, o) in out.iter_mut().enumerate() {
                    let arg = 2.0 * PI * (j / 2 + 1) as f64 * x[0];
                    *o = SQRT_2 * if j % 2 == 0 { arg.cos() } else { arg.sin() };
                }
            }
            DictionaryKind::RandomSigns => {
                for (j, o) in out.iter_mut().enumerate() {
                    let row = &self.mix[j * self.input_dim..(j + 1) * self.input_dim];
                    *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
        }
        for (o, s) in out.iter_mut().zip(&self.scale) {
            *o *= s;
        }
        Ok(out)
    }

    /// sup over the input space of |φⱼ|, when finite.
    pub fn sup_norms(&self) -> Option<Vec<f64>> {
        match self.kind {
            DictionaryKind::Fourier => Some(self.scale.iter().map(|s| SQRT_2 * s).collect()),
            _ => None,
        }
    }
}

/// How inputs xₜ are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Design {
    /// i.i.d. uniform on [0, 1]^m.
    IidUniform,
    /// i.i.d. standard Gaussian on ℝ^m.
    IidGaussian,
    /// Cycles through `points` deterministic grid points (defaults to T, i.e. all distinct).
    FixedGrid {
        #[serde(default)]
        points: Option<usize>,
    },
    /// Gaussian inputs with piecewise amplitude and feature scale changes.
    AdversarialScript { segments: Vec<Segment> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub rounds: usize,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub feature_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Design {
    pub fn is_iid(&self) -> bool {
        matches!(self, Design::IidUniform | Design::IidGaussian)
    }

    pub fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Design::IidUniform => Ok((0..m).map(|_| rng.random::<f64>()).collect()),
            Design::IidGaussian => Ok((0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()),
            _ => Err(Error::arg("fresh draws need an i.i.d. design")),
        }
    }

    /// Mean vector and second-moment matrix of x for the i.i.d. designs.
    fn input_moments(&self, m: usize) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            Design::IidUniform => {
                let mean = DVector::from_element(m, 0.5);
                let mut second = DMatrix::from_element(m, m, 0.25);
                for i in 0..m {
                    second[(i, i)] = 1.0 / 3.0;
                }
                Some((mean, second))
            }
            Design::IidGaussian => Some((DVector::zeros(m), DMatrix::identity(m, m))),
            _ => None,
        }
    }

    fn grid_point(k: usize, n: usize, m: usize) -> Vec<f64> {
        (0..m).map(|i| ((k * (2 * i + 1)) % n) as f64 / n as f64 + 0.5 / n as f64).collect()
    }
}

/// Noise families with the moment conditions of the risk bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseFamily {
    /// |ε| ≤ b almost surely; drawn uniform on [−b, b].
    Bd { b: f64 },
    /// E e^{λε} ≤ e^{λ²σ²/2}; drawn N(0, σ²).
    Sg { sigma2: f64 },
    /// E e^{α|ε|} ≤ M; drawn Laplace with scale (1 − 1/M)/α.
    Bem { alpha: f64, m: f64 },
    /// E|ε|^α ≤ M with α > 2; drawn as a scaled Student t with α + 1 degrees of freedom.
    Bm { alpha: f64, m: f64 },
}

/// E|T_ν|^α for Student's t, finite for α < ν.
pub fn student_abs_moment(nu: f64, alpha: f64) -> f64 {
    let ln = 0.5 * alpha * nu.ln() + libm::lgamma(0.5 * (alpha + 1.0)) + libm::lgamma(0.5 * (nu - alpha))
        - 0.5 * PI.ln()
        - libm::lgamma(0.5 * nu);
    ln.exp()
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match *self {
            NoiseFamily::Bd { b } => pos("B", b),
            NoiseFamily::Sg { sigma2 } => pos("sigma2", sigma2),
            NoiseFamily::Bem { alpha, m } => {
                pos("alpha", alpha)?;
                if !(m > 1.0 && m.is_finite()) {
                    return Err(Error::arg(format!("M must exceed 1 for a nondegenerate family, got {m}")));
                }
                Ok(())
            }
            NoiseFamily::Bm { alpha, m } => {
                if !(alpha > 2.0 && alpha.is_finite()) {
                    return Err(Error::arg(format!("bounded-moment family needs alpha > 2, got {alpha}")));
                }
                pos("M", m)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Bd { .. } => "bd",
            NoiseFamily::Sg { .. } => "sg",
            NoiseFamily::Bem { .. } => "bem",
            NoiseFamily::Bm { .. } => "bm",
        }
    }

    fn laplace_scale(alpha: f64, m: f64) -> f64 {
        (1.0 - 1.0 / m) / alpha
    }

    fn t_dof(alpha: f64) -> f64 {
        alpha + 1.0
    }

    fn t_scale(alpha: f64, m: f64) -> f64 {
        (m / student_abs_moment(Self::t_dof(alpha), alpha)).powf(1.0 / alpha)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseFamily::Bd { b } => b * (2.0 * rng.random::<f64>() - 1.0),
            NoiseFamily::Sg { sigma2 } => sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal),
            NoiseFamily::Bem { alpha, m } => {
                let e: f64 = rng.sample(Exp1);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * Self::laplace_scale(alpha, m) * e
            }
            NoiseFamily::Bm { alpha, m } => {
                let t: f64 = rng.sample(StudentT::new(Self::t_dof(alpha)).expect("dof > 0"));
                Self::t_scale(alpha, m) * t
            }
        }
    }

    /// Exact value of the moment the family is certified on: B (BD), σ² (SG),
    /// E e^{α|ε|} (BEM), E|ε|^α (BM).
    pub fn certified_moment(&self) -> f64 {
        match *self {
            NoiseFamily::Bd { b } => b,
            NoiseFamily::Sg { sigma2 } => sigma2,
            NoiseFamily::Bem { alpha, m } => 1.0 / (1.0 - alpha * Self::laplace_scale(alpha, m)),
            NoiseFamily::Bm { alpha, m } => {
                Self::t_scale(alpha, m).powf(alpha) * student_abs_moment(Self::t_dof(alpha), alpha)
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseFamily::Bd { b } => b * b / 3.0,
            NoiseFamily::Sg { sigma2 } => sigma2,
            NoiseFamily::Bem { alpha, m } => 2.0 * Self::laplace_scale(alpha, m).powi(2),
            NoiseFamily::Bm { alpha, m } => {
                let nu = Self::t_dof(alpha);
                Self::t_scale(alpha, m).powi(2) * nu / (nu - 2.0)
            }
        }
    }

    /// Analytic cap on E[max_{t≤T} εₜ²].
    pub fn max_sq_bound(&self, t: usize) -> f64 {
        let t = t as f64;
        match *self {
            NoiseFamily::Bd { b } => b * b,
            NoiseFamily::Sg { sigma2 } => 2.0 * sigma2 * (2.0 * std::f64::consts::E * t).ln(),
            NoiseFamily::Bem { alpha, m } => ((m + std::f64::consts::E) * t).ln().powi(2) / (alpha * alpha),
            NoiseFamily::Bm { alpha, m } => (m * t).powf(2.0 / alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub d: usize,
    /// Support size of a randomly drawn `u_true`; must equal ‖u_true‖₀ when both are given.
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub u_true: Option<Vec<f64>>,
    #[serde(default)]
    pub dictionary: Option<DictionarySpec>,
    pub design: Design,
    #[serde(default)]
    pub noise: Option<NoiseFamily>,
    /// Constant added to every outcome.
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(t: usize, d: usize, design: Design, seed: u64) -> Self {
        Self {
            t,
            d,
            s: None,
            u_true: None,
            dictionary: None,
            design,
            noise: None,
            offset: 0.0,
            seed,
        }
    }
}

const STREAM_DESIGN: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_TRUTH: u64 = 2;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Regression function f(x) = u·φ(x) + offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub dictionary: Dictionary,
    pub u: Vec<f64>,
    pub offset: f64,
}

impl Truth {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let phi = self.dictionary.features(x)?;
        Ok(self.u.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() + self.offset)
    }

    /// Upper bound on sup |f| when the dictionary is bounded.
    pub fn sup_bound(&self) -> Option<f64> {
        let sup = self.dictionary.sup_norms()?;
        Some(self.u.iter().zip(&sup).map(|(a, b)| a.abs() * b).sum::<f64>() + self.offset.abs())
    }
}

/// Second moments of the features under the design distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments {
    /// E[φ φᵀ]
    pub gram: DMatrix<f64>,
    /// E[φ]
    pub mean: DVector<f64>,
    pub exact: bool,
    /// Largest standard error among the estimated entries (0 when exact).
    pub std_error: f64,
}

impl FeatureMoments {
    /// ‖φⱼ‖²_{L²} for every j.
    pub fn l2_norms_sq(&self) -> Vec<f64> {
        self.gram.diagonal().iter().copied().collect()
    }

    /// ‖f − u·φ‖²_{L²} for f = u_true·φ + offset.
    pub fn approx_error(&self, truth: &Truth, u: &[f64]) -> f64 {
        let v = DVector::from_iterator(u.len(), truth.u.iter().zip(u).map(|(a, b)| a - b));
        let quad = (v.transpose() * &self.gram * &v)[(0, 0)];
        let lin = 2.0 * truth.offset * v.dot(&self.mean);
        (quad + lin + truth.offset * truth.offset).max(0.0)
    }

    /// E[f(X)]
    pub fn truth_mean(&self, truth: &Truth) -> f64 {
        truth.u.iter().zip(self.mean.iter()).map(|(a, b)| a * b).sum::<f64>() + truth.offset
    }

    /// E[f(X)²]
    pub fn truth_second_moment(&self, truth: &Truth) -> f64 {
        self.approx_error(truth, &vec![0.0; truth.u.len()])
    }

    pub fn from_points(dict: &Dictionary, points: &[Vec<f64>]) -> Result<Self> {
        let d = dict.dim();
        let mut gram = DMatrix::zeros(d, d);
        let mut mean = DVector::zeros(d);
        for x in points {
            let phi = DVector::from_vec(dict.features(x)?);
            gram += &phi * phi.transpose();
            mean += phi;
        }
        let n = points.len().max(1) as f64;
        Ok(Self {
            gram: gram / n,
            mean: mean / n,
            exact: true,
            std_error: 0.0,
        })
    }
}

/// Closed form where the dictionary/design pair allows it, otherwise a
/// `mc_draws`-sample Monte Carlo estimate.
pub fn feature_moments(dict: &Dictionary, design: &Design, mc_draws: usize, seed: u64) -> Result<FeatureMoments> {
    let d = dict.dim();
    let m = dict.input_dim();
    let scale = DMatrix::from_diagonal(&DVector::from_column_slice(dict.scale()));
    match (dict.kind(), design) {
        (DictionaryKind::Fourier, Design::IidUniform) => {
            return Ok(FeatureMoments {
                gram: &scale * &scale,
                mean: DVector::zeros(d),
                exact: true,
                std_error: 0.0,
            })
        }
        (DictionaryKind::Coordinate | DictionaryKind::RandomSigns, _) => {
            if let Some((mu, second)) = design.input_moments(m) {
                let a = DMatrix::from_fn(d, m, |j, i| dict.linear_row(j)[i]);
                let a = &scale * a;
                return Ok(FeatureMoments {
                    gram: &a * second * a.transpose(),
                    mean: &a * mu,
                    exact: true,
                    std_error: 0.0,
                });
            }
        }
        _ => {}
    }
    if !design.is_iid() {
        return Err(Error::arg("feature moments need an i.i.d. design; use the design points instead"));
    }
    if mc_draws < 2 {
        return Err(Error::arg("Monte Carlo moments need at least 2 draws"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gram = DMatrix::zeros(d, d);
    let mut sq = DMatrix::<f64>::zeros(d, d);
    let mut mean = DVector::zeros(d);
    for _ in 0..mc_draws {
        let x = design.draw(m, &mut rng)?;
        let phi = DVector::from_vec(dict.features(&x)?);
        let outer = &phi * phi.transpose();
        sq += outer.component_mul(&outer);
        gram += outer;
        mean += phi;
    }
    let n = mc_draws as f64;
    let gram = gram / n;
    let var = sq / n - gram.component_mul(&gram);
    let se = var.iter().fold(0.0f64, |a, v| a.max(v.max(0.0).sqrt())) / n.sqrt();
    Ok(FeatureMoments {
        gram,
        mean: mean / n,
        exact: false,
        std_error: se,
    })
}

/// Built, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub truth: Truth,
}

impl Scenario {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        if spec.t == 0 {
            return Err(Error::arg("T must be at least 1"));
        }
        if spec.d == 0 {
            return Err(Error::arg("d must be at least 1"));
        }
        if let Some(n) = &spec.noise {
            n.validate()?;
        }
        if !spec.offset.is_finite() {
            return Err(Error::arg("offset must be finite"));
        }
        let mut dspec = spec.dictionary.clone().unwrap_or_else(|| DictionarySpec::new(DictionaryKind::Coordinate, spec.d));
        if dspec.d == 0 {
            dspec.d = spec.d;
        } else if dspec.d != spec.d {
            return Err(Error::arg(format!("dictionary has d = {}, scenario has d = {}", dspec.d, spec.d)));
        }
        let dictionary = Dictionary::new(&dspec)?;
        let u = match &spec.u_true {
            Some(u) => {
                if u.len() != spec.d {
                    return Err(Error::arg(format!("u_true has {} entries, need {}", u.len(), spec.d)));
                }
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::arg("u_true must be finite"));
                }
                if let Some(s) = spec.s {
                    let l0 = u.iter().filter(|v| **v != 0.0).count();
                    if l0 != s {
                        return Err(Error::arg(format!("s = {s} but u_true has {l0} nonzero entries")));
                    }
                }
                u.clone()
            }
            None => {
                let s = spec.s.unwrap_or(spec.d.min(3));
                if s > spec.d {
                    return Err(Error::arg(format!("s = {s} exceeds d = {}", spec.d)));
                }
                random_sparse(spec.d, s, &mut stream(spec.seed, STREAM_TRUTH))
            }
        };
        match &spec.design {
            Design::FixedGrid { points: Some(0) } => return Err(Error::arg("fixed grid needs at least one point")),
            Design::AdversarialScript { segments } => {
                if segments.is_empty() {
                    return Err(Error::arg("adversarial script needs at least one segment"));
                }
                if segments.iter().any(|s| !(s.amplitude.is_finite() && s.feature_scale.is_finite())) {
                    return Err(Error::arg("segment scales must be finite"));
                }
            }
            _ => {}
        }
        Ok(Self {
            spec: spec.clone(),
            truth: Truth {
                dictionary,
                u,
                offset: spec.offset,
            },
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.truth.dictionary
    }

    pub fn inputs(&self) -> Result<Vec<Vec<f64>>> {
        let m = self.dictionary().input_dim();
        let t = self.spec.t;
        let mut rng = stream(self.spec.seed, STREAM_DESIGN);
        match &self.spec.design {
            Design::IidUniform | Design::IidGaussian => (0..t).map(|_| self.spec.design.draw(m, &mut rng)).collect(),
            Design::FixedGrid { points } => {
                let n = points.unwrap_or(t);
                Ok((0..t).map(|k| Design::grid_point(k % n, n, m)).collect())
            }
            Design::AdversarialScript { segments } => {
                let mut out = Vec::with_capacity(t);
                for k in 0..t {
                    let seg = segment_at(segments, k);
                    out.push((0..m).map(|_| seg.feature_scale * rng.sample::<f64, _>(StandardNormal)).collect());
                }
                Ok(out)
            }
        }
    }

    /// The sequence (xₜ, yₜ), t = 1..T.
    pub fn generate(&self) -> Result<Vec<(Vec<f64>, f64)>> {
        let xs = self.inputs()?;
        let mut rng = stream(self.spec.seed, STREAM_NOISE);
        xs.into_iter()
            .enumerate()
            .map(|(k, x)| {
                let f = self.truth.eval(&x)?;
                let eps = self.spec.noise.map_or(0.0, |n| n.sample(&mut rng));
                let amp = match &self.spec.design {
                    Design::AdversarialScript { segments } => segment_at(segments, k).amplitude,
                    _ => 1.0,
                };
                Ok((x, amp * (f + eps)))
            })
            .collect()
    }
}

fn segment_at(segments: &[Segment], k: usize) -> &Segment {
    let mut end = 0;
    for s in segments {
        end += s.rounds;
        if k < end {
            return s;
        }
    }
    segments.last().expect("validated nonempty")
}

fn random_sparse<R: Rng + ?Sized>(d: usize, s: usize, rng: &mut R) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..s {
        let j = rng.random_range(i..d);
        idx.swap(i, j);
    }
    let mut u = vec![0.0; d];
    for &j in &idx[..s] {
        let mag = 1.0 + rng.random::<f64>();
        u[j] = if rng.random::<bool>() { mag } else { -mag };
    }
    u
}

pub fn gen_individual_sequence(spec: &ScenarioSpec) -> Result<Vec<(Vec<f64>, f64)>> {
    Scenario::new(spec)?.generate()
}

#[derive(Debug, Clone)]
pub struct StochasticData {
    pub samples: Vec<(Vec<f64>, f64)>,
    pub truth: Truth,
    /// ‖φⱼ‖²_{L²(P^X)} when available in closed form.
    pub closed_forms: Option<Vec<f64>>,
}

pub fn gen_stochastic(spec: &ScenarioSpec) -> Result<StochasticData> {
    let sc = Scenario::new(spec)?;
    let samples = sc.generate()?;
    let closed_forms = feature_moments(sc.dictionary(), &spec.design, 0, 0)
        .ok()
        .filter(|m| m.exact)
        .map(|m| m.l2_norms_sq());
    Ok(StochasticData {
        samples,
        truth: sc.truth,
        closed_forms,
    })
}

pub fn write_samples_csv(path: &Path, samples: &[(Vec<f64>, f64)]) -> Result<()> {
    let m = samples.first().map_or(0, |s| s.0.len());
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "# schema: {DATA_SCHEMA}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("x_{i}")));
    header.push("y".into());
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for (k, (x, y)) in samples.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_samples_csv`] (or any `t, x_1.., y` CSV).
pub fn read_samples_csv(path: &Path) -> Result<Vec<(Vec<f64>, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let p = path.display().to_string();
    let headers = r
        .headers()
        .map_err(|e| Error::Parse { path: p.clone(), line: 1, message: e.to_string() })?
        .clone();
    if headers.len() < 2 || &headers[headers.len() - 1] != "y" {
        return Err(Error::Parse { path: p, line: 1, message: "expected columns t, x_1.., y".into() });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: p.clone(),
            line: e.position().map_or(0, |q| q.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |q| q.line());
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Parse { path: p.clone(), line, message: e.to_string() })?;
        let (y, x) = vals.split_last().expect("at least one value column");
        out.push((x.to_vec(), *y));
    }
    if out.is_empty() {
        return Err(Error::Parse { path: p, line: 1, message: "no data rows".into() });
    }
    Ok(out)
}
