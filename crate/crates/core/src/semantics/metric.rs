use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Model, Result, SemanticBox, SemanticsError, Value, WireSpec};

/// Anything with typed boundaries that maps inputs to outputs: single boxes
/// and whole models.
pub trait Semantic {
    fn dom_spec(&self) -> Result<Vec<WireSpec>>;
    fn cod_spec(&self) -> Result<Vec<WireSpec>>;
    fn apply(&self, x: &[Value]) -> Result<Vec<Value>>;
}

impl Semantic for SemanticBox {
    fn dom_spec(&self) -> Result<Vec<WireSpec>> {
        Ok(self.dom().to_vec())
    }
    fn cod_spec(&self) -> Result<Vec<WireSpec>> {
        Ok(self.cod().to_vec())
    }
    fn apply(&self, x: &[Value]) -> Result<Vec<Value>> {
        SemanticBox::apply(self, x)
    }
}

impl Semantic for Model {
    fn dom_spec(&self) -> Result<Vec<WireSpec>> {
        Model::dom_spec(self)
    }
    fn cod_spec(&self) -> Result<Vec<WireSpec>> {
        Model::cod_spec(self)
    }
    fn apply(&self, x: &[Value]) -> Result<Vec<Value>> {
        self.evaluate(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    Explicit(Vec<Vec<Value>>),
    /// `ranges[i]` bounds every coordinate of input wire `i`; wires past the
    /// end of the list use `[-1, 1]`. Finite wires draw uniform symbols.
    Seeded { seed: u64, ranges: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleDistribution {
    pub source: SampleSource,
    pub count: usize,
}

impl SampleDistribution {
    pub fn seeded(seed: u64, count: usize) -> Self {
        SampleDistribution { source: SampleSource::Seeded { seed, ranges: vec![] }, count }
    }

    pub fn explicit(samples: Vec<Vec<Value>>) -> Self {
        let count = samples.len();
        SampleDistribution { source: SampleSource::Explicit(samples), count }
    }

    /// Draws `count` input tuples for a domain. Same seed, same draws.
    pub fn draw(&self, dom: &[WireSpec]) -> Result<Vec<Vec<Value>>> {
        match &self.source {
            SampleSource::Explicit(xs) => {
                for x in xs {
                    if x.len() != dom.len() || x.iter().zip(dom).any(|(v, s)| !v.conforms(*s)) {
                        return Err(SemanticsError::IncompatibleArity("explicit sample does not fit the domain".into()));
                    }
                }
                Ok(xs.iter().take(self.count).cloned().collect())
            }
            SampleSource::Seeded { seed, ranges } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..self.count)
                    .map(|_| {
                        dom.iter()
                            .enumerate()
                            .map(|(i, s)| match *s {
                                WireSpec::Dim(n) => {
                                    let (lo, hi) = ranges.get(i).copied().unwrap_or((-1.0, 1.0));
                                    Value::Vector((0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect())
                                }
                                WireSpec::Finite(k) => Value::Symbol(rng.random_range(0..k)),
                            })
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    L2Expected,
    KlRows,
    SupFinite,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::L2Expected => "l2-expected",
            MetricKind::KlRows => "kl-rows",
            MetricKind::SupFinite => "sup-finite",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "l2-expected" | "l2" => MetricKind::L2Expected,
            "kl-rows" | "kl" => MetricKind::KlRows,
            "sup-finite" | "sup" => MetricKind::SupFinite,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub distribution: SampleDistribution,
}

impl MetricSpec {
    pub fn l2(seed: u64, count: usize) -> Self {
        MetricSpec { kind: MetricKind::L2Expected, distribution: SampleDistribution::seeded(seed, count) }
    }

    pub fn kl(seed: u64, count: usize) -> Self {
        MetricSpec { kind: MetricKind::KlRows, distribution: SampleDistribution::seeded(seed, count) }
    }

    pub fn sup_finite() -> Self {
        MetricSpec { kind: MetricKind::SupFinite, distribution: SampleDistribution::seeded(0, 0) }
    }
}

/// Every input tuple of a purely finite domain, first wire most significant.
pub fn enumerate_finite_domain(dom: &[WireSpec]) -> Option<Vec<Vec<Value>>> {
    let sizes: Vec<usize> = dom
        .iter()
        .map(|s| match s {
            WireSpec::Finite(k) => Some(*k),
            WireSpec::Dim(_) => None,
        })
        .collect::<Option<_>>()?;
    let total: usize = sizes.iter().product();
    Some(
        (0..total)
            .map(|mut idx| {
                let mut x = vec![Value::Symbol(0); sizes.len()];
                for (slot, k) in x.iter_mut().zip(&sizes).rev() {
                    *slot = Value::Symbol(idx % k);
                    idx /= k;
                }
                x
            })
            .collect(),
    )
}

fn squared_difference(a: &[Value], b: &[Value]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| match (x, y) {
            (Value::Vector(u), Value::Vector(v)) => u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum(),
            (Value::Symbol(s), Value::Symbol(t)) => f64::from(u8::from(s != t)),
            _ => 1.0,
        })
        .sum()
}

fn stochastic(p: &[f64]) -> bool {
    p.iter().all(|v| *v >= -1e-12) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

/// KL divergence in bits.
fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| if *q <= 0.0 { f64::INFINITY } else { p * (p / q).log2() })
        .sum::<f64>()
        .max(0.0)
}

/// `d(a, b)` under `metric`.
pub fn distortion(a: &dyn Semantic, b: &dyn Semantic, metric: &MetricSpec) -> Result<f64> {
    let dom = a.dom_spec()?;
    let cod = a.cod_spec()?;
    if dom != b.dom_spec()? || cod != b.cod_spec()? {
        return Err(SemanticsError::IncompatibleArity("dom/cod specs differ".into()));
    }
    match metric.kind {
        MetricKind::L2Expected => {
            let xs = metric.distribution.draw(&dom)?;
            if xs.is_empty() {
                return Ok(0.0);
            }
            let mut total = 0.0;
            for x in &xs {
                total += squared_difference(&a.apply(x)?, &b.apply(x)?);
            }
            Ok((total / xs.len() as f64).sqrt())
        }
        MetricKind::KlRows => {
            if cod.iter().any(|s| s.is_finite()) {
                return Err(SemanticsError::UnsupportedMetric("kl-rows"));
            }
            let xs = metric.distribution.draw(&dom)?;
            let mut worst = 0.0f64;
            for x in &xs {
                let (ya, yb) = (a.apply(x)?, b.apply(x)?);
                for (p, q) in ya.iter().zip(&yb) {
                    let (Value::Vector(p), Value::Vector(q)) = (p, q) else { unreachable!("vector codomain") };
                    if !stochastic(p) || !stochastic(q) {
                        return Err(SemanticsError::NonStochastic);
                    }
                    worst = worst.max(kl_bits(p, q));
                }
            }
            Ok(worst)
        }
        MetricKind::SupFinite => {
            if cod.iter().any(|s| !s.is_finite()) {
                return Err(SemanticsError::UnsupportedMetric("sup-finite"));
            }
            let xs = enumerate_finite_domain(&dom).ok_or(SemanticsError::UnsupportedMetric("sup-finite"))?;
            let mut worst = 0.0f64;
            for x in &xs {
                let d = a.apply(x)?.iter().zip(&b.apply(x)?).filter(|(u, v)| u != v).count();
                worst = worst.max(d as f64);
            }
            Ok(worst)
        }
    }
}

/// Distortion between the input-output maps of two whole models.
pub fn behavioural_distortion(m: &Model, m2: &Model, metric: &MetricSpec) -> Result<f64> {
    if m.dom_spec()? != m2.dom_spec()? || m.cod_spec()? != m2.cod_spec()? {
        return Err(SemanticsError::IncompatibleArity("model boundaries differ".into()));
    }
    distortion(m, m2, metric)
}
