//! Data generators: the arithmetic extrapolation task over two contiguous
//! input windows, the four-input static task, and digit sequences with
//! cumulative targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Closed-open interval `[lo, hi)` for sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// A uniform range, or a union of uniform ranges sampled in proportion to
/// their widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Range {
    parts: Vec<Interval>,
}

impl Range {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::union(&[(lo, hi)])
    }

    pub fn union(parts: &[(f64, f64)]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidConfig("range needs at least one interval".into()));
        }
        let mut out = Vec::with_capacity(parts.len());
        for &(lo, hi) in parts {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!("degenerate range U[{lo},{hi}]")));
            }
            out.push(Interval { lo, hi });
        }
        out.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        if out.windows(2).any(|w| w[1].lo < w[0].hi) {
            return Err(Error::InvalidConfig("range parts overlap".into()));
        }
        Ok(Self { parts: out })
    }

    pub fn parts(&self) -> &[Interval] {
        &self.parts
    }

    pub fn min(&self) -> f64 {
        self.parts[0].lo
    }

    pub fn max(&self) -> f64 {
        self.parts[self.parts.len() - 1].hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.parts.iter().any(|p| x >= p.lo && x <= p.hi)
    }

    /// True when no two parts of `self` and `other` overlap in more than a point.
    pub fn disjoint_from(&self, other: &Range) -> bool {
        self.parts
            .iter()
            .all(|a| other.parts.iter().all(|b| a.hi <= b.lo || b.hi <= a.lo))
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        if self.parts.len() == 1 {
            let p = self.parts[0];
            return rng.uniform(p.lo, p.hi);
        }
        let total: f64 = self.parts.iter().map(Interval::width).sum();
        let mut u = rng.next_f64() * total;
        for p in &self.parts {
            if u < p.width() {
                return rng.uniform(p.lo, p.hi);
            }
            u -= p.width();
        }
        let p = self.parts[self.parts.len() - 1];
        rng.uniform(p.lo, p.hi)
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.parts.iter().enumerate() {
            if i > 0 {
                f.write_str("∪")?;
            }
            write!(f, "U[{},{}]", p.lo, p.hi)?;
        }
        Ok(())
    }
}

impl FromStr for Range {
    type Err = Error;

    /// Accepts `U[lo,hi]`, `[lo,hi]`, and unions joined by `∪` or `|`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse range '{s}', expected e.g. U[1,2] or U[-6,-2]∪U[2,6]"));
        let mut parts = Vec::new();
        for piece in s.split(['∪', '|']) {
            let p = piece.trim();
            let p = p.strip_prefix('U').or_else(|| p.strip_prefix('u')).unwrap_or(p).trim();
            let inner = p
                .strip_prefix('[')
                .and_then(|p| p.strip_suffix(']'))
                .ok_or_else(bad)?;
            let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            parts.push((lo, hi));
        }
        Range::union(&parts)
    }
}

impl TryFrom<String> for Range {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Range> for String {
    fn from(r: Range) -> String {
        r.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Add,
    Sub,
    Mul,
    Div,
    Square,
    Sqrt,
}

impl Operation {
    pub const ALL: [Operation; 6] = [
        Operation::Add,
        Operation::Sub,
        Operation::Mul,
        Operation::Div,
        Operation::Square,
        Operation::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operation::Add => "add",
            Operation::Sub => "sub",
            Operation::Mul => "mul",
            Operation::Div => "div",
            Operation::Square => "square",
            Operation::Sqrt => "sqrt",
        }
    }

    pub fn is_unary(self) -> bool {
        matches!(self, Operation::Square | Operation::Sqrt)
    }

    /// `a ∘ b`; unary operations ignore `b`.
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Operation::Add => a + b,
            Operation::Sub => a - b,
            Operation::Mul => a * b,
            Operation::Div => a / b,
            Operation::Square => a * a,
            Operation::Sqrt => a.sqrt(),
        }
    }

    /// Value of an empty reduction under this operation.
    pub fn identity(self) -> f64 {
        match self {
            Operation::Mul | Operation::Div => 1.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "+" => "add",
            "-" => "sub",
            "*" | "x" | "×" => "mul",
            "/" | "÷" => "div",
            other => other,
        };
        Operation::ALL
            .into_iter()
            .find(|o| o.name() == alias)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown operation '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub input_size: usize,
    pub subset_ratio: f64,
    pub overlap_ratio: f64,
    pub interpolation_range: Range,
    pub extrapolation_range: Range,
    pub operation: Operation,
    pub batch_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            input_size: 100,
            subset_ratio: 0.25,
            overlap_ratio: 0.5,
            interpolation_range: Range::uniform(1.0, 2.0).expect("valid"),
            extrapolation_range: Range::uniform(2.0, 6.0).expect("valid"),
            operation: Operation::Mul,
            batch_size: 128,
            validation_size: 10_000,
            test_size: 10_000,
        }
    }
}

impl DatasetConfig {
    /// Subset length `⌊s·n⌋`.
    pub fn subset_len(&self) -> usize {
        (self.subset_ratio * self.input_size as f64).floor() as usize
    }

    /// Overlap length `⌊o·⌊s·n⌋⌋`.
    pub fn overlap_len(&self) -> usize {
        (self.overlap_ratio * self.subset_len() as f64).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::InvalidConfig(m));
        if self.input_size == 0 || self.batch_size == 0 {
            return cfg_err("input_size and batch_size must be positive".into());
        }
        if self.validation_size == 0 || self.test_size == 0 {
            return cfg_err("validation_size and test_size must be positive".into());
        }
        if !(self.subset_ratio > 0.0 && self.subset_ratio <= 0.5) {
            return cfg_err(format!("subset_ratio must be in (0, 0.5], got {}", self.subset_ratio));
        }
        if !(0.0..=1.0).contains(&self.overlap_ratio) {
            return cfg_err(format!("overlap_ratio must be in [0, 1], got {}", self.overlap_ratio));
        }
        let l = self.subset_len();
        if l == 0 {
            return cfg_err(format!(
                "input_size {} with subset_ratio {} gives empty subsets",
                self.input_size, self.subset_ratio
            ));
        }
        if 2 * l - self.overlap_len() > self.input_size {
            return cfg_err("subset windows do not fit in the input".into());
        }
        if self.operation == Operation::Sqrt
            && (self.interpolation_range.min() < 0.0 || self.extrapolation_range.min() < 0.0)
        {
            return cfg_err("sqrt requires non-negative ranges".into());
        }
        Ok(())
    }
}

/// Two contiguous windows `[a_start, a_end)` and `[b_start, b_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub a_start: usize,
    pub a_end: usize,
    pub b_start: usize,
    pub b_end: usize,
}

impl SubsetSpec {
    pub fn overlap(&self) -> usize {
        self.a_end.min(self.b_end).saturating_sub(self.a_start.max(self.b_start))
    }

    pub fn sums(&self, x: &[f64]) -> (f64, f64) {
        (
            x[self.a_start..self.a_end].iter().sum(),
            x[self.b_start..self.b_end].iter().sum(),
        )
    }
}

/// `k ~ U_int[0, n - (2L - V)]`, `a = [k, k+L)`, `b = [k+L-V, k+2L-V)`.
pub fn draw_subsets(rng: &mut RngStream, cfg: &DatasetConfig) -> Result<SubsetSpec> {
    cfg.validate()?;
    let l = cfg.subset_len();
    let v = cfg.overlap_len();
    let span = 2 * l - v;
    let k = rng.uniform_int(0, cfg.input_size - span);
    Ok(SubsetSpec {
        a_start: k,
        a_end: k + l,
        b_start: k + l - v,
        b_end: k + span,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Interpolation,
    Extrapolation,
}

pub fn target(op: Operation, subsets: &SubsetSpec, x: &[f64]) -> f64 {
    let (a, b) = subsets.sums(x);
    op.apply(a, b)
}

/// `rows` observations from the chosen range, with targets.
pub fn gen_rows(
    rng: &mut RngStream,
    cfg: &DatasetConfig,
    subsets: &SubsetSpec,
    split: Split,
    rows: usize,
) -> Result<(Matrix, Vec<f64>)> {
    if subsets.a_end > cfg.input_size || subsets.b_end > cfg.input_size {
        return Err(Error::InvalidInput("subset windows exceed the input size".into()));
    }
    let range = match split {
        Split::Interpolation => &cfg.interpolation_range,
        Split::Extrapolation => &cfg.extrapolation_range,
    };
    let n = cfg.input_size;
    let mut data = Vec::with_capacity(rows * n);
    let mut t = Vec::with_capacity(rows);
    for _ in 0..rows {
        let start = data.len();
        data.extend((0..n).map(|_| range.sample(rng)));
        t.push(target(cfg.operation, subsets, &data[start..]));
    }
    Ok((Matrix::new(rows, n, data)?, t))
}

pub fn gen_batch(
    rng: &mut RngStream,
    cfg: &DatasetConfig,
    subsets: &SubsetSpec,
    split: Split,
) -> Result<(Matrix, Vec<f64>)> {
    gen_rows(rng, cfg, subsets, split, cfg.batch_size)
}

/// Windows of the static task `(x₁ + x₂)(x₁ + x₂ + x₃ + x₄)`.
pub const STATIC10_SUBSETS: SubsetSpec = SubsetSpec {
    a_start: 0,
    a_end: 2,
    b_start: 0,
    b_end: 4,
};

/// Four inputs, multiplication, default ranges.
pub fn static10_config() -> DatasetConfig {
    DatasetConfig {
        input_size: 4,
        subset_ratio: 0.5,
        overlap_ratio: 1.0,
        ..DatasetConfig::default()
    }
}

pub fn gen_static10(rng: &mut RngStream, range: &Range, rows: usize) -> (Matrix, Vec<f64>) {
    let cfg = DatasetConfig {
        interpolation_range: range.clone(),
        ..static10_config()
    };
    gen_rows(rng, &cfg, &STATIC10_SUBSETS, Split::Interpolation, rows).expect("fixed windows fit")
}

/// Integer digits drawn uniformly from `digits` (inclusive) and the running
/// `op` over each row.
pub fn gen_sequence_batch(
    rng: &mut RngStream,
    batch: usize,
    length: usize,
    digits: (u32, u32),
    op: Operation,
) -> Result<(Matrix, Matrix)> {
    if length == 0 {
        return Err(Error::InvalidInput("sequence length must be at least 1".into()));
    }
    if digits.0 > digits.1 {
        return Err(Error::InvalidInput(format!("empty digit range {digits:?}")));
    }
    if !matches!(op, Operation::Add | Operation::Mul) {
        return Err(Error::InvalidInput(format!("sequence task supports add and mul, got {op}")));
    }
    let mut z = Matrix::zeros(batch, length);
    for v in z.data_mut() {
        *v = rng.uniform_int(digits.0 as usize, digits.1 as usize) as f64;
    }
    Ok((z.clone(), cumulative(&z, op)))
}

/// Running reduction of each row under `op`.
pub fn cumulative(z: &Matrix, op: Operation) -> Matrix {
    let mut t = Matrix::zeros(z.rows(), z.cols());
    for r in 0..z.rows() {
        let mut acc = op.identity();
        for c in 0..z.cols() {
            acc = op.apply(acc, z.get(r, c));
            t.set(r, c, acc);
        }
    }
    t
}

/// First-layer selection with `1-ε` on the windows and `ε` elsewhere, and the
/// exact second layer (`[1, 1]` for add and mul, `[1, -1]` for sub and div).
/// Unary operations use only the first row.
pub fn nearly_perfect_weights(cfg: &DatasetConfig, subsets: &SubsetSpec, eps: f64) -> (Matrix, Matrix) {
    let n = cfg.input_size;
    let mut w1 = Matrix::filled(2, n, eps);
    for i in subsets.a_start..subsets.a_end {
        w1.set(0, i, 1.0 - eps);
    }
    for i in subsets.b_start..subsets.b_end {
        w1.set(1, i, 1.0 - eps);
    }
    let w2 = match cfg.operation {
        Operation::Add | Operation::Mul => Matrix::from_rows(&[[1.0, 1.0]]),
        Operation::Sub | Operation::Div => Matrix::from_rows(&[[1.0, -1.0]]),
        Operation::Square => Matrix::from_rows(&[[2.0, 0.0]]),
        Operation::Sqrt => Matrix::from_rows(&[[0.5, 0.0]]),
    };
    (w1, w2)
}

/// Fixed data for one run: the windows, validation set and test set.
#[derive(Clone, Debug)]
pub struct Task {
    pub config: DatasetConfig,
    pub subsets: SubsetSpec,
    pub validation: (Matrix, Vec<f64>),
    pub test: (Matrix, Vec<f64>),
}

impl Task {
    /// Draws windows from `rng.derive("subsets")` and the fixed sets from the
    /// `"validation"` and `"test"` streams.
    pub fn new(config: DatasetConfig, rng: &RngStream) -> Result<Self> {
        let subsets = draw_subsets(&mut rng.derive("subsets"), &config)?;
        Self::with_subsets(config, subsets, rng)
    }

    pub fn with_subsets(config: DatasetConfig, subsets: SubsetSpec, rng: &RngStream) -> Result<Self> {
        if subsets.a_end > config.input_size || subsets.b_end > config.input_size {
            return Err(Error::InvalidConfig("subset windows exceed the input size".into()));
        }
        let validation = gen_rows(
            &mut rng.derive("validation"),
            &config,
            &subsets,
            Split::Interpolation,
            config.validation_size,
        )?;
        let test = gen_rows(
            &mut rng.derive("test"),
            &config,
            &subsets,
            Split::Extrapolation,
            config.test_size,
        )?;
        Ok(Self {
            config,
            subsets,
            validation,
            test,
        })
    }

    pub fn static10(rng: &RngStream) -> Self {
        Self::with_subsets(static10_config(), STATIC10_SUBSETS, rng).expect("fixed windows fit")
    }

    pub fn train_batch(&self, rng: &mut RngStream) -> (Matrix, Vec<f64>) {
        gen_batch(rng, &self.config, &self.subsets, Split::Interpolation).expect("validated task")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_windows() {
        let cfg = DatasetConfig::default();
        assert_eq!((cfg.subset_len(), cfg.overlap_len()), (25, 12));
        for seed in 0..50 {
            let s = draw_subsets(&mut RngStream::new(seed), &cfg).unwrap();
            assert_eq!(s.a_end - s.a_start, 25);
            assert_eq!(s.b_end - s.b_start, 25);
            assert_eq!(s.overlap(), 12);
            assert!(s.b_end <= 100);
        }
    }

    #[test]
    fn overlap_extremes() {
        let full = DatasetConfig {
            overlap_ratio: 1.0,
            ..DatasetConfig::default()
        };
        let s = draw_subsets(&mut RngStream::new(1), &full).unwrap();
        assert_eq!((s.a_start, s.a_end), (s.b_start, s.b_end));
        let none = DatasetConfig {
            overlap_ratio: 0.0,
            ..DatasetConfig::default()
        };
        let s = draw_subsets(&mut RngStream::new(1), &none).unwrap();
        assert_eq!(s.a_end, s.b_start);
        assert_eq!(s.overlap(), 0);
    }

    #[test]
    fn offset_covers_full_span() {
        let cfg = DatasetConfig::default();
        let mut rng = RngStream::new(4);
        let starts: Vec<usize> = (0..5000).map(|_| draw_subsets(&mut rng, &cfg).unwrap().a_start).collect();
        assert_eq!(*starts.iter().min().unwrap(), 0);
        assert_eq!(*starts.iter().max().unwrap(), 100 - 38);
    }

    #[test]
    fn rejects_impossible_configs() {
        let tiny = DatasetConfig {
            input_size: 3,
            ..DatasetConfig::default()
        };
        assert!(draw_subsets(&mut RngStream::new(0), &tiny).is_err());
        let bad_s = DatasetConfig {
            subset_ratio: 0.6,
            ..DatasetConfig::default()
        };
        assert!(bad_s.validate().is_err());
        let sqrt_neg = DatasetConfig {
            operation: Operation::Sqrt,
            interpolation_range: Range::uniform(-2.0, 2.0).unwrap(),
            ..DatasetConfig::default()
        };
        assert!(sqrt_neg.validate().is_err());
    }

    #[test]
    fn static10_example() {
        assert!((target(Operation::Mul, &STATIC10_SUBSETS, &[1.0, 1.2, 1.8, 2.0]) - 13.2).abs() < 1e-12);
        assert_eq!(target(Operation::Mul, &STATIC10_SUBSETS, &[0.0; 4]), 0.0);
    }

    #[test]
    fn batch_targets_match_direct_loops() {
        for op in Operation::ALL {
            let cfg = DatasetConfig {
                operation: op,
                ..DatasetConfig::default()
            };
            let mut rng = RngStream::new(9);
            let s = draw_subsets(&mut rng, &cfg).unwrap();
            let (x, t) = gen_batch(&mut rng, &cfg, &s, Split::Interpolation).unwrap();
            assert_eq!(x.shape(), (128, 100));
            for r in 0..x.rows() {
                let mut a = 0.0;
                for i in s.a_start..s.a_end {
                    a += x.get(r, i);
                }
                let mut b = 0.0;
                for i in s.b_start..s.b_end {
                    b += x.get(r, i);
                }
                let want = match op {
                    Operation::Add => a + b,
                    Operation::Sub => a - b,
                    Operation::Mul => a * b,
                    Operation::Div => a / b,
                    Operation::Square => a * a,
                    Operation::Sqrt => a.sqrt(),
                };
                assert_eq!(t[r], want);
            }
        }
    }

    #[test]
    fn add_of_zero_inputs_is_zero() {
        let s = STATIC10_SUBSETS;
        assert_eq!(target(Operation::Add, &s, &[0.0; 4]), 0.0);
    }

    #[test]
    fn draws_respect_disjoint_supports() {
        let cfg = DatasetConfig {
            interpolation_range: "U[-2,2]".parse().unwrap(),
            extrapolation_range: "U[-6,-2]∪U[2,6]".parse().unwrap(),
            ..DatasetConfig::default()
        };
        assert!(cfg.interpolation_range.disjoint_from(&cfg.extrapolation_range));
        let mut rng = RngStream::new(2);
        let s = draw_subsets(&mut rng, &cfg).unwrap();
        let (xi, _) = gen_batch(&mut rng, &cfg, &s, Split::Interpolation).unwrap();
        let (xe, _) = gen_batch(&mut rng, &cfg, &s, Split::Extrapolation).unwrap();
        assert!(xi.data().iter().all(|&v| (-2.0..2.0).contains(&v)));
        assert!(xe.data().iter().all(|&v| cfg.extrapolation_range.contains(v) && !(-2.0..2.0).contains(&v)));
        let neg = xe.data().iter().filter(|&&v| v < 0.0).count() as f64 / xe.len() as f64;
        assert!((neg - 0.5).abs() < 0.03);
    }

    #[test]
    fn range_parse_round_trip() {
        for s in ["U[1,2]", "U[-6,-2]∪U[2,6]", "U[0.1,0.2]"] {
            let r: Range = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        let r: Range = "[-6, -2] | [2, 6]".parse().unwrap();
        assert_eq!(r.parts().len(), 2);
        assert!("U[2,1]".parse::<Range>().is_err());
        assert!("U[0,3]∪U[2,6]".parse::<Range>().is_err());
        assert!("nonsense".parse::<Range>().is_err());
    }

    #[test]
    fn sequence_targets() {
        let z = Matrix::from_rows(&[[2.0, 3.0, 4.0], [1.0, 0.0, 5.0]]);
        assert_eq!(cumulative(&z, Operation::Mul).data(), &[2.0, 6.0, 24.0, 1.0, 0.0, 0.0]);
        let ones = Matrix::from_rows(&[[1.0, 1.0, 1.0, 1.0]]);
        assert_eq!(cumulative(&ones, Operation::Add).data(), &[1.0, 2.0, 3.0, 4.0]);
        let (z, t) = gen_sequence_batch(&mut RngStream::new(3), 64, 5, (0, 9), Operation::Mul).unwrap();
        assert!(z.data().iter().all(|&d| d.fract() == 0.0 && (0.0..=9.0).contains(&d)));
        for r in 0..64 {
            if let Some(c) = (0..5).find(|&c| z.get(r, c) == 0.0) {
                assert!((c..5).all(|k| t.get(r, k) == 0.0));
            }
        }
        assert!(gen_sequence_batch(&mut RngStream::new(3), 1, 0, (0, 9), Operation::Mul).is_err());
        assert!(gen_sequence_batch(&mut RngStream::new(3), 1, 2, (0, 9), Operation::Div).is_err());
    }

    #[test]
    fn nearly_perfect_static10() {
        let eps = 1e-5;
        let (w1, w2) = nearly_perfect_weights(&static10_config(), &STATIC10_SUBSETS, eps);
        let e = 1.0 - eps;
        assert_eq!(w1, Matrix::from_rows(&[[e, e, eps, eps], [e, e, e, e]]));
        assert_eq!(w2, Matrix::from_rows(&[[1.0, 1.0]]));
    }

    #[test]
    fn task_is_deterministic() {
        let rng = RngStream::new(17);
        let cfg = DatasetConfig {
            validation_size: 50,
            test_size: 50,
            ..DatasetConfig::default()
        };
        let a = Task::new(cfg.clone(), &rng).unwrap();
        let b = Task::new(cfg, &rng).unwrap();
        assert_eq!(a.subsets, b.subsets);
        assert_eq!(a.validation.0, b.validation.0);
        assert_eq!(a.test.1, b.test.1);
    }
}
