//! Arithmetic layers: forward pass, hand-derived backward pass and the
//! per-iteration weight constraints.
//!
//! Every unit maps a `batch x in_dim` input to a `batch x out_dim` output.
//! Parameters are held as an ordered list of named matrices; gradients are
//! returned in the same order.

mod kernels;

pub(crate) use kernels::abs_grad;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};


#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitKind {
    Linear,
    Relu,
    Relu6,
    NacAdd,
    NacMul,
    NacMulSigma,
    NacMulNmu,
    Nau,
    Nmu,
    Nalu,
    GatedNauNmu,
}

impl UnitKind {
    pub const ALL: [UnitKind; 11] = [
        UnitKind::Linear,
        UnitKind::Relu,
        UnitKind::Relu6,
        UnitKind::NacAdd,
        UnitKind::NacMul,
        UnitKind::NacMulSigma,
        UnitKind::NacMulNmu,
        UnitKind::Nau,
        UnitKind::Nmu,
        UnitKind::Nalu,
        UnitKind::GatedNauNmu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Linear => "linear",
            UnitKind::Relu => "relu",
            UnitKind::Relu6 => "relu6",
            UnitKind::NacAdd => "nac-add",
            UnitKind::NacMul => "nac-mul",
            UnitKind::NacMulSigma => "nac-mul-sigma",
            UnitKind::NacMulNmu => "nac-mul-nmu",
            UnitKind::Nau => "nau",
            UnitKind::Nmu => "nmu",
            UnitKind::Nalu => "nalu",
            UnitKind::GatedNauNmu => "gated-nau-nmu",
        }
    }

    /// Kinds whose effective weight is built from `tanh(Ŵ)σ(M̂)` (or `σ(Ŵ)`).
    pub fn is_nac_family(self) -> bool {
        matches!(
            self,
            UnitKind::NacAdd | UnitKind::NacMul | UnitKind::NacMulSigma
        )
    }

    pub fn is_gated(self) -> bool {
        matches!(self, UnitKind::Nalu | UnitKind::GatedNauNmu)
    }
}

impl std::fmt::Display for UnitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UnitKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown unit kind '{s}'")))
    }
}

/// Per-unit switches. The flags are independent so that each constraint can be
/// ablated on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitConfig {
    /// ε inside `log(|x| + ε)` for the exp-log units.
    pub epsilon: f64,
    pub clamp_enabled: bool,
    pub sparsity_regularizer_enabled: bool,
    /// NALU only: share `Ŵ, M̂` between the additive and multiplicative paths.
    pub nalu_shared_weights: bool,
    /// Gated kinds only: replace `σ(Gx)` by this constant.
    pub forced_gate: Option<f64>,
}

impl Default for UnitConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-7,
            clamp_enabled: true,
            sparsity_regularizer_enabled: true,
            nalu_shared_weights: true,
            forced_gate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Frozen parameters receive gradients but are skipped by the optimizer.
    pub frozen: bool,
}

/// Which sparse targets a directly stored weight is pulled toward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SparseFamily {
    /// `{-1, 0, 1}`, weights clamped to `[-1, 1]` (NAU).
    Signed,
    /// `{0, 1}`, weights clamped to `[0, 1]` (NMU).
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Branch {
    Additive,
    ExpLog,
    Product,
}

#[derive(Clone, Copy, Debug)]
enum WeightSource {
    Direct(usize),
    Nac(usize, usize),
    Sigma(usize),
}

#[derive(Clone, Debug)]
struct BranchCache {
    w: Matrix,
    out: Matrix,
    logs: Option<Matrix>,
    factors: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
enum KindCache {
    Affine { pre: Matrix },
    Single(BranchCache),
    Gated { gate: Matrix, add: BranchCache, mul: BranchCache },
}

/// Everything `backward` needs from the matching `forward` call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Matrix,
    inner: KindCache,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Gate activations `g` of a gated unit (`batch x out`).
    pub fn gate(&self) -> Option<&Matrix> {
        match &self.inner {
            KindCache::Gated { gate, .. } => Some(gate),
            _ => None,
        }
    }

    /// Per-factor terms `W z + 1 - W` of a product unit, `[batch][out][in]`.
    pub fn product_factors(&self) -> Option<&[f64]> {
        match &self.inner {
            KindCache::Single(b) => b.factors.as_deref(),
            KindCache::Gated { mul, .. } => mul.factors.as_deref(),
            KindCache::Affine { .. } => None,
        }
    }

    /// `log(|z| + ε)` terms of an exp-log unit.
    pub fn log_terms(&self) -> Option<&Matrix> {
        match &self.inner {
            KindCache::Single(b) => b.logs.as_ref(),
            KindCache::Gated { mul, .. } => mul.logs.as_ref(),
            KindCache::Affine { .. } => None,
        }
    }
}

/// One arithmetic layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    kind: UnitKind,
    in_dim: usize,
    out_dim: usize,
    config: UnitConfig,
    params: Vec<Param>,
}

fn param_layout(kind: UnitKind, config: &UnitConfig, in_dim: usize, out_dim: usize) -> Vec<Param> {
    let p = |name: &str, rows, cols| Param {
        name: name.to_string(),
        value: Matrix::zeros(rows, cols),
        frozen: false,
    };
    let w = |name: &str| p(name, out_dim, in_dim);
    match kind {
        UnitKind::Linear | UnitKind::Relu | UnitKind::Relu6 => vec![w("W"), p("b", 1, out_dim)],
        UnitKind::Nau | UnitKind::Nmu | UnitKind::NacMulNmu => vec![w("W")],
        UnitKind::NacAdd | UnitKind::NacMul => vec![w("W_hat"), w("M_hat")],
        UnitKind::NacMulSigma => vec![w("W_hat")],
        UnitKind::Nalu if config.nalu_shared_weights => vec![w("G"), w("W_hat"), w("M_hat")],
        UnitKind::Nalu => vec![
            w("G"),
            w("add.W_hat"),
            w("add.M_hat"),
            w("mul.W_hat"),
            w("mul.M_hat"),
        ],
        UnitKind::GatedNauNmu => vec![w("G"), w("add.W"), w("mul.W")],
    }
}

impl Unit {
    /// Creates a unit with zero-valued parameters of the right shapes; see
    /// [`crate::initialization::init_unit`] for the initialization schemes.
    pub fn new(kind: UnitKind, in_dim: usize, out_dim: usize, config: UnitConfig) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "unit dimensions must be positive, got {in_dim} -> {out_dim}"
            )));
        }
        if !(config.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                config.epsilon
            )));
        }
        let params = param_layout(kind, &config, in_dim, out_dim);
        Ok(Self {
            kind,
            in_dim,
            out_dim,
            config,
            params,
        })
    }

    pub fn kind(&self) -> UnitKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn config(&self) -> &UnitConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut UnitConfig {
        &mut self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(move |i| &mut self.params[i].value)
    }

    pub fn set_param(&mut self, name: &str, value: Matrix) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidInput(format!("{} has no parameter '{name}'", self.kind)))?;
        let (r, c) = self.params[i].value.shape();
        value.expect_shape(r, c, "set_param")?;
        self.params[i].value = value;
        Ok(())
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidInput(format!("{} has no parameter '{name}'", self.kind)))?;
        self.params[i].frozen = true;
        Ok(())
    }

    fn idx(&self, name: &str) -> usize {
        self.index_of(name).expect("layout is fixed per kind")
    }

    fn branches(&self) -> Vec<(Branch, WeightSource)> {
        use WeightSource::*;
        match self.kind {
            UnitKind::Linear | UnitKind::Relu | UnitKind::Relu6 => vec![],
            UnitKind::Nau => vec![(Branch::Additive, Direct(self.idx("W")))],
            UnitKind::Nmu => vec![(Branch::Product, Direct(self.idx("W")))],
            UnitKind::NacMulNmu => vec![(Branch::ExpLog, Direct(self.idx("W")))],
            UnitKind::NacAdd => vec![(Branch::Additive, Nac(self.idx("W_hat"), self.idx("M_hat")))],
            UnitKind::NacMul => vec![(Branch::ExpLog, Nac(self.idx("W_hat"), self.idx("M_hat")))],
            UnitKind::NacMulSigma => vec![(Branch::ExpLog, Sigma(self.idx("W_hat")))],
            UnitKind::Nalu if self.config.nalu_shared_weights => {
                let src = Nac(self.idx("W_hat"), self.idx("M_hat"));
                vec![(Branch::Additive, src), (Branch::ExpLog, src)]
            }
            UnitKind::Nalu => vec![
                (Branch::Additive, Nac(self.idx("add.W_hat"), self.idx("add.M_hat"))),
                (Branch::ExpLog, Nac(self.idx("mul.W_hat"), self.idx("mul.M_hat"))),
            ],
            UnitKind::GatedNauNmu => vec![
                (Branch::Additive, Direct(self.idx("add.W"))),
                (Branch::Product, Direct(self.idx("mul.W"))),
            ],
        }
    }

    fn build_weight(&self, src: WeightSource) -> Matrix {
        match src {
            WeightSource::Direct(i) => self.params[i].value.clone(),
            WeightSource::Nac(w, m) => kernels::nac_weight(&self.params[w].value, &self.params[m].value),
            WeightSource::Sigma(w) => self.params[w].value.map(sigmoid),
        }
    }

    /// The NAC-family weight `tanh(Ŵ)σ(M̂)`, or `σ(Ŵ)` for [`UnitKind::NacMulSigma`].
    pub fn effective_weight(&self) -> Result<Matrix> {
        if !self.kind.is_nac_family() {
            return Err(Error::InvalidInput(format!(
                "effective_weight is defined for the NAC family only; {} stores W directly",
                self.kind
            )));
        }
        let (_, src) = self.branches()[0];
        Ok(self.build_weight(src))
    }

    /// The weight matrices that select inputs, as seen by the arithmetic
    /// (effective weights for the NAC family). Gates and biases are excluded.
    pub fn arithmetic_weights(&self) -> Vec<Matrix> {
        match self.kind {
            UnitKind::Linear | UnitKind::Relu | UnitKind::Relu6 => {
                vec![self.params[self.idx("W")].value.clone()]
            }
            UnitKind::Nalu if self.config.nalu_shared_weights => {
                vec![self.build_weight(self.branches()[0].1)]
            }
            _ => self
                .branches()
                .into_iter()
                .map(|(_, src)| self.build_weight(src))
                .collect(),
        }
    }

    /// Directly stored weights subject to clamping and the sparsity penalty.
    pub fn constrained_weights(&self) -> Vec<(&str, SparseFamily)> {
        match self.kind {
            UnitKind::Nau => vec![("W", SparseFamily::Signed)],
            UnitKind::Nmu | UnitKind::NacMulNmu => vec![("W", SparseFamily::Unit)],
            UnitKind::GatedNauNmu => vec![("add.W", SparseFamily::Signed), ("mul.W", SparseFamily::Unit)],
            _ => vec![],
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim {
            return Err(Error::DimensionMismatch {
                op: "Unit::forward",
                expected: format!("{} input columns", self.in_dim),
                got: format!("{} columns", x.cols()),
            });
        }
        Ok(())
    }

    fn branch_forward(&self, branch: Branch, w: Matrix, x: &Matrix) -> BranchCache {
        match branch {
            Branch::Additive => BranchCache {
                out: kernels::additive_forward(x, &w),
                w,
                logs: None,
                factors: None,
            },
            Branch::ExpLog => {
                let (out, logs) = kernels::explog_forward(x, &w, self.config.epsilon);
                BranchCache {
                    w,
                    out,
                    logs: Some(logs),
                    factors: None,
                }
            }
            Branch::Product => {
                let (out, factors) = kernels::nmu_forward(x, &w);
                BranchCache {
                    w,
                    out,
                    logs: None,
                    factors: Some(factors),
                }
            }
        }
    }

    fn branch_backward(
        &self,
        branch: Branch,
        cache: &BranchCache,
        x: &Matrix,
        gy: &Matrix,
    ) -> (Matrix, Matrix) {
        match branch {
            Branch::Additive => kernels::additive_backward(x, &cache.w, gy),
            Branch::ExpLog => kernels::explog_backward(
                x,
                &cache.w,
                self.config.epsilon,
                cache.logs.as_ref().expect("exp-log cache"),
                &cache.out,
                gy,
            ),
            Branch::Product => {
                kernels::nmu_backward(x, &cache.w, cache.factors.as_ref().expect("product cache"), gy)
            }
        }
    }

    fn accumulate_weight_grad(&self, src: WeightSource, gw: &Matrix, grads: &mut [Matrix]) {
        match src {
            WeightSource::Direct(i) => grads[i].add_assign(gw).expect("same shape"),
            WeightSource::Nac(w, m) => {
                let (gw_hat, gm_hat) =
                    kernels::nac_weight_backward(&self.params[w].value, &self.params[m].value, gw);
                grads[w].add_assign(&gw_hat).expect("same shape");
                grads[m].add_assign(&gm_hat).expect("same shape");
            }
            WeightSource::Sigma(i) => {
                let mut g = self.params[i].value.map(|v| {
                    let s = sigmoid(v);
                    s * (1.0 - s)
                });
                for (gi, &d) in g.data_mut().iter_mut().zip(gw.data()) {
                    *gi *= d;
                }
                grads[i].add_assign(&g).expect("same shape");
            }
        }
    }

    fn gate_activations(&self, x: &Matrix) -> Matrix {
        match self.config.forced_gate {
            Some(g) => Matrix::filled(x.rows(), self.out_dim, g),
            None => {
                let mut g = x.matmul_t(&self.params[self.idx("G")].value).expect("checked");
                g.map_inplace(sigmoid);
                g
            }
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let (y, inner) = match self.kind {
            UnitKind::Linear | UnitKind::Relu | UnitKind::Relu6 => {
                let pre = kernels::affine_forward(
                    x,
                    &self.params[self.idx("W")].value,
                    &self.params[self.idx("b")].value,
                );
                let y = match self.kind {
                    UnitKind::Relu => pre.map(|v| v.max(0.0)),
                    UnitKind::Relu6 => pre.map(|v| v.clamp(0.0, 6.0)),
                    _ => pre.clone(),
                };
                (y, KindCache::Affine { pre })
            }
            kind if kind.is_gated() => {
                let branches = self.branches();
                let (add_b, add_src) = branches[0];
                let (mul_b, mul_src) = branches[1];
                let add = self.branch_forward(add_b, self.build_weight(add_src), x);
                let mul = self.branch_forward(mul_b, self.build_weight(mul_src), x);
                let gate = self.gate_activations(x);
                let mut y = Matrix::zeros(x.rows(), self.out_dim);
                for ((o, &g), (&a, &m)) in y
                    .data_mut()
                    .iter_mut()
                    .zip(gate.data())
                    .zip(add.out.data().iter().zip(mul.out.data()))
                {
                    *o = g * a + (1.0 - g) * m;
                }
                (y, KindCache::Gated { gate, add, mul })
            }
            _ => {
                let (branch, src) = self.branches()[0];
                let cache = self.branch_forward(branch, self.build_weight(src), x);
                (cache.out.clone(), KindCache::Single(cache))
            }
        };
        Ok((
            y,
            ForwardCache {
                input: x.clone(),
                inner,
            },
        ))
    }

    /// Returns `(dL/dx, dL/dparams)` given `dL/dy`, parameter gradients summed
    /// over the batch and ordered like [`Unit::params`].
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<(Matrix, Vec<Matrix>)> {
        let x = &cache.input;
        grad_out.expect_shape(x.rows(), self.out_dim, "Unit::backward")?;
        let mut grads: Vec<Matrix> = self
            .params
            .iter()
            .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let gx = match &cache.inner {
            KindCache::Affine { pre } => {
                let mut gpre = grad_out.clone();
                match self.kind {
                    UnitKind::Relu => {
                        for (g, &p) in gpre.data_mut().iter_mut().zip(pre.data()) {
                            if p <= 0.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    UnitKind::Relu6 => {
                        for (g, &p) in gpre.data_mut().iter_mut().zip(pre.data()) {
                            if p <= 0.0 || p >= 6.0 {
                                *g = 0.0;
                            }
                        }
                    }
                    _ => {}
                }
                let wi = self.idx("W");
                let (gx, gw) = kernels::additive_backward(x, &self.params[wi].value, &gpre);
                grads[wi] = gw;
                grads[self.idx("b")] = kernels::column_sums(&gpre);
                gx
            }
            KindCache::Single(bc) => {
                let (branch, src) = self.branches()[0];
                let (gx, gw) = self.branch_backward(branch, bc, x, grad_out);
                self.accumulate_weight_grad(src, &gw, &mut grads);
                gx
            }
            KindCache::Gated { gate, add, mul } => {
                let branches = self.branches();
                let n = grad_out.len();
                let mut g_add = Matrix::zeros(x.rows(), self.out_dim);
                let mut g_mul = Matrix::zeros(x.rows(), self.out_dim);
                let mut g_pre = Matrix::zeros(x.rows(), self.out_dim);
                for i in 0..n {
                    let gy = grad_out.data()[i];
                    let g = gate.data()[i];
                    g_add.data_mut()[i] = gy * g;
                    g_mul.data_mut()[i] = gy * (1.0 - g);
                    g_pre.data_mut()[i] = gy * (add.out.data()[i] - mul.out.data()[i]) * g * (1.0 - g);
                }
                let (gx_a, gw_a) = self.branch_backward(branches[0].0, add, x, &g_add);
                let (gx_m, gw_m) = self.branch_backward(branches[1].0, mul, x, &g_mul);
                self.accumulate_weight_grad(branches[0].1, &gw_a, &mut grads);
                self.accumulate_weight_grad(branches[1].1, &gw_m, &mut grads);
                let mut gx = gx_a;
                gx.add_assign(&gx_m)?;
                if self.config.forced_gate.is_none() {
                    let gi = self.idx("G");
                    let (gx_g, g_g) = kernels::additive_backward(x, &self.params[gi].value, &g_pre);
                    grads[gi] = g_g;
                    gx.add_assign(&gx_g)?;
                }
                gx
            }
        };
        Ok((gx, grads))
    }

    /// Projects constrained weights back onto their box: `[-1, 1]` for the
    /// additive unit, `[0, 1]` for the product units. No-op when clamping is
    /// disabled.
    pub fn clamp_weights(&mut self) {
        if !self.config.clamp_enabled {
            return;
        }
        let targets: Vec<(usize, SparseFamily)> = self
            .constrained_weights()
            .into_iter()
            .map(|(name, fam)| (self.idx(name), fam))
            .collect();
        for (i, fam) in targets {
            let (lo, hi) = match fam {
                SparseFamily::Signed => (-1.0, 1.0),
                SparseFamily::Unit => (0.0, 1.0),
            };
            self.params[i].value.map_inplace(|w| w.clamp(lo, hi));
        }
    }

    /// Mean gate value `σ(Gx)` over a batch, for gated kinds.
    pub fn mean_gate(&self, x: &Matrix) -> Result<Option<f64>> {
        if !self.kind.is_gated() {
            return Ok(None);
        }
        self.check_input(x)?;
        Ok(Some(self.gate_activations(x).mean()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_with(kind: UnitKind, w: Matrix) -> Unit {
        let mut u = Unit::new(kind, w.cols(), w.rows(), UnitConfig::default()).unwrap();
        u.set_param("W", w).unwrap();
        u
    }

    #[test]
    fn nmu_identity_when_weights_zero() {
        let u = unit_with(UnitKind::Nmu, Matrix::from_rows(&[[0.0, 0.0]]));
        let (y, _) = u.forward(&Matrix::from_rows(&[[7.0, -3.0]])).unwrap();
        assert_eq!(y.data(), &[1.0]);
    }

    #[test]
    fn nmu_half_weights() {
        let u = unit_with(UnitKind::Nmu, Matrix::from_rows(&[[0.5, 0.5]]));
        let (y, _) = u.forward(&Matrix::from_rows(&[[2.0, 3.0]])).unwrap();
        assert!((y.get(0, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn nac_mul_with_inverse_weight() {
        let u = unit_with(UnitKind::NacMulNmu, Matrix::from_rows(&[[1.0, -1.0]]));
        let (y, _) = u.forward(&Matrix::from_rows(&[[2.0, 4.0]])).unwrap();
        assert!((y.get(0, 0) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn nau_subset_sums() {
        let u = unit_with(
            UnitKind::Nau,
            Matrix::from_rows(&[[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]]),
        );
        let (y, _) = u.forward(&Matrix::from_rows(&[[1.0, 1.2, 1.8, 2.0]])).unwrap();
        assert!((y.get(0, 0) - 2.2).abs() < 1e-12);
        assert!((y.get(0, 1) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let u = unit_with(UnitKind::Nau, Matrix::zeros(1, 3));
        assert!(matches!(
            u.forward(&Matrix::zeros(2, 4)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn effective_weight_values() {
        let mut u = Unit::new(UnitKind::NacAdd, 2, 1, UnitConfig::default()).unwrap();
        u.set_param("W_hat", Matrix::from_rows(&[[0.0, 1.0]])).unwrap();
        u.set_param("M_hat", Matrix::from_rows(&[[5.0, 0.0]])).unwrap();
        let w = u.effective_weight().unwrap();
        assert_eq!(w.get(0, 0), 0.0);
        assert!((w.get(0, 1) - 0.380_797_077_977_882_4).abs() < 1e-12);

        u.set_param("W_hat", Matrix::from_rows(&[[40.0, 40.0]])).unwrap();
        u.set_param("M_hat", Matrix::from_rows(&[[40.0, 40.0]])).unwrap();
        assert!((u.effective_weight().unwrap().get(0, 0) - 1.0).abs() < 1e-15);

        let nau = unit_with(UnitKind::Nau, Matrix::zeros(1, 2));
        assert!(nau.effective_weight().is_err());
    }

    #[test]
    fn nac_mul_sigma_uses_sigmoid_only() {
        let mut u = Unit::new(UnitKind::NacMulSigma, 1, 1, UnitConfig::default()).unwrap();
        u.set_param("W_hat", Matrix::from_rows(&[[0.0]])).unwrap();
        assert_eq!(u.effective_weight().unwrap().get(0, 0), 0.5);
    }

    #[test]
    fn nmu_zero_weights_have_zero_input_gradient() {
        let u = unit_with(UnitKind::Nmu, Matrix::from_rows(&[[0.0, 0.0]]));
        let x = Matrix::from_rows(&[[1.5, -2.0], [0.3, 4.0]]);
        let (_, cache) = u.forward(&x).unwrap();
        let (gx, _) = u.backward(&cache, &Matrix::from_rows(&[[1.0], [-2.0]])).unwrap();
        assert!(gx.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn nac_add_input_gradient_is_transposed_weight() {
        let mut u = Unit::new(UnitKind::NacAdd, 3, 2, UnitConfig::default()).unwrap();
        u.set_param("W_hat", Matrix::from_rows(&[[0.2, -0.4, 1.0], [0.7, 0.1, -0.3]])).unwrap();
        u.set_param("M_hat", Matrix::from_rows(&[[0.5, 0.5, -1.0], [2.0, 0.0, 1.0]])).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]);
        let (_, cache) = u.forward(&x).unwrap();
        let gy = Matrix::from_rows(&[[0.3, -1.1]]);
        let (gx, _) = u.backward(&cache, &gy).unwrap();
        let expected = gy.matmul(&u.effective_weight().unwrap()).unwrap();
        assert_eq!(gx, expected);
    }

    #[test]
    fn clamp_weights_projects_and_is_idempotent() {
        let mut nau = unit_with(UnitKind::Nau, Matrix::from_rows(&[[1.7, -3.0, 0.2]]));
        nau.clamp_weights();
        assert_eq!(nau.param("W").unwrap().data(), &[1.0, -1.0, 0.2]);

        let mut nmu = unit_with(UnitKind::Nmu, Matrix::from_rows(&[[-0.3, 0.6, 1.2]]));
        nmu.clamp_weights();
        assert_eq!(nmu.param("W").unwrap().data(), &[0.0, 0.6, 1.0]);
        let once = nmu.clone();
        nmu.clamp_weights();
        assert_eq!(once, nmu);
    }

    #[test]
    fn clamp_disabled_is_noop() {
        let mut cfg = UnitConfig::default();
        cfg.clamp_enabled = false;
        let mut nmu = Unit::new(UnitKind::Nmu, 1, 1, cfg).unwrap();
        nmu.set_param("W", Matrix::from_rows(&[[-0.3]])).unwrap();
        nmu.clamp_weights();
        assert_eq!(nmu.param("W").unwrap().data(), &[-0.3]);
    }

    #[test]
    fn forced_gate_selects_sub_units() {
        let mut cfg = UnitConfig::default();
        cfg.nalu_shared_weights = true;
        let mut nalu = Unit::new(UnitKind::Nalu, 2, 1, cfg.clone()).unwrap();
        let wh = Matrix::from_rows(&[[0.4, 1.3]]);
        let mh = Matrix::from_rows(&[[1.0, -0.2]]);
        nalu.set_param("W_hat", wh.clone()).unwrap();
        nalu.set_param("M_hat", mh.clone()).unwrap();
        let mut add = Unit::new(UnitKind::NacAdd, 2, 1, cfg.clone()).unwrap();
        add.set_param("W_hat", wh.clone()).unwrap();
        add.set_param("M_hat", mh.clone()).unwrap();
        let mut mul = Unit::new(UnitKind::NacMul, 2, 1, cfg).unwrap();
        mul.set_param("W_hat", wh).unwrap();
        mul.set_param("M_hat", mh).unwrap();
        let x = Matrix::from_rows(&[[1.5, 2.5], [0.7, -3.0]]);

        nalu.config_mut().forced_gate = Some(1.0);
        assert_eq!(nalu.forward(&x).unwrap().0, add.forward(&x).unwrap().0);
        nalu.config_mut().forced_gate = Some(0.0);
        assert_eq!(nalu.forward(&x).unwrap().0, mul.forward(&x).unwrap().0);
    }

    #[test]
    fn parse_kind_names() {
        for k in UnitKind::ALL {
            assert_eq!(k.name().parse::<UnitKind>().unwrap(), k);
        }
        assert!("bogus".parse::<UnitKind>().is_err());
    }
}
