//! Instance-level and cluster-level multi-view contrastive losses.
//!
//! Both levels share one temperature-scaled cross-entropy over cosine
//! similarities ([`contrast_rows`]): the instance level contrasts rows of the
//! instance features, the cluster level contrasts columns of the cluster
//! probability matrices and subtracts the entropy of the cluster marginals.
//! Every loss has a closed-form gradient so the caller can backpropagate
//! through whatever network produced its inputs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rows of a cluster-probability matrix must sum to one within this slack.
pub const SIMPLEX_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("at least two samples are required for negatives, got {0}")]
    TooFewSamples(usize),
    #[error("at least two clusters are required, got {0}")]
    TooFewClusters(usize),
    #[error("{what} {index} has zero norm; cosine similarity is undefined")]
    ZeroNorm { what: &'static str, index: usize },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("row {row} of the cluster matrix is off the simplex (sum {sum}, min {min})")]
    OffSimplex { row: usize, sum: f64, min: f64 },
    #[error("temperature must be finite and positive, got {0}")]
    InvalidTemperature(f64),
    #[error("view {0} is required by the objective but was not provided")]
    MissingView(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceLossConfig {
    pub tau_g: f64,
    /// Keep the anchor's similarity with itself in the denominator.
    pub include_self_term: bool,
}

impl Default for InstanceLossConfig {
    fn default() -> Self {
        Self {
            tau_g: 0.5,
            include_self_term: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterLossConfig {
    pub tau_h: f64,
    pub include_self_term: bool,
}

impl Default for ClusterLossConfig {
    fn default() -> Self {
        Self {
            tau_h: 1.0,
            include_self_term: false,
        }
    }
}

fn check_tau(tau: f64) -> Result<(), LossError> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(LossError::InvalidTemperature(tau))
    }
}

/// `u·v / (‖u‖ ‖v‖)`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, LossError> {
    if u.len() != v.len() {
        return Err(LossError::ShapeMismatch(vec![u.len()], vec![v.len()]));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 {
        return Err(LossError::ZeroNorm { what: "vector", index: 0 });
    }
    if nv == 0.0 {
        return Err(LossError::ZeroNorm { what: "vector", index: 1 });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Value and gradients of a two-view loss with respect to both inputs.
#[derive(Clone, Debug)]
pub struct PairGradient {
    pub value: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

/// Symmetric contrastive loss between the rows of `a` and `b` (K items each).
///
/// Row `i` of `a` and row `i` of `b` are positives; every other row of either
/// matrix is a negative. Returns `(1 / 2K) Σ_i (ℓ_i^a + ℓ_i^b)`.
fn contrast_rows(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    tau: f64,
    include_self: bool,
    what: &'static str,
) -> Result<PairGradient, LossError> {
    let k = a.nrows();
    let n = 2 * k;
    let mut x = Array2::<f64>::zeros((n, a.ncols()));
    x.slice_mut(ndarray::s![..k, ..]).assign(&a);
    x.slice_mut(ndarray::s![k.., ..]).assign(&b);

    let norms: Array1<f64> = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(LossError::ZeroNorm { what, index: i % k });
    }
    let u = &x / &norms.view().insert_axis(Axis(1));
    let sim = u.dot(&u.t());

    let scale = 1.0 / (n as f64 * tau);
    let mut value = 0.0;
    let mut g = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let pos = (i + k) % n;
        let row = sim.row(i);
        let allowed = |j: usize| include_self || j != i;
        let max = (0..n).filter(|&j| allowed(j)).map(|j| row[j] / tau).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&j| allowed(j)).map(|j| (row[j] / tau - max).exp()).sum();
        let lse = max + denom.ln();
        value += lse - row[pos] / tau;
        for j in (0..n).filter(|&j| allowed(j)) {
            g[[i, j]] = ((row[j] / tau - lse).exp()) * scale;
        }
        g[[i, pos]] -= scale;
    }
    value /= n as f64;

    // S = U Uᵀ, so dL/dU = (G + Gᵀ) U; then back through the row normalization.
    let sym = &g + &g.t();
    let du = sym.dot(&u);
    let mut dx = Array2::<f64>::zeros(x.raw_dim());
    for i in 0..n {
        let ui = u.row(i);
        let dui = du.row(i);
        let radial = ui.dot(&dui);
        let mut out = dx.row_mut(i);
        out.assign(&(&dui - &(&ui * radial)));
        out /= norms[i];
    }
    Ok(PairGradient {
        value,
        grad_a: dx.slice(ndarray::s![..k, ..]).to_owned(),
        grad_b: dx.slice(ndarray::s![k.., ..]).to_owned(),
    })
}

fn check_pair_shapes(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<(), LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite);
    }
    Ok(())
}

pub fn instance_pair_loss_grad(
    ya: ArrayView2<f64>,
    yb: ArrayView2<f64>,
    cfg: &InstanceLossConfig,
) -> Result<PairGradient, LossError> {
    check_tau(cfg.tau_g)?;
    check_pair_shapes(&ya, &yb)?;
    if ya.nrows() < 2 {
        return Err(LossError::TooFewSamples(ya.nrows()));
    }
    contrast_rows(ya, yb, cfg.tau_g, cfg.include_self_term, "row")
}

/// Instance-level loss between two views of the same N samples.
pub fn instance_pair_loss(ya: ArrayView2<f64>, yb: ArrayView2<f64>, cfg: &InstanceLossConfig) -> Result<f64, LossError> {
    instance_pair_loss_grad(ya, yb, cfg).map(|g| g.value)
}

/// Strong–weak pair (1, 2) plus weak–weak pair (2, 3).
pub fn instance_loss(
    y1: ArrayView2<f64>,
    y2: ArrayView2<f64>,
    y3: ArrayView2<f64>,
    cfg: &InstanceLossConfig,
) -> Result<f64, LossError> {
    Ok(instance_pair_loss(y1, y2, cfg)? + instance_pair_loss(y2, y3, cfg)?)
}

/// Cluster-level loss of one view pair, split into its two parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPairTerms {
    /// Column-contrastive part.
    pub contrastive: f64,
    /// Entropy of the cluster marginals of both views, `H(Y)`.
    pub entropy: f64,
}

impl ClusterPairTerms {
    /// `contrastive - entropy`.
    pub fn total(&self) -> f64 {
        self.contrastive - self.entropy
    }
}

#[derive(Clone, Debug)]
pub struct ClusterPairGradient {
    pub terms: ClusterPairTerms,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

fn check_simplex(c: &ArrayView2<f64>) -> Result<(), LossError> {
    for (row, r) in c.rows().into_iter().enumerate() {
        let sum = r.sum();
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        // slack for round-off when the deviation equals the tolerance
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE * (1.0 + 1e-9) || min < -SIMPLEX_TOLERANCE {
            return Err(LossError::OffSimplex { row, sum, min });
        }
    }
    Ok(())
}

/// Entropy of the column marginals `P_m = colsum_m / ‖Y‖₁` and its gradient
/// with respect to every entry of `Y`.
fn marginal_entropy(c: ArrayView2<f64>) -> (f64, Array2<f64>) {
    // plain entry sum: equals ‖Y‖₁ on the simplex and stays differentiable
    let total: f64 = c.sum();
    let p: Array1<f64> = c.sum_axis(Axis(0)) / total;
    let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
    // dH/dY_nm = -(ln P_m + H) / ‖Y‖₁
    let row: Array1<f64> = p.mapv(|v| -(v.max(f64::MIN_POSITIVE).ln() + h) / total);
    let grad = Array2::from_shape_fn(c.raw_dim(), |(_, m)| row[m]);
    (h, grad)
}

fn validate_cluster_pair(ca: &ArrayView2<f64>, cb: &ArrayView2<f64>, cfg: &ClusterLossConfig) -> Result<(), LossError> {
    check_tau(cfg.tau_h)?;
    check_pair_shapes(ca, cb)?;
    if ca.ncols() < 2 {
        return Err(LossError::TooFewClusters(ca.ncols()));
    }
    if ca.nrows() == 0 {
        return Err(LossError::TooFewSamples(0));
    }
    check_simplex(ca)?;
    check_simplex(cb)
}

pub fn cluster_pair_loss_grad(
    ca: ArrayView2<f64>,
    cb: ArrayView2<f64>,
    cfg: &ClusterLossConfig,
) -> Result<ClusterPairGradient, LossError> {
    validate_cluster_pair(&ca, &cb, cfg)?;
    let contrast = contrast_rows(ca.t(), cb.t(), cfg.tau_h, cfg.include_self_term, "column")?;
    let (ha, gha) = marginal_entropy(ca);
    let (hb, ghb) = marginal_entropy(cb);
    // d(-H)/dY = -dH/dY
    let grad_a = contrast.grad_a.t().to_owned() - gha;
    let grad_b = contrast.grad_b.t().to_owned() - ghb;
    Ok(ClusterPairGradient {
        terms: ClusterPairTerms {
            contrastive: contrast.value,
            entropy: ha + hb,
        },
        grad_a,
        grad_b,
    })
}

pub fn cluster_pair_terms(
    ca: ArrayView2<f64>,
    cb: ArrayView2<f64>,
    cfg: &ClusterLossConfig,
) -> Result<ClusterPairTerms, LossError> {
    cluster_pair_loss_grad(ca, cb, cfg).map(|g| g.terms)
}

/// Cluster-level loss of one view pair, entropy regularizer included.
pub fn cluster_pair_loss(ca: ArrayView2<f64>, cb: ArrayView2<f64>, cfg: &ClusterLossConfig) -> Result<f64, LossError> {
    cluster_pair_terms(ca, cb, cfg).map(|t| t.total())
}

/// Sum over all three view pairs.
pub fn cluster_loss(
    c1: ArrayView2<f64>,
    c2: ArrayView2<f64>,
    c3: ArrayView2<f64>,
    cfg: &ClusterLossConfig,
) -> Result<f64, LossError> {
    Ok(cluster_pair_loss(c1, c2, cfg)? + cluster_pair_loss(c1, c3, cfg)? + cluster_pair_loss(c2, c3, cfg)?)
}

/// Head outputs of one augmented view: raw instance features and cluster
/// probabilities.
#[derive(Clone, Copy, Debug)]
pub struct ViewOutputs<'a> {
    pub y: ArrayView2<'a, f64>,
    pub c: ArrayView2<'a, f64>,
}

/// Gradient of the objective with respect to one view's head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGradient {
    pub y: Array2<f64>,
    pub c: Array2<f64>,
}

/// Which view pairs (1-based: 1 strong, 2 and 3 weak) enter each loss level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub instance_pairs: Vec<(usize, usize)>,
    pub cluster_pairs: Vec<(usize, usize)>,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            instance_pairs: vec![(1, 2), (2, 3)],
            cluster_pairs: vec![(1, 2), (1, 3), (2, 3)],
        }
    }
}

impl Objective {
    pub fn views_used(&self) -> [bool; 3] {
        let mut used = [false; 3];
        for &(a, b) in self.instance_pairs.iter().chain(&self.cluster_pairs) {
            used[a - 1] = true;
            used[b - 1] = true;
        }
        used
    }
}

/// Per-term breakdown of the objective. Terms the objective does not contain
/// are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub instance_12: Option<f64>,
    pub instance_23: Option<f64>,
    /// Includes its `-H(Y)`.
    pub cluster_12: Option<f64>,
    pub cluster_13: Option<f64>,
    pub cluster_23: Option<f64>,
    pub entropy_12: Option<f64>,
    pub entropy_13: Option<f64>,
    pub entropy_23: Option<f64>,
}

impl LossReport {
    pub fn instance_sum(&self) -> f64 {
        [self.instance_12, self.instance_23].into_iter().flatten().sum()
    }

    pub fn cluster_sum(&self) -> f64 {
        [self.cluster_12, self.cluster_13, self.cluster_23].into_iter().flatten().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && [
                self.instance_12,
                self.instance_23,
                self.cluster_12,
                self.cluster_13,
                self.cluster_23,
                self.entropy_12,
                self.entropy_13,
                self.entropy_23,
            ]
            .into_iter()
            .flatten()
            .all(f64::is_finite)
    }

    fn set_instance(&mut self, pair: (usize, usize), v: f64) {
        match pair {
            (1, 2) | (2, 1) => self.instance_12 = Some(v),
            (2, 3) | (3, 2) => self.instance_23 = Some(v),
            // no report slot for (1, 3); it only enters the total
            _ => {}
        }
    }

    fn set_cluster(&mut self, pair: (usize, usize), terms: ClusterPairTerms) {
        let (slot, ent) = match pair {
            (1, 2) | (2, 1) => (&mut self.cluster_12, &mut self.entropy_12),
            (1, 3) | (3, 1) => (&mut self.cluster_13, &mut self.entropy_13),
            _ => (&mut self.cluster_23, &mut self.entropy_23),
        };
        *slot = Some(terms.total());
        *ent = Some(terms.entropy);
    }
}

/// Evaluates `objective` on the given views (index 0 is view 1) and returns
/// the report together with per-view gradients. Views the objective does not
/// touch may be `None` and get no gradient.
pub fn objective_with_grad(
    views: &[Option<ViewOutputs<'_>>; 3],
    objective: &Objective,
    inst: &InstanceLossConfig,
    clu: &ClusterLossConfig,
) -> Result<(LossReport, [Option<ViewGradient>; 3]), LossError> {
    let mut grads: [Option<ViewGradient>; 3] = Default::default();
    for (j, used) in objective.views_used().into_iter().enumerate() {
        if used {
            let v = views[j].ok_or(LossError::MissingView(j + 1))?;
            grads[j] = Some(ViewGradient {
                y: Array2::zeros(v.y.raw_dim()),
                c: Array2::zeros(v.c.raw_dim()),
            });
        }
    }
    let view = |j: usize| views[j - 1].ok_or(LossError::MissingView(j));
    let mut report = LossReport::default();
    for &(a, b) in &objective.instance_pairs {
        let g = instance_pair_loss_grad(view(a)?.y, view(b)?.y, inst)?;
        report.total += g.value;
        report.set_instance((a, b), g.value);
        grads[a - 1].as_mut().unwrap().y += &g.grad_a;
        grads[b - 1].as_mut().unwrap().y += &g.grad_b;
    }
    for &(a, b) in &objective.cluster_pairs {
        let g = cluster_pair_loss_grad(view(a)?.c, view(b)?.c, clu)?;
        report.total += g.terms.total();
        report.set_cluster((a, b), g.terms);
        grads[a - 1].as_mut().unwrap().c += &g.grad_a;
        grads[b - 1].as_mut().unwrap().c += &g.grad_b;
    }
    Ok((report, grads))
}

/// The full three-view objective: instance loss plus cluster loss.
pub fn total_loss(
    views: &[ViewOutputs<'_>; 3],
    inst: &InstanceLossConfig,
    clu: &ClusterLossConfig,
) -> Result<LossReport, LossError> {
    total_loss_with_grad(views, inst, clu).map(|(r, _)| r)
}

pub fn total_loss_with_grad(
    views: &[ViewOutputs<'_>; 3],
    inst: &InstanceLossConfig,
    clu: &ClusterLossConfig,
) -> Result<(LossReport, [ViewGradient; 3]), LossError> {
    let opt = [Some(views[0]), Some(views[1]), Some(views[2])];
    let (report, grads) = objective_with_grad(&opt, &Objective::default(), inst, clu)?;
    let [g1, g2, g3] = grads;
    Ok((report, [g1.unwrap(), g2.unwrap(), g3.unwrap()]))
}

/// Row-wise L2 normalization; zero rows are left at zero.
pub fn l2_normalize_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut r in out.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
