//! Ising and hardcore model builders, and the model-specific exact checks.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measure::{dot_spin, spin, SpinMeasure, N_MAX};
use crate::report::CheckRecord;

/// Simple undirected graph on `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        let mut list = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidGraph(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at {a}")));
            }
            if adj[a].contains(&b) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
            list.push((a.min(b), a.max(b)));
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        Ok(Self { n, adj, edges: list })
    }

    pub fn path(n: usize) -> Self {
        let e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &e).expect("path")
    }

    pub fn cycle(n: usize) -> Self {
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::from_edges(n, &e).expect("cycle")
    }

    /// Star with centre 0 and `leaves` leaves.
    pub fn star(leaves: usize) -> Self {
        let e: Vec<_> = (1..=leaves).map(|i| (0, i)).collect();
        Self::from_edges(leaves + 1, &e).expect("star")
    }

    pub fn complete(n: usize) -> Self {
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                e.push((i, j));
            }
        }
        Self::from_edges(n, &e).expect("complete")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Whether the `+1` coordinates of cube configuration `x` form an independent set.
    pub fn is_independent(&self, x: usize) -> bool {
        self.edges.iter().all(|&(i, j)| (x >> i) & 1 == 0 || (x >> j) & 1 == 0)
    }

    /// Number of edges whose endpoints agree in configuration `x`.
    pub fn monochromatic(&self, x: usize) -> usize {
        self.edges.iter().filter(|&&(i, j)| (x >> i) & 1 == (x >> j) & 1).count()
    }
}

/// Which exponent the interaction matrix enters with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Convention {
    /// Density proportional to `exp(<x, Jx> + <v, x>)`.
    Standard,
    /// Density proportional to `exp(-λ <x, Jx> + <v, x>)`.
    Damped { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsingSpec {
    pub j: DMatrix<f64>,
    pub v: Vec<f64>,
    pub convention: Convention,
}

impl IsingSpec {
    pub fn new(j: DMatrix<f64>, v: Vec<f64>) -> Result<Self> {
        let s = Self { j, v, convention: Convention::Standard };
        s.validate()?;
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.v.len();
        if self.j.nrows() != n || self.j.ncols() != n {
            return Err(Error::Malformed(format!("J is {}x{}, field has length {n}", self.j.nrows(), self.j.ncols())));
        }
        if n > N_MAX {
            return Err(Error::DimensionTooLarge { n, max: N_MAX });
        }
        if self.j.iter().chain(&self.v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Ising parameters"));
        }
        if linalg::max_abs_diff(&self.j, &self.j.transpose()) > 1e-12 {
            return Err(Error::Malformed("J is not symmetric".into()));
        }
        Ok(())
    }

    pub fn op_norm(&self) -> f64 {
        linalg::op_norm_sym(&self.j)
    }
}

/// Builds the Ising measure by full enumeration.
pub fn build_ising(spec: &IsingSpec) -> Result<SpinMeasure> {
    spec.validate()?;
    let n = spec.n();
    let scale = match spec.convention {
        Convention::Standard => 1.0,
        Convention::Damped { lambda } => -lambda,
    };
    let logw: Vec<f64> = (0..1usize << n)
        .map(|x| scale * quad_form(&spec.j, x) + dot_spin(&spec.v, x))
        .collect();
    SpinMeasure::from_cube_log_weights(n, &logw)
}

/// `<x, Jx>` for a cube configuration.
pub fn quad_form(j: &DMatrix<f64>, x: usize) -> f64 {
    let n = j.nrows();
    let mut acc = 0.0;
    for a in 0..n {
        let sa = spin(x, a);
        for b in 0..n {
            acc += sa * j[(a, b)] * spin(x, b);
        }
    }
    acc
}

/// `J_G = (A + diag(deg)) / 2`; then `<x, J_G x>` is twice the number of
/// monochromatic edges.
pub fn graph_coupling(g: &Graph) -> DMatrix<f64> {
    let mut j = g.adjacency();
    for v in 0..g.n() {
        j[(v, v)] = g.degree(v) as f64;
    }
    j * 0.5
}

/// Ising measure proportional to `exp(<v, x> + β · #monochromatic edges)`.
pub fn build_graph_ising(g: &Graph, beta: f64, v: &[f64]) -> Result<SpinMeasure> {
    if v.len() != g.n() {
        return Err(Error::Malformed("field length differs from vertex count".into()));
    }
    if g.n() > N_MAX {
        return Err(Error::DimensionTooLarge { n: g.n(), max: N_MAX });
    }
    let logw: Vec<f64> = (0..1usize << g.n())
        .map(|x| dot_spin(v, x) + beta * g.monochromatic(x) as f64)
        .collect();
    SpinMeasure::from_cube_log_weights(g.n(), &logw)
}

/// Supremum of the margins `δ ∈ (0, 1)` with `e^{|β|} < (Δ - δ)/(Δ - 2 + δ)`,
/// or `None` when no positive margin exists.
pub fn uniqueness_margin(g: &Graph, beta: f64) -> Result<Option<f64>> {
    let d = g.max_degree();
    if d < 3 {
        return Err(Error::DegreeTooSmall(d));
    }
    let e = beta.abs().exp();
    let d = d as f64;
    let delta = (d - e * (d - 2.0)) / (1.0 + e);
    Ok(if delta <= 0.0 { None } else { Some(delta.min(1.0 - f64::EPSILON)) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardcoreSpec {
    pub graph: Graph,
    pub lambda: f64,
}

impl HardcoreSpec {
    pub fn new(graph: Graph, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Malformed(format!("fugacity {lambda} must be positive and finite")));
        }
        Ok(Self { graph, lambda })
    }

    /// Degree used in the uniqueness threshold: the maximum degree, floored at 3.
    pub fn threshold_degree(&self) -> usize {
        self.graph.max_degree().max(3)
    }

    /// Largest `δ` with `λ <= (1 - δ) λ_Δ`; nonpositive outside uniqueness.
    pub fn uniqueness_delta(&self) -> f64 {
        1.0 - self.lambda / critical_fugacity(self.threshold_degree())
    }
}

/// Hardcore measure: weight `λ^{#(+1)}` on independent sets (`+1` = occupied).
pub fn build_hardcore(spec: &HardcoreSpec) -> Result<SpinMeasure> {
    let g = &spec.graph;
    if g.n() > N_MAX {
        return Err(Error::DimensionTooLarge { n: g.n(), max: N_MAX });
    }
    let ll = spec.lambda.ln();
    let logw: Vec<f64> = (0..1usize << g.n())
        .map(|x| if g.is_independent(x) { ll * x.count_ones() as f64 } else { f64::NEG_INFINITY })
        .collect();
    SpinMeasure::from_cube_log_weights(g.n(), &logw)
}

/// `λ_Δ = (Δ-1)^{Δ-1} / (Δ-2)^Δ`.
pub fn critical_fugacity(delta: usize) -> f64 {
    assert!(delta >= 3, "critical fugacity needs Δ >= 3");
    let d = delta as f64;
    ((d - 1.0) * (d - 1.0).ln() - d * (d - 2.0).ln()).exp()
}

/// Occupation-probability bounds for vertex `v` under pinning `u`
/// (no neighbour of `v` and not `v` itself pinned).
pub fn hardcore_marginal_bounds_check(spec: &HardcoreSpec, u: &[i8], v: usize) -> Result<Vec<CheckRecord>> {
    let g = &spec.graph;
    if u[v] != 0 || g.neighbors(v).iter().any(|&a| u[a] != 0) {
        return Err(Error::InvalidPinning(v));
    }
    let nu = build_hardcore(spec)?.pin(u)?;
    let p = (1.0 + nu.mean()[v]) / 2.0;
    let lam = spec.lambda;
    let top = lam / (1.0 + lam);
    let low = top * (1.0 + lam).powi(-(g.degree(v) as i32));
    let inst = format!("v={v} u={u:?} lambda={lam}");
    let mut out = vec![
        CheckRecord::le("hardcore_marginal_upper", &inst, p, top, 1e-14),
        CheckRecord::le("hardcore_marginal_lower", &inst, low, p, 1e-14),
    ];
    if spec.uniqueness_delta() > 0.0 {
        let low2 = top * (-3.0 * std::f64::consts::E.powi(2)).exp();
        out.push(CheckRecord::le("hardcore_marginal_lower_unique", &inst, low2, p, 1e-14));
    }
    Ok(out)
}

/// Runs the marginal-bound check for every vertex and every admissible pinning of
/// positive mass.
pub fn hardcore_marginal_suite(spec: &HardcoreSpec) -> Result<Vec<CheckRecord>> {
    let n = spec.graph.n();
    let mut out = Vec::new();
    for v in 0..n {
        let others: Vec<usize> =
            (0..n).filter(|&a| a != v && !spec.graph.neighbors(v).contains(&a)).collect();
        let total = 3usize.pow(others.len() as u32);
        for code in 0..total {
            let mut u = vec![0i8; n];
            let mut c = code;
            for &a in &others {
                u[a] = [0, -1, 1][c % 3];
                c /= 3;
            }
            match hardcore_marginal_bounds_check(spec, &u, v) {
                Ok(r) => out.extend(r),
                Err(Error::ZeroMassSubcube) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

/// Checks `||Cov(ν_{J,v})|| <= 1/(1 - 2||J||)` over the supplied fields.
pub fn ising_cov_bound_check(j: &DMatrix<f64>, fields: &[Vec<f64>]) -> Result<Vec<CheckRecord>> {
    let norm = linalg::op_norm_sym(j);
    let min_eig = linalg::sym_eigen(j).0.first().copied().unwrap_or(0.0);
    if norm >= 0.5 || min_eig <= 0.0 {
        return Err(Error::PreconditionViolated(format!(
            "need positive definite J with norm < 1/2 (norm {norm}, min eigenvalue {min_eig})"
        )));
    }
    let bound = 1.0 / (1.0 - 2.0 * norm);
    fields
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let m = build_ising(&IsingSpec::new(j.clone(), v.clone())?)?;
            let c = linalg::op_norm_sym(&m.moments().cov);
            Ok(CheckRecord::le("ising.cov_bound", &format!("field#{k}"), c, bound, 1e-9))
        })
        .collect()
}

/// Checks `Cov(ν_{J,v})_{ij} <= Cov(ν_{J,0})_{ij}` entrywise for a ferromagnetic `J`.
pub fn gks_monotonicity_check(j: &DMatrix<f64>, fields: &[Vec<f64>]) -> Result<Vec<CheckRecord>> {
    let n = j.nrows();
    for a in 0..n {
        for b in 0..n {
            if a != b && j[(a, b)] < 0.0 {
                return Err(Error::NotFerromagnetic(a, b));
            }
        }
    }
    let c0 = build_ising(&IsingSpec::new(j.clone(), vec![0.0; n])?)?.moments().cov;
    fields
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let c = build_ising(&IsingSpec::new(j.clone(), v.clone())?)?.moments().cov;
            let worst = (&c - &c0).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok(CheckRecord::le("ising.gks_monotone", &format!("field#{k}"), worst, 0.0, 1e-12))
        })
        .collect()
}

/// `count` fields drawn from `N(0, σ² I)`.
pub fn gaussian_fields<R: Rng>(n: usize, count: usize, sigma: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Declarative model description, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ising {
        n: usize,
        #[serde(rename = "J")]
        j: Vec<Vec<f64>>,
        #[serde(default)]
        field: Option<Vec<f64>>,
    },
    GraphIsing {
        n: usize,
        edges: Vec<[usize; 2]>,
        beta: f64,
        #[serde(default)]
        field: Option<Vec<f64>>,
    },
    Hardcore {
        n: usize,
        edges: Vec<[usize; 2]>,
        lambda: f64,
    },
}

impl ModelSpec {
    pub fn graph(&self) -> Result<Option<Graph>> {
        match self {
            ModelSpec::Ising { .. } => Ok(None),
            ModelSpec::GraphIsing { n, edges, .. } | ModelSpec::Hardcore { n, edges, .. } => {
                let e: Vec<(usize, usize)> = edges.iter().map(|e| (e[0], e[1])).collect();
                Graph::from_edges(*n, &e).map(Some)
            }
        }
    }

    fn field(&self, n: usize, field: &Option<Vec<f64>>) -> Result<Vec<f64>> {
        match field {
            None => Ok(vec![0.0; n]),
            Some(f) if f.len() == n => Ok(f.clone()),
            Some(f) => Err(Error::Malformed(format!("field has length {} for n = {n}", f.len()))),
        }
    }

    /// Coupling matrix and field of an Ising-type spec, in the standard convention.
    pub fn ising_spec(&self) -> Result<Option<IsingSpec>> {
        match self {
            ModelSpec::Ising { n, j, field } => {
                if j.len() != *n || j.iter().any(|r| r.len() != *n) {
                    return Err(Error::Malformed("J must be n x n".into()));
                }
                let m = DMatrix::from_fn(*n, *n, |a, b| j[a][b]);
                IsingSpec::new(m, self.field(*n, field)?).map(Some)
            }
            ModelSpec::GraphIsing { n, beta, field, .. } => {
                let g = self.graph()?.expect("graph");
                IsingSpec::new(graph_coupling(&g) * (*beta / 2.0), self.field(*n, field)?).map(Some)
            }
            ModelSpec::Hardcore { .. } => Ok(None),
        }
    }

    pub fn hardcore_spec(&self) -> Result<Option<HardcoreSpec>> {
        match self {
            ModelSpec::Hardcore { lambda, .. } => {
                HardcoreSpec::new(self.graph()?.expect("graph"), *lambda).map(Some)
            }
            _ => Ok(None),
        }
    }

    pub fn build(&self) -> Result<SpinMeasure> {
        match self {
            ModelSpec::Ising { .. } => build_ising(&self.ising_spec()?.expect("ising")),
            ModelSpec::GraphIsing { n, beta, field, .. } => {
                build_graph_ising(&self.graph()?.expect("graph"), *beta, &self.field(*n, field)?)
            }
            ModelSpec::Hardcore { .. } => build_hardcore(&self.hardcore_spec()?.expect("hardcore")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_coupling_is_uniform() {
        let m = build_ising(&IsingSpec::new(DMatrix::zeros(3, 3), vec![0.0; 3]).unwrap()).unwrap();
        assert!(m.weights().iter().all(|w| (w - 0.125).abs() < 1e-15));
    }

    #[test]
    fn single_spin_field() {
        let a = 0.7;
        let m = build_ising(&IsingSpec::new(DMatrix::zeros(1, 1), vec![a]).unwrap()).unwrap();
        assert_abs_diff_eq!(m.prob(1), a.exp() / (a.exp() + (-a).exp()), epsilon = 1e-15);
    }

    #[test]
    fn graph_ising_matches_half_coupling() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let beta = 0.8;
        let direct = build_graph_ising(&g, beta, &[0.3, -0.1]).unwrap();
        let via_j = build_ising(&IsingSpec::new(graph_coupling(&g) * (beta / 2.0), vec![0.3, -0.1]).unwrap()).unwrap();
        assert!(direct.max_abs_diff(&via_j) < 1e-12);
    }

    #[test]
    fn uniqueness_margin_closed_form() {
        let g = Graph::star(3);
        assert_abs_diff_eq!(uniqueness_margin(&g, 2f64.ln()).unwrap().unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(uniqueness_margin(&g, 0.0).unwrap(), Some(1.0 - f64::EPSILON));
        assert_eq!(uniqueness_margin(&g, 1.2).unwrap(), None);
        assert!(uniqueness_margin(&g, 1.0).unwrap().unwrap() > 0.0);
        assert_eq!(uniqueness_margin(&Graph::path(4), 0.1), Err(Error::DegreeTooSmall(2)));
    }

    #[test]
    fn hardcore_small_cases() {
        let one = build_hardcore(&HardcoreSpec::new(Graph::path(1), 2.0).unwrap()).unwrap();
        assert_abs_diff_eq!(one.prob(1), 2.0 / 3.0, epsilon = 1e-15);
        let k2 = build_hardcore(&HardcoreSpec::new(Graph::path(2), 1.0).unwrap()).unwrap();
        assert_eq!(k2.support_size(), 3);
        assert_abs_diff_eq!(k2.prob(0b01), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(critical_fugacity(3), 4.0, epsilon = 1e-13);
    }

    #[test]
    fn k2_marginal_bounds() {
        let spec = HardcoreSpec::new(Graph::path(2), 1.0).unwrap();
        let r = hardcore_marginal_bounds_check(&spec, &[0, 0], 0).unwrap();
        assert!(r.iter().all(|c| c.pass));
        assert_abs_diff_eq!(r[0].lhs, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1].lhs, 0.25, epsilon = 1e-15);
        assert_eq!(hardcore_marginal_bounds_check(&spec, &[0, 1], 0), Err(Error::InvalidPinning(0)));
    }

    #[test]
    fn gks_single_edge_field_lowers_covariance() {
        let j = graph_coupling(&Graph::path(2)) * 0.5;
        let r = gks_monotonicity_check(&j, &[vec![2.0, 0.0]]).unwrap();
        assert!(r[0].pass);
        assert!(r[0].lhs < 0.0);
        let anti = DMatrix::from_row_slice(2, 2, &[0.0, -0.1, -0.1, 0.0]);
        assert_eq!(gks_monotonicity_check(&anti, &[]), Err(Error::NotFerromagnetic(0, 1)));
    }

    #[test]
    fn cov_bound_precondition() {
        let j = DMatrix::from_row_slice(2, 2, &[0.3, 0.3, 0.3, 0.3]);
        assert!(matches!(ising_cov_bound_check(&j, &[]), Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn model_spec_json() {
        let s: ModelSpec = serde_json::from_str(r#"{"type":"hardcore","n":2,"edges":[[0,1]],"lambda":1.0}"#).unwrap();
        assert_eq!(s.build().unwrap().support_size(), 3);
        let i: ModelSpec = serde_json::from_str(r#"{"type":"ising","n":2,"J":[[0,0.1],[0.1,0]]}"#).unwrap();
        assert_eq!(i.build().unwrap().n(), 2);
        assert!(serde_json::from_str::<ModelSpec>(r#"{"type":"potts","n":2}"#).is_err());
    }
}
