//! MPC problem instances, the spring-vehicle-damper chain builder, and
//! assumption checks.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{
    block_diag, eig_range, is_symmetric, mat_from_rows, mat_to_rows, Mat, Vector,
};
use crate::polytope::Polyhedron;
use crate::riccati::{dare, DareSolution};

/// Relative positive-definiteness tolerance: `λ_min > PD_TOL · λ_max`.
pub const PD_TOL: f64 = 1e-10;

/// Partition of state, input and algebraic indices into subsystems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub states: Vec<Vec<usize>>,
    pub inputs: Vec<Vec<usize>>,
    pub algebraic: Vec<Vec<usize>>,
}

/// Linear MPC problem with algebraic states:
///
/// `x⁺ = Ax + Bu + Cz`, `0 = Dx + Ez`, stage cost `xᵀQx + uᵀRu + zᵀSz`,
/// terminal cost `xᵀPx`, sets `X`, `U`, `Z`, `X_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub e: Mat,
    pub q: Mat,
    pub r: Mat,
    pub s: Mat,
    pub p: Mat,
    pub horizon: usize,
    pub x_set: Polyhedron,
    pub u_set: Polyhedron,
    pub z_set: Polyhedron,
    pub xn_set: Polyhedron,
    pub blocks: Option<BlockStructure>,
}

impl MpcProblem {
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn nz(&self) -> usize {
        self.c.ncols()
    }

    /// Checks that every matrix and set has a consistent shape.
    pub fn check_dimensions(&self) -> Result<()> {
        let (nx, nu, nz) = (self.nx(), self.nu(), self.nz());
        let shapes = [
            ("A", &self.a, nx, nx),
            ("B", &self.b, nx, nu),
            ("C", &self.c, nx, nz),
            ("D", &self.d, nz, nx),
            ("E", &self.e, nz, nz),
            ("Q", &self.q, nx, nx),
            ("R", &self.r, nu, nu),
            ("S", &self.s, nz, nz),
            ("P", &self.p, nx, nx),
        ];
        for (name, m, r, c) in shapes {
            dim_check(m.shape() == (r, c), || {
                format!("{name} is {}x{}, expected {r}x{c}", m.nrows(), m.ncols())
            })?;
        }
        let sets = [
            ("X", &self.x_set, nx),
            ("U", &self.u_set, nu),
            ("Z", &self.z_set, nz),
            ("XN", &self.xn_set, nx),
        ];
        for (name, s, n) in sets {
            dim_check(s.dim() == n, || {
                format!("set {name} has dimension {}, expected {n}", s.dim())
            })?;
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if let Some(bs) = &self.blocks {
            let count = |v: &Vec<Vec<usize>>| v.iter().map(|b| b.len()).sum::<usize>();
            dim_check(
                count(&bs.states) == nx && count(&bs.inputs) == nu && count(&bs.algebraic) == nz,
                || "block structure does not partition the variables".into(),
            )?;
        }
        Ok(())
    }

    /// `−E⁻¹D`, the map `x ↦ z` solving `Dx + Ez = 0`.
    pub fn elimination_matrix(&self) -> Result<Mat> {
        let lu = self.e.clone().lu();
        let sol = lu
            .solve(&self.d)
            .ok_or_else(|| Error::Numerical("E is singular".into()))?;
        Ok(-sol)
    }

    /// Eliminated system `(Ã, Q̃)` with `Ã = A − CE⁻¹D`, `Q̃ = Q + MᵀSM`, `M = −E⁻¹D`.
    pub fn eliminated(&self) -> Result<(Mat, Mat)> {
        let m = self.elimination_matrix()?;
        let a = &self.a + &self.c * &m;
        let q = &self.q + m.transpose() * &self.s * &m;
        Ok((a, q))
    }

    /// Stage cost `ℓ(x, u, z)`.
    pub fn stage_cost(&self, x: &Vector, u: &Vector, z: &Vector) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)) + z.dot(&(&self.s * z))
    }

    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        x.dot(&(&self.p * x))
    }

    /// Algebraic state for `x`.
    pub fn algebraic_state(&self, x: &Vector) -> Result<Vector> {
        Ok(self.elimination_matrix()? * x)
    }

    pub fn with_sets(mut self, x_set: Polyhedron, xn_set: Polyhedron) -> Result<Self> {
        self.x_set = x_set;
        self.xn_set = xn_set;
        self.check_dimensions()?;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        self.horizon = horizon;
        self.check_dimensions()?;
        Ok(self)
    }

    pub fn with_terminal_weight(mut self, p: Mat) -> Result<Self> {
        self.p = p;
        self.check_dimensions()?;
        Ok(self)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let text = serde_json::to_string(&ProblemFile::from(self)).expect("problem serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemFile::from(self))?)
    }

    /// Parses an explicit problem file or the benchmark shorthand.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("benchmark").is_some() {
            let b: BenchmarkShorthand = serde_json::from_value(value)?;
            return b.build();
        }
        let file: ProblemFile = serde_json::from_value(value)?;
        file.into_problem()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Parameters of the spring-vehicle-damper chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterconnectedSpec {
    pub i_bar: usize,
    pub h: f64,
    pub k_spring: f64,
    pub m_mass: f64,
    pub d_damp: f64,
}

impl Default for InterconnectedSpec {
    fn default() -> Self {
        InterconnectedSpec {
            i_bar: 1,
            h: 0.1,
            k_spring: 3.0,
            m_mass: 1.0,
            d_damp: 3.0,
        }
    }
}

impl InterconnectedSpec {
    pub fn chain(i_bar: usize) -> Self {
        InterconnectedSpec {
            i_bar,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.i_bar == 0 {
            return Err(Error::InvalidInput("need at least one subsystem".into()));
        }
        if !(self.h > 0.0) || !(self.m_mass > 0.0) || !(self.k_spring > 0.0) {
            return Err(Error::InvalidInput(
                "step size, mass and spring constant must be positive".into(),
            ));
        }
        if !(self.d_damp >= 0.0) {
            return Err(Error::InvalidInput("damping must be nonnegative".into()));
        }
        Ok(())
    }

    /// Neighbors of subsystem `i` (zero-based) in the chain.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if i > 0 {
            out.push(i - 1);
        }
        if i + 1 < self.i_bar {
            out.push(i + 1);
        }
        out
    }

    /// Diagonal block `𝓐_ii`.
    pub fn a_block(&self, i: usize) -> Mat {
        let (k, m, d, h) = (self.k_spring, self.m_mass, self.d_damp, self.h);
        let f = if i + 1 == self.i_bar { 1.0 } else { 2.0 };
        Mat::from_row_slice(2, 2, &[1.0, h, -f * h * k / m, 1.0 - f * h * d / m])
    }

    /// Neighbor block `𝓐_ij`, `j ∈ 𝓝_i`.
    pub fn coupling_block(&self) -> Mat {
        let (k, m, d, h) = (self.k_spring, self.m_mass, self.d_damp, self.h);
        Mat::from_row_slice(2, 2, &[0.0, 0.0, h * k / m, h * d / m])
    }

    pub fn b_block(&self, i: usize) -> Mat {
        if i + 1 == self.i_bar {
            Mat::from_row_slice(2, 1, &[0.0, self.h / self.m_mass])
        } else {
            Mat::zeros(2, 1)
        }
    }
}

/// Scalar weights, expanded to multiples of the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            q: 10.0,
            r: 1.0,
            s: 1e-2,
        }
    }
}

/// Per-trolley state box `[−0.5, 1.5] × [−0.5, 1]`.
pub const STATE_LO: [f64; 2] = [-0.5, -0.5];
pub const STATE_HI: [f64; 2] = [1.5, 1.0];
pub const INPUT_LO: f64 = -2.0;
pub const INPUT_HI: f64 = 0.5;

/// Builds the chain benchmark with terminal weight from the DARE of the
/// eliminated system and `X_N = X`.
pub fn build_spring_damper_benchmark(
    spec: &InterconnectedSpec,
    weights: &Weights,
    horizon: usize,
) -> Result<MpcProblem> {
    spec.validate()?;
    let n = spec.i_bar;
    let a_blocks: Vec<Mat> = (0..n).map(|i| spec.a_block(i)).collect();
    let b_blocks: Vec<Mat> = (0..n).map(|i| spec.b_block(i)).collect();
    let a = block_diag(&a_blocks.iter().collect::<Vec<_>>());
    let b = block_diag(&b_blocks.iter().collect::<Vec<_>>());
    let mut d = Mat::zeros(2 * n, 2 * n);
    let cb = spec.coupling_block();
    for i in 0..n {
        for j in spec.neighbors(i) {
            d.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&cb);
        }
    }
    let lo: Vec<f64> = (0..n).flat_map(|_| STATE_LO).collect();
    let hi: Vec<f64> = (0..n).flat_map(|_| STATE_HI).collect();
    let x_set = Polyhedron::from_box(&lo, &hi)?;
    let u_set = Polyhedron::from_box(&vec![INPUT_LO; n], &vec![INPUT_HI; n])?;
    let blocks = BlockStructure {
        states: (0..n).map(|i| vec![2 * i, 2 * i + 1]).collect(),
        inputs: (0..n).map(|i| vec![i]).collect(),
        algebraic: (0..n).map(|i| vec![2 * i, 2 * i + 1]).collect(),
    };
    let mut p = MpcProblem {
        a,
        b,
        c: Mat::identity(2 * n, 2 * n),
        d,
        e: -Mat::identity(2 * n, 2 * n),
        q: Mat::identity(2 * n, 2 * n) * weights.q,
        r: Mat::identity(n, n) * weights.r,
        s: Mat::identity(2 * n, 2 * n) * weights.s,
        p: Mat::zeros(2 * n, 2 * n),
        horizon,
        xn_set: x_set.clone(),
        x_set,
        u_set,
        z_set: Polyhedron::whole_space(2 * n),
        blocks: Some(blocks),
    };
    p.check_dimensions()?;
    p.p = terminal_dare(&p)?.p;
    Ok(p)
}

/// DARE of the eliminated system `(Ã, B, Q̃, R)`.
pub fn terminal_dare(p: &MpcProblem) -> Result<DareSolution> {
    let (a, q) = p.eliminated()?;
    dare(&a, &p.b, &q, &p.r)
}

/// Outcome of the blanket assumption checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dimensions_ok: bool,
    /// Every set is a nonempty closed polyhedron containing the origin.
    pub sets_contain_origin: bool,
    pub q_pd: bool,
    pub r_pd: bool,
    pub s_pd: bool,
    pub p_pd: bool,
    pub e_invertible: bool,
    pub e_condition: f64,
    /// `−E⁻¹D` when `E` is invertible.
    pub elimination: Option<Vec<Vec<f64>>>,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn sets_ok(&self) -> bool {
        self.sets_contain_origin
    }
    pub fn weights_ok(&self) -> bool {
        self.q_pd && self.r_pd && self.s_pd && self.p_pd
    }
    pub fn passed(&self) -> bool {
        self.dimensions_ok && self.sets_ok() && self.weights_ok() && self.e_invertible
    }
}

fn pd_check(name: &str, m: &Mat, messages: &mut Vec<String>) -> bool {
    if !is_symmetric(m, 1e-9) {
        messages.push(format!("{name} is not symmetric"));
        return false;
    }
    let (lo, hi) = eig_range(m);
    let ok = hi > 0.0 && lo > PD_TOL * hi;
    if !ok {
        messages.push(format!("{name} is not positive definite (λ_min = {lo:.3e})"));
    }
    ok
}

/// Never fails; every sub-check is reported.
pub fn validate_assumptions(p: &MpcProblem) -> ValidationReport {
    let mut messages = Vec::new();
    let dimensions_ok = match p.check_dimensions() {
        Ok(()) => true,
        Err(e) => {
            messages.push(e.to_string());
            false
        }
    };
    let mut sets_contain_origin = true;
    if dimensions_ok {
        for (name, s) in [
            ("X", &p.x_set),
            ("U", &p.u_set),
            ("Z", &p.z_set),
            ("XN", &p.xn_set),
        ] {
            if s.max_violation(&Vector::zeros(s.dim())) > 1e-12 {
                messages.push(format!("set {name} does not contain the origin"));
                sets_contain_origin = false;
            }
        }
    } else {
        sets_contain_origin = false;
    }
    let q_pd = pd_check("Q", &p.q, &mut messages);
    let r_pd = pd_check("R", &p.r, &mut messages);
    let s_pd = pd_check("S", &p.s, &mut messages);
    let p_pd = pd_check("P", &p.p, &mut messages);
    let (e_invertible, e_condition) = if p.e.is_square() && p.e.nrows() > 0 {
        let sv = p.e.clone().singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        (cond < 1e12, cond)
    } else if p.e.is_square() {
        (true, 1.0)
    } else {
        (false, f64::INFINITY)
    };
    if !e_invertible {
        messages.push(format!("E is not invertible (condition {e_condition:.3e})"));
    }
    let elimination = if e_invertible && dimensions_ok {
        p.elimination_matrix().ok().map(|m| mat_to_rows(&m))
    } else {
        None
    };
    ValidationReport {
        dimensions_ok,
        sets_contain_origin,
        q_pd,
        r_pd,
        s_pd,
        p_pd,
        e_invertible,
        e_condition,
        elimination,
        messages,
    }
}

// ---- JSON file format ----

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Dynamics {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
    /// Column counts, needed when a dimension is zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dims: Option<[usize; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightMats {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    s: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sets {
    #[serde(rename = "X")]
    x: Polyhedron,
    #[serde(rename = "U")]
    u: Polyhedron,
    #[serde(rename = "Z")]
    z: Polyhedron,
    #[serde(rename = "XN")]
    xn: Polyhedron,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemFile {
    dynamics: Dynamics,
    weights: WeightMats,
    horizon: usize,
    sets: Sets,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blocks: Option<BlockStructure>,
}

impl From<&MpcProblem> for ProblemFile {
    fn from(p: &MpcProblem) -> Self {
        ProblemFile {
            dynamics: Dynamics {
                a: mat_to_rows(&p.a),
                b: mat_to_rows(&p.b),
                c: mat_to_rows(&p.c),
                d: mat_to_rows(&p.d),
                e: mat_to_rows(&p.e),
                dims: Some([p.nx(), p.nu(), p.nz()]),
            },
            weights: WeightMats {
                q: mat_to_rows(&p.q),
                r: mat_to_rows(&p.r),
                s: mat_to_rows(&p.s),
                p: mat_to_rows(&p.p),
            },
            horizon: p.horizon,
            sets: Sets {
                x: p.x_set.clone(),
                u: p.u_set.clone(),
                z: p.z_set.clone(),
                xn: p.xn_set.clone(),
            },
            blocks: p.blocks.clone(),
        }
    }
}

impl ProblemFile {
    fn into_problem(self) -> Result<MpcProblem> {
        let dy = &self.dynamics;
        let nx = dy.a.len();
        let (nu, nz) = match dy.dims {
            Some([_, nu, nz]) => (nu, nz),
            None => (
                dy.b.first().map_or(0, |r| r.len()),
                dy.c.first().map_or(0, |r| r.len()),
            ),
        };
        let w = &self.weights;
        let p = MpcProblem {
            a: mat_from_rows(&dy.a, nx)?,
            b: mat_from_rows(&dy.b, nu)?,
            c: mat_from_rows(&dy.c, nz)?,
            d: mat_from_rows(&dy.d, nx)?,
            e: mat_from_rows(&dy.e, nz)?,
            q: mat_from_rows(&w.q, nx)?,
            r: mat_from_rows(&w.r, nu)?,
            s: mat_from_rows(&w.s, nz)?,
            p: mat_from_rows(&w.p, nx)?,
            horizon: self.horizon,
            x_set: self.sets.x,
            u_set: self.sets.u,
            z_set: self.sets.z,
            xn_set: self.sets.xn,
            blocks: self.blocks,
        };
        p.check_dimensions()?;
        Ok(p)
    }
}

/// `{"benchmark":"spring_damper","I":3,"N":30,"h":0.1,"k":3,"m":1,"d":3}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkShorthand {
    pub benchmark: String,
    #[serde(rename = "I")]
    pub i_bar: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_d")]
    pub d: f64,
}

fn default_h() -> f64 {
    0.1
}
fn default_k() -> f64 {
    3.0
}
fn default_m() -> f64 {
    1.0
}
fn default_d() -> f64 {
    3.0
}

impl BenchmarkShorthand {
    pub fn build(&self) -> Result<MpcProblem> {
        let name = self.benchmark.replace('-', "_");
        if name != "spring_damper" {
            return Err(Error::InvalidInput(format!(
                "unknown benchmark '{}'",
                self.benchmark
            )));
        }
        let spec = InterconnectedSpec {
            i_bar: self.i_bar,
            h: self.h,
            k_spring: self.k,
            m_mass: self.m,
            d_damp: self.d,
        };
        build_spring_damper_benchmark(&spec, &Weights::default(), self.horizon)
    }
}
