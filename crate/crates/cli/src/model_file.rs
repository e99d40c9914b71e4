//! Versioned JSON model files.
//!
//! Every parameter array is stored as `{"shape": [...], "data": [...]}` with
//! `data` in row-major order. Floats are written as the shortest decimal
//! string that parses back to the same value, so `load(save(m))` is exact.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use salt_core::baselines::ArhmmState;
use salt_core::tensor::{Mode, Tensor3, TuckerFactors};
use salt_core::{ArhmmParams, LdsParams, SaltParams, StateParams, TransitionModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{atomic_write, read_file};

pub const SCHEMA_VERSION: u32 = 1;
pub const LAYOUT: &str = "row-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        Self { shape: vec![m.nrows(), m.ncols()], data }
    }

    pub fn vector(v: &DVector<f64>) -> Self {
        Self { shape: vec![v.len()], data: v.iter().copied().collect() }
    }

    pub fn tensor(t: &Tensor3) -> Self {
        Self { shape: t.dims().to_vec(), data: t.data().to_vec() }
    }

    fn check(&self, field: &str, expected: &[usize]) -> CliResult<()> {
        let declared: usize = self.shape.iter().product();
        if declared != self.data.len() {
            return Err(CliError::data(format!(
                "shape error in `{field}`: shape {:?} needs {declared} values, found {}",
                self.shape,
                self.data.len()
            )));
        }
        if self.shape != expected {
            return Err(CliError::data(format!(
                "shape error in `{field}`: declared {:?}, expected {expected:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn to_matrix(&self, field: &str, rows: usize, cols: usize) -> CliResult<DMatrix<f64>> {
        self.check(field, &[rows, cols])?;
        Ok(DMatrix::from_row_slice(rows, cols, &self.data))
    }

    pub fn to_vector(&self, field: &str, n: usize) -> CliResult<DVector<f64>> {
        self.check(field, &[n])?;
        Ok(DVector::from_column_slice(&self.data))
    }

    pub fn to_tensor(&self, field: &str, dims: [usize; 3]) -> CliResult<Tensor3> {
        self.check(field, &dims)?;
        Ok(Tensor3::from_vec(dims, self.data.clone())?)
    }

    fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FileKind {
    Salt,
    Arhmm,
    Lds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionsFile {
    pub pi: Array,
    pub init: Array,
}

/// One discrete state. SALT states carry `U, V, W, G`; ARHMM states carry the
/// dense `N x N x L` tensor `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Array>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Array>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Array>,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Array>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Array>,
    pub bias: Array,
    pub cov: Array,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdsFile {
    #[serde(rename = "A")]
    pub a: Array,
    pub b: Array,
    #[serde(rename = "Q")]
    pub q: Array,
    #[serde(rename = "C")]
    pub c: Array,
    pub d: Array,
    #[serde(rename = "R")]
    pub r: Array,
}

/// On-disk model. For an LDS, `N` is the observed and `D` the latent
/// dimension with `H = 1, L = 0`; for an ARHMM `D = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub kind: FileKind,
    pub layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<TransitionsFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<StateFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lds: Option<LdsFile>,
}

/// A loaded, validated model.
#[derive(Debug, Clone)]
pub enum Model {
    Salt(SaltParams),
    Arhmm(ArhmmParams),
    Lds(LdsParams),
}

fn transitions(tm: &TransitionModel) -> TransitionsFile {
    TransitionsFile { pi: Array::matrix(&tm.pi), init: Array::vector(&tm.init) }
}

impl ModelFile {
    fn header(kind: FileKind, mode: Option<Mode>, h: usize, n: usize, l: usize, d: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            layout: LAYOUT.into(),
            mode,
            h,
            n,
            l,
            d,
            transitions: None,
            states: Vec::new(),
            lds: None,
        }
    }

    pub fn from_salt(p: &SaltParams) -> Self {
        let mut f = Self::header(FileKind::Salt, Some(p.mode), p.num_states(), p.dim(), p.lags, p.rank);
        f.transitions = Some(transitions(&p.tm));
        f.states = p
            .states
            .iter()
            .map(|s| StateFile {
                u: Some(Array::matrix(&s.factors.u)),
                v: Some(Array::matrix(&s.factors.v)),
                w: Some(Array::matrix(&s.factors.w)),
                g: Some(Array::tensor(&s.factors.core)),
                a: None,
                bias: Array::vector(&s.bias),
                cov: Array::matrix(&s.cov),
            })
            .collect();
        f
    }

    pub fn from_arhmm(p: &ArhmmParams) -> Self {
        let mut f = Self::header(FileKind::Arhmm, None, p.num_states(), p.dim(), p.lags, 0);
        f.transitions = Some(transitions(&p.tm));
        f.states = p
            .states
            .iter()
            .map(|s| StateFile {
                u: None,
                v: None,
                w: None,
                g: None,
                a: Some(Array::tensor(&s.tensor)),
                bias: Array::vector(&s.bias),
                cov: Array::matrix(&s.cov),
            })
            .collect();
        f
    }

    pub fn from_lds(p: &LdsParams) -> Self {
        let mut f = Self::header(FileKind::Lds, None, 1, p.obs_dim(), 0, p.latent_dim());
        f.lds = Some(LdsFile {
            a: Array::matrix(&p.a),
            b: Array::vector(&p.b),
            q: Array::matrix(&p.q),
            c: Array::matrix(&p.c),
            d: Array::vector(&p.d),
            r: Array::matrix(&p.r),
        });
        f
    }

    pub fn from_model(m: &Model) -> Self {
        match m {
            Model::Salt(p) => Self::from_salt(p),
            Model::Arhmm(p) => Self::from_arhmm(p),
            Model::Lds(p) => Self::from_lds(p),
        }
    }

    fn arrays(&self) -> Vec<&Array> {
        let mut out = Vec::new();
        if let Some(t) = &self.transitions {
            out.extend([&t.pi, &t.init]);
        }
        for s in &self.states {
            out.extend([&s.u, &s.v, &s.w, &s.g, &s.a].into_iter().flatten());
            out.extend([&s.bias, &s.cov]);
        }
        if let Some(l) = &self.lds {
            out.extend([&l.a, &l.b, &l.q, &l.c, &l.d, &l.r]);
        }
        out
    }

    fn read_transitions(&self) -> CliResult<TransitionModel> {
        let t = self
            .transitions
            .as_ref()
            .ok_or_else(|| CliError::data("missing `transitions`"))?;
        let pi = t.pi.to_matrix("transitions.pi", self.h, self.h)?;
        let init = t.init.to_vector("transitions.init", self.h)?;
        Ok(TransitionModel::new(pi, init)?)
    }

    fn check_states(&self) -> CliResult<()> {
        if self.states.len() != self.h {
            return Err(CliError::data(format!("H = {} but {} states are stored", self.h, self.states.len())));
        }
        Ok(())
    }

    /// Check every declared shape and build the model.
    pub fn to_model(&self) -> CliResult<Model> {
        if self.layout != LAYOUT {
            return Err(CliError::data(format!("unsupported layout `{}`", self.layout)));
        }
        let (n, l, d) = (self.n, self.l, self.d);
        let field = |h: usize, name: &str| format!("states[{h}].{name}");
        let missing = |h: usize, name: &str| CliError::data(format!("missing `{}`", field(h, name)));
        match self.kind {
            FileKind::Salt => {
                let mode = self.mode.ok_or_else(|| CliError::data("SALT model without `mode`"))?;
                let tm = self.read_transitions()?;
                self.check_states()?;
                let mut states = Vec::with_capacity(self.h);
                for (h, s) in self.states.iter().enumerate() {
                    if s.a.is_some() {
                        return Err(CliError::data(format!("unexpected `{}` in a SALT model", field(h, "A"))));
                    }
                    fn get<'a>(a: &'a Option<Array>, h: usize, name: &str) -> CliResult<&'a Array> {
                        a.as_ref().ok_or_else(|| CliError::data(format!("missing `states[{h}].{name}`")))
                    }
                    let u = get(&s.u, h, "U")?.to_matrix(&field(h, "U"), n, d)?;
                    let v = get(&s.v, h, "V")?.to_matrix(&field(h, "V"), n, d)?;
                    let w = get(&s.w, h, "W")?.to_matrix(&field(h, "W"), l, d)?;
                    let g = get(&s.g, h, "G")?.to_tensor(&field(h, "G"), [d, d, d])?;
                    states.push(StateParams {
                        factors: TuckerFactors::new(u, v, w, g)?,
                        bias: s.bias.to_vector(&field(h, "bias"), n)?,
                        cov: s.cov.to_matrix(&field(h, "cov"), n, n)?,
                    });
                }
                Ok(Model::Salt(SaltParams::new(mode, l, d, states, tm)?))
            }
            FileKind::Arhmm => {
                let tm = self.read_transitions()?;
                self.check_states()?;
                let mut states = Vec::with_capacity(self.h);
                for (h, s) in self.states.iter().enumerate() {
                    if s.u.is_some() || s.v.is_some() || s.w.is_some() || s.g.is_some() {
                        return Err(CliError::data(format!("unexpected factor arrays in ARHMM state {h}")));
                    }
                    let a = s.a.as_ref().ok_or_else(|| missing(h, "A"))?;
                    states.push(ArhmmState {
                        tensor: a.to_tensor(&field(h, "A"), [n, n, l])?,
                        bias: s.bias.to_vector(&field(h, "bias"), n)?,
                        cov: s.cov.to_matrix(&field(h, "cov"), n, n)?,
                    });
                }
                Ok(Model::Arhmm(ArhmmParams::new(l, states, tm)?))
            }
            FileKind::Lds => {
                let f = self.lds.as_ref().ok_or_else(|| CliError::data("LDS model without `lds`"))?;
                Ok(Model::Lds(LdsParams::new(
                    f.a.to_matrix("lds.A", d, d)?,
                    f.b.to_vector("lds.b", d)?,
                    f.q.to_matrix("lds.Q", d, d)?,
                    f.c.to_matrix("lds.C", n, d)?,
                    f.d.to_vector("lds.d", n)?,
                    f.r.to_matrix("lds.R", n, n)?,
                )?))
            }
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        if !self.arrays().iter().all(|a| a.all_finite()) {
            return Err(CliError::numerical("model contains non-finite values"));
        }
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::io(format!("json encoding failed: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(bytes: &[u8]) -> CliResult<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| {
            CliError::data(format!(
                "parse error at byte offset {} (line {}, column {}): {e}",
                byte_offset(bytes, e.line(), e.column()),
                e.line(),
                e.column()
            ))
        })?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(CliError::data(format!(
                    "schema version mismatch: file has {v}, this build reads {SCHEMA_VERSION}"
                )))
            }
            None => return Err(CliError::data("missing or invalid `schema_version`")),
        }
        serde_json::from_value(value).map_err(|e| CliError::data(format!("invalid model file: {e}")))
    }
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut start = 0;
    for _ in 1..line {
        match bytes[start..].iter().position(|&b| b == b'\n') {
            Some(p) => start += p + 1,
            None => break,
        }
    }
    (start + column).min(bytes.len())
}

pub fn save_model(path: &Path, m: &Model) -> CliResult<()> {
    atomic_write(path, ModelFile::from_model(m).to_json()?.as_bytes())
}

pub fn load_model_file(path: &Path) -> CliResult<ModelFile> {
    ModelFile::from_json(&read_file(path)?).map_err(|e| e.context(path.display()))
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    load_model_file(path)?.to_model().map_err(|e| e.context(path.display()))
}
