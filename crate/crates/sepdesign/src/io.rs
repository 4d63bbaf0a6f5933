//! Scenario files and artifact serialization.
//!
//! Scenario documents are JSON with top-level keys `horizon`, `epsilon`,
//! `objective`, `shared_sets` and `models`; matrices are row-major arrays
//! of arrays of IEEE-754 doubles. The normative schema ships in
//! `docs/scenario.schema.json`. Artifacts (design results, manifests,
//! reports) serialize through [`to_json_17`], which prints every float
//! with 17 significant digits so re-runs are byte-identical.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{AffineModel, ObjectiveSpec, Polytope, Scenario};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario document: {0}")]
    Document(String),
}

// --------------------------------------------------------------------- //
// Scenario documents
// --------------------------------------------------------------------- //

#[derive(Serialize, Deserialize)]
struct SetDto {
    #[serde(rename = "H")]
    h_mat: Vec<Vec<f64>>,
    h: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SharedSetsDto {
    x0: SetDto,
    u: SetDto,
    w: SetDto,
    v: SetDto,
}

#[derive(Serialize, Deserialize)]
struct ModelDto {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    bw: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    dv: Vec<Vec<f64>>,
    f: Vec<f64>,
    g: Vec<f64>,
    n_x: usize,
    n_y: usize,
    m_u: usize,
    m_d: usize,
    x_set: SetDto,
    y_set: SetDto,
    d_set: SetDto,
}

#[derive(Serialize, Deserialize)]
struct ScenarioDto {
    horizon: usize,
    epsilon: f64,
    objective: ObjectiveSpec,
    shared_sets: SharedSetsDto,
    models: Vec<ModelDto>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

/// Rebuild a matrix from row-major rows; `cols_hint` disambiguates empty
/// row lists (an empty matrix still has a column count).
fn rows_to_matrix(rows: &[Vec<f64>], cols_hint: usize, what: &str) -> Result<DMatrix<f64>, IoError> {
    let ncols = rows.first().map_or(cols_hint, |r| r.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(IoError::Document(format!(
                "{what}: row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
    }
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn set_dto(p: &Polytope) -> SetDto {
    SetDto { h_mat: matrix_rows(&p.h_mat), h: p.h_vec.as_slice().to_vec() }
}

fn set_from_dto(dto: &SetDto, dim_hint: usize, what: &str) -> Result<Polytope, IoError> {
    let h_mat = rows_to_matrix(&dto.h_mat, dim_hint, what)?;
    if h_mat.nrows() != dto.h.len() {
        return Err(IoError::Document(format!(
            "{what}: H has {} rows but h has {} entries",
            h_mat.nrows(),
            dto.h.len()
        )));
    }
    Ok(Polytope::new(h_mat, DVector::from_column_slice(&dto.h)))
}

/// Serialize a scenario to the normative JSON document layout.
pub fn scenario_to_json(scenario: &Scenario) -> Value {
    let dto = ScenarioDto {
        horizon: scenario.horizon,
        epsilon: scenario.epsilon,
        objective: scenario.objective,
        shared_sets: SharedSetsDto {
            x0: set_dto(&scenario.x0_set),
            u: set_dto(&scenario.u_set),
            w: set_dto(&scenario.w_set),
            v: set_dto(&scenario.v_set),
        },
        models: scenario
            .models
            .iter()
            .map(|m| ModelDto {
                a: matrix_rows(&m.a),
                b: matrix_rows(&m.b),
                bw: matrix_rows(&m.bw),
                c: matrix_rows(&m.c),
                d: matrix_rows(&m.d),
                dv: matrix_rows(&m.dv),
                f: m.f.as_slice().to_vec(),
                g: m.g.as_slice().to_vec(),
                n_x: m.n_x,
                n_y: m.n_y,
                m_u: m.m_u,
                m_d: m.m_d,
                x_set: set_dto(&m.x_set),
                y_set: set_dto(&m.y_set),
                d_set: set_dto(&m.d_set),
            })
            .collect(),
    };
    serde_json::to_value(dto).expect("scenario serialization cannot fail")
}

/// Parse a scenario document. Dimensions come from the matrices, with the
/// partition fields as hints for empty constraint sets.
pub fn scenario_from_json(value: &Value) -> Result<Scenario, IoError> {
    let dto: ScenarioDto = serde_json::from_value(value.clone())?;
    let mut models = Vec::with_capacity(dto.models.len());
    for (i, m) in dto.models.iter().enumerate() {
        let what = |f: &str| format!("models[{i}].{f}");
        let a = rows_to_matrix(&m.a, m.n_x + m.n_y, &what("a"))?;
        let n = a.nrows();
        let b = rows_to_matrix(&m.b, m.m_u + m.m_d, &what("b"))?;
        let bw = rows_to_matrix(&m.bw, 0, &what("bw"))?;
        let c = rows_to_matrix(&m.c, n, &what("c"))?;
        let d = rows_to_matrix(&m.d, m.m_u + m.m_d, &what("d"))?;
        let dv = rows_to_matrix(&m.dv, 0, &what("dv"))?;
        models.push(AffineModel {
            x_set: set_from_dto(&m.x_set, m.n_x, &what("x_set"))?,
            y_set: set_from_dto(&m.y_set, m.n_y, &what("y_set"))?,
            d_set: set_from_dto(&m.d_set, m.m_d, &what("d_set"))?,
            f: DVector::from_column_slice(&m.f),
            g: DVector::from_column_slice(&m.g),
            a,
            b,
            bw,
            c,
            d,
            dv,
            n_x: m.n_x,
            n_y: m.n_y,
            m_u: m.m_u,
            m_d: m.m_d,
        });
    }
    if models.is_empty() {
        return Err(IoError::Document("models must be nonempty".into()));
    }
    let n = models[0].n();
    let m_u = models[0].m_u;
    let m_w = models[0].m_w();
    let m_v = models[0].m_v();
    Ok(Scenario {
        horizon: dto.horizon,
        epsilon: dto.epsilon,
        objective: dto.objective,
        x0_set: set_from_dto(&dto.shared_sets.x0, n, "shared_sets.x0")?,
        u_set: set_from_dto(&dto.shared_sets.u, m_u, "shared_sets.u")?,
        w_set: set_from_dto(&dto.shared_sets.w, m_w, "shared_sets.w")?,
        v_set: set_from_dto(&dto.shared_sets.v, m_v, "shared_sets.v")?,
        models,
    })
}

pub fn read_scenario_file(path: &std::path::Path) -> Result<Scenario, IoError> {
    let text = std::fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)?;
    scenario_from_json(&value)
}

pub fn write_scenario_file(scenario: &Scenario, path: &std::path::Path) -> Result<(), IoError> {
    std::fs::write(path, to_json_17(&scenario_to_json(scenario))?)?;
    Ok(())
}

// --------------------------------------------------------------------- //
// 17-significant-digit artifact writer
// --------------------------------------------------------------------- //

struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            // JSON has no infinities; null keeps documents parseable.
            writer.write_all(b"null")
        }
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        self.write_f64(writer, value as f64)
    }
}

/// Serialize with every float at 17 significant digits (regression-exact;
/// round-trips f64 bit-exactly).
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String, IoError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("json is utf-8"))
}

/// Human-oriented pretty serialization (shortest round-trip floats).
pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String, IoError> {
    Ok(serde_json::to_string_pretty(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::build_numerical_example;

    #[test]
    fn scenario_document_round_trip() {
        let scenario = build_numerical_example();
        let doc = scenario_to_json(&scenario);
        assert!(doc.get("horizon").is_some());
        assert!(doc.get("epsilon").is_some());
        assert!(doc.get("objective").is_some());
        assert!(doc["shared_sets"].get("x0").is_some());
        assert!(doc["models"][0].get("bw").is_some());
        assert!(doc["models"][0]["x_set"].get("H").is_some());
        let back = scenario_from_json(&doc).unwrap();
        assert_eq!(back.models.len(), 5);
        assert_eq!(back.horizon, 2);
        assert_eq!(back.models[1].a[(0, 0)], 1.0);
        assert_eq!(back.models[4].c[(1, 1)], 0.0);
        assert!(crate::model::validate_scenario(&back).is_ok());
        // Whole-space sets survive (zero-row H keeps its dimension).
        assert_eq!(back.models[0].x_set.dim(), 1);
        assert_eq!(back.models[0].x_set.num_rows(), 0);
    }

    #[test]
    fn seventeen_digit_floats_round_trip() {
        #[derive(Serialize)]
        struct S {
            a: f64,
            b: f64,
        }
        let s = S { a: std::f64::consts::PI, b: -1.0 / 3.0 };
        let text = to_json_17(&s).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["a"].as_f64().unwrap(), std::f64::consts::PI);
        assert_eq!(v["b"].as_f64().unwrap(), -1.0 / 3.0);
    }
}
