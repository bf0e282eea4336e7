use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BodyModel, BodyModelParts, Corrective, CorrectiveRows, InvariantCheck};
use crate::container::{
    decode_f64s, decode_indices, encode_f64s, encode_indices, parse_kind, read_text,
    FORMAT_VERSION,
};
use crate::error::{Result, StarError};
use crate::meshcore::{KinematicTree, SparseRows};
use crate::quat::Quaternion;

pub const MODEL_KIND: &str = "star-model";

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    num_vertices: usize,
    num_joints: usize,
    num_betas: usize,
    beta2_index: usize,
    parents: Vec<i64>,
    joint_names: Vec<String>,
    neighbors: Vec<Vec<usize>>,
    rest_quaternions: String,
    faces: String,
    template: String,
    /// column-major `3N × |β|`
    shape_dirs: String,
    /// dense row-major `K × N`
    joint_regressor: String,
    /// row-major `N × K`
    skinning_weights: String,
    correctives: Vec<CorrectiveFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorrectiveFile {
    joint: usize,
    feature_len: usize,
    activations: String,
    vertices: String,
    weights: String,
}

pub fn model_to_json(model: &BodyModel) -> String {
    let n = model.num_vertices();
    let k = model.num_joints();
    let skin: Vec<f64> = (0..n)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| model.skinning_weights[(i, j)])
        .collect();
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        kind: MODEL_KIND.into(),
        num_vertices: n,
        num_joints: k,
        num_betas: model.num_betas(),
        beta2_index: model.beta2_index,
        parents: model
            .tree
            .parents()
            .iter()
            .map(|p| p.map_or(-1, |p| p as i64))
            .collect(),
        joint_names: model.tree.names().to_vec(),
        neighbors: model.nbhd.lists().to_vec(),
        rest_quaternions: encode_f64s(
            &model
                .tree
                .rest_quaternions()
                .iter()
                .flat_map(|q| q.to_array())
                .collect::<Vec<_>>(),
        ),
        faces: encode_indices(&model.faces.iter().flatten().copied().collect::<Vec<_>>()),
        template: encode_f64s(&model.template),
        shape_dirs: encode_f64s(model.shape_dirs.as_slice()),
        joint_regressor: encode_f64s(&model.joint_regressor.to_dense()),
        skinning_weights: encode_f64s(&skin),
        correctives: model
            .correctives
            .iter()
            .map(|c| CorrectiveFile {
                joint: c.joint,
                feature_len: c.rows.feature_len(),
                activations: encode_f64s(&c.activations),
                vertices: encode_indices(c.rows.vertices()),
                weights: encode_f64s(c.rows.weights()),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<BodyModel> {
    let (model, neighbors) = decode(text)?;
    if let Some(failed) = model.validate().into_iter().find(|c| !c.passed) {
        return Err(StarError::validation(format!("{}: {}", failed.name, failed.detail)));
    }
    check_neighbors(&model, &neighbors)?;
    Ok(model)
}

/// Decodes a model container and reports every invariant instead of
/// stopping at the first failure. Structural problems are still errors.
pub fn audit_model_json(text: &str) -> Result<Vec<InvariantCheck>> {
    let (model, neighbors) = decode(text)?;
    let mut checks = model.validate();
    let stored = check_neighbors(&model, &neighbors);
    checks.push(InvariantCheck {
        name: "stored_neighbors",
        passed: stored.is_ok(),
        detail: stored.err().map(|e| e.to_string()).unwrap_or_default(),
    });
    Ok(checks)
}

fn check_neighbors(model: &BodyModel, neighbors: &[Vec<usize>]) -> Result<()> {
    if model.nbhd.lists() != neighbors {
        return Err(StarError::Format(
            "stored neighbor lists disagree with the kinematic tree".into(),
        ));
    }
    Ok(())
}

fn decode(text: &str) -> Result<(BodyModel, Vec<Vec<usize>>)> {
    let file: ModelFile = parse_kind(text, MODEL_KIND)?;
    let (n, k, nb) = (file.num_vertices, file.num_joints, file.num_betas);
    let expect_len = |name: &str, got: usize, want: usize| {
        if got != want {
            Err(StarError::Format(format!(
                "{name} has {got} values, header implies {want}"
            )))
        } else {
            Ok(())
        }
    };

    let parents = file
        .parents
        .iter()
        .map(|&p| (p >= 0).then_some(p as usize))
        .collect();
    let rest = decode_f64s(&file.rest_quaternions)?;
    expect_len("rest_quaternions", rest.len(), 4 * k)?;
    let rest = rest
        .chunks_exact(4)
        .map(|c| Quaternion::new(c[0], c[1], c[2], c[3]))
        .collect();
    let tree = KinematicTree::new(parents, file.joint_names, rest)?;
    if tree.num_joints() != k {
        return Err(StarError::Format(format!(
            "{} parents for {k} joints",
            tree.num_joints()
        )));
    }

    let faces = decode_indices(&file.faces)?;
    if faces.len() % 3 != 0 {
        return Err(StarError::Format("face array is not a multiple of 3".into()));
    }
    let faces = faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let template = decode_f64s(&file.template)?;
    expect_len("template", template.len(), 3 * n)?;
    let shape = decode_f64s(&file.shape_dirs)?;
    expect_len("shape_dirs", shape.len(), 3 * n * nb)?;
    let jreg = decode_f64s(&file.joint_regressor)?;
    expect_len("joint_regressor", jreg.len(), k * n)?;
    let skin = decode_f64s(&file.skinning_weights)?;
    expect_len("skinning_weights", skin.len(), n * k)?;

    let correctives = file
        .correctives
        .into_iter()
        .map(|c| {
            let activations = decode_f64s(&c.activations)?;
            let rows = CorrectiveRows::new(
                c.feature_len,
                decode_indices(&c.vertices)?,
                decode_f64s(&c.weights)?,
            )?;
            Ok(Corrective {
                joint: c.joint,
                activations,
                rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let model = BodyModel::assemble(BodyModelParts {
        template,
        faces,
        shape_dirs: DMatrix::from_column_slice(3 * n, nb, &shape),
        joint_regressor: SparseRows::from_dense(k, n, &jreg)?,
        skinning_weights: DMatrix::from_row_slice(n, k, &skin),
        correctives,
        tree,
        beta2_index: file.beta2_index,
    })?;
    Ok((model, file.neighbors))
}

pub fn save_model(model: &BodyModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(model)).map_err(|e| StarError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BodyModel> {
    model_from_json(&read_text(path.as_ref())?)
}
