//! Embedding and model files.
//!
//! Embedding file: a header line `d=<dim> n=<count>`, then one record per
//! line: `bag_id instance_id level v1 .. vd` with whitespace-separated
//! fields and `-` for a missing level. Vectors are 32-bit floats.
//!
//! Model file: a versioned key-value header followed by the weights, all
//! floats printed with 17 significant digits so reloading is bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Bag, EmbeddingInstance, SvmError, SvmModel, TrainingMeta};
use crate::condition::Granularity;
use crate::num::Float;

pub const MODEL_MAGIC: &str = "radlabel-svm";
pub const MODEL_VERSION: &str = "v1";
/// The only bias convention this solver produces: the bias is trained as a
/// constant unit feature and therefore regularized with the weights.
pub const BIAS_CONVENTION: &str = "augmented-unit";

fn parse_err(line: usize, message: impl Into<String>) -> SvmError {
    SvmError::Parse {
        line,
        message: message.into(),
    }
}

pub fn write_embeddings(
    path: impl AsRef<Path>,
    instances: &[EmbeddingInstance],
) -> Result<(), SvmError> {
    let dim = instances.first().map_or(0, |i| i.vector.len());
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "d={dim} n={}", instances.len())?;
    for inst in instances {
        if inst.vector.len() != dim {
            return Err(SvmError::DimensionMismatch {
                context: format!("instance `{}`", inst.instance_id),
                expected: dim,
                got: inst.vector.len(),
            });
        }
        for field in [&inst.bag_id, &inst.instance_id] {
            if field.is_empty() || field.contains(char::is_whitespace) {
                return Err(SvmError::Parse {
                    line: 0,
                    message: format!("id `{field}` is empty or contains whitespace"),
                });
            }
        }
        write!(w, "{} {} {}", inst.bag_id, inst.instance_id, level_token(&inst.level))?;
        for v in &inst.vector {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn level_token(level: &Option<String>) -> &str {
    level.as_deref().unwrap_or("-")
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingInstance>, SvmError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty embedding file"))??;
    let (dim, count) = parse_embedding_header(&header)?;

    let mut instances = Vec::with_capacity(count);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let bag_id = tokens
            .next()
            .ok_or_else(|| parse_err(line_no, "missing bag id"))?;
        let instance_id = tokens
            .next()
            .ok_or_else(|| parse_err(line_no, "missing instance id"))?;
        let level = tokens
            .next()
            .ok_or_else(|| parse_err(line_no, "missing level"))?;
        let mut vector = Vec::with_capacity(dim);
        for token in tokens {
            let v: f32 = token
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad float `{token}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, "non-finite embedding value"));
            }
            vector.push(v);
        }
        if vector.len() != dim {
            return Err(parse_err(
                line_no,
                format!("expected {dim} values, got {}", vector.len()),
            ));
        }
        instances.push(EmbeddingInstance {
            bag_id: bag_id.to_string(),
            instance_id: instance_id.to_string(),
            level: (level != "-").then(|| level.to_string()),
            vector,
        });
    }
    if instances.len() != count {
        return Err(parse_err(
            1,
            format!("header declares n={count} but found {} records", instances.len()),
        ));
    }
    Ok(instances)
}

fn parse_embedding_header(header: &str) -> Result<(usize, usize), SvmError> {
    let mut dim = None;
    let mut count = None;
    for token in header.split_whitespace() {
        if let Some(v) = token.strip_prefix("d=") {
            dim = v.parse().ok();
        } else if let Some(v) = token.strip_prefix("n=") {
            count = v.parse().ok();
        }
    }
    match (dim, count) {
        (Some(d), Some(n)) if d > 0 => Ok((d, n)),
        _ => Err(parse_err(1, "header must be `d=<dim> n=<count>` with d >= 1")),
    }
}

/// Groups instances into bags by bag id, preserving first-appearance order.
pub fn group_bags(instances: Vec<EmbeddingInstance>) -> Result<Vec<Bag>, SvmError> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<EmbeddingInstance>> = HashMap::new();
    for inst in instances {
        if !grouped.contains_key(&inst.bag_id) {
            order.push(inst.bag_id.clone());
        }
        grouped.entry(inst.bag_id.clone()).or_default().push(inst);
    }
    order
        .into_iter()
        .map(|bag_id| {
            let members = grouped.remove(&bag_id).expect("grouped above");
            Bag::new(bag_id, members)
        })
        .collect()
}

/// A model plus the task shape it was trained for, so prediction needs no
/// side channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel<F> {
    pub model: SvmModel<F>,
    pub granularity: Granularity,
    pub levels: Option<Vec<String>>,
}

fn granularity_token(granularity: Granularity) -> &'static str {
    match granularity {
        Granularity::ScanLevel => "scan-level",
        Granularity::IvdLevel => "ivd-level",
    }
}

pub fn save_model<F: Float>(path: impl AsRef<Path>, saved: &SavedModel<F>) -> Result<(), SvmError> {
    let mut w = BufWriter::new(File::create(path)?);
    let model = &saved.model;
    writeln!(w, "{MODEL_MAGIC} {MODEL_VERSION}")?;
    writeln!(w, "granularity {}", granularity_token(saved.granularity))?;
    writeln!(
        w,
        "levels {}",
        saved
            .levels
            .as_ref()
            .map_or_else(|| "-".to_string(), |ls| ls.join(","))
    )?;
    writeln!(w, "d {}", model.weights.len())?;
    writeln!(w, "c_param {:.16e}", model.c_param)?;
    writeln!(w, "bias_convention {BIAS_CONVENTION}")?;
    writeln!(w, "iterations {}", model.meta.iterations)?;
    writeln!(w, "final_violation {:.16e}", model.meta.final_violation)?;
    writeln!(w, "converged {}", model.meta.converged)?;
    writeln!(w, "bias {:.16e}", model.bias)?;
    write!(w, "weights")?;
    for weight in &model.weights {
        write!(w, " {weight:.16e}")?;
    }
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model<F: Float>(path: impl AsRef<Path>) -> Result<SavedModel<F>, SvmError> {
    let reader = BufReader::new(File::open(path)?);
    let mut fields: HashMap<String, String> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if idx == 0 {
            let expected = format!("{MODEL_MAGIC} {MODEL_VERSION}");
            if line != expected {
                return Err(parse_err(1, format!("expected header `{expected}`")));
            }
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(line_no, "expected `key value`"))?;
        fields.insert(key.to_string(), value.to_string());
    }

    let get = |key: &str| {
        fields
            .get(key)
            .ok_or_else(|| parse_err(0, format!("missing `{key}` field")))
    };
    let float = |key: &str| -> Result<F, SvmError> {
        F::from_str(get(key)?).map_err(|_| parse_err(0, format!("bad float in `{key}`")))
    };

    let granularity = match get("granularity")?.as_str() {
        "scan-level" => Granularity::ScanLevel,
        "ivd-level" => Granularity::IvdLevel,
        other => return Err(parse_err(0, format!("unknown granularity `{other}`"))),
    };
    let levels = match get("levels")?.as_str() {
        "-" => None,
        joined => Some(joined.split(',').map(str::to_string).collect()),
    };
    let convention = get("bias_convention")?;
    if convention != BIAS_CONVENTION {
        return Err(parse_err(
            0,
            format!("unsupported bias convention `{convention}`"),
        ));
    }
    let dim: usize = get("d")?
        .parse()
        .map_err(|_| parse_err(0, "bad integer in `d`"))?;
    let iterations: usize = get("iterations")?
        .parse()
        .map_err(|_| parse_err(0, "bad integer in `iterations`"))?;
    let converged: bool = get("converged")?
        .parse()
        .map_err(|_| parse_err(0, "bad boolean in `converged`"))?;
    let mut weights = Vec::with_capacity(dim);
    for token in get("weights")?.split_whitespace() {
        weights.push(F::from_str(token).map_err(|_| parse_err(0, "bad float in `weights`"))?);
    }
    if weights.len() != dim {
        return Err(parse_err(
            0,
            format!("d declares {dim} weights but found {}", weights.len()),
        ));
    }

    Ok(SavedModel {
        model: SvmModel {
            weights,
            bias: float("bias")?,
            c_param: float("c_param")?,
            meta: TrainingMeta {
                iterations,
                final_violation: float("final_violation")?,
                converged,
            },
        },
        granularity,
        levels,
    })
}
