//! JSON model files.
//!
//! ```text
//! {
//!   "version": "1",
//!   "degradation": {"kind": "blur", "size_or_factor": 5, "image_side": 28},
//!   "K": 6,
//!   "mode": "full",
//!   "g": "l1",
//!   "layers": [
//!     {"tau": 1.0e0, "sigma": 2.5e1, "analysis": [
//!       {"block_spec": "dense", "rows": 100, "weights": [...]},
//!       {"block_spec": {"q": 5, "stride": 2, "filters_per_site": 10},
//!        "rows": 1440, "sites": [[0, 0], [0, 2], ...], "weights": [...]},
//!       {"block_spec": "windows", "rows": 2, "windows": [[r, c, h, w], ...], "weights": [...]}
//!     ]}
//!   ]
//! }
//! ```
//!
//! Weights are stored row by row over each row's window (`P*N` numbers for a
//! dense part, `P*Q*Q` for a block part). Floats are written with 17
//! significant digits so that a write/read/write cycle is byte-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{LayerParams, LearningMode, NetworkParams};
use crate::error::{io_err, Error, Result};
use crate::operators::{AnalysisOperator, AnalysisPart, DegradationKind, DegradationOperator, Grid, PartKind, Window};
use crate::prox::ProxSpec;

pub const MODEL_VERSION: &str = "1";

fn float(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

fn floats(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        float(out, v);
    }
    out.push(']');
}

fn part_json(out: &mut String, op: &AnalysisOperator, part: &AnalysisPart, first_row: usize) {
    let rows = first_row..first_row + part.rows;
    out.push_str("        {\"block_spec\": ");
    match &part.kind {
        PartKind::Dense => out.push_str("\"dense\""),
        PartKind::Block {
            q,
            stride,
            filters_per_site,
            ..
        } => {
            write!(out, "{{\"q\": {q}, \"stride\": {stride}, \"filters_per_site\": {filters_per_site}}}").unwrap();
        }
        PartKind::Windows => out.push_str("\"windows\""),
    }
    write!(out, ", \"rows\": {}", part.rows).unwrap();
    match &part.kind {
        PartKind::Block { sites, .. } => {
            out.push_str(", \"sites\": [");
            for (i, (r, c)) in sites.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write!(out, "[{r}, {c}]").unwrap();
            }
            out.push(']');
        }
        PartKind::Windows => {
            out.push_str(", \"windows\": [");
            for (i, w) in op.windows()[rows.clone()].iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write!(out, "[{}, {}, {}, {}]", w.row, w.col, w.height, w.width).unwrap();
            }
            out.push(']');
        }
        PartKind::Dense => {}
    }
    out.push_str(",\n         \"weights\": ");
    let start = op.row_range(rows.start).start;
    let end = if part.rows == 0 { start } else { op.row_range(rows.end - 1).end };
    floats(out, &op.weights()[start..end]);
    out.push('}');
}

/// Renders the model document.
pub fn to_json(params: &NetworkParams) -> Result<String> {
    params.validate()?;
    let kind = params.degradation.kind();
    let mut out = String::new();
    out.push_str("{\n");
    writeln!(out, "  \"version\": \"{MODEL_VERSION}\",").unwrap();
    writeln!(
        out,
        "  \"degradation\": {{\"kind\": \"{}\", \"size_or_factor\": {}, \"image_side\": {}}},",
        kind.name(),
        kind.size_or_factor(),
        params.degradation.side()
    )
    .unwrap();
    writeln!(out, "  \"K\": {},", params.depth()).unwrap();
    writeln!(out, "  \"mode\": \"{}\",", params.mode.as_str()).unwrap();
    let ProxSpec::L1 = params.prox;
    out.push_str("  \"g\": \"l1\",\n");
    out.push_str("  \"layers\": [\n");
    for (k, layer) in params.layers.iter().enumerate() {
        out.push_str("    {\"tau\": ");
        float(&mut out, layer.tau);
        out.push_str(", \"sigma\": ");
        float(&mut out, layer.sigma);
        out.push_str(", \"analysis\": [\n");
        let mut row = 0;
        for (i, part) in layer.analysis.parts().iter().enumerate() {
            part_json(&mut out, &layer.analysis, part, row);
            row += part.rows;
            out.push_str(if i + 1 < layer.analysis.parts().len() { ",\n" } else { "\n" });
        }
        out.push_str("    ]}");
        out.push_str(if k + 1 < params.depth() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DegradationDoc {
    kind: String,
    size_or_factor: usize,
    image_side: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartDoc {
    block_spec: Value,
    rows: usize,
    #[serde(default)]
    sites: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    windows: Option<Vec<(usize, usize, usize, usize)>>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    tau: f64,
    sigma: f64,
    analysis: Vec<PartDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    version: String,
    degradation: DegradationDoc,
    #[serde(rename = "K")]
    k: usize,
    mode: LearningMode,
    g: String,
    layers: Vec<LayerDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockDoc {
    q: usize,
    stride: usize,
    filters_per_site: usize,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

fn weight_count_check(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(format_err(format!(
            "{what}: expected {expected} weights, found {actual}"
        )));
    }
    Ok(())
}

fn build_part(doc: PartDoc, side: usize, layer: usize) -> Result<AnalysisOperator> {
    let grid = Grid::square(side);
    let n = side * side;
    let what = format!("layer {layer}");
    match &doc.block_spec {
        Value::String(s) if s == "dense" => {
            weight_count_check(&what, doc.rows * n, doc.weights.len())?;
            AnalysisOperator::dense(grid, doc.rows, doc.weights)
        }
        Value::String(s) if s == "windows" => {
            let list = doc
                .windows
                .ok_or_else(|| format_err(format!("{what}: windows part without a window list")))?;
            if list.len() != doc.rows {
                return Err(format_err(format!(
                    "{what}: {} windows listed for {} rows",
                    list.len(),
                    doc.rows
                )));
            }
            let windows: Vec<Window> = list
                .into_iter()
                .map(|(row, col, height, width)| Window { row, col, height, width })
                .collect();
            let expected: usize = windows.iter().map(Window::len).sum();
            weight_count_check(&what, expected, doc.weights.len())?;
            AnalysisOperator::from_windows(
                grid,
                windows,
                doc.weights,
                vec![AnalysisPart {
                    kind: PartKind::Windows,
                    rows: doc.rows,
                }],
            )
        }
        Value::Object(_) => {
            let b: BlockDoc = serde_json::from_value(doc.block_spec.clone())
                .map_err(|e| format_err(format!("{what}: bad block_spec: {e}")))?;
            let sites = doc
                .sites
                .ok_or_else(|| format_err(format!("{what}: block part without sites")))?;
            if sites.len() * b.filters_per_site != doc.rows {
                return Err(format_err(format!(
                    "{what}: {} sites x {} filters does not match {} rows",
                    sites.len(),
                    b.filters_per_site,
                    doc.rows
                )));
            }
            weight_count_check(&what, doc.rows * b.q * b.q, doc.weights.len())?;
            let mut op = AnalysisOperator::random_block_sparse_at(
                b.q,
                b.stride,
                b.filters_per_site,
                side,
                sites,
                0,
                0.0,
            )?;
            op.weights_mut().copy_from_slice(&doc.weights);
            Ok(op)
        }
        other => Err(format_err(format!("{what}: unknown block_spec {other}"))),
    }
}

/// Parses a model document.
pub fn from_json(text: &str) -> Result<NetworkParams> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| format_err(e.to_string()))?;
    if doc.version != MODEL_VERSION {
        return Err(format_err(format!(
            "unsupported model version {:?} (expected \"{MODEL_VERSION}\")",
            doc.version
        )));
    }
    if doc.g != "l1" {
        return Err(format_err(format!("unsupported regularizer {:?}", doc.g)));
    }
    if doc.k == 0 || doc.k != doc.layers.len() {
        return Err(format_err(format!(
            "K = {} but {} layers are stored",
            doc.k,
            doc.layers.len()
        )));
    }
    let kind = DegradationKind::from_parts(&doc.degradation.kind, doc.degradation.size_or_factor)?;
    let degradation = DegradationOperator::new(kind, doc.degradation.image_side)?;
    let side = degradation.side();
    let layers = doc
        .layers
        .into_iter()
        .enumerate()
        .map(|(k, layer)| {
            if layer.analysis.is_empty() {
                return Err(format_err(format!("layer {} has no analysis parts", k + 1)));
            }
            let parts = layer
                .analysis
                .into_iter()
                .map(|p| build_part(p, side, k + 1))
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerParams {
                tau: layer.tau,
                sigma: layer.sigma,
                analysis: AnalysisOperator::fuse(parts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = NetworkParams {
        degradation,
        layers,
        mode: doc.mode,
        prox: ProxSpec::L1,
    };
    params.validate()?;
    Ok(params)
}

pub fn serialize(params: &NetworkParams, path: &Path) -> Result<()> {
    let text = to_json(params)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn deserialize(path: &Path) -> Result<NetworkParams> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    from_json(&text)
}
