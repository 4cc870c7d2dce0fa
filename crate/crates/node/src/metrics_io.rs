//! Metrics as a versioned CSV table (`schema_version,node,metric,value`,
//! one row per node per metric) and a JSON summary with the same content.

use std::path::Path;

use poi_core::sim::{MetricRow, Metrics};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub fn metrics_csv(metrics: &Metrics) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["schema_version", "node", "metric", "value"]).expect("in-memory write");
    let version = METRICS_SCHEMA_VERSION.to_string();
    for MetricRow { node, metric, value } in metrics.rows() {
        w.write_record([version.as_str(), &node, &metric, &value]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

fn typed(value: &str) -> Value {
    if let Ok(b) = value.parse::<bool>() {
        Value::Bool(b)
    } else if let Ok(n) = value.parse::<u64>() {
        Value::from(n)
    } else if let Some(f) = value.parse::<f64>().ok().filter(|f| f.is_finite()) {
        Value::from(f)
    } else {
        Value::String(value.to_string())
    }
}

pub fn metrics_json(metrics: &Metrics) -> Value {
    let mut summary = Map::new();
    let mut nodes: Map<String, Value> = Map::new();
    for MetricRow { node, metric, value } in metrics.rows() {
        if node == "all" {
            summary.insert(metric, typed(&value));
        } else {
            nodes
                .entry(node)
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("node entries are objects")
                .insert(metric, typed(&value));
        }
    }
    let mut root = Map::new();
    root.insert("schema_version".into(), Value::from(METRICS_SCHEMA_VERSION));
    root.insert("summary".into(), Value::Object(summary));
    root.insert("nodes".into(), Value::Object(nodes));
    Value::Object(root)
}

pub fn write_metrics_csv(path: &Path, metrics: &Metrics) -> Result<(), CliError> {
    std::fs::write(path, metrics_csv(metrics)).map_err(|e| CliError::io(path, e))
}

pub fn write_metrics_json(path: &Path, metrics: &Metrics) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&metrics_json(metrics)).expect("json value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
