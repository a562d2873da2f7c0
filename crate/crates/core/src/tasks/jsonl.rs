//! One task per line: generator metadata plus every point.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Dataset, TaskError, TaskInstance, TaskMeta, Targets};
use crate::autodiff::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsRecord {
    pub xs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ys: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_way: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub meta: TaskMeta,
    pub train: PointsRecord,
    pub val: PointsRecord,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

impl From<&Dataset> for PointsRecord {
    fn from(ds: &Dataset) -> Self {
        match &ds.targets {
            Targets::Regression(ys) => Self {
                xs: rows(&ds.xs),
                ys: Some(rows(ys)),
                labels: None,
                n_way: None,
            },
            Targets::Classes { labels, n_way } => Self {
                xs: rows(&ds.xs),
                ys: None,
                labels: Some(labels.clone()),
                n_way: Some(*n_way),
            },
        }
    }
}

impl PointsRecord {
    fn into_dataset(self, offset: usize) -> Result<Dataset, TaskError> {
        let bad = |e: crate::autodiff::AutodiffError| TaskError::Record(e.to_string());
        let n = self.xs.len();
        let xs = if n == 0 {
            Tensor::zeros(&[0, 1])
        } else {
            Tensor::from_rows(&self.xs).map_err(bad)?
        };
        let targets = match (self.ys, self.labels, self.n_way) {
            (Some(ys), None, None) => Targets::Regression(if ys.is_empty() {
                Tensor::zeros(&[0, 1])
            } else {
                Tensor::from_rows(&ys).map_err(bad)?
            }),
            (None, Some(labels), Some(n_way)) => Targets::Classes { labels, n_way },
            _ => return Err(TaskError::Record("need either ys or labels + n_way".into())),
        };
        Dataset::new(xs, targets, (offset..offset + n).collect())
    }
}

impl From<&TaskInstance> for TaskRecord {
    fn from(t: &TaskInstance) -> Self {
        Self {
            meta: t.meta.clone(),
            train: (&t.train).into(),
            val: (&t.val).into(),
        }
    }
}

impl TryFrom<TaskRecord> for TaskInstance {
    type Error = TaskError;

    fn try_from(r: TaskRecord) -> Result<Self, TaskError> {
        let n_train = r.train.xs.len();
        Ok(Self {
            train: r.train.into_dataset(0)?,
            val: r.val.into_dataset(n_train)?,
            meta: r.meta,
        })
    }
}

pub fn dump_jsonl(tasks: &[TaskInstance], w: &mut impl Write) -> Result<(), TaskError> {
    for t in tasks {
        let line = serde_json::to_string(&TaskRecord::from(t)).map_err(|e| TaskError::Record(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn load_jsonl(r: impl BufRead) -> Result<Vec<TaskInstance>, TaskError> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord =
            serde_json::from_str(&line).map_err(|e| TaskError::Record(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec.try_into()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::tasks::{sample_batch, BlobsConfig, TaskDistributionConfig};

    #[test]
    fn suite_roundtrip() {
        let mut rng = stream(3, Purpose::Tasks, 0);
        let mut tasks = sample_batch(&TaskDistributionConfig::sinusoid(5, 7), 3, &mut rng).unwrap();
        let blobs = TaskDistributionConfig::blobs(BlobsConfig { n_way: 2, dim: 3, ..Default::default() }, 2, 3);
        tasks.extend(sample_batch(&blobs, 2, &mut rng).unwrap());
        let mut buf = Vec::new();
        dump_jsonl(&tasks, &mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 5);
        assert_eq!(load_jsonl(buf.as_slice()).unwrap(), tasks);
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = load_jsonl("{\"meta\": 3}\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
