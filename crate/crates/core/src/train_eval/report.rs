use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::train::LossPoint;
use super::TrainError;

/// AUC value in the radar file: a number or the string "n/a".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadarValue {
    Auc(f64),
    Missing(String),
}

impl RadarValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            RadarValue::Auc(v) => Some(*v),
            RadarValue::Missing(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub variant: String,
    /// Aligned with `RadarData::axes`.
    pub auc: Vec<RadarValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarData {
    pub axes: Vec<String>,
    pub series: Vec<RadarSeries>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmittedReport {
    pub table: PathBuf,
    pub radar: PathBuf,
}

pub fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

pub fn metrics_table(reports: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("variant,accuracy,recall,precision\n");
    for (name, r) in reports {
        out.push_str(&format!(
            "{name},{},{},{}\n",
            percent(r.accuracy),
            percent(r.macro_recall),
            percent(r.macro_precision)
        ));
    }
    out
}

pub fn radar_data(reports: &[(String, MetricsReport)], class_names: &[String]) -> Result<RadarData, TrainError> {
    let mut series = Vec::with_capacity(reports.len());
    for (name, r) in reports {
        if r.per_class_auc.len() != class_names.len() {
            return Err(TrainError::Validation(format!(
                "report {name} has {} classes, expected {}",
                r.per_class_auc.len(),
                class_names.len()
            )));
        }
        series.push(RadarSeries {
            variant: name.clone(),
            auc: r
                .per_class_auc
                .iter()
                .map(|a| match a {
                    Some(v) => RadarValue::Auc(*v),
                    None => RadarValue::Missing("n/a".into()),
                })
                .collect(),
        });
    }
    Ok(RadarData {
        axes: class_names.to_vec(),
        series,
    })
}

fn write(path: &Path, contents: &[u8]) -> Result<(), TrainError> {
    std::fs::write(path, contents).map_err(|e| TrainError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `metrics.csv` and `radar.json` into `dir`.
pub fn emit_report(reports: &[(String, MetricsReport)], class_names: &[String], dir: &Path) -> Result<EmittedReport, TrainError> {
    if reports.is_empty() {
        return Err(TrainError::Validation("no reports to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| TrainError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let radar = radar_data(reports, class_names)?;
    let table_path = dir.join("metrics.csv");
    let radar_path = dir.join("radar.json");
    write(&table_path, metrics_table(reports).as_bytes())?;
    write(&radar_path, serde_json::to_string_pretty(&radar).expect("radar serializes").as_bytes())?;
    Ok(EmittedReport {
        table: table_path,
        radar: radar_path,
    })
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("step,loss\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.step, p.loss));
    }
    out
}

pub fn write_loss_curve(curve: &[LossPoint], path: &Path) -> Result<(), TrainError> {
    write(path, loss_curve_csv(curve).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train_eval::compute_metrics;

    fn report() -> MetricsReport {
        let labels = [0, 1, 2, 3, 4, 0, 1];
        let probs: Vec<Vec<f64>> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (0..5).map(|j| if j == l { 0.6 } else { 0.1 } + 0.001 * i as f64).collect())
            .collect();
        compute_metrics(&labels, &probs, 5).unwrap()
    }

    fn names() -> Vec<String> {
        crate::video_data::DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn table_uses_two_decimal_percent() {
        let mut r = report();
        r.accuracy = 0.8673;
        let t = metrics_table(&[("full".into(), r)]);
        assert!(t.starts_with("variant,accuracy,recall,precision\n"));
        assert!(t.contains("full,86.73,"));
    }

    #[test]
    fn radar_axes_and_missing_values() {
        let mut r = report();
        r.per_class_auc[2] = None;
        let d = radar_data(&[("full".into(), r)], &names()).unwrap();
        assert_eq!(d.axes.len(), 5);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"n/a\""));
        let back: RadarData = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = emit_report(&[("full".into(), report())], &names(), dir.path()).unwrap();
        assert!(out.table.exists() && out.radar.exists());
        assert!(emit_report(&[], &names(), dir.path()).is_err());
    }

    #[test]
    fn unwritable_destination() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        assert!(matches!(
            emit_report(&[("full".into(), report())], &names(), &blocker.join("sub")),
            Err(TrainError::Io { .. })
        ));
    }

    #[test]
    fn loss_curve_format() {
        let c = [LossPoint { step: 0, epoch: 0, loss: 1.5 }, LossPoint { step: 1, epoch: 0, loss: 1.25 }];
        assert_eq!(loss_curve_csv(&c), "step,loss\n0,1.5\n1,1.25\n");
    }
}
