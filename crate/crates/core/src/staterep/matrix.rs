use std::io::Write;

use crate::dataset::Fold;
use crate::error::Result;

/// Flattened (patient, stage) design matrix with labels and row tags.
///
/// Rows are stored row-major in `data`; row order is (patient, stage)
/// lexicographic in the order episodes were supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub feature_names: Vec<String>,
    pub action_labels: Vec<String>,
    pub default_action: usize,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
    /// Index into `patient_ids` for each row.
    pub patient: Vec<usize>,
    pub patient_ids: Vec<String>,
    pub stage: Vec<usize>,
    pub prev_action: Vec<usize>,
    pub severity: Vec<Option<f64>>,
    pub fold: Option<Fold>,
}

impl StateMatrix {
    pub(crate) fn with_capacity(
        feature_names: Vec<String>,
        action_labels: Vec<String>,
        default_action: usize,
        rows: usize,
    ) -> Self {
        let d = feature_names.len();
        Self {
            feature_names,
            action_labels,
            default_action,
            data: Vec::with_capacity(rows * d),
            labels: Vec::with_capacity(rows),
            patient: Vec::with_capacity(rows),
            patient_ids: Vec::new(),
            stage: Vec::with_capacity(rows),
            prev_action: Vec::with_capacity(rows),
            severity: Vec::with_capacity(rows),
            fold: None,
        }
    }

    /// Builds a bare matrix from feature rows and labels; tags are synthetic
    /// (one patient per row, stage 1). Handy for fitting models directly.
    pub fn from_rows(feature_names: Vec<String>, action_labels: Vec<String>, rows: &[Vec<f64>], labels: &[usize]) -> Self {
        assert_eq!(rows.len(), labels.len());
        let mut m = Self::with_capacity(feature_names, action_labels, 0, rows.len());
        for (i, (r, &y)) in rows.iter().zip(labels).enumerate() {
            let pid = m.push_patient(&format!("r{i}"));
            m.push_row(r, y, pid, 1, 0, None);
        }
        m
    }

    pub(crate) fn push_patient(&mut self, id: &str) -> usize {
        self.patient_ids.push(id.to_string());
        self.patient_ids.len() - 1
    }

    pub(crate) fn push_row(
        &mut self,
        features: &[f64],
        label: usize,
        patient: usize,
        stage: usize,
        prev_action: usize,
        severity: Option<f64>,
    ) {
        assert_eq!(features.len(), self.feature_names.len(), "feature count mismatch");
        self.data.extend_from_slice(features);
        self.labels.push(label);
        self.patient.push(patient);
        self.stage.push(stage);
        self.prev_action.push(prev_action);
        self.severity.push(severity);
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn with_fold(mut self, fold: Fold) -> Self {
        self.fold = Some(fold);
        self
    }

    /// Number of distinct labels present.
    pub fn n_present_classes(&self) -> usize {
        let mut seen = vec![false; self.n_actions()];
        for &y in &self.labels {
            seen[y] = true;
        }
        seen.iter().filter(|&&b| b).count()
    }

    /// Subset of rows (in the given order); patient table is kept whole.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut m = Self::with_capacity(
            self.feature_names.clone(),
            self.action_labels.clone(),
            self.default_action,
            rows.len(),
        );
        m.patient_ids = self.patient_ids.clone();
        m.fold = self.fold;
        for &i in rows {
            m.push_row(self.row(i), self.labels[i], self.patient[i], self.stage[i], self.prev_action[i], self.severity[i]);
        }
        m
    }

    /// Row indices grouped by patient, in first-appearance order.
    pub fn rows_by_patient(&self) -> Vec<Vec<usize>> {
        let mut slot = vec![usize::MAX; self.patient_ids.len()];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, &p) in self.patient.iter().enumerate() {
            if slot[p] == usize::MAX {
                slot[p] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[p]].push(i);
        }
        groups
    }

    /// CSV export: `patient_id, t, action, <features...>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["patient_id".to_string(), "t".into(), "action".into()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![
                self.patient_ids[self.patient[i]].clone(),
                self.stage[i].to_string(),
                self.action_labels[self.labels[i]].clone(),
            ];
            rec.extend(self.row(i).iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
