//! Data model for multi-trial patient-level datasets.
//!
//! A dataset holds one row per participant with covariates, randomization
//! arm `z`, treatment received `d`, outcome `y`, and a trial label `s`.
//! Trial labels are free strings mapped onto analysis roles (target,
//! historical-1, historical-2) by a [`RoleConfig`]. Datasets are immutable
//! after construction and safe to share across threads.

mod io;
mod validate;

pub use io::{load_dataset, write_dataset};
pub use validate::{validate_dataset, CellCount, CovariateSummary, OverlapDiagnostic, ValidationReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analysis role a trial plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Target,
    Historical1,
    Historical2,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Target => "target",
            Role::Historical1 => "historical1",
            Role::Historical2 => "historical2",
        }
    }
}

/// Which analysis the dataset is being prepared for; controls which columns
/// each role must provide.
///
/// * `Design`: the target trial is still being planned, so target rows may
///   carry covariates only.
/// * `Posthoc`: the target trial ran as an active-controlled study, so
///   target rows must carry `z` and `d` (never an outcome requirement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisStage {
    #[default]
    Design,
    Posthoc,
}

/// Sentinel accepted in config files for a collapsed historical-2 label.
pub const SAME_AS_HISTORICAL1: &str = "same-as-historical1";

/// Maps free-string trial labels onto roles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoleConfig {
    pub target_label: String,
    pub historical1_label: String,
    /// `None` or the literal `"same-as-historical1"` collapse the two
    /// historical trials into one.
    #[serde(default)]
    pub historical2_label: Option<String>,
    #[serde(default)]
    pub stage: AnalysisStage,
}

impl RoleConfig {
    pub fn new(target: &str, h1: &str, h2: Option<&str>) -> Self {
        RoleConfig {
            target_label: target.to_string(),
            historical1_label: h1.to_string(),
            historical2_label: h2.map(str::to_string),
            stage: AnalysisStage::Design,
        }
    }

    pub fn with_stage(mut self, stage: AnalysisStage) -> Self {
        self.stage = stage;
        self
    }

    /// True when historical-2 aliases historical-1.
    pub fn collapsed(&self) -> bool {
        match &self.historical2_label {
            None => true,
            Some(l) => l == SAME_AS_HISTORICAL1 || *l == self.historical1_label,
        }
    }

    /// The label whose rows serve as historical-2 (historical-1's label when
    /// collapsed).
    pub fn historical2_effective(&self) -> &str {
        if self.collapsed() {
            &self.historical1_label
        } else {
            self.historical2_label.as_deref().unwrap()
        }
    }

    pub fn label_of(&self, role: Role) -> &str {
        match role {
            Role::Target => &self.target_label,
            Role::Historical1 => &self.historical1_label,
            Role::Historical2 => self.historical2_effective(),
        }
    }

    /// Primary role of a label (a collapsed historical label reports as
    /// historical-1; the historical-2 view aliases those rows).
    pub fn role_of(&self, label: &str) -> Option<Role> {
        if label == self.target_label {
            Some(Role::Target)
        } else if label == self.historical1_label {
            Some(Role::Historical1)
        } else if !self.collapsed() && label == self.historical2_effective() {
            Some(Role::Historical2)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_label == self.historical1_label {
            return Err(Error::InvalidRoleConfig(
                "target and historical-1 labels must differ".into(),
            ));
        }
        if !self.collapsed() && self.historical2_effective() == self.target_label {
            return Err(Error::InvalidRoleConfig(
                "target and historical-2 labels must differ".into(),
            ));
        }
        Ok(())
    }
}

/// One participant, as read from or written to a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: String,
    pub z: Option<u8>,
    pub d: Option<u8>,
    pub y: Option<u8>,
    pub covariates: Vec<CovariateValue>,
}

/// A single covariate observation. Categorical values stay as strings;
/// missing categorical observations become the explicit `"missing"` level.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValue {
    Num(f64),
    Cat(String),
}

/// Explicit level that absorbs missing categorical observations.
pub const MISSING_LEVEL: &str = "missing";

/// Column-major covariate storage.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    Continuous(Vec<f64>),
    /// `levels` in first-appearance order; `codes[i]` indexes into `levels`.
    Categorical { levels: Vec<String>, codes: Vec<u32> },
}

impl Covariate {
    pub fn len(&self) -> usize {
        match self {
            Covariate::Continuous(v) => v.len(),
            Covariate::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-index partition of a dataset by role. When the historical trials are
/// collapsed, `historical2` aliases `historical1`'s rows.
#[derive(Debug, Clone)]
pub struct RolePartition {
    pub target: Vec<usize>,
    pub historical1: Vec<usize>,
    pub historical2: Vec<usize>,
    pub collapsed: bool,
}

impl RolePartition {
    pub fn rows(&self, role: Role) -> &[usize] {
        match role {
            Role::Target => &self.target,
            Role::Historical1 => &self.historical1,
            Role::Historical2 => &self.historical2,
        }
    }
}

/// Immutable multi-trial dataset.
#[derive(Debug, Clone)]
pub struct TrialDataset {
    roles: RoleConfig,
    covariate_names: Vec<String>,
    columns: Vec<Covariate>,
    z: Vec<Option<u8>>,
    d: Vec<Option<u8>>,
    y: Vec<Option<u8>>,
    /// Distinct labels in first-appearance order.
    trial_labels: Vec<String>,
    /// Per-row index into `trial_labels`.
    trial_of: Vec<u32>,
    partition: RolePartition,
}

impl TrialDataset {
    /// Build a dataset from columnar parts, validating role coverage, binary
    /// domains, and per-role column requirements.
    pub fn from_parts(
        roles: RoleConfig,
        covariate_names: Vec<String>,
        columns: Vec<Covariate>,
        z: Vec<Option<u8>>,
        d: Vec<Option<u8>>,
        y: Vec<Option<u8>>,
        trial_per_row: Vec<String>,
    ) -> Result<Self> {
        roles.validate()?;
        let n = trial_per_row.len();
        if covariate_names.len() != columns.len() {
            return Err(Error::InvalidConfig(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                columns.len()
            )));
        }
        for (name, col) in covariate_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "covariate '{name}' has {} values for {n} rows",
                    col.len()
                )));
            }
        }
        if z.len() != n || d.len() != n || y.len() != n {
            return Err(Error::InvalidConfig("z/d/y column length mismatch".into()));
        }
        for (i, v) in z.iter().chain(d.iter()).chain(y.iter()).enumerate() {
            if let Some(b) = v {
                if *b > 1 {
                    return Err(Error::MalformedRow {
                        row: i % n,
                        reason: format!("binary column holds {b}"),
                    });
                }
            }
        }

        // Intern labels in first-appearance order; every label must map to a
        // declared role.
        let mut trial_labels: Vec<String> = Vec::new();
        let mut trial_of = Vec::with_capacity(n);
        for label in &trial_per_row {
            if roles.role_of(label).is_none() {
                return Err(Error::UnknownLabel(label.clone()));
            }
            let idx = match trial_labels.iter().position(|l| l == label) {
                Some(i) => i,
                None => {
                    trial_labels.push(label.clone());
                    trial_labels.len() - 1
                }
            };
            trial_of.push(idx as u32);
        }

        let mut partition = RolePartition {
            target: Vec::new(),
            historical1: Vec::new(),
            historical2: Vec::new(),
            collapsed: roles.collapsed(),
        };
        for (i, label) in trial_per_row.iter().enumerate() {
            match roles.role_of(label).unwrap() {
                Role::Target => partition.target.push(i),
                Role::Historical1 => partition.historical1.push(i),
                Role::Historical2 => partition.historical2.push(i),
            }
        }
        if partition.collapsed {
            partition.historical2 = partition.historical1.clone();
        }
        if partition.target.is_empty() {
            return Err(Error::EmptyRole("target".into()));
        }
        if partition.historical1.is_empty() {
            return Err(Error::EmptyRole("historical1".into()));
        }
        if partition.historical2.is_empty() {
            return Err(Error::EmptyRole("historical2".into()));
        }

        let ds = TrialDataset {
            roles,
            covariate_names,
            columns,
            z,
            d,
            y,
            trial_labels,
            trial_of,
            partition,
        };
        ds.check_required_columns()?;
        Ok(ds)
    }

    /// Per-role column requirements: historical-1 needs z, d, y; a distinct
    /// historical-2 needs z, d; the target needs z, d only in the post-hoc
    /// stage.
    fn check_required_columns(&self) -> Result<()> {
        let require = |role: Role, col: &str, present: &dyn Fn(usize) -> bool| -> Result<()> {
            for &i in self.partition.rows(role) {
                if !present(i) {
                    return Err(Error::MissingRequiredColumn {
                        column: col.to_string(),
                        trial: self.roles.label_of(role).to_string(),
                        role: role.name().to_string(),
                    });
                }
            }
            Ok(())
        };
        let zs = &self.z;
        let ds_ = &self.d;
        let ys = &self.y;
        require(Role::Historical1, "z", &|i| zs[i].is_some())?;
        require(Role::Historical1, "d", &|i| ds_[i].is_some())?;
        require(Role::Historical1, "y", &|i| ys[i].is_some())?;
        if !self.partition.collapsed {
            require(Role::Historical2, "z", &|i| zs[i].is_some())?;
            require(Role::Historical2, "d", &|i| ds_[i].is_some())?;
        }
        if self.roles.stage == AnalysisStage::Posthoc {
            require(Role::Target, "z", &|i| zs[i].is_some())?;
            require(Role::Target, "d", &|i| ds_[i].is_some())?;
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.trial_of.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.columns.len()
    }

    pub fn roles(&self) -> &RoleConfig {
        &self.roles
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.columns
    }

    pub fn trial_labels(&self) -> &[String] {
        &self.trial_labels
    }

    pub fn trial_label(&self, row: usize) -> &str {
        &self.trial_labels[self.trial_of[row] as usize]
    }

    pub fn trial_index(&self, row: usize) -> usize {
        self.trial_of[row] as usize
    }

    pub fn z(&self, row: usize) -> Option<u8> {
        self.z[row]
    }

    pub fn d(&self, row: usize) -> Option<u8> {
        self.d[row]
    }

    pub fn y(&self, row: usize) -> Option<u8> {
        self.y[row]
    }

    pub fn role_of_row(&self, row: usize) -> Role {
        self.roles.role_of(self.trial_label(row)).unwrap()
    }

    /// Row indices per role; the partition is exhaustive and, apart from the
    /// collapsed historical-2 alias, disjoint.
    pub fn partition(&self) -> &RolePartition {
        &self.partition
    }

    /// Covariates of one row as numeric values (categorical observations
    /// are represented by their level codes, matching what the design
    /// encoders expect).
    pub fn covariate_row(&self, row: usize) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| match c {
                Covariate::Continuous(v) => v[row],
                Covariate::Categorical { codes, .. } => f64::from(codes[row]),
            })
            .collect()
    }

    /// Reconstruct the row-level record (used by the CSV writer and tests).
    pub fn record(&self, row: usize) -> TrialRecord {
        let covariates = self
            .columns
            .iter()
            .map(|c| match c {
                Covariate::Continuous(v) => CovariateValue::Num(v[row]),
                Covariate::Categorical { levels, codes } => {
                    CovariateValue::Cat(levels[codes[row] as usize].clone())
                }
            })
            .collect();
        TrialRecord {
            trial: self.trial_label(row).to_string(),
            z: self.z[row],
            d: self.d[row],
            y: self.y[row],
            covariates,
        }
    }
}

/// Partition a dataset's rows by role.
///
/// The returned partition is exhaustive; with collapsed historical trials
/// the historical-2 entry aliases historical-1's rows.
pub fn split_by_trial(ds: &TrialDataset) -> RolePartition {
    ds.partition().clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_roles() -> RoleConfig {
        RoleConfig::new("t", "h1", Some("h2"))
    }

    fn tiny_dataset() -> TrialDataset {
        TrialDataset::from_parts(
            tiny_roles(),
            vec!["x1".into()],
            vec![Covariate::Continuous(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6])],
            vec![Some(0), Some(1), Some(0), Some(1), None, None],
            vec![Some(0), Some(1), Some(0), Some(1), None, None],
            vec![Some(0), Some(1), None, None, None, None],
            vec!["h1".into(), "h1".into(), "h2".into(), "h2".into(), "t".into(), "t".into()],
        )
        .unwrap()
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let ds = tiny_dataset();
        let p = split_by_trial(&ds);
        assert_eq!(p.target, vec![4, 5]);
        assert_eq!(p.historical1, vec![0, 1]);
        assert_eq!(p.historical2, vec![2, 3]);
        assert_eq!(p.target.len() + p.historical1.len() + p.historical2.len(), ds.n_rows());
    }

    #[test]
    fn collapsed_historical2_aliases_historical1() {
        let ds = TrialDataset::from_parts(
            RoleConfig::new("t", "h1", None),
            vec![],
            vec![],
            vec![Some(0), Some(1), None],
            vec![Some(0), Some(1), None],
            vec![Some(0), Some(1), None],
            vec!["h1".into(), "h1".into(), "t".into()],
        )
        .unwrap();
        let p = split_by_trial(&ds);
        assert!(p.collapsed);
        assert_eq!(p.historical1, p.historical2);
    }

    #[test]
    fn unknown_label_rejected() {
        let err = TrialDataset::from_parts(
            tiny_roles(),
            vec![],
            vec![],
            vec![Some(0)],
            vec![Some(0)],
            vec![Some(0)],
            vec!["mystery".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownLabel(_)));
    }

    #[test]
    fn missing_outcome_in_historical1_rejected() {
        let err = TrialDataset::from_parts(
            RoleConfig::new("t", "h1", None),
            vec![],
            vec![],
            vec![Some(0), None],
            vec![Some(0), None],
            vec![None, None],
            vec!["h1".into(), "t".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingRequiredColumn { .. }));
    }

    #[test]
    fn design_stage_target_may_lack_everything() {
        let ds = tiny_dataset();
        assert_eq!(ds.z(4), None);
        assert_eq!(ds.y(5), None);
    }

    #[test]
    fn posthoc_stage_requires_target_compliance() {
        let err = TrialDataset::from_parts(
            RoleConfig::new("t", "h1", None).with_stage(AnalysisStage::Posthoc),
            vec![],
            vec![],
            vec![Some(0), None],
            vec![Some(0), None],
            vec![Some(0), None],
            vec!["h1".into(), "t".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingRequiredColumn { .. }));
    }

    #[test]
    fn nonbinary_values_rejected() {
        let err = TrialDataset::from_parts(
            tiny_roles(),
            vec![],
            vec![],
            vec![Some(2)],
            vec![Some(0)],
            vec![Some(0)],
            vec!["h1".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::MalformedRow { .. }));
    }

    #[test]
    fn same_as_historical1_sentinel_collapses() {
        let rc = RoleConfig::new("t", "h1", Some(SAME_AS_HISTORICAL1));
        assert!(rc.collapsed());
        assert_eq!(rc.historical2_effective(), "h1");
    }
}
