//! Tabular data: typed columns, schema declarations, variable roles, and the
//! reference-cell encoding that turns them into design matrices.
//!
//! Columns are numeric or categorical; categorical status comes from the
//! schema declaration, never from sniffing. Missing cells are a hard error
//! unless the schema declares a missingness weight column, in which case a
//! missing cell is tolerated only on rows whose weight is zero (the row is
//! carried but contributes nothing to any fit). Unreferenced columns are
//! accepted, carried verbatim, and ignored by every model.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::DesignMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// Declarative description of a data file: response and treatment columns,
/// the direction of benefit, and the variable-role name lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSchema {
    pub outcome: String,
    pub treatment: String,
    pub outcome_kind: OutcomeKind,
    /// True when larger outcomes are better; scores are oriented so that
    /// positive always means "treatment is expected to help".
    pub higher_is_better: bool,
    /// Confounders: everything believed to influence treatment assignment.
    pub names_influencing_treatment: Vec<String>,
    /// Rule inputs: covariates the deployed rule may consult.
    pub names_influencing_rule: Vec<String>,
    /// Confounders of treatment in the evaluation data, when they differ
    /// from `names_influencing_treatment` (defaults to that list).
    #[serde(default)]
    pub names_influencing_treatment_eval: Option<Vec<String>>,
    /// Column of per-row weights adjusting for missingness. Rows with a
    /// missing cell in any referenced column must carry weight zero.
    #[serde(default)]
    pub missingness_weight_column: Option<String>,
    /// Columns to store and encode as categorical levels.
    #[serde(default)]
    pub categorical_columns: Vec<String>,
}

impl DataSchema {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            outcome: self.outcome.clone(),
            treatment: self.treatment.clone(),
            outcome_kind: self.outcome_kind,
            higher_is_better: self.higher_is_better,
            missingness_weight_column: self.missingness_weight_column.clone(),
        }
    }

    /// Every column name the schema mentions; anything else in a file is an
    /// unreferenced column.
    pub fn referenced_columns(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        set.insert(self.outcome.clone());
        set.insert(self.treatment.clone());
        if let Some(c) = &self.missingness_weight_column {
            set.insert(c.clone());
        }
        for list in [
            &self.names_influencing_treatment,
            &self.names_influencing_rule,
            &self.categorical_columns,
        ] {
            set.extend(list.iter().cloned());
        }
        if let Some(list) = &self.names_influencing_treatment_eval {
            set.extend(list.iter().cloned());
        }
        set
    }

    pub fn validate(&self) -> Result<()> {
        if self.outcome.is_empty() || self.treatment.is_empty() {
            return Err(Error::Schema(
                "outcome and treatment names are required".into(),
            ));
        }
        if self.outcome == self.treatment {
            return Err(Error::Schema(
                "outcome and treatment must be different columns".into(),
            ));
        }
        if self.names_influencing_rule.is_empty() {
            return Err(Error::Schema(
                "names_influencing_rule must not be empty".into(),
            ));
        }
        for list in [
            (
                "names_influencing_treatment",
                &self.names_influencing_treatment,
            ),
            ("names_influencing_rule", &self.names_influencing_rule),
        ] {
            let mut seen = BTreeSet::new();
            for name in list.1 {
                if name == &self.outcome || name == &self.treatment {
                    return Err(Error::Schema(format!(
                        "{} must not contain the outcome or treatment column '{name}'",
                        list.0
                    )));
                }
                if !seen.insert(name) {
                    return Err(Error::Schema(format!(
                        "duplicate name '{name}' in {}",
                        list.0
                    )));
                }
            }
        }
        if let Some(wc) = &self.missingness_weight_column {
            if wc == &self.outcome || wc == &self.treatment {
                return Err(Error::Schema(
                    "the missingness weight column cannot be the outcome or treatment".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The part of a schema a Dataset itself needs (no role lists).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub outcome: String,
    pub treatment: String,
    pub outcome_kind: OutcomeKind,
    pub higher_is_better: bool,
    pub missingness_weight_column: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Levels in first-observed order; `codes[i]` indexes into `levels`.
    Categorical {
        levels: Vec<String>,
        codes: Vec<u32>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Build a categorical column from labels, levels in first-observed order.
    pub fn categorical(labels: &[&str]) -> Column {
        let owned: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        Column::from_labels(&owned)
    }

    pub fn from_labels(labels: &[String]) -> Column {
        let mut levels: Vec<String> = Vec::new();
        let mut lookup: HashMap<&str, u32> = HashMap::new();
        let mut codes = Vec::with_capacity(labels.len());
        for label in labels {
            let code = match lookup.get(label.as_str()) {
                Some(&c) => c,
                None => {
                    let c = levels.len() as u32;
                    levels.push(label.clone());
                    // Key borrows from `levels`' copy via raw labels; use the
                    // owned string in the map keyed by the slice in `labels`.
                    lookup.insert(label.as_str(), c);
                    c
                }
            };
            codes.push(code);
        }
        Column::Categorical { levels, codes }
    }

    fn select(&self, idx: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(idx.iter().map(|&i| v[i]).collect()),
            Column::Categorical { levels, codes } => Column::Categorical {
                levels: levels.clone(),
                codes: idx.iter().map(|&i| codes[i]).collect(),
            },
        }
    }
}

/// An in-memory table with declared outcome/treatment columns.
#[derive(Clone, Debug)]
pub struct Dataset {
    columns: Vec<(String, Column)>,
    index: HashMap<String, usize>,
    n_rows: usize,
    meta: DatasetMeta,
    /// Placeholder cells tolerated under a zero missingness weight:
    /// column name -> rows.
    missing: BTreeMap<String, BTreeSet<usize>>,
}

impl Dataset {
    pub fn new(columns: Vec<(String, Column)>, meta: DatasetMeta) -> Result<Self> {
        Self::with_missing(columns, meta, BTreeMap::new())
    }

    pub fn with_missing(
        columns: Vec<(String, Column)>,
        meta: DatasetMeta,
        missing: BTreeMap<String, BTreeSet<usize>>,
    ) -> Result<Self> {
        let n_rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        if n_rows < 2 {
            return Err(Error::Validation(format!(
                "a dataset needs at least 2 rows, got {n_rows}"
            )));
        }
        let mut index = HashMap::new();
        for (i, (name, col)) in columns.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate column '{name}'")));
            }
            if col.len() != n_rows {
                return Err(Error::Validation(format!(
                    "column '{name}' has {} rows, expected {n_rows}",
                    col.len()
                )));
            }
            if let Column::Categorical { levels, codes } = col {
                let mut seen = BTreeSet::new();
                for l in levels {
                    if !seen.insert(l) {
                        return Err(Error::Validation(format!(
                            "column '{name}' repeats level '{l}'"
                        )));
                    }
                }
                if codes.iter().any(|&c| c as usize >= levels.len()) {
                    return Err(Error::Validation(format!(
                        "column '{name}' has a code outside its level set"
                    )));
                }
            }
        }
        let ds = Dataset {
            columns,
            index,
            n_rows,
            meta,
            missing,
        };
        ds.validate_core_columns()?;
        Ok(ds)
    }

    fn validate_core_columns(&self) -> Result<()> {
        let meta = &self.meta;
        let outcome = self.numeric(&meta.outcome).ok_or_else(|| {
            Error::Schema(format!(
                "outcome column '{}' missing or non-numeric",
                meta.outcome
            ))
        })?;
        match meta.outcome_kind {
            OutcomeKind::Binary => {
                if let Some(bad) = outcome.iter().find(|v| **v != 0.0 && **v != 1.0) {
                    return Err(Error::Validation(format!(
                        "binary outcome '{}' contains {bad}",
                        meta.outcome
                    )));
                }
            }
            OutcomeKind::Continuous => {
                if let Some(bad) = outcome.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!(
                        "continuous outcome '{}' contains {bad}",
                        meta.outcome
                    )));
                }
            }
        }
        let treatment = self.numeric(&meta.treatment).ok_or_else(|| {
            Error::Schema(format!(
                "treatment column '{}' missing or non-numeric",
                meta.treatment
            ))
        })?;
        if let Some(bad) = treatment.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::Validation(format!(
                "treatment column '{}' must be 0/1, contains {bad}",
                meta.treatment
            )));
        }
        if let Some(wc) = &meta.missingness_weight_column {
            let wv = self.numeric(wc).ok_or_else(|| {
                Error::Schema(format!(
                    "missingness weight column '{wc}' missing or non-numeric"
                ))
            })?;
            if let Some(bad) = wv.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Validation(format!(
                    "missingness weights in '{wc}' must be finite and non-negative, got {bad}"
                )));
            }
        }
        for core in [&meta.outcome, &meta.treatment]
            .into_iter()
            .chain(meta.missingness_weight_column.as_ref())
        {
            if self.missing.contains_key(core) {
                return Err(Error::Validation(format!(
                    "column '{core}' may never have missing cells"
                )));
            }
        }
        // Placeholder rows must carry weight zero.
        if !self.missing.is_empty() {
            let wc = self.meta.missingness_weight_column.clone().ok_or_else(|| {
                Error::Validation(
                    "missing cells present but no missingness weight column declared".into(),
                )
            })?;
            let weights = self.numeric(&wc).unwrap().to_vec();
            for (col, rows) in &self.missing {
                if !self.index.contains_key(col) {
                    return Err(Error::Schema(format!(
                        "missing-cell map names unknown column '{col}'"
                    )));
                }
                for &r in rows {
                    if r >= self.n_rows {
                        return Err(Error::Validation(format!(
                            "missing-cell map row {r} out of bounds"
                        )));
                    }
                    if weights[r] != 0.0 {
                        return Err(Error::Validation(format!(
                            "row {r} has a missing cell in '{col}' but missingness weight {}; such rows must have weight 0",
                            weights[r]
                        )));
                    }
                }
            }
        }
        // Numeric columns must be finite away from placeholders.
        for (name, col) in &self.columns {
            if let Column::Numeric(values) = col {
                let holes = self.missing.get(name);
                for (i, v) in values.iter().enumerate() {
                    if !v.is_finite() && !holes.map(|h| h.contains(&i)).unwrap_or(false) {
                        return Err(Error::Validation(format!(
                            "non-finite value {v} at row {i} of column '{name}'"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index.get(name).map(|&i| &self.columns[i].1)
    }

    fn numeric(&self, name: &str) -> Option<&[f64]> {
        match self.column(name) {
            Some(Column::Numeric(v)) => Some(v),
            _ => None,
        }
    }

    pub fn outcome_values(&self) -> &[f64] {
        self.numeric(&self.meta.outcome)
            .expect("validated at construction")
    }

    pub fn treatment_values(&self) -> &[f64] {
        self.numeric(&self.meta.treatment)
            .expect("validated at construction")
    }

    /// The declared missingness weights, when present.
    pub fn extra_weights(&self) -> Option<&[f64]> {
        self.meta
            .missingness_weight_column
            .as_ref()
            .and_then(|c| self.numeric(c))
    }

    pub fn missing_cells(&self) -> &BTreeMap<String, BTreeSet<usize>> {
        &self.missing
    }

    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        let t = self.treatment_values();
        let target = arm as f64;
        (0..self.n_rows).filter(|&i| t[i] == target).collect()
    }

    /// Row subset; duplicate indices are allowed (bootstrap resampling).
    /// The subset inherits metadata; it may be smaller than 2 rows only
    /// through this internal path, never through public construction.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::Validation("cannot build an empty subset".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_rows) {
            return Err(Error::Validation(format!(
                "subset index {bad} out of bounds for {} rows",
                self.n_rows
            )));
        }
        let columns: Vec<(String, Column)> = self
            .columns
            .iter()
            .map(|(n, c)| (n.clone(), c.select(idx)))
            .collect();
        let mut missing = BTreeMap::new();
        for (col, rows) in &self.missing {
            let mapped: BTreeSet<usize> = idx
                .iter()
                .enumerate()
                .filter(|(_, &orig)| rows.contains(&orig))
                .map(|(new, _)| new)
                .collect();
            if !mapped.is_empty() {
                missing.insert(col.clone(), mapped);
            }
        }
        let mut index = HashMap::new();
        for (i, (name, _)) in columns.iter().enumerate() {
            index.insert(name.clone(), i);
        }
        Ok(Dataset {
            columns,
            index,
            n_rows: idx.len(),
            meta: self.meta.clone(),
            missing,
        })
    }
}

// ================================================================== roles

/// Partition of covariates by whether they influence treatment assignment
/// and whether a deployed rule may observe them, plus the rule-input list
/// and the evaluation-time confounders.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoleAssignment {
    /// Influences treatment, observable by the rule.
    pub c_ti: Vec<String>,
    /// Influences treatment, not observable by the rule.
    pub c_tn: Vec<String>,
    /// Does not influence treatment, observable by the rule.
    pub c_ni: Vec<String>,
    /// Neither: accepted in files and ignored by every model.
    pub c_nn: Vec<String>,
    confounders: Vec<String>,
    rule_inputs: Vec<String>,
    c_t_eval: Option<Vec<String>>,
}

impl RoleAssignment {
    pub fn from_schema(schema: &DataSchema, data: &Dataset) -> Result<Self> {
        schema.validate()?;
        let c_t = &schema.names_influencing_treatment;
        let r = &schema.names_influencing_rule;
        let in_r: BTreeSet<&String> = r.iter().collect();
        let in_ct: BTreeSet<&String> = c_t.iter().collect();
        let c_ti: Vec<String> = c_t.iter().filter(|n| in_r.contains(n)).cloned().collect();
        let c_tn: Vec<String> = c_t.iter().filter(|n| !in_r.contains(n)).cloned().collect();
        let c_ni: Vec<String> = r.iter().filter(|n| !in_ct.contains(n)).cloned().collect();
        let referenced = schema.referenced_columns();
        let c_nn: Vec<String> = data
            .column_names()
            .into_iter()
            .filter(|n| !referenced.contains(*n))
            .map(|n| n.to_string())
            .collect();
        let roles = RoleAssignment {
            c_ti,
            c_tn,
            c_ni,
            c_nn,
            confounders: c_t.clone(),
            rule_inputs: r.clone(),
            c_t_eval: schema.names_influencing_treatment_eval.clone(),
        };
        roles.validate_against(data)?;
        Ok(roles)
    }

    pub fn from_parts(
        confounders: Vec<String>,
        rule_inputs: Vec<String>,
        c_t_eval: Option<Vec<String>>,
    ) -> Result<Self> {
        if rule_inputs.is_empty() {
            return Err(Error::Schema("rule inputs must not be empty".into()));
        }
        let in_r: BTreeSet<&String> = rule_inputs.iter().collect();
        let in_ct: BTreeSet<&String> = confounders.iter().collect();
        if in_r.len() != rule_inputs.len() {
            return Err(Error::Schema("duplicate rule input".into()));
        }
        if in_ct.len() != confounders.len() {
            return Err(Error::Schema("duplicate confounder".into()));
        }
        Ok(RoleAssignment {
            c_ti: confounders
                .iter()
                .filter(|n| in_r.contains(n))
                .cloned()
                .collect(),
            c_tn: confounders
                .iter()
                .filter(|n| !in_r.contains(n))
                .cloned()
                .collect(),
            c_ni: rule_inputs
                .iter()
                .filter(|n| !in_ct.contains(n))
                .cloned()
                .collect(),
            c_nn: Vec::new(),
            confounders,
            rule_inputs,
            c_t_eval,
        })
    }

    /// The development-data confounders (the declared order is preserved).
    pub fn confounders(&self) -> &[String] {
        &self.confounders
    }

    pub fn rule_inputs(&self) -> &[String] {
        &self.rule_inputs
    }

    /// Evaluation-data confounders; falls back to the development list.
    pub fn eval_confounders(&self) -> &[String] {
        self.c_t_eval.as_deref().unwrap_or(&self.confounders)
    }

    /// Denominator covariates: rule inputs followed by any confounders not
    /// already present.
    pub fn denominator_columns(&self) -> Vec<String> {
        let mut out = self.rule_inputs.clone();
        for c in &self.confounders {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    pub fn validate_against(&self, data: &Dataset) -> Result<()> {
        let reserved = [data.meta().outcome.clone(), data.meta().treatment.clone()];
        let weight = data.meta().missingness_weight_column.clone();
        let mut missing_cols = Vec::new();
        for name in self
            .confounders
            .iter()
            .chain(&self.rule_inputs)
            .chain(self.c_t_eval.iter().flatten())
        {
            if data.column(name).is_none() {
                missing_cols.push(name.clone());
                continue;
            }
            if reserved.contains(name) || Some(name) == weight.as_ref() {
                return Err(Error::Schema(format!(
                    "column '{name}' is the outcome, treatment, or weight column and cannot be a covariate"
                )));
            }
        }
        if !missing_cols.is_empty() {
            return Err(Error::Schema(format!(
                "columns named in roles are absent from the data: {}",
                missing_cols.join(", ")
            )));
        }
        Ok(())
    }
}

// ================================================================== encoding

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ColumnEncoding {
    Numeric,
    Categorical { levels: Vec<String> },
}

/// Recorded encoding so new data can be laid out exactly like the data a
/// model was fitted on. The first level of each categorical column is the
/// reference cell and gets no indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    pub columns: Vec<(String, ColumnEncoding)>,
}

impl EncodingMap {
    pub fn design_column_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        for (name, enc) in &self.columns {
            match enc {
                ColumnEncoding::Numeric => names.push(name.clone()),
                ColumnEncoding::Categorical { levels } => {
                    for l in &levels[1..] {
                        names.push(format!("{name}={l}"));
                    }
                }
            }
        }
        names
    }
}

/// Encode the named columns into a design matrix: intercept first, numeric
/// columns as-is, categorical columns as reference-cell indicators in
/// first-observed level order. Returns the matrix and the reusable map.
pub fn encode(data: &Dataset, columns: &[String]) -> Result<(DesignMatrix, EncodingMap)> {
    let mut mapped = Vec::with_capacity(columns.len());
    for name in columns {
        match data.column(name) {
            None => {
                return Err(Error::Schema(format!(
                    "cannot encode unknown column '{name}'"
                )))
            }
            Some(Column::Numeric(_)) => mapped.push((name.clone(), ColumnEncoding::Numeric)),
            Some(Column::Categorical { levels, .. }) => mapped.push((
                name.clone(),
                ColumnEncoding::Categorical {
                    levels: levels.clone(),
                },
            )),
        }
    }
    let map = EncodingMap { columns: mapped };
    let x = encode_with(data, &map)?;
    Ok((x, map))
}

/// Encode through an existing map; unknown columns or unseen categorical
/// levels are errors, and every absent column is named at once.
pub fn encode_with(data: &Dataset, map: &EncodingMap) -> Result<DesignMatrix> {
    let absent: Vec<&str> = map
        .columns
        .iter()
        .filter(|(name, _)| data.column(name).is_none())
        .map(|(name, _)| name.as_str())
        .collect();
    if !absent.is_empty() {
        return Err(Error::Schema(format!(
            "the data is missing columns required by the encoding: {}",
            absent.join(", ")
        )));
    }
    let names = map.design_column_names();
    let n_rows = data.n_rows();
    let n_cols = names.len();
    let mut out = vec![0.0; n_rows * n_cols];
    for i in 0..n_rows {
        out[i * n_cols] = 1.0;
    }
    let mut j = 1usize;
    for (name, enc) in &map.columns {
        let col = data
            .column(name)
            .ok_or_else(|| Error::Schema(format!("cannot encode unknown column '{name}'")))?;
        match (enc, col) {
            (ColumnEncoding::Numeric, Column::Numeric(values)) => {
                for i in 0..n_rows {
                    out[i * n_cols + j] = values[i];
                }
                j += 1;
            }
            (
                ColumnEncoding::Categorical { levels },
                Column::Categorical {
                    levels: have,
                    codes,
                },
            ) => {
                // Map this dataset's codes onto the recorded level order.
                let mut translate = Vec::with_capacity(have.len());
                for l in have {
                    match levels.iter().position(|x| x == l) {
                        Some(pos) => translate.push(pos),
                        None => {
                            // Tolerated only if the level is never used.
                            translate.push(usize::MAX);
                        }
                    }
                }
                let width = levels.len() - 1;
                for i in 0..n_rows {
                    let pos = translate[codes[i] as usize];
                    if pos == usize::MAX {
                        return Err(Error::Validation(format!(
                            "column '{name}' has level '{}' unseen at encoding time",
                            have[codes[i] as usize]
                        )));
                    }
                    if pos > 0 {
                        out[i * n_cols + j + pos - 1] = 1.0;
                    }
                }
                j += width;
            }
            (ColumnEncoding::Numeric, _) => {
                return Err(Error::Schema(format!(
                    "column '{name}' was numeric at encoding time but is categorical here"
                )))
            }
            (ColumnEncoding::Categorical { .. }, _) => {
                return Err(Error::Schema(format!(
                    "column '{name}' was categorical at encoding time but is numeric here"
                )))
            }
        }
    }
    DesignMatrix::from_row_major(names, out, n_rows)
}

// ================================================================== csv

/// Load a CSV file (RFC 4180, header row required) under a schema.
pub fn load_csv(path: &Path, schema: &DataSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut seen = BTreeSet::new();
    for h in &headers {
        if !seen.insert(h.clone()) {
            return Err(Error::Schema(format!("duplicate header '{h}'")));
        }
    }

    let referenced = schema.referenced_columns();
    for name in &referenced {
        if !headers.contains(name) {
            return Err(Error::Schema(format!(
                "column '{name}' required by the schema is absent from {}",
                path.display()
            )));
        }
    }
    let categorical: BTreeSet<&String> = schema.categorical_columns.iter().collect();

    let mut raw: Vec<Vec<String>> = headers.iter().map(|_| Vec::new()).collect();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(format!("row {}: {e}", row_idx + 1)))?;
        for (c, field) in record.iter().enumerate() {
            raw[c].push(field.to_string());
        }
    }

    let n_rows = raw.first().map(|c| c.len()).unwrap_or(0);
    let mut columns = Vec::with_capacity(headers.len());
    let mut missing: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (c, name) in headers.iter().enumerate() {
        let cells = &raw[c];
        let col = if !referenced.contains(name) {
            // Unreferenced: carried verbatim, never parsed.
            Column::from_labels(cells)
        } else if categorical.contains(name) {
            let mut holes = BTreeSet::new();
            for (i, cell) in cells.iter().enumerate() {
                if cell.is_empty() {
                    if schema.missingness_weight_column.is_none() {
                        return Err(Error::MissingData {
                            row: i,
                            column: name.clone(),
                        });
                    }
                    holes.insert(i);
                }
            }
            if holes.len() == n_rows {
                return Err(Error::Validation(format!(
                    "column '{name}' is entirely missing"
                )));
            }
            if holes.is_empty() {
                Column::from_labels(cells)
            } else {
                // Placeholder: reuse the first observed level; the rows carry
                // weight zero so the value never matters.
                let filler = cells.iter().find(|s| !s.is_empty()).unwrap().clone();
                let patched: Vec<String> = cells
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        if holes.contains(&i) {
                            filler.clone()
                        } else {
                            s.clone()
                        }
                    })
                    .collect();
                missing.insert(name.clone(), holes);
                Column::from_labels(&patched)
            }
        } else {
            let mut values = Vec::with_capacity(n_rows);
            let mut holes = BTreeSet::new();
            for (i, cell) in cells.iter().enumerate() {
                if cell.is_empty() {
                    if schema.missingness_weight_column.is_none() {
                        return Err(Error::MissingData {
                            row: i,
                            column: name.clone(),
                        });
                    }
                    holes.insert(i);
                    values.push(0.0);
                    continue;
                }
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::Validation(format!(
                        "cell '{cell}' at row {i} of column '{name}' is not numeric; declare the column in categorical_columns if it holds labels"
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value at row {i} of column '{name}'"
                    )));
                }
                values.push(v);
            }
            if !holes.is_empty() {
                missing.insert(name.clone(), holes);
            }
            Column::Numeric(values)
        };
        columns.push((name.clone(), col));
    }

    Dataset::with_missing(columns, schema.meta(), missing)
}

/// Write a dataset back to CSV. Numeric cells use the shortest
/// exactly-round-tripping decimal form; placeholder cells are written empty.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let names: Vec<&str> = data.column_names();
    writer
        .write_record(&names)
        .map_err(|e| Error::Csv(e.to_string()))?;
    for i in 0..data.n_rows() {
        let mut record = Vec::with_capacity(names.len());
        for name in &names {
            let hole = data
                .missing_cells()
                .get(*name)
                .map(|rows| rows.contains(&i))
                .unwrap_or(false);
            if hole {
                record.push(String::new());
                continue;
            }
            match data.column(name).unwrap() {
                Column::Numeric(v) => record.push(format!("{}", v[i])),
                Column::Categorical { levels, codes } => {
                    record.push(levels[codes[i] as usize].clone())
                }
            }
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
