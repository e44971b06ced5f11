//! Inter-rater agreement: ICC(3,1) and Krippendorff's alpha.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Items (rows) by raters (columns); `None` marks a missing rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    rows: Vec<Vec<Option<f64>>>,
    raters: usize,
}

impl RatingMatrix {
    /// Arbitrary finite ratings.
    pub fn numeric(rows: Vec<Vec<Option<f64>>>) -> Result<Self, MetricError> {
        let raters = rows.first().map(Vec::len).unwrap_or(0);
        if raters < 2 {
            return Err(MetricError::TooFewRaters(raters));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != raters {
                return Err(MetricError::InvalidRating(format!(
                    "item {i} has {} ratings, expected {raters}",
                    r.len()
                )));
            }
            if let Some(v) = r.iter().flatten().find(|v| !v.is_finite()) {
                return Err(MetricError::InvalidRating(format!("item {i}: non-finite value {v}")));
            }
        }
        Ok(RatingMatrix { rows, raters })
    }

    /// Five-point Likert ratings (1 to 5).
    pub fn likert5(rows: Vec<Vec<Option<u8>>>) -> Result<Self, MetricError> {
        for (i, r) in rows.iter().enumerate() {
            if let Some(v) = r.iter().flatten().find(|v| !(1..=5).contains(*v)) {
                return Err(MetricError::InvalidRating(format!("item {i}: {v} is not on the 1-5 scale")));
            }
        }
        Self::numeric(
            rows.into_iter()
                .map(|r| r.into_iter().map(|v| v.map(f64::from)).collect())
                .collect(),
        )
    }

    /// Reads an items-by-raters CSV. A header row and a leading item-id
    /// column are detected and skipped; empty cells, `NA` and `.` are
    /// missing. With `likert` set, values must be integers 1 to 5.
    pub fn from_csv<R: Read>(reader: R, likert: bool) -> Result<Self, MetricError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| MetricError::InvalidRating(e.to_string()))?;
            if rec.iter().all(str::is_empty) {
                continue;
            }
            records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
        }
        let cell = |s: &str| -> Option<Option<f64>> {
            if s.is_empty() || s.eq_ignore_ascii_case("na") || s == "." {
                Some(None)
            } else {
                s.parse::<f64>().ok().map(Some)
            }
        };
        let numeric_row = |r: &[String]| r.iter().all(|c| cell(c).is_some());
        let header = records.first().is_some_and(|r| !numeric_row(r)) && records.len() > 1;
        let header_names_ids = header
            && records[0].first().is_some_and(|c| {
                let c = c.to_ascii_lowercase();
                c.is_empty() || ["item", "items", "id", "item_id", "unit", "character", "character_ref"].contains(&c.as_str())
            });
        let data = usize::from(header);
        let id_col = header_names_ids
            || records[data..].iter().any(|r| r.first().is_some_and(|c| cell(c).is_none()));
        let skip = usize::from(id_col);
        if header {
            records.remove(0);
        }
        let mut rows = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let mut row = Vec::new();
            for c in r.iter().skip(skip) {
                let v = cell(c).ok_or_else(|| MetricError::InvalidRating(format!("row {i}: `{c}` is not a number")))?;
                if let (true, Some(x)) = (likert, v) {
                    if x.fract() != 0.0 || !(1.0..=5.0).contains(&x) {
                        return Err(MetricError::InvalidRating(format!("row {i}: {x} is not on the 1-5 scale")));
                    }
                }
                row.push(v);
            }
            rows.push(row);
        }
        Self::numeric(rows)
    }

    pub fn items(&self) -> usize {
        self.rows.len()
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(Option::is_some))
    }

    /// Same ratings with `c` added to every present value.
    pub fn shifted(&self, c: f64) -> Self {
        RatingMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(|v| v.map(|x| x + c)).collect())
                .collect(),
            raters: self.raters,
        }
    }

    /// Columns reordered so that new column `j` is old column `order[j]`.
    pub fn permute_raters(&self, order: &[usize]) -> Self {
        RatingMatrix {
            rows: self
                .rows
                .iter()
                .map(|r| order.iter().map(|&j| r[j]).collect())
                .collect(),
            raters: self.raters,
        }
    }
}

/// ICC(3,1) with its ANOVA components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icc3 {
    pub value: f64,
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_error: f64,
    /// No variance at all; `value` is set to 0 by convention.
    pub degenerate: bool,
}

/// Two-way mixed, consistency, single-measure intraclass correlation.
pub fn icc3(ratings: &RatingMatrix) -> Result<Icc3, MetricError> {
    let n = ratings.items();
    let k = ratings.raters();
    if n < 2 {
        return Err(MetricError::TooFewItems(n));
    }
    if !ratings.is_complete() {
        return Err(MetricError::IncompleteMatrix);
    }
    let x: Vec<Vec<f64>> = ratings
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| v.unwrap_or_default()).collect())
        .collect();
    let nf = n as f64;
    let kf = k as f64;
    let grand = x.iter().flatten().sum::<f64>() / (nf * kf);
    let ss_total: f64 = x.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_rows: f64 = x
        .iter()
        .map(|r| (r.iter().sum::<f64>() / kf - grand).powi(2))
        .sum::<f64>()
        * kf;
    let ss_cols: f64 = (0..k)
        .map(|j| (x.iter().map(|r| r[j]).sum::<f64>() / nf - grand).powi(2))
        .sum::<f64>()
        * nf;
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (kf - 1.0);
    let ms_error = ss_error / ((nf - 1.0) * (kf - 1.0));
    let denom = ms_rows + (kf - 1.0) * ms_error;
    if denom <= f64::EPSILON * (1.0 + grand.abs()) {
        return Ok(Icc3 {
            value: 0.0,
            ms_rows,
            ms_cols,
            ms_error,
            degenerate: true,
        });
    }
    Ok(Icc3 {
        value: (ms_rows - ms_error) / denom,
        ms_rows,
        ms_cols,
        ms_error,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaLevel {
    Ordinal,
    Interval,
}

impl std::str::FromStr for AlphaLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ordinal" => Ok(AlphaLevel::Ordinal),
            "interval" => Ok(AlphaLevel::Interval),
            other => Err(format!("unknown alpha level `{other}` (expected ordinal or interval)")),
        }
    }
}

/// Coincidence matrix over the distinct observed values (ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct Coincidences {
    pub values: Vec<f64>,
    pub o: Vec<Vec<f64>>,
}

impl Coincidences {
    pub fn marginals(&self) -> Vec<f64> {
        self.o.iter().map(|r| r.iter().sum()).collect()
    }
}

pub fn coincidences(ratings: &RatingMatrix) -> Result<Coincidences, MetricError> {
    let mut index: BTreeMap<u64, f64> = BTreeMap::new();
    let key = |v: f64| (v + 0.0).to_bits();
    for v in ratings.rows().iter().flatten().flatten() {
        index.insert(key(*v), *v);
    }
    let mut values: Vec<f64> = index.into_values().collect();
    values.sort_by(f64::total_cmp);
    let pos = |v: f64| values.binary_search_by(|x| x.total_cmp(&v)).expect("value indexed");
    let q = values.len();
    let mut o = vec![vec![0.0; q]; q];
    let mut pairable = false;
    for row in ratings.rows() {
        let present: Vec<usize> = row.iter().flatten().map(|&v| pos(v + 0.0)).collect();
        let m = present.len();
        if m < 2 {
            continue;
        }
        pairable = true;
        let w = 1.0 / (m as f64 - 1.0);
        for (a, &c) in present.iter().enumerate() {
            for (b, &k) in present.iter().enumerate() {
                if a != b {
                    o[c][k] += w;
                }
            }
        }
    }
    if !pairable {
        return Err(MetricError::NoPairableValues);
    }
    Ok(Coincidences { values, o })
}

fn delta2(level: AlphaLevel, values: &[f64], n: &[f64], c: usize, k: usize) -> f64 {
    match level {
        AlphaLevel::Interval => (values[c] - values[k]).powi(2),
        AlphaLevel::Ordinal => {
            let (lo, hi) = if c <= k { (c, k) } else { (k, c) };
            let s: f64 = n[lo..=hi].iter().sum();
            (s - (n[c] + n[k]) / 2.0).powi(2)
        }
    }
}

/// `1 - D_o / D_e` from the coincidence matrix. Items with fewer than two
/// ratings are dropped.
pub fn krippendorff_alpha(ratings: &RatingMatrix, level: AlphaLevel) -> Result<f64, MetricError> {
    let co = coincidences(ratings)?;
    let nc = co.marginals();
    let n: f64 = nc.iter().sum();
    let q = co.values.len();
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..q {
        for k in 0..q {
            let d = delta2(level, &co.values, &nc, c, k);
            d_o += co.o[c][k] * d;
            d_e += nc[c] * nc[k] * d;
        }
    }
    d_o /= n;
    d_e /= n * (n - 1.0);
    if d_e <= 0.0 {
        return Err(MetricError::DegenerateVariance);
    }
    Ok(1.0 - d_o / d_e)
}
