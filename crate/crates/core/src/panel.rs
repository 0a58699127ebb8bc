//! Observed panels, transform codes, outlier adjustment and group metadata.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{median, quantile_sorted};

/// A p-dimensional series observed over n time points. Rows are time points in
/// increasing order; columns are series.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: DMatrix<f64>,
    series_ids: Vec<String>,
}

impl TimeSeriesPanel {
    pub fn new(values: DMatrix<f64>, series_ids: Vec<String>) -> Result<Self> {
        let (n, p) = values.shape();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "panel needs at least 2 time points, got {n}"
            )));
        }
        if p < 1 {
            return Err(Error::InvalidArgument(
                "panel needs at least one series".into(),
            ));
        }
        if series_ids.len() != p {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {p} series",
                series_ids.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                idx % n + 1,
                idx / n + 1
            )));
        }
        Ok(Self { values, series_ids })
    }

    /// Panel with generated labels `V1..Vp`.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let ids = default_labels(values.ncols());
        Self::new(values, ids)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    /// The first `len` time points.
    pub fn head(&self, len: usize) -> Result<Self> {
        if len > self.n() {
            return Err(Error::InvalidArgument(format!(
                "head of {len} rows from a panel of {}",
                self.n()
            )));
        }
        Self::new(
            self.values.rows(0, len).into_owned(),
            self.series_ids.clone(),
        )
    }

    /// Multiplies every value by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.values * c, self.series_ids.clone())
    }
}

fn default_labels(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("V{j}")).collect()
}

/// Reads a CSV panel. With `has_header` the first row supplies the series
/// labels; otherwise labels are `V1..Vp`.
pub fn load_panel(path: impl AsRef<Path>, has_header: bool) -> Result<TimeSeriesPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut labels: Option<Vec<String>> = None;
    let mut width: Option<usize> = None;
    let mut data: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if has_header && line == 0 {
            width = Some(record.len());
            labels = Some(record.iter().map(str::to_owned).collect());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Format(format!(
                "{}: data row {} has {} fields, expected {expected}",
                path.display(),
                rows + 1,
                record.len()
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row: rows + 1,
                col: col + 1,
                msg: format!("`{cell}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: rows + 1,
                    col: col + 1,
                    msg: format!("`{cell}` is not finite"),
                });
            }
            data.push(value);
        }
        rows += 1;
    }
    let p = width.unwrap_or(0);
    if rows == 0 || p == 0 {
        return Err(Error::Format(format!("{}: no data rows", path.display())));
    }
    let values = DMatrix::from_row_slice(rows, p, &data);
    let labels = labels.unwrap_or_else(|| default_labels(p));
    TimeSeriesPanel::new(values, labels)
}

/// Writes a panel as CSV with a header row. Numbers use the shortest decimal
/// form that reads back to the same `f64`.
pub fn save_panel(panel: &TimeSeriesPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{}", panel.series_ids.join(","))?;
        for t in 0..panel.n() {
            let row: Vec<String> = panel.values.row(t).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Stationarity transform applied to one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformCode {
    None,
    Log,
    Diff,
    LogDiff,
    SecondDiff,
    LogSecondDiff,
}

impl TransformCode {
    pub fn takes_log(self) -> bool {
        matches!(self, Self::Log | Self::LogDiff | Self::LogSecondDiff)
    }

    pub fn diff_order(self) -> usize {
        match self {
            Self::None | Self::Log => 0,
            Self::Diff | Self::LogDiff => 1,
            Self::SecondDiff | Self::LogSecondDiff => 2,
        }
    }
}

/// Reads a JSON array of transform codes, one per column.
pub fn load_transform_codes(path: impl AsRef<Path>) -> Result<Vec<TransformCode>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Applies per-series transforms. All series are truncated at the head by the
/// largest differencing order so they share a time index.
pub fn apply_transforms(
    panel: &TimeSeriesPanel,
    codes: &[TransformCode],
) -> Result<TimeSeriesPanel> {
    let (n, p) = panel.values.shape();
    if codes.len() != p {
        return Err(Error::InvalidArgument(format!(
            "{} transform codes for {p} series",
            codes.len()
        )));
    }
    let max_order = codes.iter().map(|c| c.diff_order()).max().unwrap_or(0);
    if n < max_order + 2 {
        return Err(Error::InvalidArgument(format!(
            "{n} time points leave fewer than 2 after differencing of order {max_order}"
        )));
    }
    let keep = n - max_order;
    let mut out = DMatrix::zeros(keep, p);
    for (j, code) in codes.iter().enumerate() {
        let mut series: Vec<f64> = panel.values.column(j).iter().copied().collect();
        if code.takes_log() {
            if let Some(t) = series.iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain {
                    series: panel.series_ids[j].clone(),
                    msg: format!("log of non-positive value {} at row {}", series[t], t + 1),
                });
            }
            series.iter_mut().for_each(|v| *v = v.ln());
        }
        for _ in 0..code.diff_order() {
            series = series.windows(2).map(|w| w[1] - w[0]).collect();
        }
        let offset = series.len() - keep;
        for t in 0..keep {
            out[(t, j)] = series[offset + t];
        }
    }
    TimeSeriesPanel::new(out, panel.series_ids.clone())
}

/// Multiple of the interquartile range beyond which an observation counts as
/// an outlier.
pub const OUTLIER_IQR_MULTIPLE: f64 = 6.0;
/// Number of preceding observations whose median replaces an outlier.
pub const OUTLIER_LOOKBACK: usize = 5;

/// Replaces observations whose absolute deviation from the series median
/// exceeds six interquartile ranges by the median of the five preceding
/// (already adjusted) observations.
///
/// Median and quartiles are full-sample, type-7. The first five observations
/// have no five predecessors and are never replaced.
pub fn adjust_outliers(panel: &TimeSeriesPanel) -> TimeSeriesPanel {
    let mut out = panel.values.clone();
    for j in 0..panel.p() {
        let series: Vec<f64> = panel.values.column(j).iter().copied().collect();
        let mut sorted = series.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let center = quantile_sorted(&sorted, 0.5);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let mut adjusted = series;
        for t in OUTLIER_LOOKBACK..adjusted.len() {
            if (adjusted[t] - center).abs() > OUTLIER_IQR_MULTIPLE * iqr {
                adjusted[t] = median(&adjusted[t - OUTLIER_LOOKBACK..t]);
            }
        }
        for (t, v) in adjusted.into_iter().enumerate() {
            out[(t, j)] = v;
        }
    }
    TimeSeriesPanel {
        values: out,
        series_ids: panel.series_ids.clone(),
    }
}

/// A contiguous block of series indices, 0-based and half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Per-factor partition of the series into ordered contiguous groups.
///
/// Construction does not check the partition; use [`validate_groups`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    per_factor: Vec<Vec<Block>>,
}

impl GroupStructure {
    pub fn new(per_factor: Vec<Vec<Block>>) -> Self {
        Self { per_factor }
    }

    /// The same blocks for each of `r` factors.
    pub fn shared(blocks: Vec<Block>, r: usize) -> Self {
        Self::new(vec![blocks; r])
    }

    /// Consecutive blocks with the given sizes, shared by `r` factors.
    pub fn from_sizes(sizes: &[usize], r: usize) -> Self {
        Self::shared(blocks_from_sizes(sizes), r)
    }

    /// One group holding every series, for each of `r` factors.
    pub fn whole(p: usize, r: usize) -> Self {
        Self::shared(vec![Block::new(0, p)], r)
    }

    pub fn r(&self) -> usize {
        self.per_factor.len()
    }

    pub fn factor(&self, i: usize) -> &[Block] {
        &self.per_factor[i]
    }

    pub fn per_factor(&self) -> &[Vec<Block>] {
        &self.per_factor
    }

    /// Group sizes `d_ij` for factor `i`.
    pub fn sizes(&self, i: usize) -> Vec<usize> {
        self.per_factor[i].iter().map(Block::len).collect()
    }

    /// Number of groups `J_i` for factor `i`.
    pub fn count(&self, i: usize) -> usize {
        self.per_factor[i].len()
    }
}

pub fn blocks_from_sizes(sizes: &[usize]) -> Vec<Block> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&d| {
            let b = Block::new(start, start + d);
            start += d;
            b
        })
        .collect()
}

/// A broken partition invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupViolation {
    FactorCount {
        expected: usize,
        found: usize,
    },
    NoBlocks {
        factor: usize,
    },
    EmptyBlock {
        factor: usize,
        block: usize,
    },
    OutOfRange {
        factor: usize,
        block: usize,
        end: usize,
        p: usize,
    },
    Overlap {
        factor: usize,
        block: usize,
    },
    Gap {
        factor: usize,
        block: usize,
    },
    Coverage {
        factor: usize,
        covered: usize,
        p: usize,
    },
}

impl std::fmt::Display for GroupViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::FactorCount { expected, found } => {
                write!(f, "expected groups for {expected} factors, found {found}")
            }
            Self::NoBlocks { factor } => write!(f, "factor {} has no groups", factor + 1),
            Self::EmptyBlock { factor, block } => {
                write!(f, "factor {} group {} is empty", factor + 1, block + 1)
            }
            Self::OutOfRange {
                factor,
                block,
                end,
                p,
            } => write!(
                f,
                "factor {} group {} ends at {end} beyond p={p}",
                factor + 1,
                block + 1
            ),
            Self::Overlap { factor, block } => write!(
                f,
                "factor {} group {} overlaps the previous group",
                factor + 1,
                block + 1
            ),
            Self::Gap { factor, block } => write!(
                f,
                "factor {} group {} leaves a gap after the previous group",
                factor + 1,
                block + 1
            ),
            Self::Coverage { factor, covered, p } => write!(
                f,
                "factor {} groups cover {covered} of {p} series",
                factor + 1
            ),
        }
    }
}

/// Checks that every factor's blocks are non-empty, ordered, disjoint,
/// contiguous and cover `0..p`. An empty list means the structure is valid.
pub fn validate_groups(groups: &GroupStructure, p: usize, r: usize) -> Vec<GroupViolation> {
    let mut violations = Vec::new();
    if groups.r() != r {
        violations.push(GroupViolation::FactorCount {
            expected: r,
            found: groups.r(),
        });
    }
    for (factor, blocks) in groups.per_factor.iter().enumerate() {
        if blocks.is_empty() {
            violations.push(GroupViolation::NoBlocks { factor });
            continue;
        }
        let mut cursor = 0usize;
        for (block, b) in blocks.iter().enumerate() {
            if b.is_empty() {
                violations.push(GroupViolation::EmptyBlock { factor, block });
            }
            if b.end > p {
                violations.push(GroupViolation::OutOfRange {
                    factor,
                    block,
                    end: b.end,
                    p,
                });
            }
            if b.start < cursor {
                violations.push(GroupViolation::Overlap { factor, block });
            } else if b.start > cursor {
                violations.push(GroupViolation::Gap { factor, block });
            }
            cursor = cursor.max(b.end);
        }
        if cursor != p {
            violations.push(GroupViolation::Coverage {
                factor,
                covered: cursor.min(p),
                p,
            });
        }
    }
    violations
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupFile {
    factors: Vec<GroupFileFactor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupFileFactor {
    blocks: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    shared: bool,
}

/// Parses group JSON: `{"factors":[{"blocks":[[1,10],[11,20]]}, ...]}` with
/// 1-based inclusive ranges. A single entry flagged `"shared": true` applies
/// to all `r` factors.
pub fn parse_groups(text: &str, r: usize) -> Result<GroupStructure> {
    let file: GroupFile = serde_json::from_str(text)?;
    let convert = |f: &GroupFileFactor| -> Result<Vec<Block>> {
        f.blocks
            .iter()
            .map(|&[lo, hi]| {
                if lo == 0 || hi < lo {
                    Err(Error::InvalidArgument(format!(
                        "group range [{lo}, {hi}] is not a 1-based inclusive range"
                    )))
                } else {
                    Ok(Block::new(lo - 1, hi))
                }
            })
            .collect()
    };
    if file.factors.len() == 1 && file.factors[0].shared {
        return Ok(GroupStructure::shared(convert(&file.factors[0])?, r));
    }
    if file.factors.iter().any(|f| f.shared) {
        return Err(Error::InvalidArgument(
            "`shared` is only allowed on a single factor entry".into(),
        ));
    }
    Ok(GroupStructure::new(
        file.factors.iter().map(convert).collect::<Result<_>>()?,
    ))
}

pub fn load_groups(path: impl AsRef<Path>, r: usize) -> Result<GroupStructure> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_groups(&text, r)
}

/// Serializes groups in the JSON layout read by [`parse_groups`].
pub fn groups_to_json(groups: &GroupStructure) -> Result<String> {
    let file = GroupFile {
        factors: groups
            .per_factor
            .iter()
            .map(|blocks| GroupFileFactor {
                blocks: blocks.iter().map(|b| [b.start + 1, b.end]).collect(),
                shared: false,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel(cols: &[&[f64]]) -> TimeSeriesPanel {
        let n = cols[0].len();
        let data: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
        TimeSeriesPanel::from_matrix(DMatrix::from_column_slice(n, cols.len(), &data)).unwrap()
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn zero_csv_loads() {
        let f = write_tmp("0,0\n0,0\n0,0\n");
        let p = load_panel(f.path(), false).unwrap();
        assert_eq!((p.n(), p.p()), (3, 2));
        assert!(p.values().iter().all(|&v| v == 0.0));
        assert_eq!(p.series_ids(), &["V1", "V2"]);
    }

    #[test]
    fn header_supplies_labels() {
        let f = write_tmp("gdp,cpi\n1,2\n3,4\n");
        let p = load_panel(f.path(), true).unwrap();
        assert_eq!(p.series_ids(), &["gdp", "cpi"]);
        assert_eq!(p.values()[(1, 0)], 3.0);
    }

    #[test]
    fn ragged_rows_are_a_format_error() {
        let f = write_tmp("1,2,3\n4,5\n");
        assert!(matches!(load_panel(f.path(), false), Err(Error::Format(_))));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let f = write_tmp("1,2\n3,abc\n");
        match load_panel(f.path(), false) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_panel("/nonexistent/panel.csv", false),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn save_then_load_is_bitwise(values in prop::collection::vec(-1e6f64..1e6, 12)) {
            let p = TimeSeriesPanel::from_matrix(DMatrix::from_vec(4, 3, values)).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            save_panel(&p, f.path()).unwrap();
            let back = load_panel(f.path(), true).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn outlier_adjustment_is_idempotent(
            base in prop::collection::vec(-1.0f64..1.0, 30),
            spikes in prop::collection::vec((0usize..30, 50.0f64..100.0), 0..4),
        ) {
            let mut series = base;
            for (t, v) in spikes {
                series[t] = v;
            }
            let p = panel(&[&series]);
            let once = adjust_outliers(&p);
            let twice = adjust_outliers(&once);
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn diff_of_constant_series_is_zero() {
        let p = panel(&[&[5.0, 5.0, 5.0]]);
        let t = apply_transforms(&p, &[TransformCode::Diff]).unwrap();
        assert_eq!(t.values().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn log_diff_of_powers_of_e() {
        let e = std::f64::consts::E;
        let p = panel(&[&[1.0, e, e * e]]);
        let t = apply_transforms(&p, &[TransformCode::LogDiff]).unwrap();
        for v in t.values().iter() {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn none_codes_only_truncate() {
        let p = panel(&[&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]]);
        let same = apply_transforms(&p, &[TransformCode::None, TransformCode::None]).unwrap();
        assert_eq!(same, p);
        let mixed =
            apply_transforms(&p, &[TransformCode::None, TransformCode::SecondDiff]).unwrap();
        assert_eq!(mixed.n(), 2);
        assert_eq!(mixed.values().column(0).as_slice(), &[3.0, 4.0]);
        assert_eq!(mixed.values().column(1).as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn log_of_non_positive_names_series() {
        let p = TimeSeriesPanel::new(
            DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 2.0]),
            vec!["rate".into()],
        )
        .unwrap();
        match apply_transforms(&p, &[TransformCode::Log]) {
            Err(Error::Domain { series, .. }) => assert_eq!(series, "rate"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transform_codes_parse_from_json() {
        let codes: Vec<TransformCode> = serde_json::from_str(
            r#"["none","log","diff","log-diff","second-diff","log-second-diff"]"#,
        )
        .unwrap();
        assert_eq!(codes[3], TransformCode::LogDiff);
        assert_eq!(codes[5].diff_order(), 2);
    }

    #[test]
    fn spike_after_flat_run_is_replaced() {
        let mut s = vec![0.0; 10];
        s[5] = 100.0;
        let out = adjust_outliers(&panel(&[&s]));
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clean_and_constant_series_unchanged() {
        let clean: Vec<f64> = (0..20).map(|t| (t as f64 * 0.7).sin()).collect();
        let p = panel(&[&clean, &[3.0; 20]]);
        assert_eq!(adjust_outliers(&p), p);
    }

    #[test]
    fn head_outliers_are_kept() {
        let mut s = vec![0.0; 10];
        s[2] = 100.0;
        let out = adjust_outliers(&panel(&[&s]));
        assert_eq!(out.values()[(2, 0)], 100.0);
    }

    #[test]
    fn group_validation() {
        assert!(validate_groups(&GroupStructure::whole(7, 2), 7, 2).is_empty());
        let overlap = GroupStructure::shared(vec![Block::new(0, 3), Block::new(2, 5)], 1);
        let v = validate_groups(&overlap, 5, 1);
        assert!(v
            .iter()
            .any(|x| matches!(x, GroupViolation::Overlap { .. })));
        let gap = GroupStructure::shared(vec![Block::new(0, 2), Block::new(3, 5)], 1);
        assert!(validate_groups(&gap, 5, 1)
            .iter()
            .any(|x| matches!(x, GroupViolation::Gap { .. })));
        let short = GroupStructure::shared(vec![Block::new(0, 2)], 1);
        assert!(validate_groups(&short, 5, 1)
            .iter()
            .any(|x| matches!(x, GroupViolation::Coverage { .. })));
        assert!(validate_groups(&GroupStructure::whole(5, 2), 5, 3)
            .iter()
            .any(|x| matches!(x, GroupViolation::FactorCount { .. })));
    }

    #[test]
    fn group_json_shared_and_explicit() {
        let shared =
            parse_groups(r#"{"factors":[{"blocks":[[1,3],[4,5]],"shared":true}]}"#, 3).unwrap();
        assert_eq!(shared.r(), 3);
        assert_eq!(shared.factor(2), &[Block::new(0, 3), Block::new(3, 5)]);
        let explicit = parse_groups(
            r#"{"factors":[{"blocks":[[1,5]]},{"blocks":[[1,2],[3,5]]}]}"#,
            2,
        )
        .unwrap();
        assert_eq!(explicit.sizes(1), vec![2, 3]);
        let back = parse_groups(&groups_to_json(&explicit).unwrap(), 2).unwrap();
        assert_eq!(back, explicit);
        assert!(parse_groups(r#"{"factors":[{"blocks":[[0,3]]}]}"#, 1).is_err());
    }
}
