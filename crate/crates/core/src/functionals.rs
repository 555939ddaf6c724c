//! Windowed-minimum functional and calendar-year block maxima.
//!
//! `Y_j = min(X_j, ..., X_{j+k-1})` is large only when `k` consecutive days
//! are all large, so the yearly maximum of `Y` measures runs of `k`
//! consecutive extreme days.

use std::collections::{BTreeSet, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};

use crate::error::{Error, Result};
use crate::format::NumberFormat;
use crate::ingest::{Covariates, DailySeries};

/// Largest window length accepted by the pipeline.
pub const MAX_WINDOW: usize = 7;
/// Beyond this window length the fitted shape is known to become unreliable.
pub const STABLE_WINDOW: usize = 3;

pub const BLOCK_MAXIMA_HEADER: [&str; 8] = ["station_id", "year", "k", "block_max_mm", "soi", "log_cdist", "lat", "lon"];

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSeries {
    pub station_id: String,
    /// Anchor date of `values[0]` (same as the base series start).
    pub start: NaiveDate,
    pub k: usize,
    /// `values[j]` is the minimum of base days `j..j+k`, `None` when any of them is missing.
    pub values: Vec<Option<f64>>,
}

impl WindowedSeries {
    pub fn date(&self, index: usize) -> NaiveDate {
        self.start + Duration::days(index as i64)
    }

    pub fn defined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// True when no window fits inside a contiguous observed run.
    pub fn is_empty_output(&self) -> bool {
        self.defined_count() == 0
    }
}

/// Sliding minimum over `k`-day windows of `values`.
///
/// Output has `len - k + 1` entries (none when `len < k`); windows touching a
/// missing value are `None`.
pub fn sliding_min(values: &[Option<f64>], k: usize) -> Result<Vec<Option<f64>>> {
    if k < 1 {
        return Err(Error::Argument(format!("window length must be >= 1, got {k}")));
    }
    if values.len() < k {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(values.len() - k + 1);
    // indices of candidate minima, values increasing front to back
    let mut deque: VecDeque<usize> = VecDeque::with_capacity(k);
    let mut last_missing: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match v {
            None => {
                last_missing = Some(i);
                deque.clear();
            }
            Some(x) => {
                while let Some(&back) = deque.back() {
                    if values[back].expect("deque holds present values") >= *x {
                        deque.pop_back();
                    } else {
                        break;
                    }
                }
                deque.push_back(i);
            }
        }
        if i + 1 >= k {
            let first = i + 1 - k;
            while deque.front().is_some_and(|&f| f < first) {
                deque.pop_front();
            }
            let clean = last_missing.map_or(true, |m| m < first);
            out.push(if clean {
                deque.front().map(|&f| values[f].expect("present"))
            } else {
                None
            });
        }
    }
    Ok(out)
}

pub fn windowed_min(series: &DailySeries, k: usize) -> Result<WindowedSeries> {
    Ok(WindowedSeries {
        station_id: series.station_id().to_string(),
        start: series.start(),
        k,
        values: sliding_min(series.values(), k)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearlyMaxima {
    pub station_id: String,
    pub k: usize,
    /// `(year, maximum)` in increasing year order.
    pub maxima: Vec<(i32, f64)>,
    /// Admissible years that had no defined window.
    pub skipped: Vec<i32>,
}

/// Maximum of the windowed series over each admissible calendar year.
///
/// A window belongs to the year of its first day, so windows starting in late
/// December count toward that year.
pub fn block_maxima(windowed: &WindowedSeries, admissible_years: &BTreeSet<i32>) -> YearlyMaxima {
    let mut best: std::collections::BTreeMap<i32, f64> = std::collections::BTreeMap::new();
    for (j, v) in windowed.values.iter().enumerate() {
        let Some(y) = v else { continue };
        let year = windowed.date(j).year();
        if !admissible_years.contains(&year) {
            continue;
        }
        best.entry(year).and_modify(|b| *b = b.max(*y)).or_insert(*y);
    }
    let skipped = admissible_years.iter().filter(|y| !best.contains_key(y)).copied().collect();
    YearlyMaxima {
        station_id: windowed.station_id.clone(),
        k: windowed.k,
        maxima: best.into_iter().collect(),
        skipped,
    }
}

/// Block maxima over consecutive fixed-length blocks of `values`.
///
/// Used for synthetic series without calendar dates. A trailing partial
/// block is dropped, as is any block without a defined value.
pub fn fixed_block_maxima(values: &[Option<f64>], block_len: usize) -> Vec<f64> {
    values
        .chunks_exact(block_len.max(1))
        .filter_map(|block| block.iter().flatten().copied().reduce(f64::max))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMaximaRow {
    pub station_id: String,
    pub year: i32,
    pub k: usize,
    pub block_max: f64,
    pub covariates: Covariates,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockMaximaTable {
    pub rows: Vec<BlockMaximaRow>,
}

impl BlockMaximaTable {
    pub fn new(rows: Vec<BlockMaximaRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.block_max).collect()
    }

    /// Rows for one window length.
    pub fn for_k(&self, k: usize) -> BlockMaximaTable {
        Self::new(self.rows.iter().filter(|r| r.k == k).cloned().collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W, fmt: NumberFormat) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(BLOCK_MAXIMA_HEADER)?;
        for r in &self.rows {
            let c = &r.covariates;
            w.write_record([
                r.station_id.clone(),
                r.year.to_string(),
                r.k.to_string(),
                fmt.fmt(r.block_max),
                fmt.fmt(c.soi),
                fmt.fmt(c.log_cdist),
                fmt.fmt(c.lat),
                fmt.fmt(c.lon),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<block maxima csv>", e))?;
        Ok(())
    }

    /// Reads the block-maxima CSV; empty covariate fields become NaN and are
    /// rejected later only if the fitted model uses that regressor.
    pub fn read_csv<R: Read>(reader: R, label: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().ne(BLOCK_MAXIMA_HEADER.iter().copied()) {
            return Err(Error::parse(label, 1, format!("expected header {}", BLOCK_MAXIMA_HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 2;
            let record = record?;
            let field = |idx: usize| record.get(idx).unwrap_or("");
            let number = |idx: usize| -> Result<f64> {
                match field(idx) {
                    "" => Ok(f64::NAN),
                    s => s
                        .parse()
                        .map_err(|_| Error::parse(label, row, format!("malformed {} {s:?}", BLOCK_MAXIMA_HEADER[idx]))),
                }
            };
            let year = field(1)
                .parse()
                .map_err(|_| Error::parse(label, row, format!("malformed year {:?}", field(1))))?;
            let k = field(2)
                .parse()
                .map_err(|_| Error::parse(label, row, format!("malformed k {:?}", field(2))))?;
            let block_max = number(3)?;
            if !block_max.is_finite() {
                return Err(Error::parse(label, row, "missing block maximum"));
            }
            rows.push(BlockMaximaRow {
                station_id: field(0).to_string(),
                year,
                k,
                block_max,
                covariates: Covariates {
                    soi: number(4)?,
                    log_cdist: number(5)?,
                    lat: number(6)?,
                    lon: number(7)?,
                },
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(values: &[Option<f64>], k: usize) -> Vec<Option<f64>> {
        if values.len() < k {
            return vec![];
        }
        (0..=values.len() - k)
            .map(|j| {
                let w = &values[j..j + k];
                if w.iter().any(|v| v.is_none()) {
                    None
                } else {
                    Some(w.iter().map(|v| v.unwrap()).fold(f64::INFINITY, f64::min))
                }
            })
            .collect()
    }

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().copied().map(Some).collect()
    }

    fn day(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn small_examples() {
        let x = some(&[3.0, 1.0, 4.0, 1.0, 5.0]);
        assert_eq!(sliding_min(&x, 2).unwrap(), some(&[1.0, 1.0, 1.0, 1.0]));
        assert_eq!(sliding_min(&x, 3).unwrap(), some(&[1.0, 1.0, 1.0]));
        assert_eq!(sliding_min(&x, 1).unwrap(), x);
        assert_eq!(sliding_min(&x, 3).unwrap(), brute_force(&x, 3));
    }

    #[test]
    fn zero_window_is_an_argument_error() {
        assert!(matches!(sliding_min(&some(&[1.0]), 0), Err(Error::Argument(_))));
    }

    #[test]
    fn window_longer_than_every_run_gives_no_values() {
        let x = vec![Some(1.0), Some(2.0), None, Some(3.0), Some(4.0)];
        let s = DailySeries::new("S", day(2000, 1, 1), x).unwrap();
        let w = windowed_min(&s, 3).unwrap();
        assert_eq!(w.values.len(), 3);
        assert!(w.is_empty_output());
    }

    #[test]
    fn missing_day_drops_covering_windows() {
        let x = vec![Some(5.0), Some(6.0), None, Some(7.0), Some(8.0), Some(9.0)];
        assert_eq!(sliding_min(&x, 2).unwrap(), vec![Some(5.0), None, None, Some(7.0), Some(8.0)]);
    }

    #[test]
    fn permutation_changes_output() {
        let x = some(&[9.0, 8.0, 1.0, 1.0, 7.0, 9.0]);
        let mut sorted = x.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_ne!(sliding_min(&x, 2).unwrap(), sliding_min(&sorted, 2).unwrap());
    }

    fn windowed(start: NaiveDate, values: Vec<Option<f64>>) -> WindowedSeries {
        WindowedSeries {
            station_id: "S".into(),
            start,
            k: 1,
            values,
        }
    }

    #[test]
    fn block_maxima_examples() {
        let years: BTreeSet<i32> = [2000, 2001].into_iter().collect();
        let w = windowed(day(2000, 12, 30), some(&[5.0, 7.0, 2.0]));
        let bm = block_maxima(&w, &years);
        assert_eq!(bm.maxima, vec![(2000, 7.0), (2001, 2.0)]);
        assert!(bm.skipped.is_empty());

        let w = windowed(day(2000, 3, 1), some(&[0.0, 12.4, 3.3]));
        assert_eq!(block_maxima(&w, &years).maxima, vec![(2000, 12.4)]);
        assert_eq!(block_maxima(&w, &years).skipped, vec![2001]);
    }

    #[test]
    fn windows_straddling_new_year_count_for_first_day() {
        let x = some(&[1.0, 20.0, 30.0, 2.0]); // Dec 30 .. Jan 2
        let s = DailySeries::new("S", day(2000, 12, 30), x).unwrap();
        let w = windowed_min(&s, 2).unwrap();
        let years: BTreeSet<i32> = [2000, 2001].into_iter().collect();
        // window Dec 31 - Jan 1 = min(20, 30) belongs to 2000
        assert_eq!(block_maxima(&w, &years).maxima, vec![(2000, 20.0), (2001, 2.0)]);
    }

    #[test]
    fn inadmissible_years_are_ignored() {
        let w = windowed(day(2000, 12, 31), some(&[5.0, 9.0]));
        let years: BTreeSet<i32> = [2000].into_iter().collect();
        assert_eq!(block_maxima(&w, &years).maxima, vec![(2000, 5.0)]);
    }

    #[test]
    fn fixed_blocks() {
        let x = vec![Some(1.0), Some(4.0), None, None, Some(2.0), Some(3.0), Some(9.0)];
        assert_eq!(fixed_block_maxima(&x, 2), vec![4.0, 3.0]);
    }

    #[test]
    fn csv_round_trip_and_missing_covariates() {
        let table = BlockMaximaTable::new(vec![BlockMaximaRow {
            station_id: "040913".into(),
            year: 1990,
            k: 2,
            block_max: 88.25,
            covariates: Covariates {
                soi: -3.5,
                log_cdist: 1.25,
                lat: -27.5,
                lon: 153.0,
            },
        }]);
        let mut buf = Vec::new();
        table.write_csv(&mut buf, NumberFormat::Shortest).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("station_id,year,k,block_max_mm,soi,log_cdist,lat,lon\n"));
        assert_eq!(BlockMaximaTable::read_csv(buf.as_slice(), Path::new("m")).unwrap(), table);

        let text = "station_id,year,k,block_max_mm,soi,log_cdist,lat,lon\nA,1990,1,10,,1,2,3\n";
        let t = BlockMaximaTable::read_csv(text.as_bytes(), Path::new("m")).unwrap();
        assert!(t.rows[0].covariates.soi.is_nan());
    }

    fn arb_values() -> impl Strategy<Value = Vec<Option<f64>>> {
        proptest::collection::vec(proptest::option::weighted(0.9, 0.0f64..100.0), 0..120)
    }

    proptest! {
        #[test]
        fn matches_brute_force(x in arb_values(), k in 1usize..8) {
            prop_assert_eq!(sliding_min(&x, k).unwrap(), brute_force(&x, k));
        }

        #[test]
        fn full_run_window_count(x in proptest::collection::vec(0.0f64..10.0, 1..100), k in 1usize..8) {
            let y = sliding_min(&some(&x), k).unwrap();
            let expected = if x.len() >= k { x.len() - k + 1 } else { 0 };
            prop_assert_eq!(y.len(), expected);
            prop_assert!(y.iter().all(|v| v.is_some()));
        }

        #[test]
        fn block_max_non_increasing_in_k(x in proptest::collection::vec(0.0f64..50.0, 400..800), k in 1usize..6) {
            let s = DailySeries::new("S", day(2001, 1, 1), some(&x)).unwrap();
            let years: BTreeSet<i32> = [2001, 2002, 2003].into_iter().collect();
            let lo = block_maxima(&windowed_min(&s, k + 1).unwrap(), &years);
            let hi = block_maxima(&windowed_min(&s, k).unwrap(), &years);
            let base = block_maxima(&windowed_min(&s, 1).unwrap(), &years);
            for (year, b) in &lo.maxima {
                let upper = hi.maxima.iter().find(|(y, _)| y == year).unwrap().1;
                let daily = base.maxima.iter().find(|(y, _)| y == year).unwrap().1;
                prop_assert!(*b <= upper);
                prop_assert!(*b <= daily);
            }
        }
    }
}
