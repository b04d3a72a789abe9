use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::panel::{PanelDataset, YearMonth};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

struct Row {
    date: YearMonth,
    ticker: String,
    ret: Option<f64>,
    chars: Vec<Option<f64>>,
}

fn parse_cell(field: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            line,
            message: format!("bad value `{field}` in column `{column}`"),
        }),
    }
}

fn char_column(k: usize) -> String {
    format!("c{:02}", k + 1)
}

/// Reads the long format `date,ticker,ret,c01..cNN`.
///
/// The characteristics on a row are observed at the end of that row's
/// month, so they land in the slot of the following month. When rows of the
/// last month carry characteristics, the panel gains one further month with
/// no returns, which is the month those characteristics forecast.
pub fn read_csv<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.len() < 3 || names[..3] != ["date", "ticker", "ret"] {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `date,ticker,ret`".into(),
        });
    }
    let n_chars = names.len() - 3;
    for (k, name) in names[3..].iter().enumerate() {
        if *name != char_column(k) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column `{}`, found `{name}`", char_column(k)),
            });
        }
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != names.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        let date: YearMonth = record[0].parse().map_err(|e: Error| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let ticker = record[1].trim().to_string();
        if ticker.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty ticker".into(),
            });
        }
        if !seen.insert((date, ticker.clone())) {
            return Err(Error::Integrity(format!("duplicate row for {date} {ticker} at line {line}")));
        }
        let ret = parse_cell(&record[2], line, "ret")?;
        let chars = (0..n_chars)
            .map(|k| parse_cell(&record[3 + k], line, names[3 + k]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row { date, ticker, ret, chars });
    }

    let mut dates: Vec<YearMonth> = rows.iter().map(|r| r.date).collect::<BTreeSet<_>>().into_iter().collect();
    if let Some(&last) = dates.last() {
        if rows.iter().any(|r| r.date == last && r.chars.iter().any(Option::is_some)) {
            dates.push(last.next());
        }
    }
    let tickers: Vec<String> = rows
        .iter()
        .map(|r| r.ticker.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let date_idx: BTreeMap<YearMonth, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let ticker_idx: BTreeMap<&str, usize> = tickers.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut panel = PanelDataset::new(dates, tickers.clone(), n_chars)?;
    for row in &rows {
        let i = ticker_idx[row.ticker.as_str()];
        panel.set_return(date_idx[&row.date], i, row.ret)?;
        if let Some(&t) = date_idx.get(&row.date.next()) {
            for (k, v) in row.chars.iter().enumerate() {
                panel.set_characteristic(t, i, k, *v)?;
            }
        }
    }
    Ok(panel)
}

pub fn load_csv(path: &Path) -> Result<PanelDataset> {
    read_csv(File::open(path)?)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Writes the long format read by [`read_csv`]. A row is emitted for every
/// stock-month with an observed return or with characteristics for the
/// following month.
pub fn write_csv_to<W: Write>(panel: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "ticker".into(), "ret".into()];
    header.extend((0..panel.n_chars()).map(char_column));
    w.write_record(&header)?;
    for t in 0..panel.n_dates() {
        let date = panel.dates()[t];
        let next = (t + 1 < panel.n_dates() && panel.dates()[t + 1] == date.next()).then_some(t + 1);
        for (i, ticker) in panel.tickers().iter().enumerate() {
            let ret = panel.ret(t, i);
            let has_chars = next.is_some_and(|n| panel.has_any_characteristic(n, i));
            if ret.is_none() && !has_chars {
                continue;
            }
            let mut rec = vec![date.to_string(), ticker.clone(), fmt(ret)];
            rec.extend((0..panel.n_chars()).map(|k| fmt(next.and_then(|n| panel.characteristic(n, i, k)))));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(panel: &PanelDataset, path: &Path) -> Result<()> {
    write_csv_to(panel, File::create(path)?)
}

/// `date,f1..fK`, one row per date.
pub fn write_factors_csv(path: &Path, dates: &[YearMonth], factors: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = factors.first().map_or(0, Vec::len);
    let mut header = vec!["date".to_string()];
    header.extend((1..=k).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for (d, f) in dates.iter().zip(factors) {
        let mut rec = vec![d.to_string()];
        rec.extend(f.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `date,ticker,b1..bK`, one row per stock-month; `betas[t]` is `N × K`.
pub fn write_betas_csv(path: &Path, dates: &[YearMonth], tickers: &[String], betas: &[Tensor]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = betas.first().map_or(0, Tensor::cols);
    let mut header = vec!["date".to_string(), "ticker".into()];
    header.extend((1..=k).map(|j| format!("b{j}")));
    w.write_record(&header)?;
    for (d, b) in dates.iter().zip(betas) {
        for (i, ticker) in tickers.iter().enumerate() {
            let mut rec = vec![d.to_string(), ticker.clone()];
            rec.extend(b.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
