//! File formats: generic LTRC CSV, the transformer lifetime CSV, step
//! function exports, simulation table configs and result tables.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::crtest::{Scaling, TestOptions};
use crate::error::{Error, Result};
use crate::estimators::LimitConvention;
use crate::sample::{validate_sample, LtrcSample, RawRecord};
use crate::sim::{Lifetime, TableRow, TableSpec};
use crate::step::StepFunction;

pub const LTRC_HEADER: [&str; 4] = ["L", "T", "delta", "cause"];
pub const TRANSFORMER_HEADER: [&str; 5] = ["serial", "year_installed", "year_exit", "nu", "k"];

/// Calendar year the transformer records start.
pub const RECORDING_START: i64 = 1980;
/// Calendar year the follow-up ends; units in service then are censored.
pub const FOLLOW_UP_END: i64 = 2008;

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, reason: err.to_string() }
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(csv_error)?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found.len() == 1 && found[0].is_empty() || found.is_empty() {
        return Err(Error::Parse { line: 1, reason: "input is empty".into() });
    }
    if found != expected {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected header `{}`, found `{}`", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input)
}

/// One row of the transformer lifetime table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerRecord {
    pub serial: u32,
    pub year_installed: i64,
    pub year_exit: i64,
    /// 1 when installed in or after 1980.
    pub nu: u8,
    /// 0 = in service at the end of follow-up, 1 or 2 = cause of failure.
    pub k: u8,
}

impl TransformerRecord {
    pub fn validate(&self, row: usize) -> Result<()> {
        let violation = |reason: String| Err(Error::InvariantViolation { row, reason });
        if self.year_exit < self.year_installed {
            return violation(format!("exit year {} precedes installation {}", self.year_exit, self.year_installed));
        }
        match self.nu {
            0 if self.year_installed >= RECORDING_START => {
                return violation(format!("nu = 0 but installed in {}", self.year_installed))
            }
            1 if self.year_installed < RECORDING_START => {
                return violation(format!("nu = 1 but installed in {}", self.year_installed))
            }
            0 | 1 => {}
            other => return violation(format!("nu = {other} is not 0 or 1")),
        }
        match self.k {
            0 if self.year_exit != FOLLOW_UP_END => violation(format!("censored unit exits in {}", self.year_exit)),
            0..=2 => Ok(()),
            other => violation(format!("k = {other} is not 0, 1 or 2")),
        }
    }

    /// Lifetime in years since installation, entry at the age reached in
    /// 1980 (0 for later installs), failure iff `k != 0`.
    pub fn to_raw(&self) -> RawRecord {
        let trunc = (RECORDING_START - self.year_installed).max(0);
        RawRecord {
            trunc_time: trunc as f64,
            obs_time: (self.year_exit - self.year_installed) as f64,
            event: self.k != 0,
            cause: (self.k != 0).then_some(self.k),
        }
    }
}

pub fn read_transformer_records<R: Read>(input: R) -> Result<Vec<TransformerRecord>> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &TRANSFORMER_HEADER)?;
    let mut records = Vec::new();
    for (row, result) in rdr.deserialize::<TransformerRecord>().enumerate() {
        let record = result.map_err(csv_error)?;
        record.validate(row)?;
        records.push(record);
    }
    Ok(records)
}

pub fn ingest_transformer<R: Read>(input: R) -> Result<LtrcSample> {
    let records = read_transformer_records(input)?;
    validate_sample(records.iter().map(TransformerRecord::to_raw))
}

#[derive(Debug, Deserialize)]
struct LtrcRow {
    #[serde(rename = "L")]
    trunc_time: f64,
    #[serde(rename = "T")]
    obs_time: f64,
    delta: u8,
    cause: Option<u8>,
}

/// Reads `L,T,delta,cause` rows; `cause` is blank for censored rows.
pub fn read_ltrc_csv<R: Read>(input: R) -> Result<LtrcSample> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &LTRC_HEADER)?;
    let mut rows = Vec::new();
    for result in rdr.deserialize::<LtrcRow>() {
        let row = result.map_err(csv_error)?;
        let event = match row.delta {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse { line: rows.len() + 2, reason: format!("delta = {other} is not 0 or 1") })
            }
        };
        rows.push(RawRecord { trunc_time: row.trunc_time, obs_time: row.obs_time, event, cause: row.cause });
    }
    validate_sample(rows)
}

pub fn write_ltrc_csv<W: Write>(sample: &LtrcSample, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(LTRC_HEADER).map_err(csv_error)?;
    for obs in sample.observations() {
        let cause = obs.cause.map(|c| c.label().to_string()).unwrap_or_default();
        wtr.write_record([
            obs.trunc_time.to_string(),
            obs.obs_time.to_string(),
            u8::from(obs.event).to_string(),
            cause,
        ])
        .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Ltrc,
    Transformer,
}

/// Reads either format, picked by the header line.
pub fn read_dataset(text: &str) -> Result<(LtrcSample, DatasetFormat)> {
    let first = text.lines().next().unwrap_or("").trim();
    if first.is_empty() {
        return Err(Error::Parse { line: 1, reason: "input is empty".into() });
    }
    let header: Vec<&str> = first.split(',').map(str::trim).collect();
    if header == TRANSFORMER_HEADER {
        Ok((ingest_transformer(text.as_bytes())?, DatasetFormat::Transformer))
    } else {
        Ok((read_ltrc_csv(text.as_bytes())?, DatasetFormat::Ltrc))
    }
}

/// `time,value` table; the first row carries the initial value at `-inf`.
pub fn write_step_function<W: Write>(f: &StepFunction, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["time", "value"]).map_err(csv_error)?;
    wtr.write_record(["-inf".to_string(), f.initial_value().to_string()]).map_err(csv_error)?;
    for (t, v) in f.points() {
        wtr.write_record([t.to_string(), v.to_string()]).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_step_function<R: Read>(input: R) -> Result<StepFunction> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &["time", "value"])?;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for result in rdr.deserialize::<(f64, f64)>() {
        rows.push(result.map_err(csv_error)?);
    }
    let Some(&(first_t, initial)) = rows.first() else {
        return Err(Error::Parse { line: 2, reason: "missing initial value row".into() });
    };
    if first_t != f64::NEG_INFINITY {
        return Err(Error::Parse { line: 2, reason: "first row must be at -inf".into() });
    }
    let (times, values) = rows[1..].iter().copied().unzip();
    Ok(StepFunction::new(times, values, initial))
}

pub fn write_table<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row).map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Scalar or list value in a simulation config.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimConfig {
    lifetime: String,
    shape: Option<f64>,
    a: OneOrMany<f64>,
    p1: OneOrMany<f64>,
    censor_frac: OneOrMany<f64>,
    trunc_frac: f64,
    n: OneOrMany<usize>,
    reps: usize,
    alpha: OneOrMany<f64>,
    seed: u64,
    scaling: Option<String>,
    limit_convention: Option<String>,
}

fn config_error(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig { field: field.into(), reason: reason.into() }
}

/// Parses a TOML simulation config. `a` and `p1` are paired element-wise
/// (a scalar `p1` pairs with every `a`); `n`, `censor_frac` and `alpha` may
/// be scalars or lists.
pub fn parse_sim_config(text: &str) -> Result<TableSpec> {
    let raw: RawSimConfig = toml::from_str(text).map_err(|e| {
        let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
        Error::InvalidConfig { field, reason: e.message().to_string() }
    })?;
    let lifetime = match raw.lifetime.as_str() {
        "exp" => {
            if raw.shape.is_some() {
                return Err(config_error("shape", "only meaningful for lifetime = \"weibull\""));
            }
            Lifetime::Exponential
        }
        "weibull" => Lifetime::Weibull {
            shape: raw.shape.ok_or_else(|| config_error("shape", "required for lifetime = \"weibull\""))?,
        },
        other => return Err(config_error("lifetime", format!("`{other}` is not exp or weibull"))),
    };
    let a = raw.a.into_vec();
    let p1 = raw.p1.into_vec();
    let params: Vec<(f64, f64)> = match p1.len() {
        1 => a.iter().map(|&a| (a, p1[0])).collect(),
        len if len == a.len() => a.into_iter().zip(p1).collect(),
        len => return Err(config_error("p1", format!("{len} values for {} values of a", a.len()))),
    };
    let scaling = match raw.scaling {
        None => Scaling::default(),
        Some(s) => s.parse::<Scaling>().map_err(|e| config_error("scaling", e))?,
    };
    let convention = match raw.limit_convention {
        None => LimitConvention::default(),
        Some(s) => s.parse::<LimitConvention>().map_err(|e| config_error("limit_convention", e))?,
    };
    let spec = TableSpec {
        lifetime,
        params,
        n: raw.n.into_vec(),
        censor_frac: raw.censor_frac.into_vec(),
        alpha: raw.alpha.into_vec(),
        trunc_frac: raw.trunc_frac,
        reps: raw.reps,
        seed: raw.seed,
        options: TestOptions { convention, scaling },
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::Cause;

    const TRANSFORMER: &str = include_str!("../data/transformer.csv");

    #[test]
    fn transformer_rows_map_as_documented() {
        let records = read_transformer_records(TRANSFORMER.as_bytes()).unwrap();
        assert_eq!(records.len(), 100);
        let r1 = records[0].to_raw();
        assert_eq!((r1.trunc_time, r1.obs_time, r1.event, r1.cause), (19.0, 35.0, true, Some(2)));
        let r11 = records[10].to_raw();
        assert_eq!((r11.trunc_time, r11.obs_time, r11.event, r11.cause), (17.0, 45.0, false, None));
        let r31 = records[30].to_raw();
        assert_eq!((r31.trunc_time, r31.obs_time, r31.event, r31.cause), (0.0, 21.0, false, None));
    }

    #[test]
    fn transformer_invariants() {
        let good = TransformerRecord { serial: 1, year_installed: 1961, year_exit: 1996, nu: 0, k: 2 };
        assert!(good.validate(0).is_ok());
        for bad in [
            TransformerRecord { nu: 1, ..good },
            TransformerRecord { year_exit: 1950, ..good },
            TransformerRecord { k: 0, ..good },
            TransformerRecord { k: 3, ..good },
            TransformerRecord { year_installed: 1985, year_exit: 1999, ..good },
        ] {
            assert!(matches!(bad.validate(4).unwrap_err(), Error::InvariantViolation { row: 4, .. }), "{bad:?}");
        }
    }

    #[test]
    fn transformer_truncation_contradiction() {
        // Installed 1961, failed 1975: observed before recording started.
        let text = "serial,year_installed,year_exit,nu,k\n1,1961,1975,0,1\n";
        assert!(matches!(ingest_transformer(text.as_bytes()).unwrap_err(), Error::InvariantViolation { .. }));
    }

    #[test]
    fn ltrc_csv_round_trip() {
        let sample = ingest_transformer(TRANSFORMER.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_ltrc_csv(&sample, &mut buf).unwrap();
        let back = read_ltrc_csv(buf.as_slice()).unwrap();
        assert_eq!(sample, back);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("L,T,delta,cause\n19,35,1,2\n"));
        assert!(text.contains("\n17,45,0,\n"));
    }

    #[test]
    fn dataset_detection_and_errors() {
        let (sample, format) = read_dataset(TRANSFORMER).unwrap();
        assert_eq!(format, DatasetFormat::Transformer);
        assert_eq!(sample.get(0).cause, Some(Cause::Two));
        let (ltrc, format) = read_dataset("L,T,delta,cause\n0,1.5,1,1\n0.5,2,0,\n").unwrap();
        assert_eq!(format, DatasetFormat::Ltrc);
        assert_eq!(ltrc.len(), 2);
        assert!(matches!(read_dataset("").unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(read_dataset("a,b\n1,2\n").unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(read_dataset("L,T,delta,cause\n0,abc,1,1\n").unwrap_err(), Error::Parse { line: 2, .. }));
        assert!(matches!(read_dataset("L,T,delta,cause\n0,1,2,\n").unwrap_err(), Error::Parse { .. }));
        assert!(matches!(read_dataset("L,T,delta,cause\n2,1,1,1\n").unwrap_err(), Error::InvariantViolation { .. }));
    }

    #[test]
    fn step_function_export() {
        let f = StepFunction::new(vec![2.0], vec![0.5], 1.0);
        let mut buf = Vec::new();
        write_step_function(&f, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "time,value\n-inf,1\n2,0.5\n");
        assert_eq!(read_step_function(buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn sim_config_parsing() {
        let spec = parse_sim_config(
            r#"
            lifetime = "exp"
            a = [1.0, 1.0]
            p1 = [0.45, 0.48]
            censor_frac = [0.2, 0.4]
            trunc_frac = 0.2
            n = [50, 75, 100, 150, 200]
            reps = 10
            alpha = [0.05, 0.01]
            seed = 7
            scaling = "theorem3"
            "#,
        )
        .unwrap();
        assert_eq!(spec.params, vec![(1.0, 0.45), (1.0, 0.48)]);
        assert_eq!(spec.scenarios().len(), 20);
        assert_eq!(spec.options.scaling, Scaling::Theorem3);

        let weibull = parse_sim_config(
            "lifetime = \"weibull\"\nshape = 2.0\na = 1.5\np1 = 0.3\ncensor_frac = 0.2\ntrunc_frac = 0.2\nn = 100\nreps = 1\nalpha = 0.05\nseed = 1\n",
        )
        .unwrap();
        assert_eq!(weibull.lifetime, Lifetime::Weibull { shape: 2.0 });
    }

    #[test]
    fn sim_config_errors_name_the_field() {
        let base = "lifetime = \"exp\"\na = 1.5\np1 = 0.3\ncensor_frac = 0.2\ntrunc_frac = 0.2\nn = 100\nreps = 1\nalpha = 0.05\nseed = 1\n";
        let field_of = |text: &str| match parse_sim_config(text).unwrap_err() {
            Error::InvalidConfig { field, .. } => field,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(field_of(&base.replace("a = 1.5", "a = 3.0")), "a");
        assert_eq!(field_of(&base.replace("n = 100", "n = 3")), "n");
        assert_eq!(field_of(&base.replace("\"exp\"", "\"gamma\"")), "lifetime");
        assert_eq!(field_of(&base.replace("\"exp\"", "\"weibull\"")), "shape");
        assert_eq!(field_of(&format!("{base}scaling = \"x\"\n")), "scaling");
        assert_eq!(field_of(&base.replace("seed = 1\n", "")), "seed");
        assert_eq!(field_of(&format!("{base}bogus = 1\n")), "bogus");
    }
}
