//! Right-censored observations and CSV ingestion.
//!
//! The CSV layout is a header `time,event,z1,...,zp` followed by one row per
//! subject. `event` accepts `1`/`0`/`true`/`false`. With no `z` columns the
//! dataset is in no-covariate mode (`p = 0`).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One subject: follow-up time `min(X, C)`, event indicator `X <= C`, and
/// time-invariant covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub follow_up_time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl Observation {
    pub fn new(follow_up_time: f64, event: bool, covariates: Vec<f64>) -> Self {
        Self {
            follow_up_time,
            event,
            covariates,
        }
    }
}

/// A validated sample. Row order is preserved; a stable time ordering is
/// cached at construction for the risk-set machinery.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    observations: Vec<Observation>,
    covariate_dim: usize,
    time_order: Vec<usize>,
}

impl SurvivalDataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let first = observations.first().ok_or(Error::Empty("dataset"))?;
        let covariate_dim = first.covariates.len();
        for (index, obs) in observations.iter().enumerate() {
            if !(obs.follow_up_time.is_finite() && obs.follow_up_time > 0.0) {
                return Err(Error::InvalidTime {
                    index,
                    time: obs.follow_up_time,
                });
            }
            if obs.covariates.len() != covariate_dim {
                return Err(Error::CovariateLength {
                    index,
                    expected: covariate_dim,
                    found: obs.covariates.len(),
                });
            }
            if let Some((coord, &value)) = obs
                .covariates
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite())
            {
                return Err(Error::InvalidCovariate {
                    index,
                    coord,
                    value,
                });
            }
        }
        if !observations.iter().any(|o| o.event) {
            return Err(Error::NoEvents);
        }
        let mut time_order: Vec<usize> = (0..observations.len()).collect();
        time_order.sort_by(|&a, &b| {
            observations[a]
                .follow_up_time
                .total_cmp(&observations[b].follow_up_time)
        });
        Ok(Self {
            observations,
            covariate_dim,
            time_order,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Indices of the observations sorted by follow-up time (ties keep row order).
    pub fn time_order(&self) -> &[usize] {
        &self.time_order
    }

    pub fn event_count(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }

    pub fn max_time(&self) -> f64 {
        self.observations[*self.time_order.last().unwrap()].follow_up_time
    }

    /// Copy of the dataset with every covariate vector shifted by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.covariate_dim {
            return Err(Error::Dimension {
                expected: self.covariate_dim,
                found: shift.len(),
            });
        }
        let observations = self
            .observations
            .iter()
            .map(|o| {
                let z = o.covariates.iter().zip(shift).map(|(a, b)| a + b).collect();
                Observation::new(o.follow_up_time, o.event, z)
            })
            .collect();
        Self::new(observations)
    }
}

/// Validates raw `(time, event, covariates)` triples into a dataset.
/// The covariate dimension is taken from the first row.
pub fn validate_dataset<I>(raw: I) -> Result<SurvivalDataset>
where
    I: IntoIterator<Item = (f64, bool, Vec<f64>)>,
{
    let observations = raw
        .into_iter()
        .map(|(t, e, z)| Observation::new(t, e, z))
        .collect();
    SurvivalDataset::new(observations)
}

pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<SurvivalDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file)
}

/// Parses the CSV layout from any reader. Row numbers in errors count data
/// rows from 1 (the header is row 0).
pub fn read_csv<R: Read>(reader: R) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Empty("csv file"));
    }
    if header.len() < 2 || &header[0] != "time" || &header[1] != "event" {
        return Err(Error::Header(format!(
            "expected `time,event,z1,...`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    for (j, name) in header.iter().enumerate().skip(2) {
        let expected = format!("z{}", j - 1);
        if name != expected {
            return Err(Error::Header(format!(
                "column {} should be `{expected}`, found `{name}`",
                j + 1
            )));
        }
    }
    let p = header.len() - 2;

    let mut observations = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != p + 2 {
            return Err(Error::Row {
                row,
                message: format!("expected {} fields, found {}", p + 2, record.len()),
            });
        }
        let time = parse_f64(&record[0], row, "time")?;
        let event = match &record[1] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(Error::Row {
                    row,
                    message: format!("event indicator must be 0/1/true/false, found `{other}`"),
                })
            }
        };
        let covariates = (0..p)
            .map(|j| parse_f64(&record[j + 2], row, "covariate"))
            .collect::<Result<Vec<_>>>()?;
        observations.push(Observation::new(time, event, covariates));
    }
    if observations.is_empty() {
        return Err(Error::Empty("csv file has no data rows"));
    }
    SurvivalDataset::new(observations).map_err(|e| match e {
        Error::InvalidTime { index, time } => Error::Row {
            row: index + 1,
            message: format!("follow-up time {time} must be positive and finite"),
        },
        Error::InvalidCovariate { index, coord, value } => Error::Row {
            row: index + 1,
            message: format!("covariate z{} is not finite ({value})", coord + 1),
        },
        other => other,
    })
}

fn parse_f64(field: &str, row: usize, what: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Row {
        row,
        message: format!("cannot parse {what} `{field}` as a number"),
    })
}

/// Writes the dataset in the ingestion layout with 17 significant digits, so
/// that reading the output back reproduces every value bit for bit.
pub fn write_csv<W: Write>(data: &SurvivalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string(), "event".to_string()];
    header.extend((1..=data.covariate_dim()).map(|j| format!("z{j}")));
    wtr.write_record(&header)?;
    for obs in data.observations() {
        let mut rec = vec![
            format!("{:.16e}", obs.follow_up_time),
            if obs.event { "1" } else { "0" }.to_string(),
        ];
        rec.extend(obs.covariates.iter().map(|z| format!("{z:.16e}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}
