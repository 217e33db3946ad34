//! On-disk formats: JSON Lines for samples and trajectories, CSV for
//! plot-ready tables, JSON for the combination report.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::experiments::{SensitivityReport, SensitivityRow};
use crate::rollout::Trajectory;
use crate::sample::AnswerSample;
use crate::toy::TrainingRecord;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RecordError>;

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads `samples.jsonl`, validating every sample.
pub fn read_samples(reader: impl BufRead) -> Result<Vec<AnswerSample>> {
    let samples: Vec<AnswerSample> = read_jsonl(reader)?;
    for (i, s) in samples.iter().enumerate() {
        s.validate().map_err(|e| RecordError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(samples)
}

pub fn write_samples(writer: impl Write, samples: &[AnswerSample]) -> Result<()> {
    write_jsonl(writer, samples)
}

pub fn read_trajectories(reader: impl BufRead) -> Result<Vec<Trajectory>> {
    read_jsonl(reader)
}

pub fn write_trajectories(writer: impl Write, trajectories: &[Trajectory]) -> Result<()> {
    write_jsonl(writer, trajectories)
}

/// `training_log.csv`: step, em, ig, composite, entropy, episode_len,
/// p_informative.
pub fn write_training_log(writer: impl Write, records: &[TrainingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_log(reader: impl std::io::Read) -> Result<Vec<TrainingRecord>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Into::into)
}

/// `sensitivity.csv`: seed, m, mae, ci_low, ci_high, mae_vs_oracle.
pub fn write_sensitivity(writer: impl Write, reports: &[SensitivityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["seed", "m", "mae", "ci_low", "ci_high", "mae_vs_oracle"])?;
    for rep in reports {
        for r in &rep.rows {
            w.serialize((rep.seed, r.m, r.mae, r.ci_low, r.ci_high, r.mae_vs_oracle))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sensitivity rows grouped by seed, in file order.
pub fn read_sensitivity(reader: impl std::io::Read) -> Result<Vec<(u64, Vec<SensitivityRow>)>> {
    #[derive(serde::Deserialize)]
    struct Row {
        seed: u64,
        m: usize,
        mae: f64,
        ci_low: f64,
        ci_high: f64,
        mae_vs_oracle: f64,
    }
    let mut out: Vec<(u64, Vec<SensitivityRow>)> = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
        let r = row?;
        let entry = SensitivityRow {
            m: r.m,
            mae: r.mae,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            mae_vs_oracle: r.mae_vs_oracle,
        };
        match out.last_mut() {
            Some((seed, rows)) if *seed == r.seed => rows.push(entry),
            _ => out.push((r.seed, vec![entry])),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::ContextTag;

    #[test]
    fn samples_round_trip() {
        let samples = vec![
            AnswerSample::from_tokens(ContextTag::Posterior, "Paris", vec![-0.25, -0.5]),
            AnswerSample::without_likelihood(ContextTag::Prior, "Lyon"),
        ];
        let mut buf = Vec::new();
        write_samples(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_samples(buf.as_slice()).unwrap(), samples);
    }

    #[test]
    fn bad_line_is_reported() {
        let input = "{\"context\":\"B\",\"text\":\"a\"}\n\nnot json\n";
        match read_samples(input.as_bytes()) {
            Err(RecordError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let positive = "{\"context\":\"B\",\"text\":\"a\",\"logprob\":0.5}\n";
        assert!(read_samples(positive.as_bytes()).is_err());
    }

    #[test]
    fn training_log_round_trip() {
        let records = vec![TrainingRecord {
            step: 1,
            em: 0.5,
            ig: 0.25,
            composite: 0.65,
            entropy: 1.1,
            episode_len: 1.5,
            p_informative: 0.2,
        }];
        let mut buf = Vec::new();
        write_training_log(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,em,ig,composite,entropy,episode_len,p_informative\n"));
        assert_eq!(read_training_log(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn sensitivity_round_trip() {
        let row = |m| SensitivityRow {
            m,
            mae: 0.1,
            ci_low: 0.0,
            ci_high: 0.3,
            mae_vs_oracle: 0.05,
        };
        let rep = |seed| SensitivityReport {
            seed,
            oracle_n: 64,
            bootstrap_reps: 10,
            closed_form: 0.4,
            oracle_estimate: 0.41,
            rows: vec![row(4), row(8)],
        };
        let mut buf = Vec::new();
        write_sensitivity(&mut buf, &[rep(1), rep(2)]).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("seed,m,mae,ci_low,ci_high,mae_vs_oracle\n"));
        let back = read_sensitivity(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].1, vec![row(4), row(8)]);
    }
}
