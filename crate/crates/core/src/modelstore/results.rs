use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::engine::MetricEvent;

pub const RESULTS_HEADER: &str = "episode,total_reward,mean_loss,epsilon,steps,wall_clock_ms";

/// One parsed row of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub episode: u64,
    pub total_reward: f64,
    pub mean_loss: Option<f64>,
    pub epsilon: Option<f64>,
    pub steps: u64,
    pub wall_clock_ms: u64,
}

impl From<&MetricEvent> for ResultRow {
    fn from(m: &MetricEvent) -> Self {
        Self {
            episode: m.episode_index,
            total_reward: m.total_reward,
            mean_loss: m.mean_loss,
            epsilon: m.epsilon,
            steps: m.steps_in_episode,
            wall_clock_ms: m.wall_clock_ms,
        }
    }
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders metrics as CSV. Floats use the shortest representation that
/// parses back to the same value; absent values are empty cells.
pub fn results_csv(events: &[MetricEvent]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(RESULTS_HEADER.split(','))
        .expect("in-memory write");
    for m in events {
        w.write_record([
            m.episode_index.to_string(),
            m.total_reward.to_string(),
            optional(m.mean_loss),
            optional(m.epsilon),
            m.steps_in_episode.to_string(),
            m.wall_clock_ms.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of ASCII fields")
}

pub fn write_results(path: &Path, events: &[MetricEvent]) -> Result<(), ModelError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(results_csv(events).as_bytes())?;
    Ok(())
}

pub fn parse_results<R: Read>(reader: R) -> Result<Vec<ResultRow>, ModelError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| ModelError::Format(format!("results header: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != RESULTS_HEADER {
        return Err(ModelError::Format(format!(
            "unexpected results header `{header}`"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| ModelError::Format(format!("results row: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(i: u64, loss: Option<f64>, eps: Option<f64>) -> MetricEvent {
        MetricEvent {
            session_id: "s".into(),
            episode_index: i,
            total_reward: 0.1 * i as f64 - 1.0 / 3.0,
            mean_loss: loss,
            epsilon: eps,
            steps_in_episode: 10 + i,
            wall_clock_ms: 5 * i,
        }
    }

    #[test]
    fn header_and_row_count() {
        let events: Vec<_> = (0..3).map(|i| event(i, Some(0.5), None)).collect();
        let text = results_csv(&events);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines[1], "0,-0.3333333333333333,0.5,,10,0");
    }

    #[test]
    fn parse_back_matches_events() {
        let events = vec![
            event(0, None, Some(1.0)),
            event(1, Some(1e-300), Some(0.05)),
            event(2, Some(123456.789), None),
        ];
        let rows = parse_results(results_csv(&events).as_bytes()).unwrap();
        let expected: Vec<ResultRow> = events.iter().map(ResultRow::from).collect();
        assert_eq!(rows, expected);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(parse_results("a,b\n1,2\n".as_bytes()).is_err());
    }
}
