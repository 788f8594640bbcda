use super::DataError;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLine {
    pub utt_id: String,
    pub score: f64,
}

/// `UTT SCORE` lines with six decimals.
pub fn write_scores(lines: &[ScoreLine]) -> String {
    lines.iter().map(|l| format!("{} {:.6}\n", l.utt_id, l.score)).collect()
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreLine>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| DataError::Line { line: i + 1, detail };
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [utt, score] = cols.as_slice() else {
            return Err(err(format!("expected 2 columns, found {}", cols.len())));
        };
        let score: f64 = score.parse().map_err(|e| err(format!("score {score:?}: {e}")))?;
        if !score.is_finite() {
            return Err(err(format!("non-finite score {score}")));
        }
        out.push(ScoreLine {
            utt_id: utt.to_string(),
            score,
        });
    }
    Ok(out)
}
