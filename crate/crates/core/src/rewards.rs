//! Verifiable rewards: tag-format scoring, exact-match and SMAPE-based
//! correctness, and forecasting metrics.
//!
//! Everything here is pure text/number processing; grading never fails on
//! malformed completions, it scores them.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::codec::Tokenizer;
use crate::error::{CoreError, Result};
use crate::stream::TokenStream;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// One parsed piece of a completion, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    /// Text outside any complete block (may contain stray tag fragments).
    Text(String),
    Think(String),
    Answer(String),
}

/// A completion split into think/answer blocks and the text between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub raw: String,
    pub segments: Vec<Segment>,
}

impl Completion {
    pub fn thinks(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Think(t) => Some(t.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn answers(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Answer(t) => Some(t.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Tag text that survived outside complete blocks (unmatched tags).
    pub fn has_stray_tags(&self) -> bool {
        self.segments.iter().any(|s| match s {
            Segment::Text(t) => [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
                .iter()
                .any(|tag| t.contains(tag)),
            _ => false,
        })
    }

    /// Re-assembles the original text; parsing is lossless.
    pub fn reassemble(&self) -> String {
        let mut out = String::with_capacity(self.raw.len());
        for segment in &self.segments {
            match segment {
                Segment::Text(t) => out.push_str(t),
                Segment::Think(t) => {
                    out.push_str(THINK_OPEN);
                    out.push_str(t);
                    out.push_str(THINK_CLOSE);
                }
                Segment::Answer(t) => {
                    out.push_str(ANSWER_OPEN);
                    out.push_str(t);
                    out.push_str(ANSWER_CLOSE);
                }
            }
        }
        out
    }
}

/// Splits `text` into complete (non-nested) think/answer blocks. A block is
/// an opening tag with a matching closing tag; everything between them is
/// its verbatim content. Unmatched tags stay in the surrounding text.
pub fn parse_blocks(text: &str) -> Completion {
    let mut segments = Vec::new();
    let mut plain = String::new();
    let mut rest = text;
    loop {
        let think_at = rest.find(THINK_OPEN);
        let answer_at = rest.find(ANSWER_OPEN);
        let (at, open, close, is_think) = match (think_at, answer_at) {
            (Some(t), Some(a)) if t <= a => (t, THINK_OPEN, THINK_CLOSE, true),
            (Some(t), None) => (t, THINK_OPEN, THINK_CLOSE, true),
            (_, Some(a)) => (a, ANSWER_OPEN, ANSWER_CLOSE, false),
            (None, None) => break,
        };
        let after_open = &rest[at + open.len()..];
        match after_open.find(close) {
            Some(end) => {
                plain.push_str(&rest[..at]);
                if !plain.is_empty() {
                    segments.push(Segment::Text(core::mem::take(&mut plain)));
                }
                let content = after_open[..end].to_string();
                segments.push(if is_think {
                    Segment::Think(content)
                } else {
                    Segment::Answer(content)
                });
                rest = &after_open[end + close.len()..];
            }
            None => {
                // Unmatched opener: keep it as text and move past it.
                plain.push_str(&rest[..at + open.len()]);
                rest = after_open;
            }
        }
    }
    plain.push_str(rest);
    if !plain.is_empty() {
        segments.push(Segment::Text(plain));
    }
    Completion {
        raw: text.to_string(),
        segments,
    }
}

/// Partial-credit schedule over tag structure (content never matters):
///
/// - 1.0: exactly one think and one answer, think first, no stray tag text
/// - 0.5: exactly one answer and no think block
/// - 0.25: tag text present but neither condition above holds
/// - 0.0: no tag text at all
pub fn format_reward(completion: &Completion) -> f64 {
    let thinks = completion.thinks().len();
    let answers = completion.answers().len();
    let think_first = {
        let first_think = completion
            .segments
            .iter()
            .position(|s| matches!(s, Segment::Think(_)));
        let first_answer = completion
            .segments
            .iter()
            .position(|s| matches!(s, Segment::Answer(_)));
        matches!((first_think, first_answer), (Some(t), Some(a)) if t < a)
    };
    if thinks == 1 && answers == 1 && think_first && !completion.has_stray_tags() {
        return 1.0;
    }
    if answers == 1 && thinks == 0 {
        return 0.5;
    }
    let any_tag_text = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE]
        .iter()
        .any(|tag| completion.raw.contains(tag));
    if any_tag_text {
        0.25
    } else {
        0.0
    }
}

fn is_wrapping_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'' | '`' | '(' | ')' | '[' | ']' | '{' | '}'
            | '*'
    )
}

/// Normalization applied to both sides of an exact-match comparison: trim,
/// casefold, collapse internal whitespace, drop an option-number prefix like
/// `(36)`, and strip wrapping punctuation.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.trim().to_lowercase();
    let collapsed: Vec<&str> = lowered.split_whitespace().collect();
    let mut s = collapsed.join(" ");
    // Option prefix: "(36) rest" or "(a) rest" -> "rest".
    if let Some(body) = s.strip_prefix('(') {
        if let Some(close) = body.find(')') {
            let label = &body[..close];
            let rest = body[close + 1..].trim_start();
            if !label.is_empty()
                && label.len() <= 4
                && label.chars().all(|c| c.is_ascii_alphanumeric())
                && !rest.is_empty()
            {
                s = rest.to_string();
            }
        }
    }
    s.trim_matches(is_wrapping_punct).trim().to_string()
}

/// 1.0 when the normalized answer equals the normalized target, else 0.0.
pub fn exact_match_reward(answer_text: &str, target: &str) -> f64 {
    if normalize_answer(answer_text) == normalize_answer(target) {
        1.0
    } else {
        0.0
    }
}

/// Symmetric mean absolute percentage error:
/// `(1/n) * sum 2|y - yhat| / (|y| + |yhat|)`, in `[0, 2]`.
/// A term with `|y| + |yhat| = 0` contributes 0 (both zero is a perfect hit).
pub fn smape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    if y.len() != yhat.len() {
        return Err(CoreError::ShapeMismatch {
            context: "smape".into(),
            expected: format!("{} values", y.len()),
            got: format!("{} values", yhat.len()),
        });
    }
    let mut total = 0.0;
    for (&a, &b) in y.iter().zip(yhat.iter()) {
        let denom = a.abs() + b.abs();
        if denom > 0.0 {
            total += 2.0 * (a - b).abs() / denom;
        }
    }
    Ok(total / y.len() as f64)
}

/// Pulls a numeric sequence out of answer text: values separated by commas
/// and/or whitespace, optionally wrapped in brackets. Returns `None` when
/// any field fails to parse or no values are present.
pub fn parse_numeric_sequence(text: &str) -> Option<Vec<f64>> {
    let cleaned: String = text
        .chars()
        .map(|c| if matches!(c, ',' | '[' | ']' | '(' | ')') { ' ' } else { c })
        .collect();
    let mut out = Vec::new();
    for part in cleaned.split_whitespace() {
        out.push(part.parse::<f64>().ok().filter(|v| v.is_finite())?);
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

/// Forecast correctness `2 - SMAPE`, in `[0, 2]`. Unparseable answers and
/// horizon-length mismatches score 0 rather than erroring.
pub fn forecast_reward(answer_text: &str, target: &[f64]) -> f64 {
    forecast_reward_with(answer_text, target, None).0
}

/// As [`forecast_reward`], optionally decoding token-stream answers with a
/// trained tokenizer, and returning a diagnostic string.
pub fn forecast_reward_with(
    answer_text: &str,
    target: &[f64],
    model: Option<&Tokenizer>,
) -> (f64, String) {
    if target.is_empty() {
        return (0.0, "empty target".to_string());
    }
    let trimmed = answer_text.trim();
    let values = if trimmed.starts_with("<ts_stream_") {
        match model {
            Some(model) => match TokenStream::parse_text(trimmed)
                .and_then(|stream| model.decode(&stream))
            {
                Ok(v) => v,
                Err(e) => return (0.0, format!("token answer rejected: {e}")),
            },
            None => return (0.0, "token answer but no model provided".to_string()),
        }
    } else {
        match parse_numeric_sequence(trimmed) {
            Some(v) => v,
            None => return (0.0, "unparseable answer".to_string()),
        }
    };
    if values.len() != target.len() {
        return (
            0.0,
            format!("horizon mismatch: got {}, want {}", values.len(), target.len()),
        );
    }
    match smape(target, &values) {
        Ok(s) => (2.0 - s, format!("smape {s:.6}")),
        Err(e) => (0.0, format!("{e}")),
    }
}

/// Mean absolute scaled error with seasonal period `m`:
/// `mean|y - yhat| / mean_{t >= m} |insample[t] - insample[t-m]|`.
pub fn mase(y: &[f64], yhat: &[f64], insample: &[f64], m: usize) -> Result<f64> {
    if y.is_empty() || insample.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    if y.len() != yhat.len() {
        return Err(CoreError::ShapeMismatch {
            context: "mase".into(),
            expected: format!("{} values", y.len()),
            got: format!("{} values", yhat.len()),
        });
    }
    if m == 0 || insample.len() <= m {
        return Err(CoreError::invalid_config(
            "mase needs season m >= 1 and insample longer than m",
        ));
    }
    let denom: f64 = insample
        .windows(m + 1)
        .map(|w| (w[m] - w[0]).abs())
        .sum::<f64>()
        / (insample.len() - m) as f64;
    if denom == 0.0 {
        return Err(CoreError::FlatInsample);
    }
    let num: f64 = y
        .iter()
        .zip(yhat.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y.len() as f64;
    Ok(num / denom)
}

/// Which correctness function applies, and its target.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    /// Multiple-choice / classification: exact match against a label.
    Classification { target: String },
    /// Forecasting: `2 - SMAPE` against a numeric horizon.
    Forecasting { target: Vec<f64> },
}

/// Composite reward description: task plus component weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    pub task: Task,
    pub w_correct: f64,
    pub w_format: f64,
}

impl RewardSpec {
    pub fn classification(target: &str) -> Self {
        Self {
            task: Task::Classification {
                target: target.to_string(),
            },
            w_correct: 1.0,
            w_format: 1.0,
        }
    }

    pub fn forecasting(target: Vec<f64>) -> Self {
        Self {
            task: Task::Forecasting { target },
            w_correct: 1.0,
            w_format: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_correct >= 0.0 && self.w_format >= 0.0)
            || !self.w_correct.is_finite()
            || !self.w_format.is_finite()
        {
            return Err(CoreError::invalid_config("reward weights must be finite and >= 0"));
        }
        match &self.task {
            Task::Classification { target } if target.trim().is_empty() => {
                Err(CoreError::invalid_config("classification target is empty"))
            }
            Task::Forecasting { target } if target.is_empty() => {
                Err(CoreError::invalid_config("forecasting target is empty"))
            }
            _ => Ok(()),
        }
    }
}

/// A graded completion.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardResult {
    /// Tag-structure score in `[0, 1]`.
    pub format_score: f64,
    /// `{0, 1}` for classification, `[0, 2]` for forecasting.
    pub correctness: f64,
    /// `w_correct * correctness + w_format * format_score`.
    pub total: f64,
    pub diagnostics: String,
}

/// Grades one completion: format from tag structure, correctness from the
/// first answer block (no answer block scores 0).
pub fn score_completion(
    spec: &RewardSpec,
    text: &str,
    model: Option<&Tokenizer>,
) -> Result<RewardResult> {
    spec.validate()?;
    let completion = parse_blocks(text);
    let format_score = format_reward(&completion);
    let answers = completion.answers();
    let (correctness, diagnostics) = match answers.first() {
        None => (0.0, "no answer block".to_string()),
        Some(answer) => match &spec.task {
            Task::Classification { target } => {
                let r = exact_match_reward(answer, target);
                let d = if r == 1.0 {
                    "exact match".to_string()
                } else {
                    format!(
                        "mismatch: `{}` vs `{}`",
                        normalize_answer(answer),
                        normalize_answer(target)
                    )
                };
                (r, d)
            }
            Task::Forecasting { target } => forecast_reward_with(answer, target, model),
        },
    };
    Ok(RewardResult {
        format_score,
        correctness,
        total: spec.w_correct * correctness + spec.w_format * format_score,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const TOL: f64 = 1e-12;

    #[test]
    fn parses_single_think_answer() {
        let c = parse_blocks("<think>a</think><answer>b</answer>");
        assert_eq!(c.thinks(), vec!["a"]);
        assert_eq!(c.answers(), vec!["b"]);
        assert!(!c.has_stray_tags());
        assert_eq!(c.reassemble(), c.raw);
    }

    #[test]
    fn missing_close_leaves_tag_as_text() {
        let c = parse_blocks("<think>a<answer>b</answer>");
        assert_eq!(c.thinks().len(), 0);
        assert_eq!(c.answers(), vec!["b"]);
        assert!(c.has_stray_tags());
        assert_eq!(c.reassemble(), c.raw);
    }

    #[test]
    fn counts_duplicate_blocks() {
        let c = parse_blocks("<answer>x</answer> mid <answer>y</answer>");
        assert_eq!(c.answers(), vec!["x", "y"]);
        assert_eq!(c.reassemble(), c.raw);
    }

    #[test]
    fn block_content_is_verbatim_and_non_nested() {
        let c = parse_blocks("<think>outer <think>inner</think><answer>b</answer>");
        // First close tag ends the block; the inner opener is content.
        assert_eq!(c.thinks(), vec!["outer <think>inner"]);
        assert_eq!(c.answers(), vec!["b"]);
        assert_eq!(c.reassemble(), c.raw);
    }

    #[test]
    fn reassembly_is_lossless_on_garbage() {
        for raw in [
            "",
            "no tags at all",
            "</think> before <answer>",
            "<think></think><think></think>",
            "a <answer>b</answer> c <think>d</think> e",
            "<answer><think>x</think></answer>",
        ] {
            let c = parse_blocks(raw);
            assert_eq!(c.reassemble(), raw, "{raw:?}");
        }
    }

    #[test]
    fn format_schedule() {
        let perfect = "<think>reasoning</think><answer>42</answer>";
        assert!((format_reward(&parse_blocks(perfect)) - 1.0).abs() < TOL);
        let with_prose = "Sure. <think>r</think>\n<answer>42</answer>\n";
        assert!((format_reward(&parse_blocks(with_prose)) - 1.0).abs() < TOL);

        let answer_only = "<answer>42</answer>";
        assert!((format_reward(&parse_blocks(answer_only)) - 0.5).abs() < TOL);
        let broken_think = "<think>oops<answer>42</answer>";
        assert!((format_reward(&parse_blocks(broken_think)) - 0.5).abs() < TOL);

        let two_answers = "<answer>a</answer><answer>b</answer>";
        assert!((format_reward(&parse_blocks(two_answers)) - 0.25).abs() < TOL);
        let reversed = "<answer>a</answer><think>t</think>";
        assert!((format_reward(&parse_blocks(reversed)) - 0.25).abs() < TOL);
        let stray = "<think>a</think><answer>b</answer></think>";
        assert!((format_reward(&parse_blocks(stray)) - 0.25).abs() < TOL);
        let think_only = "<think>a</think>";
        assert!((format_reward(&parse_blocks(think_only)) - 0.25).abs() < TOL);

        assert!(format_reward(&parse_blocks("no tags")).abs() < TOL);
        assert!(format_reward(&parse_blocks("")).abs() < TOL);
    }

    #[test]
    fn format_ignores_content() {
        let a = format_reward(&parse_blocks("<think>x</think><answer>right</answer>"));
        let b = format_reward(&parse_blocks("<think>y</think><answer>wrong</answer>"));
        assert_eq!(a, b);
    }

    #[test]
    fn exact_match_normalization() {
        assert_eq!(exact_match_reward(" Long QT-interval ", "long qt-interval"), 1.0);
        assert_eq!(
            exact_match_reward(
                "(36) subendocardial injury in inferolateral leads",
                "subendocardial injury in inferolateral leads"
            ),
            1.0
        );
        assert_eq!(exact_match_reward("none", "long qt-interval"), 0.0);
        assert_eq!(exact_match_reward("sinus  rhythm.", "Sinus Rhythm"), 1.0);
        assert_eq!(exact_match_reward("\"atrial flutter\"", "atrial flutter"), 1.0);
        assert_eq!(exact_match_reward("(a) yes", "yes"), 1.0);
        // A parenthesized whole answer is wrapping punctuation, not an
        // option label, when nothing follows it.
        assert_eq!(exact_match_reward("(42)", "42"), 1.0);
        assert_eq!(exact_match_reward("answer b", "answer a"), 0.0);
    }

    #[test]
    fn smape_reference_values() {
        assert!(smape(&[5.0, -2.0], &[5.0, -2.0]).unwrap().abs() < TOL);
        assert!((smape(&[1.0], &[3.0]).unwrap() - 1.0).abs() < TOL);
        assert!((smape(&[1.0], &[-1.0]).unwrap() - 2.0).abs() < TOL);
        // Both-zero terms contribute nothing.
        assert!(smape(&[0.0, 1.0], &[0.0, 1.0]).unwrap().abs() < TOL);
        assert!((smape(&[0.0], &[1.0]).unwrap() - 2.0).abs() < TOL);
        assert!(smape(&[1.0], &[1.0, 2.0]).is_err());
        assert!(smape(&[], &[]).is_err());
    }

    #[test]
    fn smape_symmetry_and_scale_invariance() {
        let y = [1.5, -2.0, 0.0, 4.0];
        let z = [1.0, -2.5, 0.5, 3.0];
        let a = smape(&y, &z).unwrap();
        let b = smape(&z, &y).unwrap();
        assert!((a - b).abs() < TOL);
        assert!((0.0..=2.0).contains(&a));
        let scale = 37.5;
        let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let zs: Vec<f64> = z.iter().map(|v| v * scale).collect();
        assert!((smape(&ys, &zs).unwrap() - a).abs() < TOL);
    }

    #[test]
    fn forecast_reward_values() {
        assert!((forecast_reward("1.0, 2.0, 3.0", &[1.0, 2.0, 3.0]) - 2.0).abs() < TOL);
        assert!((forecast_reward("3", &[1.0]) - 1.0).abs() < TOL);
        assert_eq!(forecast_reward("", &[1.0]), 0.0);
        assert_eq!(forecast_reward("one two", &[1.0, 2.0]), 0.0);
        assert_eq!(forecast_reward("1, 2", &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(forecast_reward("nan", &[1.0]), 0.0);
        assert!((forecast_reward("[4.0 5.0]", &[4.0, 5.0]) - 2.0).abs() < TOL);
    }

    #[test]
    fn forecast_reward_is_two_minus_smape() {
        let target = [2.0, -1.0, 0.5];
        let answer = "1.0, -2.0, 0.75";
        let parsed = parse_numeric_sequence(answer).unwrap();
        let expect = 2.0 - smape(&target, &parsed).unwrap();
        assert!((forecast_reward(answer, &target) - expect).abs() < TOL);
    }

    #[test]
    fn numeric_sequence_parsing() {
        assert_eq!(parse_numeric_sequence("1, 2,3"), Some(vec![1.0, 2.0, 3.0]));
        assert_eq!(parse_numeric_sequence("[-1.5e2]"), Some(vec![-150.0]));
        assert_eq!(parse_numeric_sequence("x 1"), None);
        assert_eq!(parse_numeric_sequence("   "), None);
        assert_eq!(parse_numeric_sequence("inf"), None);
    }

    #[test]
    fn mase_values() {
        // Alternating in-sample with season 1: mean seasonal diff = 1.
        let insample = [0.0, 1.0, 0.0, 1.0, 0.0];
        let y = [1.0, 0.0, 1.0];
        let yhat = [0.0, 1.0, 0.0];
        assert!((mase(&y, &yhat, &insample, 1).unwrap() - 1.0).abs() < TOL);
        assert!(mase(&y, &y, &insample, 1).unwrap().abs() < TOL);
        assert!(matches!(
            mase(&y, &yhat, &[2.0, 2.0, 2.0], 1),
            Err(CoreError::FlatInsample)
        ));
        assert!(mase(&y, &yhat, &[1.0], 1).is_err());
        assert!(mase(&y, &[0.0], &insample, 1).is_err());
    }

    #[test]
    fn mase_naive_forecast_scores_one() {
        // Linear trend: in-sample one-step diffs are all 1, and the naive
        // forecast (previous value) is off by exactly 1 per step, so the
        // scaled error is exactly 1.
        let insample: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let y: Vec<f64> = (16..20).map(|i| i as f64).collect();
        let naive: Vec<f64> = y.iter().map(|v| v - 1.0).collect();
        assert!((mase(&y, &naive, &insample, 1).unwrap() - 1.0).abs() < TOL);
        // Exactly periodic history is flat under its own season.
        let periodic: Vec<f64> = (0..16).map(|i| [1.0, 3.0][i % 2]).collect();
        assert!(matches!(
            mase(&y, &naive, &periodic, 2),
            Err(CoreError::FlatInsample)
        ));
    }

    #[test]
    fn composite_scoring() {
        let spec = RewardSpec::classification("sinus rhythm");
        let good = score_completion(&spec, "<think>hmm</think><answer>Sinus Rhythm.</answer>", None)
            .unwrap();
        assert!((good.format_score - 1.0).abs() < TOL);
        assert!((good.correctness - 1.0).abs() < TOL);
        assert!((good.total - 2.0).abs() < TOL);

        let bad = score_completion(&spec, "<answer>asystole</answer>", None).unwrap();
        assert!((bad.format_score - 0.5).abs() < TOL);
        assert_eq!(bad.correctness, 0.0);
        assert!((bad.total - 0.5).abs() < TOL);

        let none = score_completion(&spec, "I refuse", None).unwrap();
        assert_eq!(none.total, 0.0);
        assert_eq!(none.diagnostics, "no answer block");

        let forecast = RewardSpec::forecasting(vec![1.0, 2.0]);
        let fr = score_completion(
            &forecast,
            "<think>t</think><answer>1.0 2.0</answer>",
            None,
        )
        .unwrap();
        assert!((fr.correctness - 2.0).abs() < TOL);
        assert!((fr.total - 3.0).abs() < TOL);
    }

    #[test]
    fn weighted_totals() {
        let mut spec = RewardSpec::classification("x");
        spec.w_correct = 2.0;
        spec.w_format = 0.5;
        let r = score_completion(&spec, "<think>a</think><answer>x</answer>", None).unwrap();
        assert!((r.total - (2.0 * 1.0 + 0.5 * 1.0)).abs() < TOL);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = RewardSpec::classification("x");
        spec.w_format = -1.0;
        assert!(score_completion(&spec, "t", None).is_err());
        let spec = RewardSpec::classification("  ");
        assert!(score_completion(&spec, "t", None).is_err());
        let spec = RewardSpec::forecasting(vec![]);
        assert!(score_completion(&spec, "t", None).is_err());
    }

    #[test]
    fn first_answer_block_is_graded() {
        let spec = RewardSpec::classification("alpha");
        let r = score_completion(
            &spec,
            "<answer>alpha</answer><answer>beta</answer>",
            None,
        )
        .unwrap();
        assert_eq!(r.correctness, 1.0);
        assert!((r.format_score - 0.25).abs() < TOL);
    }
}
