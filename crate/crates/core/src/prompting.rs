//! Zero-shot forecasting prompts.
//!
//! Every prompt starts from the same baseline sentence describing the
//! context window, optionally followed by a fixed reasoning suffix, and
//! always ends with the answer-only directive.

use std::fmt;
use std::str::FromStr;

use chrono::{Duration, Months, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalization::NormalizedSeries;
use crate::scalar::Scalar;

pub const COT_SUFFIX: &str = "Let's think step by step.";

pub const TSFC_SUFFIX: &str = "Analyze the time series step by step, focusing on identifying and leveraging trends and seasonal patterns. Execute each algebraic operation carefully, ensuring precision and accuracy at every stage. Pay close attention to trends and seasonal patterns, especially when determining the final answer";

pub const ANSWER_DIRECTIVE: &str = "please answer the predicted values only";

pub const VALUE_SEPARATOR: &str = ", ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Baseline,
    #[serde(rename = "cot")]
    CoT,
    #[serde(rename = "tsfc")]
    Tsfc,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Baseline, PromptKind::CoT, PromptKind::Tsfc];

    pub fn suffix(self) -> Option<&'static str> {
        match self {
            PromptKind::Baseline => None,
            PromptKind::CoT => Some(COT_SUFFIX),
            PromptKind::Tsfc => Some(TSFC_SUFFIX),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Baseline => "baseline",
            PromptKind::CoT => "cot",
            PromptKind::Tsfc => "tsfc",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(PromptKind::Baseline),
            "cot" => Ok(PromptKind::CoT),
            "tsfc" => Ok(PromptKind::Tsfc),
            other => Err(Error::InvalidConfig(format!("unknown prompt kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanUnit {
    Months,
    Hours,
}

impl SpanUnit {
    fn label(self, count: usize) -> &'static str {
        match (self, count) {
            (SpanUnit::Months, 1) => "month",
            (SpanUnit::Months, _) => "months",
            (SpanUnit::Hours, 1) => "hour",
            (SpanUnit::Hours, _) => "hours",
        }
    }

    /// `start` advanced by `count` units.
    pub fn advance(self, start: NaiveDateTime, count: usize) -> Result<NaiveDateTime> {
        let out = match self {
            SpanUnit::Months => u32::try_from(count).ok().and_then(|n| start.checked_add_months(Months::new(n))),
            SpanUnit::Hours => i64::try_from(count).ok().and_then(|n| start.checked_add_signed(Duration::hours(n))),
        };
        out.ok_or_else(|| Error::InvalidParams(format!("date overflow advancing {start} by {count}")))
    }

    fn render(self, date: NaiveDateTime) -> String {
        match self {
            SpanUnit::Months => date.format("%Y-%m-%d").to_string(),
            SpanUnit::Hours => date.format("%Y-%m-%d %H:%M").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub start_date: NaiveDateTime,
    pub end_date: NaiveDateTime,
    pub span_count: usize,
    pub span_unit: SpanUnit,
    pub horizon: usize,
    pub values_text: String,
}

impl PromptContext {
    /// Context whose end date is `span_count` units after `start_date`,
    /// i.e. the timestamp of the first value to be predicted.
    pub fn new(
        start_date: NaiveDateTime,
        span_count: usize,
        span_unit: SpanUnit,
        horizon: usize,
        values_text: String,
    ) -> Result<Self> {
        if span_count == 0 {
            return Err(Error::InvalidParams("span_count must be positive".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidParams("horizon must be positive".into()));
        }
        let end_date = span_unit.advance(start_date, span_count)?;
        Ok(Self { start_date, end_date, span_count, span_unit, horizon, values_text })
    }

    pub fn baseline_text(&self) -> String {
        format!(
            "Given the recorded measurements from {} to {} spanning {} {}, with the values: {}, predict the next {} measurements.",
            self.span_unit.render(self.start_date),
            self.span_unit.render(self.end_date),
            self.span_count,
            self.span_unit.label(self.span_count),
            self.values_text,
            self.horizon,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub kind: PromptKind,
}

pub fn render_prompt(kind: PromptKind, ctx: &PromptContext) -> Prompt {
    let mut text = ctx.baseline_text();
    if let Some(suffix) = kind.suffix() {
        text.push(' ');
        text.push_str(suffix);
    }
    text.push(' ');
    text.push_str(ANSWER_DIRECTIVE);
    Prompt { text, kind }
}

/// Normalized values render as bare integers, raw values with one decimal.
pub fn format_values<T: Scalar>(values: &[T], normalized: bool) -> String {
    let parts: Vec<String> = if normalized {
        values.iter().map(|v| v.round().to_i64().map_or_else(|| v.to_string(), |i| i.to_string())).collect()
    } else {
        values.iter().map(|v| format!("{v:.1}")).collect()
    };
    parts.join(VALUE_SEPARATOR)
}

pub fn format_tokens(series: &NormalizedSeries) -> String {
    let parts: Vec<String> = series.tokens.iter().map(i64::to_string).collect();
    parts.join(VALUE_SEPARATOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn date(y: i32, m: u32, d: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    fn sm4_ctx() -> PromptContext {
        PromptContext::new(date(2009, 12, 1), 49, SpanUnit::Months, 18, "1000.0, 1032.0, ..., 1197.0".into()).unwrap()
    }

    #[test]
    fn end_date_follows_span() {
        assert_eq!(sm4_ctx().end_date, date(2014, 1, 1));
        let hourly = PromptContext::new(date(2007, 1, 1), 96, SpanUnit::Hours, 6, "1".into()).unwrap();
        assert_eq!(hourly.end_date, date(2007, 1, 5));
    }

    #[test]
    fn every_kind_shares_the_baseline_and_ends_with_directive() {
        let ctx = sm4_ctx();
        let base = ctx.baseline_text();
        for kind in PromptKind::ALL {
            let p = render_prompt(kind, &ctx);
            assert!(p.text.starts_with(&base));
            assert!(p.text.ends_with(ANSWER_DIRECTIVE));
            assert_eq!(p, render_prompt(kind, &ctx));
        }
        assert_eq!(render_prompt(PromptKind::CoT, &ctx).text, format!("{base} {COT_SUFFIX} {ANSWER_DIRECTIVE}"));
    }

    #[test]
    fn hourly_dates_carry_the_hour() {
        let start = NaiveDate::from_ymd_opt(2007, 1, 1).unwrap().and_hms_opt(17, 0, 0).unwrap();
        let ctx = PromptContext::new(start, 2, SpanUnit::Hours, 1, "500, 524".into()).unwrap();
        assert_eq!(
            ctx.baseline_text(),
            "Given the recorded measurements from 2007-01-01 17:00 to 2007-01-01 19:00 spanning 2 hours, with the values: 500, 524, predict the next 1 measurements."
        );
    }

    #[test]
    fn formatting() {
        assert_eq!(format_values(&[500.0f64, 524.0], true), "500, 524");
        assert_eq!(format_values(&[1000.0f64, 1032.0], false), "1000.0, 1032.0");
        assert_eq!(format_values(&[7.0f64], true), "7");
        assert_eq!(format_values(&[4.9166f64], false), "4.9");
        assert_eq!(format_tokens(&NormalizedSeries { tokens: vec![500, 524] }), "500, 524");
    }

    #[test]
    fn rejects_empty_span_and_horizon() {
        assert!(PromptContext::new(date(2000, 1, 1), 0, SpanUnit::Months, 1, String::new()).is_err());
        assert!(PromptContext::new(date(2000, 1, 1), 1, SpanUnit::Months, 0, String::new()).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("TSFC".parse::<PromptKind>().unwrap(), PromptKind::Tsfc);
        assert!("few-shot".parse::<PromptKind>().is_err());
        assert_eq!(serde_json::to_string(&PromptKind::CoT).unwrap(), "\"cot\"");
    }
}
