//! Glue between records, prompts and forecaster replies.

use crate::datasets::DatasetRecord;
use crate::error::Result;
use crate::forecaster::ForecastRequest;
use crate::normalization::NormalizationParams;
use crate::prompting::{format_tokens, format_values, render_prompt, PromptContext, PromptKind};

/// Renders the query for `record`. With `params`, the context is shown as
/// token indices and the oracle reference is the normalized target.
pub fn build_request(
    record: &DatasetRecord,
    kind: PromptKind,
    params: Option<&NormalizationParams<f64>>,
) -> Result<ForecastRequest> {
    let (values_text, context, reference) = match params {
        Some(p) => {
            let ctx = p.normalize(&record.context);
            let reference = p.normalize(&record.target).to_values();
            (format_tokens(&ctx), ctx.to_values(), reference)
        }
        None => (
            format_values(record.context.values(), false),
            record.context.values().to_vec(),
            record.target.values().to_vec(),
        ),
    };
    let ctx = PromptContext::new(
        record.start_date,
        record.context.len(),
        record.granularity.span_unit(),
        record.target.len(),
        values_text,
    )?;
    Ok(ForecastRequest {
        prompt: render_prompt(kind, &ctx),
        horizon: record.target.len(),
        series_id: record.id.clone(),
        context,
        reference: Some(reference),
    })
}

/// Maps parsed reply values back to domain units.
pub fn prediction_to_domain(parsed: &[f64], params: Option<&NormalizationParams<f64>>) -> Vec<f64> {
    match params {
        Some(p) => p.denormalize(parsed),
        None => parsed.to_vec(),
    }
}
