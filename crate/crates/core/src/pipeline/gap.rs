//! The gap set: checklist items whose final assessment is an unaddressed
//! critical gap. A non-empty gap set forces an Inconclusive determination.

use super::types::{Assessment, Checklist, ChecklistItem, GapEntry, GapSet};
use super::validate;
use super::PipelineError;

pub const NEEDED_INFORMATION_PREFIX: &str = "Provide facts establishing: ";

pub fn needed_information(item: &ChecklistItem) -> String {
    format!("{NEEDED_INFORMATION_PREFIX}{}", item.text)
}

/// Gap entries in checklist order. Fails when the assessments do not cover
/// the checklist exactly.
pub fn compute_gap(checklist: &Checklist, final_assessments: &[Assessment]) -> Result<GapSet, PipelineError> {
    validate::coverage(checklist, final_assessments).map_err(PipelineError::CoverageGap)?;
    let gaps = checklist
        .items
        .iter()
        .filter(|item| {
            final_assessments
                .iter()
                .any(|a| a.item_id == item.item_id && a.is_critical_gap())
        })
        .map(|item| GapEntry {
            item_id: item.item_id.clone(),
            requirement_text: item.text.clone(),
            needed_information: needed_information(item),
        })
        .collect();
    Ok(GapSet { gaps })
}
