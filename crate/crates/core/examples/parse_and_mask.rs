//! Parse a tagged transcript, check its format and print the loss mask.

use deepresearch::trajectory::{
    compute_loss_mask, parse_transcript, render, validate_format_with, FormatLimits, SegmentKind, TokenSpanMap,
    WhitespaceTokenizer,
};

const TRANSCRIPT: &str = r#"<think>I need the translocation of the alveolar subtype.</think>
<tool_call>{"name":"search","arguments":{"query":["alveolar rhabdomyosarcoma translocation"]}}</tool_call>
<tool_response>1. Rhabdomyosarcoma overview: the alveolar subtype carries a t(2;13) translocation.</tool_response>
<think>That settles it.</think>
<answer>B</answer>"#;

fn main() -> anyhow::Result<()> {
    let question = "Which translocation defines alveolar rhabdomyosarcoma? A) t(11;22) B) t(2;13)";
    let traj = parse_transcript(TRANSCRIPT, "demo", question);
    assert_eq!(render(&traj), TRANSCRIPT, "rendering is lossless");

    let verdict = validate_format_with(&traj, &FormatLimits::default(), &WhitespaceTokenizer);
    println!("format ok: {} ({} tool turns)", verdict.pass, traj.turn_count);

    let spans = TokenSpanMap::build(&traj, &WhitespaceTokenizer);
    let mask = compute_loss_mask(&traj, &spans)?;
    for span in &spans.spans {
        let seg = &traj.segments[span.segment_index];
        let trained = seg.kind.is_model_generated();
        println!(
            "{:<14} tokens {:>3}..{:<3} mask {}",
            format!("{:?}", seg.kind),
            span.start,
            span.end,
            u8::from(trained)
        );
    }
    let responses: usize = spans
        .spans
        .iter()
        .filter(|s| matches!(traj.segments[s.segment_index].kind, SegmentKind::ToolResponse | SegmentKind::Input))
        .map(|s| s.end - s.start)
        .sum();
    println!("{} of {} tokens trained, {responses} masked out", mask.ones(), mask.len());
    Ok(())
}
