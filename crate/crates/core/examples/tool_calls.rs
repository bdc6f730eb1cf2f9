//! Validate tool-call bodies and run them against an offline web.

use std::sync::Arc;

use deepresearch::toolbelt::mock::MockWeb;
use deepresearch::toolbelt::{tool_schemas, validate_tool_call, Toolbelt};

fn main() -> anyhow::Result<()> {
    let web = MockWeb::load(&std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/web.jsonl"))?;
    let tools = Toolbelt::mock(Arc::new(web));
    println!("schemas:\n{}\n", serde_json::to_string_pretty(&tool_schemas())?);

    let bad = r#"{"name":"search","arguments":{"query":[]}}"#;
    println!("rejected: {}\n", validate_tool_call(bad).unwrap_err());

    let search = r#"{"name":"search","arguments":{"query":["alveolar rhabdomyosarcoma translocation","vincristine toxicity"]}}"#;
    println!("{}\n", tools.execute(search));

    let visit = r#"{"name":"visit","arguments":{"url":["https://pmc.ncbi.nlm.nih.gov/articles/pax3"],"goal":"which translocation forms the fusion gene"}}"#;
    println!("{}", tools.execute(visit));
    Ok(())
}
