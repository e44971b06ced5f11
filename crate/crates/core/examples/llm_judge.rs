//! Scoring an interpretation with a judge model. The judge here is a
//! scripted backend, so the example also shows what the request carries.
//!
//! ```text
//! cargo run --example llm_judge
//! ```

use obs_core::evaluation::{judge_template_id, llm_judge};
use obs_core::inference::ScriptedBackend;

fn main() -> anyhow::Result<()> {
    let judge = ScriptedBackend::new(["The meanings coincide apart from nuance.\nScore: 0.834"]).named("scripted-judge");
    let score = llm_judge(
        &judge,
        "A person leaning on a tree to rest.",
        "A person resting against a tree.",
    )?;
    println!("score {:.2} via {}", score.score, score.template_id);
    assert_eq!(score.template_id, judge_template_id());

    let request = &judge.requests()[0];
    println!("temperature {:?}", request.temperature);
    println!("--- user message ---\n{}", request.last_user());
    Ok(())
}
