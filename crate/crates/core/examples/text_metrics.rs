//! Candidate-versus-reference text scores: ROUGE-1, embedding F1 and the
//! mover score, in both tokenisations.
//!
//! ```text
//! cargo run --example text_metrics
//! ```

use obs_core::evaluation::{
    embedding_f1, mover_score, rouge1_f1, tokenize, IdfTable, MoverOptions, Tokenizer,
};
use obs_core::StubProvider;

fn main() -> anyhow::Result<()> {
    let provider = StubProvider::new(128);
    let pairs = [
        (Tokenizer::Whitespace, "A person standing beside a tree.", "A person resting against a tree."),
        (Tokenizer::Whitespace, "Flames rising over the hill.", "A person resting against a tree."),
        (Tokenizer::Character, "人倚木而息", "人依木休息"),
    ];
    for (tokenizer, cand, reference) in pairs {
        let c = tokenize(cand, tokenizer);
        let r = tokenize(reference, tokenizer);
        println!(
            "{:<10} rouge1 {:.4}  emb-f1 {:.4}  mover {:.4}  | {cand} / {reference}",
            tokenizer.as_str(),
            rouge1_f1(&c, &r)?,
            embedding_f1(&c, &r, &provider)?,
            mover_score(&c, &r, &provider, MoverOptions::default())?,
        );
    }

    let docs: Vec<_> = pairs.iter().map(|p| tokenize(p.2, p.0)).collect();
    let idf = IdfTable::from_documents(&docs);
    let c = tokenize(pairs[0].1, Tokenizer::Whitespace);
    let r = tokenize(pairs[0].2, Tokenizer::Whitespace);
    let weighted = mover_score(&c, &r, &provider, MoverOptions { idf: Some(&idf) })?;
    println!("idf-weighted mover {weighted:.4}");
    Ok(())
}
