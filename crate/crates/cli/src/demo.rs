//! Three-row logit comparison for a single prompt: what the model assigns
//! with the full prompt, with the weakened prompt, and after extrapolation.

use std::fmt::Write as _;

use extrap_core::backend::LogitProvider;
use extrap_core::{
    extrapolate, merge_topk, weaken, LogitVector, Result, SplitPrompt, Token, WeakeningMethod,
};

/// How many of each row's top tokens compete for a column.
const TOP_PER_ROW: usize = 3;
const MAX_COLUMNS: usize = 6;

fn top_tokens(v: &LogitVector, n: usize) -> Vec<Token> {
    let mut entries: Vec<(&Token, f64)> = v.entries().iter().map(|(t, l)| (t, *l)).collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    entries.into_iter().take(n).map(|(t, _)| t.clone()).collect()
}

/// Renders the comparison table. Columns are the union of each row's top
/// tokens, ordered by extrapolated logit; the extrapolated argmax is starred.
pub fn render_demo(
    provider: &dyn LogitProvider,
    split: &SplitPrompt,
    method: &WeakeningMethod,
    alpha: f64,
) -> Result<String> {
    let prompt = split.reconstruct();
    let weak_prompt = weaken(split, method);
    let full = provider.next_logits(&prompt)?;
    let weak = provider.next_logits(&weak_prompt)?;
    let (full, weak) = merge_topk(&full, &weak)?;
    let extra = extrapolate(&full, &weak, alpha)?;

    let mut tokens: Vec<Token> = Vec::new();
    for row in [&extra, &full, &weak] {
        for token in top_tokens(row, TOP_PER_ROW) {
            if !tokens.contains(&token) {
                tokens.push(token);
            }
        }
    }
    tokens.sort_by(|a, b| {
        let at = extra.get(a).unwrap_or(f64::NEG_INFINITY);
        let bt = extra.get(b).unwrap_or(f64::NEG_INFINITY);
        bt.total_cmp(&at).then(a.cmp(b))
    });
    tokens.truncate(MAX_COLUMNS);
    let winner = extra.argmax().cloned();

    let labels = [
        "original".to_owned(),
        format!("weakened ({})", method.label()),
        format!("extrapolated (alpha={alpha})"),
    ];
    let label_width = labels.iter().map(String::len).max().unwrap_or(0);
    let headers: Vec<String> = tokens.iter().map(|t| format!("{:?}", t.as_str())).collect();
    let widths: Vec<usize> = headers.iter().map(|h| h.len().max(10)).collect();

    let mut out = String::new();
    let _ = writeln!(out, "prompt: {prompt:?}");
    let _ = writeln!(out, "weakened prompt: {weak_prompt:?}");
    out.push('\n');

    let _ = write!(out, "{:<label_width$}", "next token");
    for (header, width) in headers.iter().zip(&widths) {
        let _ = write!(out, "  {header:>width$}");
    }
    out.push('\n');
    for (row_index, (label, row)) in labels.iter().zip([&full, &weak, &extra]).enumerate() {
        let _ = write!(out, "{label:<label_width$}");
        for (token, width) in tokens.iter().zip(&widths) {
            let logit = row.get(token).expect("merged rows share one token set");
            let starred = row_index == 2 && winner.as_ref() == Some(token);
            let cell = format!("{logit:.4}{}", if starred { "*" } else { "" });
            let _ = write!(out, "  {cell:>width$}");
        }
        out.push('\n');
    }
    if let Some(winner) = &winner {
        out.push('\n');
        let _ = writeln!(out, "winner: {:?}", winner.as_str());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use extrap_core::backend::{CoverageKind, VocabInfo};

    struct TwoPrompt;

    impl LogitProvider for TwoPrompt {
        fn next_logits(&self, prefix: &str) -> Result<LogitVector> {
            let entries: &[(&str, f64)] = if prefix.starts_with("Task:") {
                &[("H", -74.8), ("I", -77.8)]
            } else {
                &[("H", -68.1), ("I", -73.8)]
            };
            LogitVector::full(
                entries
                    .iter()
                    .map(|(t, l)| (Token::from(*t), *l))
                    .collect(),
            )
        }

        fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
            Ok(vec![Token::new(text)])
        }

        fn decode(&self, tokens: &[Token]) -> Result<String> {
            Ok(tokens.iter().map(Token::as_str).collect())
        }

        fn vocab_info(&self) -> VocabInfo {
            VocabInfo {
                size: Some(2),
                kind: CoverageKind::Full,
            }
        }

        fn model_id(&self) -> String {
            "stub".to_owned()
        }
    }

    #[test]
    fn flips_the_winner_at_alpha_four() {
        let split = SplitPrompt::new("Task: demo.", " ", "data").unwrap();
        let table =
            render_demo(&TwoPrompt, &split, &WeakeningMethod::StripTask, 4.0).unwrap();
        assert!(table.contains("-101.6000"), "{table}");
        assert!(table.contains("-93.8000*"), "{table}");
        assert!(table.contains("winner: \"I\""), "{table}");
    }

    #[test]
    fn alpha_zero_repeats_the_original_row() {
        let split = SplitPrompt::new("Task: demo.", " ", "data").unwrap();
        let table =
            render_demo(&TwoPrompt, &split, &WeakeningMethod::StripTask, 0.0).unwrap();
        assert!(table.contains("-74.8000*"), "{table}");
        assert!(table.contains("winner: \"H\""), "{table}");
    }
}
