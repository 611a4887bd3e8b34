//! Prompt rendering and the deterministic mock stand-in for the language model.

use alloc::format;
use alloc::string::{String, ToString};

use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::ir::{placeholder_spans, ColumnRef, OutputType, SemanticPredicate};
use crate::value::Value;

/// Substitutes placeholders with the canonical text of the row's values.
///
/// Returns `None` when every referenced value is NULL; such rows are never
/// sent to the model. A predicate without placeholders always renders.
pub fn render_prompt<'a, F>(predicate: &SemanticPredicate, mut lookup: F) -> Option<String>
where
    F: FnMut(&ColumnRef) -> Option<&'a Value>,
{
    let spans = placeholder_spans(&predicate.template).ok()?;
    let mut out = String::with_capacity(predicate.template.len() + 16);
    let mut last = 0;
    let mut any_value = spans.is_empty();
    for span in spans {
        out.push_str(&predicate.template[last..span.start]);
        let col = ColumnRef::parse(&predicate.template[span.start + 1..span.end - 1])?;
        match lookup(&col) {
            Some(v) if !v.is_null() => {
                any_value = true;
                out.push_str(&v.canonical_text());
            }
            _ => out.push_str("NULL"),
        }
        last = span.end;
    }
    out.push_str(&predicate.template[last..]);
    any_value.then_some(out)
}

/// Cache key for a rendered prompt. The output type is part of the key so a
/// filter and a projection with the same text never share an entry.
pub fn cache_key(output: OutputType, prompt: &str) -> String {
    let tag = match output {
        OutputType::Boolean => "bool",
        OutputType::Text => "text",
        OutputType::Integer => "int",
    };
    format!("{tag}\u{1f}{prompt}")
}

/// Stable hash of `(seed, prompt)` mapped to `[0, 1)`.
pub fn unit_hash(seed: u64, prompt: &str) -> f64 {
    // 53 high bits give an exactly representable fraction.
    (xxh3_64_with_seed(prompt.as_bytes(), seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Boolean answer of the mock model: true with probability `selectivity`.
pub fn mock_boolean(seed: u64, prompt: &str, selectivity: f64) -> bool {
    unit_hash(seed, prompt) < selectivity
}

/// Raw text answer of the mock model for any output type.
pub fn mock_answer(seed: u64, prompt: &str, output: OutputType, selectivity: f64) -> String {
    let h = xxh3_64_with_seed(prompt.as_bytes(), seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    match output {
        OutputType::Boolean => mock_boolean(seed, prompt, selectivity).to_string(),
        OutputType::Integer => (1 + h % 5).to_string(),
        OutputType::Text => format!("v{}", h % 16),
    }
}

/// Parses a model answer into a typed value. `None` means the text does not
/// conform (booleans must be `true`/`false`, integers digits only).
pub fn parse_answer(output: OutputType, text: &str) -> Option<Value> {
    let text = text.trim();
    match output {
        OutputType::Boolean => match text.to_ascii_lowercase().as_str() {
            "true" | "yes" => Some(Value::Boolean(true)),
            "false" | "no" => Some(Value::Boolean(false)),
            _ => None,
        },
        OutputType::Integer => {
            if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            text.parse::<i64>().ok().map(Value::Integer)
        }
        OutputType::Text => Some(Value::Text(text.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::vec::Vec;

    fn pred(t: &str) -> SemanticPredicate {
        SemanticPredicate::from_template(t, OutputType::Boolean).unwrap()
    }

    #[test]
    fn renders_listing_template() {
        let p = pred("{books.description} is about AI?");
        let v = Value::from("A book on neural nets");
        let out = render_prompt(&p, |_| Some(&v)).unwrap();
        assert_eq!(out, "A book on neural nets is about AI?");
    }

    #[test]
    fn all_null_renders_nothing() {
        let p = pred("{a.x} vs {a.y}");
        assert_eq!(render_prompt(&p, |_| Some(&Value::Null)), None);
        let mut m = BTreeMap::new();
        m.insert(ColumnRef::new("a", "x"), Value::Null);
        m.insert(ColumnRef::new("a", "y"), Value::Integer(3));
        assert_eq!(render_prompt(&p, |c| m.get(c)).as_deref(), Some("NULL vs 3"));
    }

    #[test]
    fn integer_renders_canonically() {
        let p = pred("score {r.rating}");
        let v = Value::Integer(3);
        assert_eq!(render_prompt(&p, |_| Some(&v)).unwrap(), "score 3");
    }

    #[test]
    fn mock_is_deterministic() {
        for i in 0..100 {
            let p = format!("prompt {i}");
            assert_eq!(mock_boolean(42, &p, 0.3), mock_boolean(42, &p, 0.3));
            assert_eq!(
                mock_answer(42, &p, OutputType::Integer, 0.2),
                mock_answer(42, &p, OutputType::Integer, 0.2)
            );
        }
    }

    #[test]
    fn acceptance_fraction_tracks_target() {
        let hits = (0..10_000)
            .filter(|i| mock_boolean(7, &format!("distinct prompt #{i}"), 0.2))
            .count();
        let frac = hits as f64 / 10_000.0;
        assert!((frac - 0.2).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn seeds_decorrelate() {
        let n = 10_000;
        let a: Vec<bool> = (0..n).map(|i| mock_boolean(1, &format!("p{i}"), 0.5)).collect();
        let b: Vec<bool> = (0..n).map(|i| mock_boolean(2, &format!("p{i}"), 0.5)).collect();
        let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / n as f64;
        // Independent fair coins agree half the time.
        assert!((agree - 0.5).abs() < 0.03, "{agree}");
    }

    #[test]
    fn strict_integer_parsing() {
        assert_eq!(parse_answer(OutputType::Integer, "4"), Some(Value::Integer(4)));
        assert_eq!(parse_answer(OutputType::Integer, "four"), None);
        assert_eq!(parse_answer(OutputType::Integer, "-4"), None);
        assert_eq!(parse_answer(OutputType::Integer, "4.0"), None);
        assert_eq!(parse_answer(OutputType::Boolean, "TRUE"), Some(Value::Boolean(true)));
    }
}
