//! Query corpus over a small bookstore dataset.

use crate::workload::WorkloadSpec;

/// `(name, sql)` for every corpus query.
pub const QUERIES: &[(&str, &str)] = &[
    ("01_books_reviews", include_str!("../corpus/01_books_reviews.sql")),
    ("02_single_table", include_str!("../corpus/02_single_table.sql")),
    ("03_scored_reviews", include_str!("../corpus/03_scored_reviews.sql")),
    ("04_semantic_join", include_str!("../corpus/04_semantic_join.sql")),
    ("05_cross_join", include_str!("../corpus/05_cross_join.sql")),
    ("06_three_tables", include_str!("../corpus/06_three_tables.sql")),
    ("07_with_cte", include_str!("../corpus/07_with_cte.sql")),
    ("08_top_cheap", include_str!("../corpus/08_top_cheap.sql")),
    ("09_genre_labels", include_str!("../corpus/09_genre_labels.sql")),
    ("10_null_texts", include_str!("../corpus/10_null_texts.sql")),
    ("11_four_tables", include_str!("../corpus/11_four_tables.sql")),
    ("12_nullable_filter", include_str!("../corpus/12_nullable_filter.sql")),
];

/// The dataset the corpus queries run against.
pub fn workload() -> WorkloadSpec {
    serde_json::from_str(include_str!("../corpus/workload.json")).expect("corpus workload is valid JSON")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_query_binds() {
        let data = workload().generate().unwrap();
        let catalog = data.catalog();
        for (name, sql) in QUERIES {
            semplan_core::sql::parse(sql, &catalog).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
