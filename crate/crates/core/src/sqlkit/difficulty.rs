//! Spider four-bucket query difficulty classification.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::components::{Attachment, SqlComponents};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Medium,
        Difficulty::Hard,
        Difficulty::Extra,
    ];
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Difficulty::Easy => write!(f, "easy"),
            Difficulty::Medium => write!(f, "medium"),
            Difficulty::Hard => write!(f, "hard"),
            Difficulty::Extra => write!(f, "extra"),
        }
    }
}

/// Count of structural clause components (Spider "component 1"): clause
/// presence, joins, OR connectives, and LIKE predicates.
fn count_component1(c: &SqlComponents) -> usize {
    let mut count = 0;
    if !c.where_predicates.is_empty() {
        count += 1;
    }
    if !c.group_by.is_empty() {
        count += 1;
    }
    if !c.order_by.is_empty() {
        count += 1;
    }
    if c.limit_present {
        count += 1;
    }
    count += c.stats.from_unit_count.saturating_sub(1);
    count += c.stats.or_count;
    count += c.stats.like_count;
    count
}

/// Nested query count (Spider "component 2"): condition subqueries plus
/// set-operation branches. FROM-clause subqueries count as join units, not
/// nesting, matching the published rules.
fn count_component2(c: &SqlComponents) -> usize {
    let cond_subqueries = c
        .nested_subqueries
        .iter()
        .filter(|(att, _)| *att != Attachment::FromClause)
        .count();
    cond_subqueries + c.set_ops.len()
}

fn count_others(c: &SqlComponents) -> usize {
    let mut count = 0;
    if c.stats.agg_count > 1 {
        count += 1;
    }
    if c.select_items.values().sum::<usize>() > 1 {
        count += 1;
    }
    if c.stats.where_cond_count > 1 {
        count += 1;
    }
    if c.group_by.len() > 1 {
        count += 1;
    }
    count
}

/// Classify a gold query per the published Spider hardness rules.
pub fn classify_difficulty(gold: &SqlComponents) -> Difficulty {
    let comp1 = count_component1(gold);
    let comp2 = count_component2(gold);
    let others = count_others(gold);

    if comp1 <= 1 && others == 0 && comp2 == 0 {
        Difficulty::Easy
    } else if (others <= 2 && comp1 <= 1 && comp2 == 0)
        || (comp1 <= 2 && others < 2 && comp2 == 0)
    {
        Difficulty::Medium
    } else if (others > 2 && comp1 <= 2 && comp2 == 0)
        || (comp1 > 2 && comp1 <= 3 && others <= 2 && comp2 == 0)
        || (comp1 <= 1 && others == 0 && comp2 <= 1)
    {
        Difficulty::Hard
    } else {
        Difficulty::Extra
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnDef, SchemaCatalog, TableDef, ValueType};
    use crate::sqlkit::decompose;

    fn cat() -> SchemaCatalog {
        SchemaCatalog::new(
            "d",
            vec![TableDef {
                name: "t".into(),
                columns: vec![
                    ColumnDef { name: "a".into(), value_type: ValueType::Text },
                    ColumnDef { name: "b".into(), value_type: ValueType::Text },
                    ColumnDef { name: "c".into(), value_type: ValueType::Number },
                ],
            }],
        )
        .unwrap()
    }

    fn classify(sql: &str) -> Difficulty {
        classify_difficulty(&decompose(sql, &cat()).unwrap())
    }

    #[test]
    fn count_star_is_easy() {
        assert_eq!(classify("select count ( * ) from t"), Difficulty::Easy);
    }

    #[test]
    fn single_where_is_easy() {
        assert_eq!(classify("select a from t where c = 1"), Difficulty::Easy);
    }

    #[test]
    fn where_plus_group_by_is_medium() {
        assert_eq!(
            classify("select a from t where c = 1 group by a"),
            Difficulty::Medium
        );
    }

    #[test]
    fn two_select_items_with_where_is_medium() {
        assert_eq!(
            classify("select a , b from t where c = 1"),
            Difficulty::Medium
        );
    }

    #[test]
    fn plain_subquery_is_hard() {
        assert_eq!(
            classify("select a from t where c > ( select avg ( c ) from t )"),
            Difficulty::Hard
        );
    }

    #[test]
    fn intersect_with_extra_conditions_is_extra() {
        assert_eq!(
            classify(
                "select a from t where c = 1 and b = 'x' intersect select a from t where c = 2"
            ),
            Difficulty::Extra
        );
    }

    #[test]
    fn many_components_is_extra() {
        assert_eq!(
            classify("select a from t where c > 5 or c < 1 order by c desc limit 5"),
            Difficulty::Extra
        );
    }
}
