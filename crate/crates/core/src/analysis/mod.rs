//! Aggregate analyses over a prediction set: partisanship, error taxonomy,
//! frequent entities, role usage and entity relation graphs.

mod entities;
mod errors;
mod graph;
mod table;
mod usage;
mod zscore;

pub use entities::{
    rank_entity_groups, top_entities_per_role, EntityAliasMap, EntityGroup, RoleEntities, TopEntitiesConfig,
};
pub use errors::{error_taxonomy, ErrorCounts};
pub use graph::{build_relation_graph, parse_dot, GraphConfig, GraphEdge, GraphNode, RelationGraph};
pub use table::{fmt_f64, Table};
pub use usage::{entity_frequencies, polarity_rank, role_distribution, PolaritySeries, RankPoint};
pub use zscore::{partisanship_table, partisanship_zscore, PartisanConfig, PartisanPair, TopicPartisanship, ZScore};

use crate::taxonomy::MoralRole;

fn pair_cell(p: &Option<PartisanPair>) -> String {
    p.as_ref().map_or_else(
        || "-".into(),
        |p| format!("{}:{} ({})", p.role.name(), p.entity, fmt_f64(p.score.z)),
    )
}

pub fn partisanship_rows(rows: &[TopicPartisanship]) -> Table {
    let mut t = Table::new([
        "topic",
        "common_mf",
        "mf_z",
        "most_partisan_right",
        "most_partisan_left",
    ]);
    for r in rows {
        t.push([
            r.topic.clone(),
            r.common_mf.name().to_string(),
            r.mf_score.map_or_else(|| "-".into(), |z| fmt_f64(z.z)),
            pair_cell(&r.most_right),
            pair_cell(&r.most_left),
        ]);
    }
    t
}

pub fn top_entities_rows(groups: &[RoleEntities]) -> Table {
    let mut t = Table::new(["ideology", "role", "rank", "entity", "count"]);
    for g in groups {
        for (i, e) in g.groups.iter().enumerate() {
            t.push([
                g.ideology.name().to_string(),
                g.role.name().to_string(),
                (i + 1).to_string(),
                e.representative.clone(),
                e.count.to_string(),
            ]);
        }
    }
    t
}

pub fn distribution_rows(dist: &[(MoralRole, f64)]) -> Table {
    let mut t = Table::new(["role", "fraction"]);
    for (r, f) in dist {
        t.push([r.label().to_string(), fmt_f64(*f)]);
    }
    t
}

pub fn polarity_rows(entity: &str, series: &[PolaritySeries]) -> Table {
    let mut t = Table::new(["entity", "ideology", "role", "polarity", "count", "score"]);
    for s in series {
        for p in &s.points {
            t.push([
                entity.to_string(),
                s.ideology.name().to_string(),
                p.role.name().to_string(),
                p.polarity.name().to_string(),
                p.count.to_string(),
                fmt_f64(p.score),
            ]);
        }
    }
    t
}

pub fn error_rows(rows: &[(String, ErrorCounts)]) -> Table {
    let mut t = Table::new(["variant", "E1", "E2", "E3"]);
    for (name, c) in rows {
        t.push([name.clone(), c.e1.to_string(), c.e2.to_string(), c.e3.to_string()]);
    }
    t
}
