use std::collections::BTreeMap;

use moralframe::analysis::*;
use moralframe::kb::Ideology;
use moralframe::learning::{EntityPrediction, PredictionSet, TweetPrediction};
use moralframe::taxonomy::RoleClass;
use moralframe::{MoralFoundation, MoralRole};
use proptest::prelude::*;

use MoralFoundation::*;
use MoralRole::*;

fn tweet(
    id: &str,
    ideo: Ideology,
    mf: MoralFoundation,
    gold: MoralFoundation,
    ents: &[(&str, MoralRole, MoralRole)],
) -> TweetPrediction {
    TweetPrediction {
        tweet: id.into(),
        ideology: ideo,
        topic: "guns".into(),
        mf,
        gold_mf: Some(gold),
        entities: ents
            .iter()
            .map(|(e, pred, g)| EntityPrediction {
                entity: e.to_string(),
                surface: e.to_string(),
                role: *pred,
                gold_role: Some(*g),
            })
            .collect(),
    }
}

/// z via the single-fraction form `(s_l n_r − s_r n_l) √N / √(S F n_l n_r)`.
fn z_oracle(sl: u64, nl: u64, sr: u64, nr: u64) -> f64 {
    let (sl, nl, sr, nr) = (sl as f64, nl as f64, sr as f64, nr as f64);
    let n = nl + nr;
    let s = sl + sr;
    (sl * nr - sr * nl) * n.sqrt() / (s * (n - s) * nl * nr).sqrt()
}

#[test]
fn zscore_matches_oracle_on_fixed_pairs() {
    for (sl, nl, sr, nr) in [(90, 100, 10, 100), (3, 7, 5, 11), (1, 2, 0, 1), (40, 41, 39, 80)] {
        let z = partisanship_zscore((sl, nl), (sr, nr)).unwrap().z;
        assert!((z - z_oracle(sl, nl, sr, nr)).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn zscore_oracle_and_antisymmetry(nl in 1u64..500, nr in 1u64..500, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let sl = (a * nl as f64).floor() as u64;
        let sr = (b * nr as f64).floor() as u64;
        let f = partisanship_zscore((sl, nl), (sr, nr)).unwrap();
        let g = partisanship_zscore((sr, nr), (sl, nl)).unwrap();
        prop_assert_eq!(f.z, -g.z);
        if f.degenerate {
            prop_assert!(sl + sr == 0 || sl + sr == nl + nr);
        } else {
            prop_assert!((f.z - z_oracle(sl, nl, sr, nr)).abs() < 1e-9);
        }
    }

    #[test]
    fn alias_application_is_idempotent(names in prop::collection::vec("[a-c]{1,3}( [a-c]{1,2})?", 1..12)) {
        let mut groups = BTreeMap::new();
        groups.insert("Alpha".to_string(), vec!["a".to_string(), "ab".to_string()]);
        groups.insert("Beta".to_string(), vec!["b c".to_string(), "cc".to_string()]);
        let map = EntityAliasMap::new(groups).unwrap();
        let ents: Vec<(&str, MoralRole, MoralRole)> = names.iter().map(|n| (n.as_str(), TargetOfCareHarm, TargetOfCareHarm)).collect();
        let preds = PredictionSet { tweets: vec![tweet("t", Ideology::Left, CareHarm, CareHarm, &ents)] };
        let once = map.apply(&preds);
        prop_assert_eq!(map.apply(&once), once);
    }

    #[test]
    fn distribution_sums_to_one(roles in prop::collection::vec(0usize..16, 1..40)) {
        let ents: Vec<(&str, MoralRole, MoralRole)> = roles.iter().map(|&r| ("x", MoralRole::ALL[r], MoralRole::ALL[r])).collect();
        let preds = PredictionSet { tweets: vec![tweet("t", Ideology::Right, CareHarm, CareHarm, &ents)] };
        let d = role_distribution(&preds, "x", Ideology::Right);
        let total: f64 = d.iter().map(|x| x.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(d.iter().all(|x| x.1 > 0.0));
    }
}

fn fixture() -> PredictionSet {
    let l = Ideology::Left;
    PredictionSet {
        tweets: vec![
            tweet(
                "t1",
                l,
                CareHarm,
                CareHarm,
                &[("a", EntityCausingHarm, EntityProvidingCare)],
            ),
            tweet(
                "t2",
                l,
                LoyaltyBetrayal,
                FairnessCheating,
                &[("b", EntityBeingLoyal, EntityEnsuringFairness)],
            ),
            tweet(
                "t3",
                l,
                LoyaltyBetrayal,
                LoyaltyBetrayal,
                &[
                    ("c", TargetOfLoyaltyBetrayal, TargetOfLoyaltyBetrayal),
                    ("d", TargetOfLoyaltyBetrayal, EntityBeingLoyal),
                ],
            ),
            tweet(
                "t4",
                l,
                AuthoritySubversion,
                PurityDegradation,
                &[("e", JustifiedAuthority, EntityPreservingPurity)],
            ),
            tweet(
                "t5",
                l,
                AuthoritySubversion,
                AuthoritySubversion,
                &[
                    ("f", JustifiedAuthority, JustifiedAuthority),
                    ("g", JustifiedAuthority, JustifiedAuthority),
                ],
            ),
        ],
    }
}

#[test]
fn error_taxonomy_fixture() {
    let c = error_taxonomy(&fixture());
    assert_eq!((c.e1, c.e2, c.e3), (1, 2, 1));
}

#[test]
fn error_taxonomy_on_gold_is_zero() {
    let mut p = fixture();
    for t in &mut p.tweets {
        t.mf = t.gold_mf.unwrap();
        for e in &mut t.entities {
            e.role = e.gold_role.unwrap();
        }
    }
    assert_eq!(error_taxonomy(&p), ErrorCounts::default());
}

#[test]
fn polarity_flip_counts_as_e1_only() {
    let p = PredictionSet {
        tweets: vec![tweet(
            "t",
            Ideology::Left,
            CareHarm,
            CareHarm,
            &[("x", EntityCausingHarm, EntityProvidingCare)],
        )],
    };
    assert_eq!(error_taxonomy(&p), ErrorCounts { e1: 1, e2: 0, e3: 0 });
}

fn repeat(n: usize, f: impl Fn(usize) -> TweetPrediction) -> Vec<TweetPrediction> {
    (0..n).map(f).collect()
}

#[test]
fn graph_single_target_single_actor() {
    let tweets = repeat(20, |i| {
        tweet(
            &format!("t{i}"),
            Ideology::Left,
            CareHarm,
            CareHarm,
            &[
                ("kids", TargetOfCareHarm, TargetOfCareHarm),
                ("nra", EntityCausingHarm, EntityCausingHarm),
            ],
        )
    });
    let preds = PredictionSet { tweets };
    let g = build_relation_graph(&preds, CareHarm, Ideology::Left, &GraphConfig::default());
    assert_eq!(g.nodes.len(), 2);
    assert_eq!(
        g.edges,
        vec![GraphEdge {
            from: "nra".into(),
            to: "kids".into(),
            count: 20
        }]
    );
    assert!(g.underfull);
    assert_eq!(g.nodes[1].class, RoleClass::NegativeActor);
    let other = build_relation_graph(&preds, CareHarm, Ideology::Right, &GraphConfig::default());
    assert!(other.nodes.is_empty());
}

#[test]
fn graph_min_count_and_bounds() {
    let mut tweets = repeat(30, |i| {
        tweet(
            &format!("t{i}"),
            Ideology::Right,
            CareHarm,
            CareHarm,
            &[
                (["kids", "vets", "women"][i % 3], TargetOfCareHarm, TargetOfCareHarm),
                (
                    ["a", "b", "c", "d", "e"][i % 5],
                    EntityProvidingCare,
                    EntityProvidingCare,
                ),
                (["f", "g"][i % 2], EntityCausingHarm, EntityCausingHarm),
            ],
        )
    });
    // 14 mentions: below the default threshold of 15
    tweets.extend(repeat(14, |i| {
        tweet(
            &format!("r{i}"),
            Ideology::Right,
            CareHarm,
            CareHarm,
            &[
                ("kids", TargetOfCareHarm, TargetOfCareHarm),
                ("rare", EntityCausingHarm, EntityCausingHarm),
            ],
        )
    }));
    let preds = PredictionSet { tweets };
    let g = build_relation_graph(&preds, CareHarm, Ideology::Right, &GraphConfig::default());
    assert!(g.nodes.len() <= 8);
    assert!(g.nodes.iter().all(|n| n.entity != "rare"));
    // vets and women have 10 mentions and a..e 6, so only kids, f and g survive
    let names: Vec<&str> = g.nodes.iter().map(|n| n.entity.as_str()).collect();
    assert_eq!(names, ["kids", "f", "g"]);
    assert!(g.underfull);
    let loose = build_relation_graph(
        &preds,
        CareHarm,
        Ideology::Right,
        &GraphConfig {
            min_count: 1,
            ..Default::default()
        },
    );
    assert_eq!(loose.nodes.len(), 2 + 3 + 3);
    assert!(!loose.underfull);
    assert!(loose.nodes.iter().any(|n| n.entity == "rare"));
    assert!(loose.edges.iter().all(|e| e.count >= 1));

    let (nodes, edges) = parse_dot(&loose.to_dot()).unwrap();
    let mut a = nodes.clone();
    let mut b = loose.nodes.clone();
    a.sort();
    b.sort();
    assert_eq!(a, b);
    let (mut a, mut b) = (edges, loose.edges.clone());
    a.sort();
    b.sort();
    assert_eq!(a, b);
    let json: RelationGraph = serde_json::from_str(&loose.to_json().unwrap()).unwrap();
    assert_eq!(json, loose);
}

#[test]
fn dot_round_trip_escapes_quotes() {
    let g = RelationGraph {
        mf: CareHarm,
        ideology: Ideology::Left,
        nodes: vec![
            GraphNode {
                entity: "the \"wall\"".into(),
                role: TargetOfCareHarm,
                class: RoleClass::Target,
            },
            GraphNode {
                entity: "back\\slash".into(),
                role: EntityProvidingCare,
                class: RoleClass::PositiveActor,
            },
        ],
        edges: vec![GraphEdge {
            from: "back\\slash".into(),
            to: "the \"wall\"".into(),
            count: 3,
        }],
        underfull: true,
    };
    let (nodes, edges) = parse_dot(&g.to_dot()).unwrap();
    assert_eq!(nodes, g.nodes);
    assert_eq!(edges, g.edges);
}

#[test]
fn polarity_rank_thresholds_and_symmetry() {
    let mut tweets = Vec::new();
    for (role, n) in [
        (EntityProvidingCare, 30),
        (EntityCausingHarm, 12),
        (TargetOfCareHarm, 9),
    ] {
        for i in 0..n {
            tweets.push(tweet(
                &format!("{i}"),
                Ideology::Left,
                CareHarm,
                CareHarm,
                &[("women", role, role)],
            ));
        }
    }
    for i in 0..11 {
        tweets.push(tweet(
            &format!("r{i}"),
            Ideology::Right,
            CareHarm,
            CareHarm,
            &[("women", TargetOfCareHarm, TargetOfCareHarm)],
        ));
    }
    let preds = PredictionSet { tweets };
    let s = polarity_rank(&preds, "women", 10);
    assert_eq!(s[0].ideology, Ideology::Left);
    let left: Vec<(MoralRole, f64)> = s[0].points.iter().map(|p| (p.role, p.score)).collect();
    assert_eq!(left, vec![(EntityCausingHarm, 0.0), (EntityProvidingCare, 1.0)]);
    assert_eq!(s[1].points.len(), 1);
    assert_eq!(s[1].points[0].score, 1.0);

    let mut swapped = preds.clone();
    for t in &mut swapped.tweets {
        t.ideology = t.ideology.other();
    }
    let m = polarity_rank(&swapped, "women", 10);
    assert_eq!(m[0].points, s[1].points);
    assert_eq!(m[1].points, s[0].points);
    assert!(polarity_rank(&preds, "nobody", 10).iter().all(|x| x.points.is_empty()));

    let d = role_distribution(&preds, "women", Ideology::Right);
    assert_eq!(d, vec![(TargetOfCareHarm, 1.0)]);
    let rows = distribution_rows(&d);
    assert_eq!(
        rows.to_tsv().unwrap(),
        "role\tfraction\nTarget of care/harm\t1.000000\n"
    );
}

#[test]
fn partisanship_table_shape() {
    let mut tweets = Vec::new();
    for i in 0..10 {
        tweets.push(tweet(
            &format!("l{i}"),
            Ideology::Left,
            CareHarm,
            CareHarm,
            &[("kids", TargetOfCareHarm, TargetOfCareHarm)],
        ));
        tweets.push(tweet(
            &format!("r{i}"),
            Ideology::Right,
            if i < 5 { CareHarm } else { AuthoritySubversion },
            CareHarm,
            &[("police", JustifiedAuthority, JustifiedAuthority)],
        ));
    }
    let rows = partisanship_table(&PredictionSet { tweets }, &PartisanConfig::default());
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r.common_mf, CareHarm);
    assert!(r.mf_score.unwrap().z > 0.0);
    assert_eq!(r.most_left.as_ref().unwrap().entity, "kids");
    assert_eq!(r.most_right.as_ref().unwrap().entity, "police");
    let md = partisanship_rows(&rows).to_markdown();
    assert!(md.starts_with("| topic | common_mf | mf_z | most_partisan_right | most_partisan_left |"));
}

#[test]
fn top_entities_group_by_ideology_and_role() {
    let tweets = repeat(6, |i| {
        let ideo = if i % 2 == 0 { Ideology::Left } else { Ideology::Right };
        tweet(
            &format!("t{i}"),
            ideo,
            CareHarm,
            CareHarm,
            &[(
                ["law abiding citizens", "law abiding citizen", "the kids"][i % 3],
                TargetOfCareHarm,
                TargetOfCareHarm,
            )],
        )
    });
    let g = top_entities_per_role(&PredictionSet { tweets }, &TopEntitiesConfig::default());
    assert_eq!(g.len(), 2);
    assert_eq!(
        (g[0].ideology, g[0].role, g[0].mentions),
        (Ideology::Left, TargetOfCareHarm, 3)
    );
    // left sees "law abiding citizens", "the kids", "law abiding citizen"
    assert_eq!(g[0].groups.len(), 2);
    assert_eq!(g[0].groups[0].count, 2);
}
