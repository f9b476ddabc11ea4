use moralframe::dsl::{compile, PRIOR_PROGRAM};
use moralframe::error::{Error, ErrorKind};
use moralframe::grounding::{ground, GroundConfig};
use moralframe::synthetic::{generate, synthetic_priors, SyntheticConfig};
use proptest::prelude::*;

#[test]
fn syntax_errors_carry_a_position() {
    let src = "pred MF/2 open\n\n1.0: MF(t, m) => \n";
    match compile(src) {
        Err(Error::Syntax { line, .. }) => assert!(line >= 3, "line {line}"),
        other => panic!("expected a syntax error, got {other:?}"),
    }
}

#[test]
fn undeclared_predicate_is_a_config_error() {
    let err = compile("pred MF/2 open\n1.0: Nope(t, m) => MF(t, m).\n").unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
    assert!(err.to_string().contains("Nope"), "{err}");
}

#[test]
fn ground_rule_cap_is_enforced() {
    let program = compile(PRIOR_PROGRAM).unwrap();
    let corpus = generate(&SyntheticConfig::default()).unwrap();
    let priors = synthetic_priors(&corpus, 0.2, 1);
    let cfg = GroundConfig {
        max_ground_rules: 10,
        ..GroundConfig::default()
    };
    assert!(ground(&program, &corpus, &priors, None, &cfg).is_err());
}

#[test]
fn lp_dump_names_every_atom_once() {
    let program = compile(PRIOR_PROGRAM).unwrap();
    let corpus = generate(&SyntheticConfig {
        tweets: 6,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let priors = synthetic_priors(&corpus, 0.2, 1);
    let gp = ground(&program, &corpus, &priors, None, &GroundConfig::default()).unwrap();
    let lp = gp.to_lp();
    let named: Vec<&str> = lp.lines().filter(|l| l.starts_with("\\ x")).collect();
    assert_eq!(named.len(), gp.num_atoms());
    for (i, name) in gp.names.iter().enumerate() {
        assert_eq!(named[i], format!("\\ x{i} = {name}"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Gold labels satisfy every hard constraint the program grounds.
    #[test]
    fn gold_assignment_is_feasible(seed in 0u64..1000, tweets in 2usize..25) {
        let program = compile(PRIOR_PROGRAM).unwrap();
        let corpus = generate(&SyntheticConfig { tweets, seed, ..SyntheticConfig::default() }).unwrap();
        let priors = synthetic_priors(&corpus, 0.3, seed);
        let gp = ground(&program, &corpus, &priors, None, &GroundConfig::default()).unwrap();
        let gold = gp.gold_assignment(&corpus.kb).unwrap();
        let p = gp.problem();
        prop_assert!(p.is_feasible(&gold), "violated: {:?}", p.constraint_names(&p.violated(&gold, 1e-9)));
    }

    /// Components cover each atom exactly once.
    #[test]
    fn components_partition_atoms(seed in 0u64..1000) {
        let program = compile(PRIOR_PROGRAM).unwrap();
        let corpus = generate(&SyntheticConfig { tweets: 15, seed, ..SyntheticConfig::default() }).unwrap();
        let priors = synthetic_priors(&corpus, 0.3, seed);
        let gp = ground(&program, &corpus, &priors, None, &GroundConfig::default()).unwrap();
        let mut seen = vec![0usize; gp.num_atoms()];
        for c in 0..gp.components.len() {
            let n = gp.component_problem(c).num_vars;
            prop_assert!(n > 0);
            for a in &gp.components[c].atoms {
                seen[*a] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&k| k == 1));
    }
}
