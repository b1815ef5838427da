use proptest::prelude::*;

use uniq_audit::campaign::{launch, ActivityModel, CampaignConfig, PolicyMode};
use uniq_audit::oracle::{AudienceSpec, Oracle, OracleConfig};
use uniq_audit::population::{Population, UserProfile};

const SKILLS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn population() -> impl Strategy<Value = Population> {
    prop::collection::vec(
        (
            0..2usize,
            prop::collection::btree_set(0..SKILLS.len(), 0..=5),
        ),
        1..50,
    )
    .prop_map(|rows| {
        let users = rows
            .into_iter()
            .enumerate()
            .map(|(i, (loc, skills))| UserProfile {
                id: format!("m{i:02}"),
                location: Some(["ES", "FR"][loc].to_string()),
                skills: skills.into_iter().map(|s| SKILLS[s].to_string()).collect(),
            })
            .collect();
        Population::from_profiles(users, 1_000).unwrap()
    })
}

fn config() -> impl Strategy<Value = (AudienceSpec, u32, f64, f64, f64, u64, bool)> {
    (
        prop::collection::btree_set(0..SKILLS.len(), 0..3),
        prop::option::of(0..2usize),
        1u32..5,
        0.0f64..3.0,
        0.0f64..1.0,
        0.0f64..1.0,
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(
            |(skills, loc, days, budget, p_active, bystander, seed, enforced)| {
                let spec = AudienceSpec::new(
                    loc.map(|l| ["ES", "FR"][l]),
                    skills.into_iter().map(|s| SKILLS[s]),
                );
                (spec, days, budget, p_active, bystander, seed, enforced)
            },
        )
}

proptest! {
    #[test]
    fn delivery_and_bookkeeping(pop in population(), (spec, days, budget, p_active, bystander, seed, enforced) in config(), floor in 1u64..10, pick in any::<prop::sample::Index>()) {
        let oracle = Oracle::new(&pop);
        let target = pop.users()[pick.index(pop.len())].id.clone();
        let policy = if enforced { PolicyMode::Enforced } else { PolicyMode::ClientSideOnly };
        let mut cfg = CampaignConfig::new(spec.clone(), Some(target.clone()), policy, seed);
        cfg.duration_days = days;
        cfg.budget = budget;
        cfg.activity = ActivityModel { p_daily_active: p_active, target_click: 1.0, bystander_click: bystander };
        let ocfg = OracleConfig::censored(floor);
        let out = launch(&oracle, &cfg, &ocfg).unwrap();
        let matched = oracle.matched_users(&spec);

        prop_assert_eq!(out.reported_audience, ocfg.report(matched.len() as u64));
        if enforced && (matched.len() as u64) < floor {
            prop_assert!(!out.launched);
            prop_assert_eq!(out.platform_report.impressions, 0);
            prop_assert!(!out.nanotarget_success);
            return Ok(());
        }
        prop_assert!(out.launched);

        for id in out.per_user_log.keys() {
            prop_assert!(matched.contains(id));
        }
        let impressions: u64 = out.per_user_log.values().map(|t| t.impressions).sum();
        let clicks: u64 = out.per_user_log.values().map(|t| t.clicks).sum();
        prop_assert_eq!(out.platform_report.impressions, impressions);
        prop_assert_eq!(out.platform_report.clicks, clicks);
        prop_assert_eq!(out.backend_clicks.len() as u64, clicks);
        prop_assert!(out.per_user_log.values().all(|t| t.clicks <= t.impressions && t.impressions >= 1 && t.impressions <= u64::from(days)));
        prop_assert!(impressions <= (budget / cfg.cost_per_impression + 1e-9).floor() as u64);
        prop_assert!((out.cost - impressions as f64 * cfg.cost_per_impression).abs() < 1e-9);
        prop_assert!(out.cost <= budget + 1e-9);
        prop_assert!(out.backend_clicks.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(out.backend_clicks.iter().all(|c| c.timestamp < u64::from(days) * 86_400 && c.campaign_id == cfg.campaign_id));
        let t = out.target_tally(&target);
        prop_assert_eq!(t.clicks, t.impressions);
        prop_assert_eq!(out.nanotarget_success, out.per_user_log.len() == 1 && out.per_user_log.contains_key(&target));

        prop_assert_eq!(&launch(&oracle, &cfg, &ocfg).unwrap(), &out);
    }

    #[test]
    fn unconstrained_delivery_reaches_everyone_daily(pop in population(), (spec, days, ..) in config(), seed in any::<u64>()) {
        let oracle = Oracle::new(&pop);
        let mut cfg = CampaignConfig::new(spec.clone(), None, PolicyMode::ClientSideOnly, seed);
        cfg.duration_days = days;
        cfg.budget = 1e9;
        cfg.activity = ActivityModel::always_active();
        let out = launch(&oracle, &cfg, &OracleConfig::censored(30)).unwrap();
        let matched = oracle.matched_users(&spec);
        prop_assert_eq!(out.per_user_log.keys().cloned().collect::<std::collections::BTreeSet<_>>(), matched);
        prop_assert!(out.per_user_log.values().all(|t| t.impressions == u64::from(days)));
        prop_assert!(!out.nanotarget_success);
    }
}

#[test]
fn unique_audience_succeeds_only_when_alone() {
    let users = vec![
        UserProfile {
            id: "t".into(),
            location: Some("ES".into()),
            skills: ["a", "b", "c"].map(String::from).into(),
        },
        UserProfile {
            id: "o".into(),
            location: Some("ES".into()),
            skills: ["a", "b"].map(String::from).into(),
        },
    ];
    let pop = Population::from_profiles(users, 1_000).unwrap();
    let oracle = Oracle::new(&pop);
    let ocfg = OracleConfig::censored(30);
    let run = |skills: &[&str]| {
        let mut cfg = CampaignConfig::new(
            AudienceSpec::new(Some("ES"), skills.iter().copied()),
            Some("t".into()),
            PolicyMode::ClientSideOnly,
            1,
        );
        cfg.activity = ActivityModel::always_active();
        launch(&oracle, &cfg, &ocfg).unwrap()
    };
    let alone = run(&["a", "b", "c"]);
    assert!(alone.nanotarget_success);
    assert_eq!(alone.reported_audience, 30);
    assert_eq!(alone.target_tally("t").impressions, 3);

    let crowd = run(&["a", "b"]);
    assert!(!crowd.nanotarget_success);
    assert_eq!(crowd.per_user_log.len(), 2);

    let mut cfg = CampaignConfig::new(
        AudienceSpec::new(Some("ES"), ["a", "b", "c"]),
        Some("t".into()),
        PolicyMode::Enforced,
        1,
    );
    cfg.activity = ActivityModel::always_active();
    let blocked = launch(&oracle, &cfg, &ocfg).unwrap();
    assert!(!blocked.launched);
    assert_eq!(blocked.reported_audience, 30);
}
