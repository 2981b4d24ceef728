use super::*;
use crate::config::default_config;
use crate::nnet::{CnnModel, HeadKind};
use crate::selector::{Decision, SkillRegistry};
use crate::simkernel::{load_skills, RobotParams, SkillProfile};

fn skills() -> Vec<SkillProfile> {
    load_skills(&default_config()).unwrap()
}

fn skill(name: &str) -> SkillProfile {
    skills().into_iter().find(|s| s.name == name).unwrap()
}

fn constant(kind: HeadKind, bias: f64) -> CnnModel {
    let mut m = CnnModel::zeros(kind);
    m.tensor_mut(11)[0] = bias;
    m
}

fn registry(names: &[&str], v_logit: f64) -> SkillRegistry {
    let mut r = SkillRegistry::new();
    for name in names {
        r.register(skill(name), constant(HeadKind::Sigmoid, v_logit), constant(HeadKind::Linear, 0.5), 0.925)
            .unwrap();
    }
    r
}

fn small_course(trials: usize) -> CourseConfig {
    CourseConfig { heights: vec![0.05, 0.30], trials, seed: 7, ..CourseConfig::default() }
}

#[test]
fn sweep_heights_cover_range_inclusive() {
    let s = SweepConfig::new(TerrainKind::StairsUp, 10, 1);
    let h = s.heights();
    assert_eq!(h.len(), 13);
    assert_eq!(h[0], 0.0);
    assert!((h[12] - 0.30).abs() < 1e-12);
    for w in h.windows(2) {
        assert!((w[1] - w[0] - 0.025).abs() < 1e-12);
    }
    let one = SweepConfig { start: 0.1, end: 0.1, ..s.clone() };
    assert_eq!(one.heights(), vec![0.1]);
}

#[test]
fn sweep_validation() {
    let s = SweepConfig::new(TerrainKind::StairsUp, 10, 1);
    assert!(s.validate().is_ok());
    assert!(SweepConfig { increment: 0.0, ..s.clone() }.validate().is_err());
    assert!(SweepConfig { end: -0.1, ..s.clone() }.validate().is_err());
    assert!(SweepConfig { samples_per_height: 0, ..s }.validate().is_err());
}

#[test]
fn mean_std_examples() {
    assert_eq!(mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), (5.0, 2.0));
    assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    let (m, s) = mean_std(&[]);
    assert!(m.is_nan() && s.is_nan());
}

#[test]
fn sweep_family_follows_dominant_capability() {
    assert_eq!(sweep_family(&skill("walk")), TerrainKind::StairsUp);
    assert_eq!(sweep_family(&skill("ascend")), TerrainKind::StairsUp);
    assert_eq!(sweep_family(&skill("descend")), TerrainKind::StairsDown);
}

#[test]
fn budget_matches_nominal_time_plus_slack() {
    let p = RobotParams::default();
    // 8 m at 0.6 m/s is 13.33 s, plus 5 s, at 50 Hz.
    assert_eq!(budget_ticks(8.0, &p), 917);
}

#[test]
fn transition_course_geometry() {
    let cfg = CourseConfig::default();
    let up = transition_course(Direction::Up, 0.2, &cfg);
    assert!((up.extent().0 - 8.0).abs() < 1e-9);
    assert_eq!(up.elevation(1.0, 2.0), 0.0);
    assert!((up.elevation(3.15, 2.0) - 0.2).abs() < 1e-9);
    assert!((up.elevation(6.0, 2.0) - 1.0).abs() < 1e-9);
    let down = transition_course(Direction::Down, 0.2, &cfg);
    assert!((down.elevation(6.0, 2.0) + 1.0).abs() < 1e-9);
    assert!(cfg.validate().is_ok());
    assert!(CourseConfig { target_distance: 20.0, ..cfg.clone() }.validate().is_err());
    assert!(CourseConfig { trials: 0, ..cfg }.validate().is_err());
}

#[test]
fn obstacle_course_geometry() {
    let f = obstacle_course(4.0);
    assert!((f.extent().0 - 7.5).abs() < 1e-9);
    assert_eq!(f.elevation(1.0, 2.0), 0.0);
    assert!((f.elevation(2.5, 2.0) - 0.4).abs() < 1e-9);
    assert_eq!(f.elevation(3.25, 2.0), 0.0);
    assert!(f.elevation(5.25, 2.0) < -0.5);
    assert_eq!(f.elevation(7.0, 2.0), 0.0);
}

#[test]
fn course_rates_sum_to_one() {
    let r = registry(&["walk", "ascend"], 3.0);
    let res =
        run_transition_course(Direction::Up, &small_course(12), &r, &skill("walk"), &RobotParams::default()).unwrap();
    assert_eq!(res.rows.len(), 4);
    for row in &res.rows {
        assert_eq!(row.trials, 12);
        assert_eq!(row.successes + row.stops + row.crashes, 12);
        let total = row.success_rate() + row.stop_activated_rate() + row.crash_rate();
        assert!((total - 1.0).abs() < 1e-12);
    }
    assert!(res.pair(0.05).is_some());
    assert!(res.pair(0.15).is_none());
    assert_eq!(res.to_csv().lines().count(), 5);
}

#[test]
fn always_viable_single_skill_matches_baseline() {
    // The selector only adds a commit delay, so the same hazard draws give
    // the same outcomes.
    let r = registry(&["walk"], 5.0);
    let res =
        run_transition_course(Direction::Up, &small_course(20), &r, &skill("walk"), &RobotParams::default()).unwrap();
    for h in [0.05, 0.30] {
        let (sel, base) = res.pair(h).unwrap();
        assert_eq!((sel.successes, sel.stops, sel.crashes), (base.successes, base.stops, base.crashes));
    }
}

#[test]
fn never_viable_selector_stops_everywhere() {
    let r = registry(&["walk", "ascend", "descend"], -5.0);
    let res =
        run_transition_course(Direction::Down, &small_course(5), &r, &skill("walk"), &RobotParams::default()).unwrap();
    for h in [0.05, 0.30] {
        let (sel, _) = res.pair(h).unwrap();
        assert_eq!(sel.stops, 5);
    }
    let field = transition_course(Direction::Up, 0.1, &CourseConfig::default());
    let start = field.pose_at(1.0, 2.0, 0.0);
    let eps = run_episodes(&field, start, 4.5, 50, &SkillRegistry::new(), 10, &RobotParams::default(), 0.1, &[1], true)
        .unwrap();
    assert_eq!(eps[0].outcome, EpisodeOutcome::StopActivated);
    assert_eq!(eps[0].traveled, 0.0);
    assert_eq!(eps[0].ticks, 50);
    assert_eq!(eps[0].log.len(), 50);
    assert!(eps[0].committed.iter().all(|d| *d == Decision::Stop));
}

#[test]
fn episodes_are_deterministic_and_commit_after_window() {
    let r = registry(&["walk"], 5.0);
    let field = transition_course(Direction::Up, 0.1, &CourseConfig::default());
    let start = field.pose_at(1.0, 2.0, 0.0);
    let p = RobotParams::default();
    let a = run_episodes(&field, start, 4.5, 900, &r, 10, &p, 0.1, &[3, 4], true).unwrap();
    let b = run_episodes(&field, start, 4.5, 900, &r, 10, &p, 0.1, &[3, 4], true).unwrap();
    assert_eq!(a, b);
    let c = &a[0].committed;
    assert!(c[..9].iter().all(|d| *d == Decision::Stop));
    assert_eq!(c[9], Decision::Skill(skill("walk").id));
}

#[test]
fn walk_only_obstacle_run_trips_on_wall() {
    let r = registry(&["walk"], 5.0);
    let run = run_obstacle_course(&r, 10, &RobotParams::default(), 0.1, 9).unwrap();
    assert!(!run.completed());
    assert_eq!(run.episode.outcome, EpisodeOutcome::Crash);
    assert_eq!(run.skills_used, vec!["walk".to_string()]);
    assert_eq!(run.episode.log.len(), run.episode.ticks);
}

#[test]
fn calibration_with_constant_model() {
    let sweep =
        SweepConfig { kind: TerrainKind::StairsUp, start: 0.0, end: 0.3, increment: 0.3, samples_per_height: 16, seed: 5 };
    let dg = DatagenConfig::default();
    let model = constant(HeadKind::Sigmoid, 0.0);
    let res = run_viability_calibration(&sweep, &dg, &skill("walk"), &model).unwrap();
    assert_eq!(res.buckets.len(), 2);
    let flat = &res.buckets[0];
    assert_eq!(flat.count, 16);
    assert_eq!(flat.empirical_mean, 1.0);
    assert_eq!(flat.crash_fraction, 0.0);
    assert!((flat.predicted_mean - 0.5).abs() < 1e-12);
    assert!(flat.predicted_std < 1e-12);
    assert!(res.buckets[1].empirical_mean < flat.empirical_mean);
    let again = run_viability_calibration(&sweep, &dg, &skill("walk"), &model).unwrap();
    assert_eq!(res.to_csv(), again.to_csv());
    assert_eq!(res.to_csv().lines().count(), 3);

    let wrong = constant(HeadKind::Linear, 0.0);
    assert!(run_viability_calibration(&sweep, &dg, &skill("walk"), &wrong).is_err());
}

#[test]
fn cot_curve_gates_unviable_buckets() {
    let sweep =
        SweepConfig { kind: TerrainKind::StairsUp, start: 0.0, end: 0.3, increment: 0.3, samples_per_height: 16, seed: 5 };
    let dg = DatagenConfig::default();
    let model = constant(HeadKind::Linear, 0.4);
    let res = run_cot_curve(&sweep, &dg, &skill("walk"), &model, 0.9).unwrap();
    let (flat, steep) = (&res.buckets[0], &res.buckets[1]);
    assert!(!flat.omitted);
    assert_eq!(flat.measured, 16);
    assert!((flat.predicted_mean - 0.4).abs() < 1e-12);
    assert!(flat.empirical_mean > 0.0);
    assert!(steep.omitted);
    assert!(steep.crash_fraction > 0.1);
    assert!(run_cot_curve(&sweep, &dg, &skill("walk"), &model, 1.5).is_err());
}

#[test]
fn sweep_spawns_settle_on_every_height() {
    let sweep = SweepConfig::new(TerrainKind::StairsDown, 8, 2);
    let dg = DatagenConfig::default();
    let fields = sweep_fields(&sweep, &dg).unwrap();
    let spawns = sweep_spawns(&sweep, &dg, &fields).unwrap();
    assert_eq!(spawns.len(), 8);
    for f in &fields {
        for &(x, y, yaw) in &spawns {
            assert!(crate::simkernel::validate_spawn(f, &f.pose_at(x, y, yaw)));
        }
    }
}
