use super::*;
use crate::config::default_config;
use crate::simkernel::load_skills;
use crate::terrain::{CourseBuilder, CENTER_COL, CENTER_ROW};

fn skill(name: &str) -> SkillProfile {
    load_skills(&default_config()).unwrap().into_iter().find(|s| s.name == name).unwrap()
}

fn flat_field() -> TerrainField {
    generate_terrain(&TerrainSpec::flat()).unwrap()
}

#[test]
fn flat_spawn_takes_first_draw() {
    let cfg = DatagenConfig::default();
    let pose = sample_spawn(&flat_field(), &cfg, &mut stream(5)).unwrap();
    let mut r = stream(5);
    let x = r.gen_range(cfg.margin_back..=cfg.extent.0 - cfg.margin_front);
    let y = r.gen_range(cfg.margin_side..=cfg.extent.1 - cfg.margin_side);
    let yaw = r.gen_range(-cfg.yaw_spread..=cfg.yaw_spread);
    assert_eq!((pose.x, pose.y, pose.yaw), (x, y, yaw));
    assert_eq!(pose, sample_spawn(&flat_field(), &cfg, &mut stream(5)).unwrap());
}

#[test]
fn untenable_terrain_exhausts_retries() {
    // Thin 0.4 m ridges every 0.15 m: no foot finds flat support on a ridge
    // and any stance between them puts a ridge under the body.
    let spec = TerrainSpec {
        kind: TerrainKind::Wall,
        wall_height: 0.4,
        obstacle_size: 0.05,
        step_depth: 0.15,
        ..TerrainSpec::default()
    };
    let field = generate_terrain(&spec).unwrap();
    let err = sample_spawn(&field, &DatagenConfig::default(), &mut stream(1)).unwrap_err();
    assert!(matches!(err, DatagenError::RetriesExhausted { attempts: 100, .. }), "{err}");
}

#[test]
fn viability_on_flat_is_one() {
    let field = flat_field();
    let pose = field.pose_at(3.0, 2.0, 0.2);
    for name in ["walk", "ascend", "descend"] {
        let s = collect_viability_sample(&field, &skill(name), &pose, 10, &RobotParams::default(), 0.1, 3).unwrap();
        assert_eq!(s.label, 1.0);
        assert_eq!(s.heightfield.get(CENTER_ROW, CENTER_COL), 0.0);
    }
}

#[test]
fn viability_label_is_success_ratio() {
    // Walk on 0.09 m stairs succeeds only sometimes.
    let field = generate_terrain(&TerrainSpec::stairs(TerrainKind::StairsUp, 0.09, 0.3)).unwrap();
    let pose = field.pose_at(3.15, 2.0, 0.0);
    let params = RobotParams::default();
    let walk = skill("walk");
    let s = collect_viability_sample(&field, &walk, &pose, 20, &params, 0.1, 8).unwrap();
    let ok = (0..20)
        .filter(|&j| {
            let t = rollout(&field, &walk, &pose, &params, &mut derived_stream(8, &[TAG_ROLLOUT, j])).unwrap();
            t.outcome == Outcome::ReachedTarget
        })
        .count();
    assert_eq!(s.label, ok as f64 / 20.0);
    assert!(s.label > 0.0 && s.label < 1.0, "{}", s.label);
}

#[test]
fn walk_on_tall_stairs_is_unviable() {
    let field = generate_terrain(&TerrainSpec::stairs(TerrainKind::StairsUp, 0.30, 0.3)).unwrap();
    let pose = field.pose_at(3.15, 2.0, 0.0);
    let s = collect_viability_sample(&field, &skill("walk"), &pose, 20, &RobotParams::default(), 0.1, 1).unwrap();
    assert!(s.label < 0.05);
}

#[test]
fn invalid_spawn_is_reported() {
    let field = CourseBuilder::new(4.0).flat(2.1).wall(0.4, 0.1).flat(3.0).build(TerrainSpec::default());
    let pose = field.pose_at(2.0, 2.0, 0.0);
    let err = collect_viability_sample(&field, &skill("walk"), &pose, 3, &RobotParams::default(), 0.1, 0);
    assert!(matches!(err, Err(DatagenError::Kernel(KernelError::InvalidSpawn { .. }))));
    let err = collect_cot_sample(&field, &skill("walk"), &pose, &RobotParams::default(), 0.1, 0);
    assert!(matches!(err, Err(DatagenError::Kernel(KernelError::InvalidSpawn { .. }))));
}

#[test]
fn flat_cot_matches_closed_form() {
    let field = flat_field();
    let pose = field.pose_at(3.0, 2.0, -0.4);
    let params = RobotParams::default();
    let walk = skill("walk");
    let s = collect_cot_sample(&field, &walk, &pose, &params, 0.1, 2).unwrap().unwrap();
    // 100 post-warmup ticks of base power over 1.2 m.
    let expected = walk.base_power * 2.0 / (params.mass * params.gravity * 1.2);
    assert!((s.label - expected).abs() < 1e-12);
    let again = collect_cot_sample(&field, &walk, &pose, &params, 0.1, 2).unwrap().unwrap();
    assert_eq!(s, again);
}

#[test]
fn crashed_rollout_yields_no_cot_sample() {
    let field = CourseBuilder::new(4.0).flat(3.5).wall(0.4, 0.5).flat(3.0).build(TerrainSpec::default());
    let pose = field.pose_at(2.5, 2.0, 0.0);
    let s = collect_cot_sample(&field, &skill("walk"), &pose, &RobotParams::default(), 0.1, 0).unwrap();
    assert!(s.is_none());
}

#[test]
fn family_counts_follow_weights() {
    let cfg = DatagenConfig::default();
    for size in [1, 7, 100, 1234, 100_000] {
        let counts = family_counts(&cfg.mix, size);
        assert_eq!(counts.iter().sum::<usize>(), size);
        let total: f64 = cfg.mix.iter().map(|m| m.weight).sum();
        for (c, m) in counts.iter().zip(&cfg.mix) {
            let quota = m.weight / total * size as f64;
            assert!((*c as f64 - quota).abs() < 1.0 + 1e-9, "size {size}: {c} vs {quota}");
        }
    }
}

#[test]
fn difficulty_strata_cover_the_range() {
    let cfg = DatagenConfig::default();
    let plan = slot_plan(&cfg, 400, 9);
    let stairs = cfg.mix.iter().position(|m| m.kind == TerrainKind::StairsUp).unwrap();
    let mut d: Vec<f64> = plan.iter().filter(|p| p.0 == stairs).map(|p| p.1).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    assert_eq!(n, 100);
    for (k, v) in d.iter().enumerate() {
        let lo = 0.32 * k as f64 / n as f64;
        assert!(*v >= lo && *v <= lo + 0.32 / n as f64, "{k}: {v}");
    }
}

#[test]
fn flat_dataset_is_all_ones_and_split() {
    let cfg = DatagenConfig::flat_only();
    let ds = build_dataset(&cfg, DatasetKind::Viability, &skill("walk"), 100, 4).unwrap();
    assert_eq!(ds.len(), 100);
    assert!(ds.samples.iter().all(|s| s.label == 1.0));
    assert_eq!(ds.test.len(), 10);
    let mut all: Vec<usize> = ds.train.iter().chain(&ds.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
}

#[test]
fn mixed_dataset_is_deterministic_and_well_formed() {
    let cfg = DatagenConfig::default();
    let ascend = skill("ascend");
    for kind in [DatasetKind::Viability, DatasetKind::Cot] {
        let a = build_dataset(&cfg, kind, &ascend, 40, 11).unwrap();
        let b = build_dataset(&cfg, kind, &ascend, 40, 11).unwrap();
        assert_eq!(format::to_text(&a), format::to_text(&b));
        for s in &a.samples {
            assert_eq!(s.heightfield.get(CENTER_ROW, CENTER_COL), 0.0);
            assert_eq!(s.heightfield.occluded_count(), 0);
            assert!(s.label.is_finite() && s.label >= 0.0);
            if kind == DatasetKind::Viability {
                assert!(s.label <= 1.0);
            }
        }
    }
    assert!(build_dataset(&cfg, DatasetKind::Cot, &ascend, 0, 1).is_err());
}

#[test]
fn dataset_file_round_trip_and_errors() {
    let ds = build_dataset(&DatagenConfig::default(), DatasetKind::Viability, &skill("descend"), 12, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_dataset(&ds, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds);

    let text = format::to_text(&ds);
    let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
    assert!(matches!(format::from_text(&truncated), Err(DatagenError::Malformed { .. })));
    let cut_record = &text[..text.len() - 40];
    assert!(matches!(format::from_text(cut_record), Err(DatagenError::Malformed { .. })));
    let versioned = text.replacen("format_version=1", "format_version=2", 1);
    match format::from_text(&versioned) {
        Err(DatagenError::VersionMismatch { expected: 1, found }) => assert_eq!(found, "2"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_round_trips_through_kv() {
    let mut cfg = DatagenConfig::default();
    cfg.rollouts_per_sample = 4;
    cfg.mix.truncate(3);
    let mut kv = KvConfig::new();
    cfg.write_kv(&mut kv);
    assert_eq!(DatagenConfig::from_kv(&kv).unwrap(), cfg);
    kv.set("datagen.mix.flat.weight", -1);
    assert!(DatagenConfig::from_kv(&kv).is_err());
}

#[test]
fn skill_mix_replaces_shared_mix() {
    let kv = default_config();
    let shared = DatagenConfig::from_kv(&kv).unwrap();
    assert_eq!(shared.for_skill(&kv, "walk").unwrap(), shared);
    let climb = shared.for_skill(&kv, "climb").unwrap();
    let wall = climb.mix.iter().find(|m| m.kind == TerrainKind::Wall).unwrap();
    let flat = climb.mix.iter().find(|m| m.kind == TerrainKind::Flat).unwrap();
    assert!(wall.weight > flat.weight);
    assert_eq!(wall.max_difficulty, 0.8);
    assert_eq!(climb.mix.len(), shared.mix.len());

    let mut kv = KvConfig::new();
    kv.set("skill.walk.mix.stairs_up.weight", 1);
    kv.set("skill.walk.mix.stairs_up.max", 0.1);
    let walk = shared.for_skill(&kv, "walk").unwrap();
    assert_eq!(walk.mix.len(), 1);
    assert_eq!((walk.mix[0].min_difficulty, walk.mix[0].max_difficulty), (0.0, 0.1));
    kv.set("skill.walk.mix.lava.weight", 1);
    assert!(shared.for_skill(&kv, "walk").is_err());
}

#[test]
fn robot_can_stand_on_a_collection_wall() {
    let cfg = DatagenConfig::default();
    let field = generate_terrain(&cfg.terrain_spec(TerrainKind::Wall, 0.4, 1)).unwrap();
    let centre = cfg.obstacle_start + cfg.wall_thickness / 2.0;
    assert!(validate_spawn(&field, &field.pose_at(centre, 2.0, 0.0)));
    assert!(!validate_spawn(&field, &field.pose_at(cfg.obstacle_start, 2.0, 0.0)));
}
